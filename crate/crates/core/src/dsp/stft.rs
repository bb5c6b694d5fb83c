use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::AudioClip;

pub const DEFAULT_WINDOW_MS: f64 = 25.0;
pub const DEFAULT_HOP_MS: f64 = 15.0;

/// Frame geometry in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
}

impl StftParams {
    /// Window length rounds half-to-even (44.1 kHz at 25 ms gives 1102), hop
    /// length floors (44.1 kHz at 15 ms gives 661).
    pub fn from_ms(sample_rate: u32, window_ms: f64, hop_ms: f64) -> Self {
        let fs = f64::from(sample_rate);
        let n_fft = (window_ms * fs / 1000.0).round_ties_even() as usize;
        let hop = (hop_ms * fs / 1000.0).floor() as usize;
        Self {
            n_fft: n_fft.max(1),
            hop: hop.max(1),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced from `len` samples without center padding.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.n_fft).then(|| 1 + (len - self.n_fft) / self.hop)
    }
}

/// Periodic ("asymmetric") Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Magnitude STFT, `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub mag: Tensor<f32>,
}

impl Spectrogram {
    pub fn from_tensor(mag: Tensor<f32>) -> Result<Self> {
        if mag.ndim() != 2 {
            return Err(Error::Shape(format!(
                "spectrogram must be 2-D, got {:?}",
                mag.shape()
            )));
        }
        Ok(Self {
            frames: mag.dim(0),
            bins: mag.dim(1),
            mag,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.mag.data()[t * self.bins..(t + 1) * self.bins]
    }
}

pub fn stft_magnitude(clip: &AudioClip, window_ms: f64, hop_ms: f64) -> Result<Spectrogram> {
    stft_with_params(clip, StftParams::from_ms(clip.sample_rate, window_ms, hop_ms))
}

pub fn stft_with_params(clip: &AudioClip, params: StftParams) -> Result<Spectrogram> {
    let n = params.n_fft;
    let frames = params.frames(clip.samples.len()).ok_or_else(|| {
        Error::TooShort(format!(
            "{}: {} samples is shorter than one {n}-sample window",
            clip.source_id,
            clip.samples.len()
        ))
    })?;
    let bins = params.bins();
    let window = hann_periodic(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut mag = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * params.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(f64::from(clip.samples[start + i]) * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        mag.extend(buf[..bins].iter().map(|c| c.norm() as f32));
    }
    Spectrogram::from_tensor(Tensor::from_vec(&[frames, bins], mag)?)
}

const CACHE_MAGIC: &[u8; 4] = b"MPFC";
const CACHE_VERSION: u32 = 1;

/// Serialize into the feature cache container: magic `MPFC`, version,
/// frames, bins (all u32 LE), then row-major f32 LE magnitudes.
pub fn encode_feature_cache(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + spec.mag.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut out, CACHE_VERSION);
    put_u32(&mut out, spec.frames as u32);
    put_u32(&mut out, spec.bins as u32);
    put_f32s(&mut out, spec.mag.data());
    out
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<Spectrogram> {
    let mut r = Reader::new(bytes, "feature cache");
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Parse("feature cache has the wrong magic".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Parse(format!(
            "feature cache version {version} is not supported"
        )));
    }
    let frames = r.u32()? as usize;
    let bins = r.u32()? as usize;
    let data = r.f32s(frames * bins)?;
    if !r.is_done() {
        return Err(Error::Parse("trailing bytes after feature cache".into()));
    }
    Spectrogram::from_tensor(Tensor::from_vec(&[frames, bins], data)?)
}

pub fn write_feature_cache(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_feature_cache(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    decode_feature_cache(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N^2) DFT magnitudes of one windowed frame.
    fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn clip(samples: Vec<f32>, fs: u32) -> AudioClip {
        AudioClip::new(samples, fs, "test").unwrap()
    }

    #[test]
    fn geometry_for_both_rates() {
        let p16 = StftParams::from_ms(16000, 25.0, 15.0);
        assert_eq!((p16.n_fft, p16.hop, p16.bins()), (400, 240, 201));
        let p44 = StftParams::from_ms(44100, 25.0, 15.0);
        assert_eq!((p44.n_fft, p44.hop, p44.bins()), (1102, 661, 552));
    }

    #[test]
    fn four_seconds_at_16k_gives_266_frames() {
        let spec = stft_magnitude(&clip(vec![0.0; 64000], 16000), 25.0, 15.0).unwrap();
        assert_eq!((spec.frames, spec.bins), (266, 201));
        assert!(spec.mag.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn too_short_clip_errors() {
        let r = stft_magnitude(&clip(vec![0.1; 399], 16000), 25.0, 15.0);
        assert!(matches!(r, Err(Error::TooShort(_))));
    }

    #[test]
    fn hann_is_periodic() {
        let w = hann_periodic(4);
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_dft_on_one_frame() {
        let n = 400;
        let samples: Vec<f32> = (0..n).map(|i| ((i * 7919) % 113) as f32 / 113.0 - 0.5).collect();
        let spec = stft_magnitude(&clip(samples.clone(), 16000), 25.0, 15.0).unwrap();
        let w = hann_periodic(n);
        let frame: Vec<f64> = samples.iter().zip(&w).map(|(&s, &w)| f64::from(s) * w).collect();
        let oracle = dft_magnitudes(&frame);
        for k in 0..spec.bins {
            let got = f64::from(spec.row(0)[k]);
            assert!((got - oracle[k]).abs() < 1e-4 * oracle[k].max(1.0), "bin {k}");
        }
    }

    #[test]
    fn parseval_on_single_frame() {
        let n = 400;
        let samples: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37).sin() * 0.8).collect();
        let w = hann_periodic(n);
        let frame: Vec<f64> = samples.iter().zip(&w).map(|(&s, &w)| f64::from(s) * w).collect();
        let full = dft_magnitudes(&frame);
        let lhs: f64 = full.iter().map(|m| m * m).sum();
        let rhs = n as f64 * frame.iter().map(|x| x * x).sum::<f64>();
        assert!((lhs - rhs).abs() / rhs < 1e-3);
        // the one-sided magnitudes reconstruct the full spectrum by symmetry
        let spec = stft_magnitude(&clip(samples, 16000), 25.0, 15.0).unwrap();
        let half = spec.row(0);
        let mut recon = 0.0;
        for k in 0..n {
            let m = f64::from(half[k.min(n - k)]);
            recon += m * m;
        }
        assert!((recon - rhs).abs() / rhs < 1e-3);
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        let fs = 16000;
        let k = 25; // 1000 Hz with n_fft = 400
        let freq = k as f64 * fs as f64 / 400.0;
        let samples: Vec<f32> = (0..8000)
            .map(|i| (2.0 * PI * freq * i as f64 / fs as f64).sin() as f32)
            .collect();
        let spec = stft_magnitude(&clip(samples, fs), 25.0, 15.0).unwrap();
        for t in 0..spec.frames {
            let row = spec.row(t);
            let argmax = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn delay_by_hop_shifts_frames() {
        let fs = 16000;
        let hop = 240;
        let base: Vec<f32> = (0..6000).map(|i| ((i as f32) * 0.05).sin() * ((i as f32) * 0.0011).cos()).collect();
        let mut delayed = vec![0.0f32; hop];
        delayed.extend_from_slice(&base);
        let a = stft_magnitude(&clip(base, fs), 25.0, 15.0).unwrap();
        let b = stft_magnitude(&clip(delayed, fs), 25.0, 15.0).unwrap();
        assert_eq!(b.frames, a.frames + 1);
        for t in 0..a.frames {
            for j in 0..a.bins {
                assert!((a.row(t)[j] - b.row(t + 1)[j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn feature_cache_round_trip_and_truncation() {
        let spec = stft_magnitude(&clip(vec![0.3; 1000], 16000), 25.0, 15.0).unwrap();
        let bytes = encode_feature_cache(&spec);
        assert_eq!(&bytes[..4], b"MPFC");
        assert_eq!(decode_feature_cache(&bytes).unwrap(), spec);
        assert!(matches!(
            decode_feature_cache(&bytes[..bytes.len() - 1]),
            Err(Error::Parse(_))
        ));
    }
}
