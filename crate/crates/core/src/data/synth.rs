use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::encode_wav;
use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::manifest::{write_manifest, Task};

/// Signal emitted when a class is active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Tone { freq_hz: f64 },
    BandNoise { low_hz: f64, high_hz: f64 },
}

impl Generator {
    fn label(&self) -> String {
        match self {
            Generator::Tone { freq_hz } => format!("tone_{freq_hz}hz"),
            Generator::BandNoise { low_hz, high_hz } => format!("noise_{low_hz}_{high_hz}hz"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: Task,
    pub classes: Vec<Generator>,
    /// Scene: clips per class. Tagging: total clips.
    pub n_per_class: usize,
    /// Clip durations are uniform in `[min_duration_s, duration_s]`.
    pub duration_s: f64,
    pub min_duration_s: Option<f64>,
    pub sample_rate: u32,
    pub num_folds: usize,
    pub seed: u64,
    /// Standard deviation of the background noise present in every clip.
    pub noise_level: f64,
}

impl SynthSpec {
    /// Three tone classes at 500, 1000 and 2000 Hz, 16 kHz, 20 clips each.
    pub fn tones() -> Self {
        Self {
            task: Task::Scene,
            classes: [500.0, 1000.0, 2000.0].map(|f| Generator::Tone { freq_hz: f }).to_vec(),
            n_per_class: 20,
            duration_s: 1.0,
            min_duration_s: Some(0.6),
            sample_rate: 16_000,
            num_folds: 4,
            seed: 42,
            noise_level: 0.01,
        }
    }

    /// Four tone tags at 400, 800, 1600 and 3200 Hz, each present with
    /// probability 1/2.
    pub fn tags() -> Self {
        Self {
            task: Task::Tagging,
            classes: [400.0, 800.0, 1600.0, 3200.0].map(|f| Generator::Tone { freq_hz: f }).to_vec(),
            n_per_class: 80,
            duration_s: 1.0,
            min_duration_s: None,
            sample_rate: 16_000,
            num_folds: 5,
            seed: 42,
            noise_level: 0.01,
        }
    }

    fn validate(&self) -> Result<()> {
        if ![16_000, 44_100].contains(&self.sample_rate) {
            return Err(Error::UnsupportedFormat(format!(
                "synthetic sample rate must be 16000 or 44100, got {}",
                self.sample_rate
            )));
        }
        let min = self.min_duration_s.unwrap_or(self.duration_s);
        if self.classes.is_empty() || self.n_per_class == 0 || self.num_folds == 0 || !(min > 0.0 && min <= self.duration_s) {
            return Err(Error::EmptyInput("synthetic spec needs classes, clips, folds and positive durations".into()));
        }
        Ok(())
    }
}

/// One generated clip before it is written.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub name: String,
    pub samples: Vec<f32>,
    pub labels: Vec<usize>,
    pub fold: usize,
}

fn tone(n: usize, fs: f64, freq: f64, amp: f64, rng: &mut Rng) -> Vec<f64> {
    let phase = rng.uniform_in(0.0, 2.0 * PI);
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs + phase).sin()).collect()
}

/// White noise restricted to `[low, high]` Hz by zeroing FFT bins, scaled to
/// standard deviation `amp`.
fn band_noise(n: usize, fs: f64, low: f64, high: f64, amp: f64, rng: &mut Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.normal(), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < low || f > high {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { amp / rms } else { 0.0 };
    out.into_iter().map(|v| v * scale).collect()
}

fn render(spec: &SynthSpec, active: &[usize], rng: &mut Rng) -> Vec<f32> {
    let fs = f64::from(spec.sample_rate);
    let min = spec.min_duration_s.unwrap_or(spec.duration_s);
    let seconds = if min < spec.duration_s { rng.uniform_in(min, spec.duration_s) } else { min };
    let n = (seconds * fs).round() as usize;
    let amp = if spec.task.multi_label() { 0.2 } else { 0.5 };
    let mut mix: Vec<f64> = (0..n).map(|_| spec.noise_level * rng.normal()).collect();
    for &c in active {
        let gain = amp * rng.uniform_in(0.6, 1.0);
        let part = match spec.classes[c] {
            Generator::Tone { freq_hz } => tone(n, fs, freq_hz, gain, rng),
            Generator::BandNoise { low_hz, high_hz } => band_noise(n, fs, low_hz, high_hz, gain / 2.0, rng),
        };
        for (m, p) in mix.iter_mut().zip(part) {
            *m += p;
        }
    }
    mix.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

/// Deterministic clips for `spec`. Scene clips hold one source each and are
/// assigned to folds round-robin within each class; tagging clips hold a
/// random subset of sources, possibly empty.
pub fn synth_clips(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut clips = Vec::new();
    match spec.task {
        Task::Scene => {
            for i in 0..spec.n_per_class {
                for c in 0..spec.classes.len() {
                    clips.push(SynthClip {
                        name: format!("c{c:02}_{i:04}.wav"),
                        samples: render(spec, &[c], &mut rng),
                        labels: vec![c],
                        fold: i % spec.num_folds + 1,
                    });
                }
            }
        }
        Task::Tagging => {
            for i in 0..spec.n_per_class {
                let active: Vec<usize> = (0..spec.classes.len()).filter(|_| rng.bernoulli(0.5)).collect();
                clips.push(SynthClip {
                    name: format!("t_{i:04}.wav"),
                    samples: render(spec, &active, &mut rng),
                    labels: active,
                    fold: i % spec.num_folds + 1,
                });
            }
        }
    }
    Ok(clips)
}

/// Writes `wav/*.wav`, `manifest.csv`, `classes.txt` and `synth.json` under
/// `dir`. Returns the clips written.
pub fn synth_dataset(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<Vec<SynthClip>> {
    let dir = dir.as_ref();
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let clips = synth_clips(spec)?;
    let names: Vec<String> = spec.classes.iter().map(Generator::label).collect();
    let mut rows = Vec::with_capacity(clips.len());
    for clip in &clips {
        let path = wav_dir.join(&clip.name);
        std::fs::write(&path, encode_wav(&clip.samples, spec.sample_rate)).map_err(|e| Error::io(&path, e))?;
        let labels = clip.labels.iter().map(|&l| names[l].clone()).collect();
        rows.push((format!("wav/{}", clip.name), labels, clip.fold));
    }
    write_manifest(dir.join("manifest.csv"), &rows)?;
    let classes = dir.join("classes.txt");
    std::fs::write(&classes, names.join("\n") + "\n").map_err(|e| Error::io(&classes, e))?;
    let meta = dir.join("synth.json");
    std::fs::write(&meta, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&meta, e))?;
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Manifest;
    use crate::dsp::{stft_with_params, AudioClip, StftParams};

    fn peak_bin(samples: &[f32]) -> usize {
        let clip = AudioClip::new(samples.to_vec(), 16_000, "t").unwrap();
        let spec = stft_with_params(&clip, StftParams::from_ms(16_000, 25.0, 15.0)).unwrap();
        let mut energy = vec![0.0f64; spec.bins];
        for t in 0..spec.frames {
            for (e, &m) in energy.iter_mut().zip(spec.row(t)) {
                *e += f64::from(m);
            }
        }
        (0..spec.bins).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap()
    }

    #[test]
    fn tone_classes_peak_at_expected_bins() {
        let clips = synth_clips(&SynthSpec::tones()).unwrap();
        assert_eq!(clips.len(), 60);
        for clip in clips.iter().take(3) {
            let bin = peak_bin(&clip.samples);
            match clip.labels[0] {
                0 => assert!(bin == 12 || bin == 13, "{bin}"),
                1 => assert_eq!(bin, 25),
                _ => assert_eq!(bin, 50),
            }
        }
    }

    #[test]
    fn band_noise_stays_in_band() {
        let x = band_noise(16_000, 16_000.0, 2000.0, 3000.0, 0.1, &mut Rng::new(1));
        let bin = peak_bin(&x.iter().map(|&v| v as f32).collect::<Vec<_>>());
        let f = bin as f64 * 16_000.0 / 400.0;
        assert!((1900.0..=3100.0).contains(&f), "{f}");
    }

    #[test]
    fn generation_is_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::tags();
        spec.n_per_class = 6;
        synth_dataset(&spec, dir_a.path()).unwrap();
        synth_dataset(&spec, dir_b.path()).unwrap();
        for name in ["manifest.csv", "classes.txt", "wav/t_0003.wav"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(name)).unwrap(),
                std::fs::read(dir_b.path().join(name)).unwrap()
            );
        }
        let m = Manifest::load(dir_a.path().join("manifest.csv"), dir_a.path().join("classes.txt"), Task::Tagging, 5).unwrap();
        assert_eq!(m.entries.len(), 6);
    }

    #[test]
    fn empty_tag_set_is_quiet() {
        let mut spec = SynthSpec::tags();
        spec.n_per_class = 40;
        let clips = synth_clips(&spec).unwrap();
        let quiet = clips.iter().find(|c| c.labels.is_empty()).expect("some clip has no tags");
        let rms = (quiet.samples.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / quiet.samples.len() as f64).sqrt();
        assert!(rms < 0.02, "{rms}");
    }

    #[test]
    fn unsupported_rate() {
        let mut spec = SynthSpec::tones();
        spec.sample_rate = 8000;
        assert!(synth_clips(&spec).is_err());
    }
}
