use std::path::Path;

use crate::binio::{put_f64s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{Spectrogram, StftParams};

pub const STD_FLOOR: f64 = 1e-8;

/// Standardized feature matrix, `frames x bins`. Values may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub frames: usize,
    pub bins: usize,
    pub data: Tensor<f32>,
}

impl Features {
    pub fn from_tensor(data: Tensor<f32>) -> Result<Self> {
        if data.ndim() != 2 {
            return Err(Error::Shape(format!(
                "features must be 2-D, got {:?}",
                data.shape()
            )));
        }
        Ok(Self {
            frames: data.dim(0),
            bins: data.dim(1),
            data,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data.data()[t * self.bins..(t + 1) * self.bins]
    }

    /// Contiguous frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Shape(format!(
                "window [{start}, {}) outside {} frames",
                start + len,
                self.frames
            )));
        }
        let data = self.data.data()[start * self.bins..(start + len) * self.bins].to_vec();
        Self::from_tensor(Tensor::from_vec(&[len, self.bins], data)?)
    }
}

/// Streaming per-bin statistics. Partials from separate workers merge
/// associatively.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(bins: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; bins],
            sum_sq: vec![0.0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.sum.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, spec: &Spectrogram) -> Result<()> {
        if spec.bins != self.bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, expected {}",
                spec.bins,
                self.bins()
            )));
        }
        for t in 0..spec.frames {
            for (j, &v) in spec.row(t).iter().enumerate() {
                let v = f64::from(v);
                self.sum[j] += v;
                self.sum_sq[j] += v * v;
            }
        }
        self.count += spec.frames as u64;
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if other.bins() != self.bins() {
            return Err(Error::Shape(format!(
                "cannot merge {}-bin and {}-bin statistics",
                self.bins(),
                other.bins()
            )));
        }
        self.count += other.count;
        for j in 0..self.sum.len() {
            self.sum[j] += other.sum[j];
            self.sum_sq[j] += other.sum_sq[j];
        }
        Ok(self)
    }

    /// Population mean and standard deviation, std floored at [`STD_FLOOR`].
    pub fn finish(&self, params: StftParams) -> Result<Standardizer> {
        if self.count < 2 {
            return Err(Error::EmptyInput(format!(
                "standardizer needs at least 2 frames, got {}",
                self.count
            )));
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Standardizer {
            mean,
            std,
            epsilon: STD_FLOOR,
            params,
        })
    }
}

/// Per-bin zero-mean unit-variance transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
    /// Frame geometry of the spectrograms it was fit on.
    pub params: StftParams,
}

/// Variance convention recorded in the standardizer file.
pub const VARIANCE_POPULATION: u32 = 0;

pub fn fit_standardizer<'a, I>(specs: I, params: StftParams) -> Result<Standardizer>
where
    I: IntoIterator<Item = &'a Spectrogram>,
{
    let mut iter = specs.into_iter().peekable();
    let first = iter
        .peek()
        .ok_or_else(|| Error::EmptyInput("no spectrograms to fit".into()))?;
    let mut acc = MomentAccumulator::new(first.bins);
    for spec in iter {
        acc.push(spec)?;
    }
    acc.finish(params)
}

impl Standardizer {
    pub fn identity(bins: usize, params: StftParams) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
            epsilon: STD_FLOOR,
            params,
        }
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, spec: &Spectrogram) -> Result<Features> {
        if spec.bins != self.bins() {
            return Err(Error::Shape(format!(
                "standardizer has {} bins, spectrogram has {}",
                self.bins(),
                spec.bins
            )));
        }
        let data = spec
            .mag
            .data()
            .chunks_exact(spec.bins)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (m, s))| ((f64::from(v) - m) / s) as f32)
            })
            .collect();
        Features::from_tensor(Tensor::from_vec(&[spec.frames, spec.bins], data)?)
    }

    /// Container: magic `MPST`, version, bins, n_fft, hop, variance
    /// convention (u32 LE), epsilon, then mean and std as f64 LE.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STD_MAGIC);
        put_u32(&mut out, STD_VERSION);
        put_u32(&mut out, self.bins() as u32);
        put_u32(&mut out, self.params.n_fft as u32);
        put_u32(&mut out, self.params.hop as u32);
        put_u32(&mut out, VARIANCE_POPULATION);
        put_f64s(&mut out, &[self.epsilon]);
        put_f64s(&mut out, &self.mean);
        put_f64s(&mut out, &self.std);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "standardizer");
        if r.take(4)? != STD_MAGIC {
            return Err(Error::Parse("standardizer file has the wrong magic".into()));
        }
        let version = r.u32()?;
        if version != STD_VERSION {
            return Err(Error::Parse(format!(
                "standardizer version {version} is not supported"
            )));
        }
        let bins = r.u32()? as usize;
        let n_fft = r.u32()? as usize;
        let hop = r.u32()? as usize;
        let convention = r.u32()?;
        if convention != VARIANCE_POPULATION {
            return Err(Error::Parse(format!(
                "unknown variance convention {convention}"
            )));
        }
        let epsilon = r.f64s(1)?[0];
        let mean = r.f64s(bins)?;
        let std = r.f64s(bins)?;
        if !r.is_done() {
            return Err(Error::Parse("trailing bytes after standardizer".into()));
        }
        Ok(Self {
            mean,
            std,
            epsilon,
            params: StftParams { n_fft, hop },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const STD_MAGIC: &[u8; 4] = b"MPST";
const STD_VERSION: u32 = 1;
