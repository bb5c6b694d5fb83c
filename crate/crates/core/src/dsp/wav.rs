//! RIFF/WAVE reading and writing, restricted to 16-bit PCM mono.

use std::path::Path;

use crate::error::{Error, Result};

const PCM_FORMAT: u16 = 1;

/// Mono audio scaled into `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::UnsupportedFormat("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path.display().to_string())
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse an in-memory WAV file. Chunks other than `fmt ` and `data` are
/// skipped.
pub fn parse_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::Parse("file shorter than a RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos < bytes.len() {
        if pos + 8 > bytes.len() {
            return Err(Error::Parse(format!("truncated chunk header at byte {pos}")));
        }
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Parse(format!(
                    "chunk {:?} declares {size} bytes but the file ends first",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Parse("fmt chunk shorter than 16 bytes".into()));
                }
                format = Some((
                    le_u16(body, 0),
                    le_u16(body, 2),
                    le_u32(body, 4),
                    le_u16(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
        if data.is_some() && format.is_some() {
            break;
        }
    }

    let (tag, channels, sample_rate, bits) =
        format.ok_or_else(|| Error::Parse("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Parse("missing data chunk".into()))?;
    if tag != PCM_FORMAT {
        return Err(Error::UnsupportedFormat(format!(
            "format tag {tag} is not integer PCM"
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels; only mono is supported"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{bits}-bit samples; only 16-bit is supported"
        )));
    }
    if data.len() % 2 != 0 {
        return Err(Error::Parse("data chunk has an odd byte count".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
        .collect();
    AudioClip::new(samples, sample_rate, source_id)
}

/// Encode samples as a 16-bit PCM mono WAV file. Values are clamped to the
/// representable range.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(samples, sample_rate)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, bits: u16, tag: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000u32 * u32::from(channels) * u32::from(bits) / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn one_second_of_silence() {
        let bytes = encode_wav(&vec![0.0; 16000], 16000);
        let clip = parse_wav(&bytes, "silence").unwrap();
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.samples.len(), 16000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_positive_sample() {
        let bytes = header(1, 16, 1, &32767i16.to_le_bytes());
        let clip = parse_wav(&bytes, "max").unwrap();
        assert_eq!(clip.samples, vec![32767.0 / 32768.0]);
        assert!((clip.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn stereo_is_rejected() {
        let bytes = header(2, 16, 1, &[0, 0, 0, 0]);
        assert!(matches!(
            parse_wav(&bytes, "stereo"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn other_bit_depths_and_float_are_rejected() {
        assert!(matches!(
            parse_wav(&header(1, 24, 1, &[0, 0, 0]), "24"),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            parse_wav(&header(1, 16, 3, &[0, 0]), "float"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn truncated_data_is_a_parse_error() {
        let mut bytes = encode_wav(&[0.1, 0.2, 0.3], 16000);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_wav(&bytes, "cut"), Err(Error::Parse(_))));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let plain = encode_wav(&[0.25, -0.5], 16000);
        let mut bytes = plain[..12].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        bytes.extend_from_slice(&plain[12..]);
        let clip = parse_wav(&bytes, "list").unwrap();
        assert_eq!(clip.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn encode_round_trips_quantized_values() {
        let samples = [0.0, 0.5, -1.0, 1234.0 / 32768.0];
        let clip = parse_wav(&encode_wav(&samples, 44100), "rt").unwrap();
        assert_eq!(clip.samples, samples.to_vec());
        assert_eq!(clip.sample_rate, 44100);
    }
}
