//! PCM WAV decoding and encoding.
//!
//! Only 16-bit integer PCM is accepted. Multi-channel files are reduced to
//! channel 0; there is no mixing or resampling.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

const PCM_SCALE: f64 = 32768.0;
const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("corrupt wav file: {0}")]
    Corrupt(String),
    #[error("invalid waveform: {0}")]
    Invalid(String),
}

/// Mono audio normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(AudioError::Invalid(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a waveform, clamping samples into [-1, 1]. Non-finite samples become 0.
    pub fn from_clamped(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(samples, sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits_per_sample: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::Corrupt(format!(
            "fmt chunk is {} bytes, expected at least 16",
            body.len()
        )));
    }
    let mut format = u16_at(body, 0);
    let bits_per_sample = u16_at(body, 14);
    if format == WAVE_FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) subformat GUID(16); first two GUID bytes carry the format code.
        if body.len() < 40 {
            return Err(AudioError::Corrupt("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk".into()));
        }
        format = u16_at(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        block_align: u16_at(body, 12),
        bits_per_sample,
    })
}

/// Decodes a RIFF/WAVE byte buffer. Returns channel 0 scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Format("not a RIFF/WAVE container".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                AudioError::Corrupt(format!(
                    "chunk '{}' declares {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    bytes.len() - start
                ))
            })?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    if pos < bytes.len() && data.is_none() {
        return Err(AudioError::Corrupt("truncated chunk header".into()));
    }
    let fmt = fmt.ok_or_else(|| AudioError::Corrupt("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Corrupt("missing data chunk".into()))?;
    if fmt.format != WAVE_FORMAT_PCM {
        return Err(AudioError::Format(format!(
            "audio format code {} (only integer PCM is supported)",
            fmt.format
        )));
    }
    if fmt.bits_per_sample != 16 {
        return Err(AudioError::Format(format!(
            "{} bits per sample (only 16-bit PCM is supported)",
            fmt.bits_per_sample
        )));
    }
    if fmt.channels == 0 || fmt.sample_rate == 0 {
        return Err(AudioError::Corrupt("zero channels or zero sample rate".into()));
    }
    let frame = fmt.block_align as usize;
    if frame < 2 * fmt.channels as usize {
        return Err(AudioError::Corrupt(format!(
            "block align {frame} too small for {} channels",
            fmt.channels
        )));
    }
    if data.len() % frame != 0 {
        return Err(AudioError::Corrupt(format!(
            "data chunk of {} bytes is not a whole number of {frame}-byte frames",
            data.len()
        )));
    }
    let samples = data
        .chunks_exact(frame)
        .map(|f| i16::from_le_bytes([f[0], f[1]]) as f64 / PCM_SCALE)
        .collect();
    Waveform::new(samples, fmt.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    decode_wav(&fs::read(path)?)
}

fn quantize(s: f64) -> i16 {
    (s * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encodes as 16-bit PCM mono.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate_hz() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    fs::write(path, encode_wav(w))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_rejects_out_of_range() {
        assert!(Waveform::new(vec![0.0, 1.5], 8000).is_err());
        assert!(Waveform::new(vec![f64::NAN], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn silence_decodes_to_zeros() {
        let w = Waveform::new(vec![0.0; 48000], 48000).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        assert_eq!(back.len(), 48000);
        assert_eq!(back.sample_rate_hz(), 48000);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn min_pcm_value_maps_to_minus_one() {
        let w = Waveform::new(vec![-1.0, 1.0, -1.0, 1.0], 16000).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        let min = back.samples().iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, -1.0);
    }

    #[test]
    fn truncated_data_is_corrupt() {
        let w = Waveform::new(vec![0.25; 100], 16000).unwrap();
        let bytes = encode_wav(&w);
        let err = decode_wav(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(err, AudioError::Corrupt(_)), "{err}");
    }

    #[test]
    fn non_pcm_is_rejected() {
        let w = Waveform::new(vec![0.0; 4], 16000).unwrap();
        let mut bytes = encode_wav(&w);
        // audio format 3 (IEEE float)
        bytes[20] = 3;
        assert!(matches!(decode_wav(&bytes), Err(AudioError::Format(_))));
        let mut bytes = encode_wav(&w);
        bytes[34] = 24;
        assert!(matches!(decode_wav(&bytes), Err(AudioError::Format(_))));
    }

    #[test]
    fn garbage_is_format_error() {
        assert!(matches!(decode_wav(b"hello world!!"), Err(AudioError::Format(_))));
    }
}
