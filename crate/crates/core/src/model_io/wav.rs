//! Minimal mono RIFF/WAVE reader and writer.
//!
//! Reads 16-bit PCM (scaled by 1/32768) and 32-bit IEEE float, including the
//! extensible header variants of both. Always writes 32-bit float.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::SignalTensor;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::MalformedHeader(format!(
            "fmt chunk of {} bytes is shorter than 16",
            body.len()
        )));
    }
    let mut tag = u16_at(body, 0);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID,
        // whose first two bytes carry the real format tag
        if body.len() < 26 {
            return Err(WavError::MalformedHeader("truncated extensible fmt chunk".into()));
        }
        tag = u16_at(body, 24);
    }
    Ok(Format {
        tag,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        bits: u16_at(body, 14),
    })
}

/// Decodes a WAV file image.
pub fn decode_wav(bytes: &[u8]) -> Result<SignalTensor, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }
    let mut fmt = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                WavError::MalformedHeader(format!(
                    "chunk {:?} claims {size} bytes past the end of the file",
                    String::from_utf8_lossy(id)
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
    let fmt = fmt.ok_or_else(|| WavError::MalformedHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::MalformedHeader("no data chunk".into()))?;
    if fmt.channels != 1 {
        return Err(WavError::UnsupportedFormat(format!(
            "{} channels; only mono is supported",
            fmt.channels
        )));
    }
    let samples: Vec<f32> = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        (tag, bits) => {
            return Err(WavError::UnsupportedFormat(format!(
                "format tag {tag} with {bits} bits per sample; expected 16-bit PCM or 32-bit float"
            )))
        }
    };
    Ok(SignalTensor::mono(samples).with_sample_rate(Some(fmt.sample_rate)))
}

/// Encodes a mono signal as 32-bit float WAV.
pub fn encode_wav(x: &SignalTensor, sample_rate: u32) -> Result<Vec<u8>, WavError> {
    if x.channels() != 1 {
        return Err(WavError::UnsupportedFormat(format!(
            "{} channels; only mono is supported",
            x.channels()
        )));
    }
    let data_len = x.len() * 4;
    let mut out = Vec::with_capacity(58 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((50 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&18u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_FLOAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(b"fact");
    out.extend_from_slice(&4u32.to_le_bytes());
    out.extend_from_slice(&(x.len() as u32).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_wav(path: &Path) -> Result<SignalTensor, WavError> {
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_wav(&bytes)
}

/// Writes `x` as 32-bit float; the sample rate defaults to 44.1 kHz when the
/// signal carries none.
pub fn write_wav(path: &Path, x: &SignalTensor) -> Result<(), WavError> {
    let bytes = encode_wav(x, x.sample_rate().unwrap_or(44_100))?;
    fs::write(path, bytes).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })
}
