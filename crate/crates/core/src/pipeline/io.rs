//! WAV and tensor files.
//!
//! Tensor layout (little-endian): magic `RFTN`, `u32` frames, `u32` bins,
//! then `frames * bins` `f32` values, frame-major.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use sha2::{Digest, Sha256};

use crate::dsp::{Compression, MagnitudeSpectrogram, Waveform};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"RFTN";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub sample_rate_hz: u32,
    pub frames: u32,
}

pub fn wav_info(path: &Path) -> Result<WavInfo> {
    let r = WavReader::open(path)?;
    let spec = r.spec();
    Ok(WavInfo {
        channels: spec.channels,
        sample_rate_hz: spec.sample_rate,
        frames: r.duration(),
    })
}

/// Reads a mono WAV of any PCM width or 32-bit float as samples in
/// `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if samples.is_empty() {
        return Err(Error::Format(format!("{}: no samples", path.display())));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// 16-bit PCM encoding; returns the bytes and the number of samples that
/// had to be clamped.
pub fn encode_wav(w: &Waveform) -> Result<(Vec<u8>, usize)> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    let mut clipped = 0;
    {
        let mut wr = WavWriter::new(&mut buf, spec)?;
        for &s in w.samples() {
            let scaled = (s * 32768.0).round();
            if !(-32768.0..=32767.0).contains(&scaled) {
                clipped += 1;
            }
            wr.write_sample(scaled.clamp(-32768.0, 32767.0) as i16)?;
        }
        wr.finalize()?;
    }
    Ok((buf.into_inner(), clipped))
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<usize> {
    let (bytes, clipped) = encode_wav(w)?;
    write_bytes(path, &bytes)?;
    Ok(clipped)
}

pub fn encode_tensor(m: &MagnitudeSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.values().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(m.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.bins() as u32).to_le_bytes());
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes a tensor file; the compression tag is not stored, so the
/// caller states it.
pub fn decode_tensor(bytes: &[u8], compression: Compression) -> Result<MagnitudeSpectrogram> {
    if bytes.len() < 12 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor file".into()));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * frames * bins {
        return Err(Error::Format(format!(
            "tensor body has {} bytes for {frames}x{bins}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MagnitudeSpectrogram::new(frames, bins, values, compression)
}

pub fn read_tensor(path: &Path, compression: Compression) -> Result<MagnitudeSpectrogram> {
    decode_tensor(&std::fs::read(path).map_err(|e| Error::io(path, e))?, compression)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
