//! WAV reading and writing. Multichannel files are downmixed to mono by
//! averaging; writes are always mono 32-bit float.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result, Signal};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

/// Read a WAV file into a mono signal. PCM samples are scaled to [-1, 1] by
/// their nominal full-scale value; float samples pass through.
pub fn read_wav(path: &Path) -> Result<Signal> {
    let mut reader = WavReader::open(path).map_err(|e| io_err(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(io_err(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| io_err(path, e))?,
        (SampleFormat::Int, bits) if bits <= 32 => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| io_err(path, e))?
        }
        (fmt, bits) => {
            return Err(io_err(path, format!("unsupported sample format {fmt:?}/{bits}")));
        }
    };
    let ch = spec.channels as usize;
    if interleaved.len() % ch != 0 {
        return Err(io_err(path, "truncated final frame"));
    }
    let frames = interleaved.len() / ch;
    if frames == 0 {
        return Err(io_err(path, "empty audio stream"));
    }
    let mono: Vec<f64> = (0..frames)
        .map(|f| interleaved[f * ch..(f + 1) * ch].iter().sum::<f64>() / ch as f64)
        .collect();
    Signal::new(mono, spec.sample_rate as f64)
}

/// Write a mono signal as 32-bit float WAV.
pub fn write_wav(path: &Path, signal: &Signal) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate().round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| io_err(path, e))?;
    for &v in signal.samples() {
        writer.write_sample(v as f32).map_err(|e| io_err(path, e))?;
    }
    writer.finalize().map_err(|e| io_err(path, e))
}
