use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Reads a mono 16-bit PCM file at 16 kHz, scaling samples by `1 / 32768`.
pub fn load_wav(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!("sample rate is {} Hz, expected {SAMPLE_RATE}", spec.sample_rate),
        ));
    }
    if spec.channels != 1 {
        return Err(Error::format(path, format!("channels is {}, expected 1", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!(
                "encoding is {}-bit {:?}, expected 16-bit integer PCM",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes mono 16-bit PCM at 16 kHz; samples are scaled by 32768, rounded
/// and clipped.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}
