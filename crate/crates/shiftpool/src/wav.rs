//! PCM16 mono WAV files.

use std::path::Path;

use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(shiftpool_core::Error::Format(format!("{}: {} channels, expected mono", path.display(), spec.channels)).into());
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(shiftpool_core::Error::Format(format!("{}: expected 16-bit PCM", path.display())).into());
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f32::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    if samples.is_empty() {
        return Err(shiftpool_core::Error::Format(format!("{}: no samples", path.display())).into());
    }
    Ok((samples, spec.sample_rate))
}

/// Writes samples in `[-1, 1]` as 16-bit PCM, rounding and clamping.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    crate::io::create_parent(path)?;
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let v = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
