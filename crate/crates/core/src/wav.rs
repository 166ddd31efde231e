//! Multichannel WAV reading and writing, PCM 16-bit and IEEE float32.

use std::path::Path;

use hound::{SampleFormat, WavSpec};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Reads a WAV file into `[channel, sample]` order. PCM 16-bit samples are
/// scaled to `[-1, 1)`; float files are passed through.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Array2<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::invalid(format!(
                "unsupported WAV format {fmt:?}/{bits}-bit (PCM16 and float32 are supported)"
            )))
        }
    };
    if channels == 0 || interleaved.len() % channels != 0 {
        return Err(Error::invalid("corrupt WAV channel layout"));
    }
    let samples = interleaved.len() / channels;
    let mut data = Array2::zeros((channels, samples));
    for (i, v) in interleaved.into_iter().enumerate() {
        data[[i % channels, i / channels]] = v;
    }
    Ok((data, spec.sample_rate))
}

/// Writes `[channel, sample]` data as IEEE float32.
pub fn write_wav_f32(path: impl AsRef<Path>, data: &Array2<f64>, sample_rate: u32) -> Result<()> {
    let (channels, samples) = data.dim();
    if channels == 0 {
        return Err(Error::invalid("cannot write a zero-channel WAV"));
    }
    let spec = WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for s in 0..samples {
        for c in 0..channels {
            writer.write_sample(data[[c, s]] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes `[channel, sample]` data as PCM 16-bit, clamping to `[-1, 1]`.
pub fn write_wav_i16(path: impl AsRef<Path>, data: &Array2<f64>, sample_rate: u32) -> Result<()> {
    let (channels, samples) = data.dim();
    if channels == 0 {
        return Err(Error::invalid("cannot write a zero-channel WAV"));
    }
    let spec = WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for s in 0..samples {
        for c in 0..channels {
            let v = (data[[c, s]].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float32_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_fn((3, 64), |_| rng.random_range(-1.0..1.0));
        let dir = std::env::temp_dir().join("mcsa_wav_f32_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.wav");
        write_wav_f32(&path, &data, 16000).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 16000);
        assert_eq!(back.dim(), (3, 64));
        for (a, b) in back.iter().zip(data.iter()) {
            // f32 storage granularity.
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn pcm16_round_trip() {
        let data = Array2::from_shape_fn((2, 32), |(c, s)| ((s as f64 * 0.1).sin() * 0.5) + c as f64 * 0.01);
        let dir = std::env::temp_dir().join("mcsa_wav_i16_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.wav");
        write_wav_i16(&path, &data, 8000).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 8000);
        for (a, b) in back.iter().zip(data.iter()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }
}
