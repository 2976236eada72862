//! WAV I/O: PCM 16-bit and IEEE float-32, mono or multi-channel.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::input("wav file has zero channels"));
    }
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
            return Err(Error::input(format!(
                "unsupported wav format: {fmt:?} {bits}-bit (PCM16 and float32 supported)"
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mut samples = Array2::<f64>::zeros((channels, frames));
    for (i, &v) in interleaved.iter().enumerate() {
        samples[[i % channels, i / channels]] = v;
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Write as IEEE float-32, the default for simulated corpora.
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: w.channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..w.num_samples() {
        for m in 0..w.channels() {
            writer.write_sample(w.samples[[m, n]] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Write as PCM 16-bit with saturation.
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: w.channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..w.num_samples() {
        for m in 0..w.channels() {
            let v = (w.samples[[m, n]] * 32768.0).round().clamp(-32768.0, 32767.0);
            writer.write_sample(v as i16)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float32_round_trip() {
        let dir = std::env::temp_dir().join("beamsep_wav_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f32.wav");
        let data: Vec<f64> = (0..300).map(|i| ((i as f64) * 0.01).sin() * 0.8).collect();
        let mut two = data.clone();
        two.extend(data.iter().map(|v| -v));
        let w = Waveform::new(Array2::from_shape_vec((2, 300), two).unwrap(), 16_000).unwrap();
        write_wav_f32(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.channels(), 2);
        assert_eq!(back.num_samples(), 300);
        for (a, b) in w.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() < 1e-7); // f32 quantization only
        }
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = std::env::temp_dir().join("beamsep_wav_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("i16.wav");
        let data: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.05).cos() * 0.5).collect();
        let w = Waveform::from_mono(data, 16_000).unwrap();
        write_wav_i16(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in w.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-9);
        }
    }
}
