use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// 10 ms at 16 kHz.
pub const FRAME_SAMPLES: usize = 160;
pub const FFT_SIZE: usize = 256;
pub const STFT_BINS: usize = FFT_SIZE / 2 + 1;
const MAG_FLOOR: f64 = 1e-10;

/// Periodic Hann window of `len` samples.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Log-magnitude spectrogram over non-overlapping 10 ms Hann frames,
/// zero-padded to 256 points: `129 × floor(len/160)`, entries `ln(|X| + 1e-10)`.
pub fn stft_logmag(samples: &[f32]) -> Result<FeatureMatrix> {
    let frames = samples.len() / FRAME_SAMPLES;
    if frames == 0 {
        return Err(Error::Input(format!(
            "need at least {FRAME_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let window = hann(FRAME_SAMPLES);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut data = vec![0.0f32; STFT_BINS * frames];
    for j in 0..frames {
        let frame = &samples[j * FRAME_SAMPLES..(j + 1) * FRAME_SAMPLES];
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = if k < FRAME_SAMPLES {
                Complex::new(frame[k] as f64 * window[k], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (bin, c) in buf.iter().take(STFT_BINS).enumerate() {
            data[bin * frames + j] = (c.norm() + MAG_FLOOR).ln() as f32;
        }
    }
    FeatureMatrix::new(STFT_BINS, frames, data)
}

/// Reads a 16-bit PCM mono 16 kHz WAV file as samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Input(format!("{}: malformed WAV: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Input(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Input(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f32 / 32768.0)
                .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Writes 16-bit PCM mono WAV at `rate` Hz.
pub fn write_wav(path: &Path, samples: &[f32], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    }
    w.finalize()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}
