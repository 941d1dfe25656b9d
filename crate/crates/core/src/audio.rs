//! Raw audio clips: WAV I/O and band-limited resampling.

use std::path::Path;

use crate::error::{CoreError, Result};

/// Mono waveform with nominal amplitude range [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, id: impl Into<String>) -> Self {
        AudioClip { samples, sample_rate, id: id.into() }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a WAV file (PCM 16/24/32-bit or 32-bit float). Multichannel input
/// is averaged down to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CoreError::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(CoreError::Audio(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::Audio(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 2.0f64.powi(bits as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CoreError::Audio(format!("{}: {e}", path.display())))?
        }
        (fmt, bits) => {
            return Err(CoreError::Audio(format!(
                "{}: unsupported sample format {fmt:?}/{bits}-bit",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mono: Vec<f64> = (0..frames)
        .map(|i| interleaved[i * channels..(i + 1) * channels].iter().sum::<f64>() / channels as f64)
        .collect();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(AudioClip::new(mono, spec.sample_rate, id))
}

/// Writes mono 16-bit PCM.
pub fn write_wav_16bit(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| CoreError::Audio(format!("{}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| CoreError::Audio(e.to_string()))?;
    }
    writer.finalize().map_err(|e| CoreError::Audio(e.to_string()))?;
    Ok(())
}

// Kaiser-windowed sinc kernel, pinned so resampled output is reproducible:
// 64 zero crossings, beta 14.769656, rolloff 0.9475.
const KAISER_BETA: f64 = 14.769656459379492;
const ZERO_CROSSINGS: f64 = 64.0;
const ROLLOFF: f64 = 0.9475;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let y = x * x / 4.0;
    for k in 1..64 {
        term *= y / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited rate conversion with a Kaiser-windowed sinc kernel.
/// Output length is `round(n * target / source)`; equal rates return the
/// input bit-for-bit.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(CoreError::Audio("empty clip".into()));
    }
    if clip.sample_rate == 0 || target_rate == 0 {
        return Err(CoreError::Audio("sample rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }

    let n_in = clip.samples.len();
    let src = clip.sample_rate as u128;
    let dst = target_rate as u128;
    let n_out = ((n_in as u128 * dst * 2 + src) / (2 * src)) as usize;

    let scale = target_rate as f64 / clip.sample_rate as f64;
    let cutoff = scale.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);

    let x = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        // Position of output sample n on the input sample grid.
        let t = (n as u128 * src) as f64 / dst as f64;
        let lo = ((t - half_width).ceil().max(0.0)) as usize;
        let hi = ((t + half_width).floor()) as usize;
        let hi = hi.min(n_in - 1);
        let mut acc = 0.0;
        for (m, &xm) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let u = t - m as f64;
            let v = u / half_width; // in [-1, 1] within support
            let win = bessel_i0(KAISER_BETA * (1.0 - v * v).max(0.0).sqrt()) / i0_beta;
            acc += xm * cutoff * sinc(cutoff * u) * win;
        }
        out.push(acc);
    }
    Ok(AudioClip::new(out, target_rate, clip.id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, sr: u32, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn resample_length_ratio() {
        let clip = AudioClip::new(sine(440.0, 48000, 48000), 48000, "a");
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.samples.len(), 16000);
        // round(N/3) on a non-multiple length
        let clip = AudioClip::new(vec![0.0; 48001], 48000, "b");
        assert_eq!(resample(&clip, 16000).unwrap().samples.len(), 16000);
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let clip = AudioClip::new(sine(440.0, 16000, 1000), 16000, "a");
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn resample_empty_errors() {
        let clip = AudioClip::new(vec![], 48000, "e");
        assert!(matches!(resample(&clip, 16000), Err(CoreError::Audio(_))));
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        // FFT oracle: dominant bin of the resampled 440 Hz tone maps back to
        // 440 Hz within one bin.
        let clip = AudioClip::new(sine(440.0, 48000, 48000), 48000, "tone");
        let out = resample(&clip, 16000).unwrap();
        let n = out.samples.len();
        let mut buf: Vec<Complex<f64>> =
            out.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let half = n / 2;
        let peak = (1..half).max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap()).unwrap();
        let peak_hz = peak as f64 * 16000.0 / n as f64;
        let bin_hz = 16000.0 / n as f64;
        assert!((peak_hz - 440.0).abs() <= bin_hz, "peak at {peak_hz} Hz");
    }

    #[test]
    fn wav_round_trip_and_mono_mix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples = sine(440.0, 16000, 1600);
        write_wav_16bit(&path, &samples, 16000).unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.samples.len(), 1600);
        for (a, b) in clip.samples.iter().zip(samples.iter()) {
            assert!((a - b).abs() < 1e-4);
        }

        // Stereo averaging.
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let p2 = dir.path().join("st.wav");
        let mut w = hound::WavWriter::create(&p2, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(-16384i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&p2).unwrap();
        assert_eq!(clip.samples.len(), 100);
        assert!(clip.samples.iter().all(|&v| v.abs() < 1e-9));
    }
}
