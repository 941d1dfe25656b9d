//! Log-mel spectrogram frontend.
//!
//! Fixed pipeline: 16 kHz mono input, 25 ms Hann window (periodic), 10 ms
//! hop, 512-point FFT, 64 triangular mel filters (HTK mel scale) spanning
//! 60-7800 Hz, natural log with an additive floor of 1e-10. Frames are
//! centered via reflect padding so a clip of N samples yields
//! `1 + floor(N/160)` frames.

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::audio::AudioClip;
use crate::error::{CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 64;
pub const WIN_SAMPLES: usize = 400; // 25 ms
pub const HOP_SAMPLES: usize = 160; // 10 ms
pub const N_FFT: usize = 512;
pub const FMIN_HZ: f64 = 60.0;
pub const FMAX_HZ: f64 = 7800.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// 64 x T log-mel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    /// Shape (n_mels, T).
    pub values: Array2<f64>,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl LogMelSpectrogram {
    pub fn from_values(values: Array2<f64>) -> Self {
        LogMelSpectrogram {
            values,
            frame_hop_s: HOP_SAMPLES as f64 / SAMPLE_RATE as f64,
            frame_len_s: WIN_SAMPLES as f64 / SAMPLE_RATE as f64,
            fmin_hz: FMIN_HZ,
            fmax_hz: FMAX_HZ,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Scalar dataset statistics over log-mel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    /// Identity statistics, useful as a neutral default.
    pub fn identity() -> Self {
        NormalizationStats { mean: 0.0, std: 1.0 }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, shape (n_mels, n_fft/2 + 1), peak weight 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::<f64>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[(m, k)] = w;
        }
    }
    fb
}

/// Center frequencies (Hz) of the filterbank above, in filter order.
pub fn mel_filter_centers_hz(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    (1..=n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Reflect (no edge repetition) index mirroring for center padding.
fn mirror(mut i: isize, n: isize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Periodic Hann window of length `n`.
fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|j| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos()).collect()
}

/// Computes the 64-band log-mel spectrogram of a 16 kHz clip.
pub fn log_mel(clip: &AudioClip) -> Result<LogMelSpectrogram> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(CoreError::Audio(format!(
            "log_mel expects {SAMPLE_RATE} Hz input, got {}",
            clip.sample_rate
        )));
    }
    let n = clip.samples.len();
    if n < HOP_SAMPLES {
        return Err(CoreError::Audio("clip too short".into()));
    }
    let t_frames = 1 + n / HOP_SAMPLES;
    let fb = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, FMIN_HZ, FMAX_HZ);
    let window = hann_periodic(WIN_SAMPLES);
    let pad = N_FFT / 2;
    let win_offset = (N_FFT - WIN_SAMPLES) / 2;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(N_FFT);
    let mut values = Array2::<f64>::zeros((N_MELS, t_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let n_bins = N_FFT / 2 + 1;
    let mut mag = Array1::<f64>::zeros(n_bins);
    for k in 0..t_frames {
        for b in buf.iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        let frame_start = (k * HOP_SAMPLES) as isize - pad as isize;
        for (j, &w) in window.iter().enumerate() {
            let src = frame_start + (win_offset + j) as isize;
            let s = clip.samples[mirror(src, n as isize)];
            buf[win_offset + j] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (b, m) in buf.iter().take(n_bins).zip(mag.iter_mut()) {
            *m = b.norm();
        }
        let mel = fb.dot(&mag);
        for (mi, &v) in mel.iter().enumerate() {
            values[(mi, k)] = (v + LOG_FLOOR).ln();
        }
    }
    Ok(LogMelSpectrogram::from_values(values))
}

/// Elementwise `(x - mean) / std`.
pub fn standardize(lms: &LogMelSpectrogram, stats: &NormalizationStats) -> LogMelSpectrogram {
    assert!(stats.std > 0.0, "standardize: std must be positive");
    let mut out = lms.clone();
    out.values.mapv_inplace(|v| (v - stats.mean) / stats.std);
    out
}

/// Scalar mean/std over all values of all spectrograms (population std,
/// clamped below at 1e-8). Uses Welford's update.
pub fn compute_stats(corpus: &[LogMelSpectrogram]) -> Result<NormalizationStats> {
    let mut count = 0u64;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for lms in corpus {
        for &v in lms.values.iter() {
            count += 1;
            let d = v - mean;
            mean += d / count as f64;
            m2 += d * (v - mean);
        }
    }
    if count == 0 {
        return Err(CoreError::Audio("empty corpus".into()));
    }
    let std = (m2 / count as f64).sqrt().max(1e-8);
    Ok(NormalizationStats { mean, std })
}

const LMS_MAGIC: &[u8; 4] = b"LMS1";

/// Binary export: magic "LMS1", u32 n_mels, u32 T, row-major LE f32 values.
pub fn write_lms_blob<W: Write>(w: &mut W, lms: &LogMelSpectrogram) -> Result<()> {
    w.write_all(LMS_MAGIC)?;
    w.write_all(&(lms.n_mels() as u32).to_le_bytes())?;
    w.write_all(&(lms.n_frames() as u32).to_le_bytes())?;
    for &v in lms.values.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_lms_blob<R: Read>(r: &mut R) -> Result<LogMelSpectrogram> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LMS_MAGIC {
        return Err(CoreError::Format("bad LMS magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n_mels = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let t = u32::from_le_bytes(b4) as usize;
    if n_mels == 0 || t == 0 || n_mels.checked_mul(t).is_none() {
        return Err(CoreError::Format("bad LMS dimensions".into()));
    }
    let mut data = Vec::with_capacity(n_mels * t);
    for _ in 0..n_mels * t {
        r.read_exact(&mut b4)?;
        data.push(f32::from_le_bytes(b4) as f64);
    }
    Ok(LogMelSpectrogram::from_values(
        Array2::from_shape_vec((n_mels, t), data).map_err(|e| CoreError::Format(e.to_string()))?,
    ))
}

pub fn write_lms_file(path: &Path, lms: &LogMelSpectrogram) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_lms_blob(&mut f, lms)
}

pub fn read_lms_file(path: &Path) -> Result<LogMelSpectrogram> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_lms_blob(&mut f)
}
