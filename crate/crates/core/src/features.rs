//! Deterministic DSP supervision features: frame-level low-level descriptors
//! (LLDs), their first-order deltas, and statistical functionals aggregated
//! into one fixed-length vector per clip.
//!
//! 20 LLDs per 25 ms / 10 ms frame: 13 MFCCs, log RMS energy, zero-crossing
//! rate, F0 (normalized autocorrelation, 60-500 Hz search, 0.45 voicing
//! threshold), voicing probability, spectral centroid, spectral flux and the
//! 85% spectral rolloff. With deltas that is 40 rows; 12 functionals per row
//! give a 480-dimensional vector. Ordering is canonical: all base LLDs, then
//! all deltas (suffix `_de`); per row the functionals in the order listed in
//! [`FUNCTIONAL_NAMES`].

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use std::io::{Read, Write};

use crate::audio::AudioClip;
use crate::error::{CoreError, Result};
use crate::frontend::{mel_filterbank, SAMPLE_RATE};

pub const FRAME_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
const N_FFT: usize = 512;
const N_BINS: usize = N_FFT / 2 + 1;
const MFCC_MELS: usize = 26;
pub const N_MFCC: usize = 13;
pub const N_LLDS: usize = 20;
pub const N_FUNCTIONALS: usize = 12;
/// Supervision vector length: 20 LLDs x 2 (with deltas) x 12 functionals.
pub const D_SUP: usize = N_LLDS * 2 * N_FUNCTIONALS;

const ENERGY_EPS: f64 = 1e-10;
const F0_MIN_HZ: f64 = 60.0;
const F0_MAX_HZ: f64 = 500.0;
const VOICING_THRESHOLD: f64 = 0.45;
const ROLLOFF_FRACTION: f64 = 0.85;

pub const FUNCTIONAL_NAMES: [&str; N_FUNCTIONALS] = [
    "mean", "std", "min", "max", "range", "skewness", "kurtosis", "p25", "p50", "p75", "slope",
    "offset",
];

pub fn lld_names() -> Vec<String> {
    let mut names: Vec<String> = (0..N_MFCC).map(|i| format!("mfcc_{i:02}")).collect();
    names.extend(
        ["log_energy", "zcr", "f0_hz", "voicing", "centroid_hz", "flux", "rolloff_hz"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

/// Canonical names of all D_SUP feature dimensions.
pub fn feature_names() -> Vec<String> {
    let mut rows = lld_names();
    rows.extend(lld_names().into_iter().map(|n| format!("{n}_de")));
    let mut out = Vec::with_capacity(D_SUP);
    for row in rows {
        for f in FUNCTIONAL_NAMES {
            out.push(format!("{row}_{f}"));
        }
    }
    out
}

/// Frame-level LLD matrix, `n_lld rows x T frames`.
#[derive(Debug, Clone)]
pub struct LldFrameMatrix {
    pub values: Array2<f64>,
    pub lld_names: Vec<String>,
}

/// Fixed-length per-clip feature vector.
#[derive(Debug, Clone)]
pub struct HandcraftedFeatureVector {
    pub values: Array1<f64>,
}

impl HandcraftedFeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|j| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos()).collect()
}

/// Orthonormal DCT-II basis, shape (n_out, n_in).
fn dct2_basis(n_out: usize, n_in: usize) -> Array2<f64> {
    let mut b = Array2::<f64>::zeros((n_out, n_in));
    for k in 0..n_out {
        let s = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
        for n in 0..n_in {
            b[(k, n)] =
                s * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * n_in as f64)).cos();
        }
    }
    b
}

/// Extracts the 40-row LLD+delta matrix. Requires a 16 kHz clip spanning at
/// least 3 frames.
pub fn extract_llds(clip: &AudioClip) -> Result<LldFrameMatrix> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(CoreError::Audio(format!(
            "features expect {SAMPLE_RATE} Hz input, got {}",
            clip.sample_rate
        )));
    }
    let n = clip.samples.len();
    if n < FRAME_SAMPLES + 2 * HOP_SAMPLES {
        return Err(CoreError::Audio("clip too short for feature extraction".into()));
    }
    let t_frames = 1 + (n - FRAME_SAMPLES) / HOP_SAMPLES;

    let window = hann_periodic(FRAME_SAMPLES);
    let fb = mel_filterbank(MFCC_MELS, N_FFT, SAMPLE_RATE, 20.0, 8000.0);
    let dct = dct2_basis(N_MFCC, MFCC_MELS);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(N_FFT);

    let lag_min = (SAMPLE_RATE as f64 / F0_MAX_HZ).ceil() as usize;
    let lag_max = (SAMPLE_RATE as f64 / F0_MIN_HZ).floor() as usize;

    let mut base = Array2::<f64>::zeros((N_LLDS, t_frames));
    let mut prev_mag: Option<Vec<f64>> = None;
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for t in 0..t_frames {
        let frame = &clip.samples[t * HOP_SAMPLES..t * HOP_SAMPLES + FRAME_SAMPLES];

        // Magnitude and power spectra of the Hann-windowed frame.
        for b in buf.iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        for (j, (&s, &w)) in frame.iter().zip(window.iter()).enumerate() {
            buf[j] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        let mag: Vec<f64> = buf.iter().take(N_BINS).map(|c| c.norm()).collect();

        // MFCCs from log mel power.
        let power = Array1::from_iter(mag.iter().map(|&m| m * m));
        let mel = fb.dot(&power);
        let logmel = mel.mapv(|v| (v + ENERGY_EPS).ln());
        let mfcc = dct.dot(&logmel);
        for (k, &v) in mfcc.iter().enumerate() {
            base[(k, t)] = v;
        }

        // Log RMS energy with floor: 0.5*ln(mean(x^2) + eps).
        let mean_sq = frame.iter().map(|&s| s * s).sum::<f64>() / FRAME_SAMPLES as f64;
        base[(N_MFCC, t)] = 0.5 * (mean_sq + ENERGY_EPS).ln();

        // Zero-crossing rate: strict sign flips between neighbors.
        let zc = frame.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        base[(N_MFCC + 1, t)] = zc as f64 / (FRAME_SAMPLES - 1) as f64;

        // F0 and voicing from the normalized autocorrelation peak.
        let (f0, voicing) = f0_autocorr(frame, lag_min, lag_max);
        base[(N_MFCC + 2, t)] = f0;
        base[(N_MFCC + 3, t)] = voicing;

        // Spectral centroid (Hz).
        let total: f64 = mag.iter().sum();
        let centroid = if total > 0.0 {
            mag.iter()
                .enumerate()
                .map(|(k, &m)| k as f64 * SAMPLE_RATE as f64 / N_FFT as f64 * m)
                .sum::<f64>()
                / total
        } else {
            0.0
        };
        base[(N_MFCC + 4, t)] = centroid;

        // Spectral flux: L2 distance between consecutive magnitude spectra.
        let flux = match &prev_mag {
            Some(p) => mag.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            None => 0.0,
        };
        base[(N_MFCC + 5, t)] = flux;

        // Spectral rolloff: lowest frequency with 85% of cumulative magnitude.
        let rolloff = if total > 0.0 {
            let target = ROLLOFF_FRACTION * total;
            let mut cum = 0.0;
            let mut bin = N_BINS - 1;
            for (k, &m) in mag.iter().enumerate() {
                cum += m;
                if cum >= target {
                    bin = k;
                    break;
                }
            }
            bin as f64 * SAMPLE_RATE as f64 / N_FFT as f64
        } else {
            0.0
        };
        base[(N_MFCC + 6, t)] = rolloff;

        prev_mag = Some(mag);
    }

    // First-order deltas: centered differences with one-sided edges.
    let mut values = Array2::<f64>::zeros((2 * N_LLDS, t_frames));
    values.slice_mut(ndarray::s![..N_LLDS, ..]).assign(&base);
    for r in 0..N_LLDS {
        for t in 0..t_frames {
            let next = base[(r, (t + 1).min(t_frames - 1))];
            let prev = base[(r, t.saturating_sub(1))];
            values[(N_LLDS + r, t)] = (next - prev) / 2.0;
        }
    }

    let mut names = lld_names();
    names.extend(lld_names().into_iter().map(|n| format!("{n}_de")));
    Ok(LldFrameMatrix { values, lld_names: names })
}

/// Normalized autocorrelation pitch with parabolic lag refinement.
fn f0_autocorr(frame: &[f64], lag_min: usize, lag_max: usize) -> (f64, f64) {
    let n = frame.len();
    let lag_max = lag_max.min(n - 1);
    let norm = |lag: usize| -> f64 {
        let len = n - lag;
        let mut num = 0.0;
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..len {
            num += frame[i] * frame[i + lag];
            e0 += frame[i] * frame[i];
            e1 += frame[i + lag] * frame[i + lag];
        }
        let denom = (e0 * e1).sqrt();
        if denom > 0.0 {
            num / denom
        } else {
            0.0
        }
    };
    let r: Vec<f64> = (lag_min..=lag_max).map(norm).collect();
    let best_r = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !best_r.is_finite() || best_r <= 0.0 {
        return (0.0, 0.0);
    }
    let voicing = best_r.clamp(0.0, 1.0);
    if voicing < VOICING_THRESHOLD {
        return (0.0, voicing);
    }
    // A pure tone peaks at every multiple of its period; take the smallest
    // lag whose local maximum is within 10% of the global one so subharmonics
    // do not win.
    let mut best_lag = lag_min + r.iter().position(|&v| v == best_r).unwrap();
    for (i, &ri) in r.iter().enumerate() {
        let left_ok = i == 0 || r[i - 1] <= ri;
        let right_ok = i + 1 == r.len() || r[i + 1] <= ri;
        if left_ok && right_ok && ri >= 0.9 * best_r {
            best_lag = lag_min + i;
            break;
        }
    }
    let best_r = r[best_lag - lag_min];
    // Parabolic interpolation around the integer peak.
    let mut lag = best_lag as f64;
    if best_lag > lag_min && best_lag < lag_max {
        let rm = norm(best_lag - 1);
        let rp = norm(best_lag + 1);
        let denom = rm - 2.0 * best_r + rp;
        if denom.abs() > 1e-12 {
            let delta = 0.5 * (rm - rp) / denom;
            if delta.abs() <= 1.0 {
                lag += delta;
            }
        }
    }
    (SAMPLE_RATE as f64 / lag, voicing)
}

/// Linearly interpolated percentile of a sorted slice, q in [0,1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// The 12 functionals of one LLD trajectory, in canonical order.
pub fn row_functionals(row: &[f64]) -> [f64; N_FUNCTIONALS] {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let m2 = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = row.iter().map(|&v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = row.iter().map(|&v| (v - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    // Population (biased) moment estimators; degenerate rows report 0.
    let skewness = if std > 1e-12 { m3 / (m2 * std) } else { 0.0 };
    let kurtosis = if std > 1e-12 { m4 / (m2 * m2) } else { 0.0 };
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p25 = percentile_sorted(&sorted, 0.25);
    let p50 = percentile_sorted(&sorted, 0.50);
    let p75 = percentile_sorted(&sorted, 0.75);

    // Least-squares line over the frame index.
    let ibar = (n - 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in row.iter().enumerate() {
        let d = i as f64 - ibar;
        sxy += d * (v - mean);
        sxx += d * d;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let offset = mean - slope * ibar;

    [mean, std, min, max, max - min, skewness, kurtosis, p25, p50, p75, slope, offset]
}

/// Aggregates an LLD matrix into the fixed D_SUP vector.
pub fn apply_functionals(llds: &LldFrameMatrix) -> HandcraftedFeatureVector {
    assert!(llds.values.ncols() >= 2, "apply_functionals needs at least 2 frames");
    let mut out = Vec::with_capacity(llds.values.nrows() * N_FUNCTIONALS);
    for row in llds.values.rows() {
        let row: Vec<f64> = row.iter().copied().collect();
        out.extend_from_slice(&row_functionals(&row));
    }
    HandcraftedFeatureVector { values: Array1::from_vec(out) }
}

/// Convenience: full clip -> feature vector.
pub fn extract_features(clip: &AudioClip) -> Result<HandcraftedFeatureVector> {
    Ok(apply_functionals(&extract_llds(clip)?))
}

/// Per-dimension standardization fitted on a corpus (std clamped at 1e-8).
#[derive(Debug, Clone)]
pub struct FeatureStandardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl FeatureStandardizer {
    pub fn identity(dim: usize) -> Self {
        FeatureStandardizer { mean: Array1::zeros(dim), std: Array1::ones(dim) }
    }

    pub fn apply(&self, v: &HandcraftedFeatureVector) -> HandcraftedFeatureVector {
        assert_eq!(v.values.len(), self.mean.len(), "standardizer dimension mismatch");
        let values = (&v.values - &self.mean) / &self.std;
        HandcraftedFeatureVector { values }
    }
}

pub fn fit_standardizer(corpus: &[HandcraftedFeatureVector]) -> Result<FeatureStandardizer> {
    if corpus.is_empty() {
        return Err(CoreError::Eval("empty feature corpus".into()));
    }
    let dim = corpus[0].values.len();
    let n = corpus.len() as f64;
    let mut mean = Array1::<f64>::zeros(dim);
    for v in corpus {
        assert_eq!(v.values.len(), dim, "inconsistent feature dimension");
        mean += &v.values;
    }
    mean /= n;
    let mut var = Array1::<f64>::zeros(dim);
    for v in corpus {
        let d = &v.values - &mean;
        var += &(&d * &d);
    }
    var /= n;
    let std = var.mapv(|v| v.sqrt().max(1e-8));
    Ok(FeatureStandardizer { mean, std })
}

const HCF_MAGIC: &[u8; 4] = b"HCF1";

/// Binary export: magic "HCF1", u32 dimension, LE f32 values.
pub fn write_hcf_blob<W: Write>(w: &mut W, v: &HandcraftedFeatureVector) -> Result<()> {
    w.write_all(HCF_MAGIC)?;
    w.write_all(&(v.values.len() as u32).to_le_bytes())?;
    for &x in v.values.iter() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_hcf_blob<R: Read>(r: &mut R) -> Result<HandcraftedFeatureVector> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != HCF_MAGIC {
        return Err(CoreError::Format("bad HCF magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut data = Vec::with_capacity(dim);
    for _ in 0..dim {
        r.read_exact(&mut b4)?;
        data.push(f32::from_le_bytes(b4) as f64);
    }
    Ok(HandcraftedFeatureVector { values: Array1::from_vec(data) })
}

/// CSV export: canonical header plus one row of values.
pub fn write_features_csv<W: Write>(w: W, v: &HandcraftedFeatureVector) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(feature_names()).map_err(|e| CoreError::Format(e.to_string()))?;
    wtr.write_record(v.values.iter().map(|x| format!("{x}")))
        .map_err(|e| CoreError::Format(e.to_string()))?;
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, SAMPLE_RATE, "t")
    }

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()).collect()
    }

    #[test]
    fn dimensions_and_names() {
        assert_eq!(D_SUP, 480);
        assert_eq!(feature_names().len(), D_SUP);
        let llds = extract_llds(&clip(sine(220.0, 16000))).unwrap();
        assert_eq!(llds.values.nrows(), 40);
        assert_eq!(llds.lld_names.len(), 40);
        assert_eq!(llds.values.ncols(), 1 + (16000 - 400) / 160);
        let v = apply_functionals(&llds);
        assert_eq!(v.len(), D_SUP);
        assert!(v.values.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn too_short_clip_errors() {
        assert!(extract_llds(&clip(vec![0.0; 719])).is_err());
        assert!(extract_llds(&clip(vec![0.0; 720])).is_ok());
    }

    #[test]
    fn alternating_signal_has_unit_zcr() {
        let samples: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let llds = extract_llds(&clip(samples)).unwrap();
        let zcr_row = llds.lld_names.iter().position(|n| n == "zcr").unwrap();
        for t in 0..llds.values.ncols() {
            assert_eq!(llds.values[(zcr_row, t)], 1.0);
        }
    }

    #[test]
    fn silence_floors_energy_and_zeroes_f0_and_deltas() {
        let llds = extract_llds(&clip(vec![0.0; 2000])).unwrap();
        let names = &llds.lld_names;
        let e = names.iter().position(|n| n == "log_energy").unwrap();
        let f0 = names.iter().position(|n| n == "f0_hz").unwrap();
        let floor = 0.5 * ENERGY_EPS.ln();
        for t in 0..llds.values.ncols() {
            assert!((llds.values[(e, t)] - floor).abs() < 1e-12);
            assert_eq!(llds.values[(f0, t)], 0.0);
        }
        // All deltas zero on constant trajectories.
        for r in N_LLDS..2 * N_LLDS {
            for t in 0..llds.values.ncols() {
                assert_eq!(llds.values[(r, t)], 0.0);
            }
        }
    }

    #[test]
    fn sine_f0_within_5_hz() {
        let llds = extract_llds(&clip(sine(220.0, 16000))).unwrap();
        let f0 = llds.lld_names.iter().position(|n| n == "f0_hz").unwrap();
        let v = llds.lld_names.iter().position(|n| n == "voicing").unwrap();
        let t_frames = llds.values.ncols();
        for t in 2..t_frames - 2 {
            assert!(
                (llds.values[(f0, t)] - 220.0).abs() <= 5.0,
                "frame {t}: f0 = {}",
                llds.values[(f0, t)]
            );
            assert!(llds.values[(v, t)] > VOICING_THRESHOLD);
        }
    }

    #[test]
    fn constant_row_functionals() {
        let f = row_functionals(&[3.5; 50]);
        // mean, std, min, max, range, skew, kurt, p25, p50, p75, slope, offset
        assert_eq!(f[0], 3.5);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 3.5);
        assert_eq!(f[3], 3.5);
        assert_eq!(f[4], 0.0);
        assert_eq!(f[5], 0.0);
        assert_eq!(f[6], 0.0);
        assert_eq!(f[7], 3.5);
        assert_eq!(f[8], 3.5);
        assert_eq!(f[9], 3.5);
        assert_eq!(f[10], 0.0);
        assert_eq!(f[11], 3.5);
    }

    #[test]
    fn linear_ramp_regression_is_exact() {
        let (a, b) = (0.37, -2.25);
        let row: Vec<f64> = (0..100).map(|i| a * i as f64 + b).collect();
        let f = row_functionals(&row);
        assert!((f[10] - a).abs() < 1e-9, "slope {}", f[10]);
        assert!((f[11] - b).abs() < 1e-9, "offset {}", f[11]);
    }

    #[test]
    fn functionals_match_naive_oracle() {
        // Direct-formula reference computed independently.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let row: Vec<f64> = (0..97).map(|_| rng.random_range(-5.0..5.0)).collect();
            let f = row_functionals(&row);
            let n = row.len() as f64;
            let mean: f64 = row.iter().sum::<f64>() / n;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let skew: f64 =
                row.iter().map(|&v| ((v - mean) / std).powi(3)).sum::<f64>() / n;
            let kurt: f64 =
                row.iter().map(|&v| ((v - mean) / std).powi(4)).sum::<f64>() / n;
            let mut srt = row.clone();
            srt.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pct = |q: f64| {
                let pos = q * (srt.len() as f64 - 1.0);
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                srt[lo] + (srt[hi] - srt[lo]) * (pos - lo as f64)
            };
            // Normal equations for the regression line.
            let sx: f64 = (0..row.len()).map(|i| i as f64).sum();
            let sxx: f64 = (0..row.len()).map(|i| (i as f64) * (i as f64)).sum();
            let sy: f64 = row.iter().sum();
            let sxy: f64 = row.iter().enumerate().map(|(i, &v)| i as f64 * v).sum();
            let det = n * sxx - sx * sx;
            let slope = (n * sxy - sx * sy) / det;
            let offset = (sy * sxx - sx * sxy) / det;

            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
            assert!(rel(f[0], mean) < 1e-9);
            assert!(rel(f[1], std) < 1e-9);
            assert!(rel(f[5], skew) < 1e-9);
            assert!(rel(f[6], kurt) < 1e-9);
            assert!(rel(f[7], pct(0.25)) < 1e-9);
            assert!(rel(f[8], pct(0.50)) < 1e-9);
            assert!(rel(f[9], pct(0.75)) < 1e-9);
            assert!(rel(f[10], slope) < 1e-9);
            assert!(rel(f[11], offset) < 1e-9);
        }
    }

    #[test]
    fn amplitude_scale_covariance() {
        let base = sine(220.0, 8000);
        let scaled: Vec<f64> = base.iter().map(|&v| 0.25 * v).collect();
        let l1 = extract_llds(&clip(base)).unwrap();
        let l2 = extract_llds(&clip(scaled)).unwrap();
        let idx = |name: &str| l1.lld_names.iter().position(|n| n == name).unwrap();
        for name in ["zcr", "f0_hz", "centroid_hz"] {
            let r = idx(name);
            for t in 0..l1.values.ncols() {
                assert!(
                    (l1.values[(r, t)] - l2.values[(r, t)]).abs() < 1e-6,
                    "{name} changed under amplitude scaling"
                );
            }
        }
        // Log energy shifts by ln(0.25).
        let e = idx("log_energy");
        for t in 0..l1.values.ncols() {
            let d = l2.values[(e, t)] - l1.values[(e, t)];
            assert!((d - 0.25f64.ln()).abs() < 1e-6, "delta {d}");
        }
    }

    #[test]
    fn standardizer_properties() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // Single-vector corpus standardizes to zero.
        let v = HandcraftedFeatureVector {
            values: Array1::from_vec((0..10).map(|_| rng.random_range(-3.0..3.0)).collect()),
        };
        let st = fit_standardizer(std::slice::from_ref(&v)).unwrap();
        assert!(st.apply(&v).values.iter().all(|&x| x.abs() < 1e-9));

        // {v, -v}: means zero, outputs +/- v/std.
        let neg = HandcraftedFeatureVector { values: -v.values.clone() };
        let st = fit_standardizer(&[v.clone(), neg.clone()]).unwrap();
        assert!(st.mean.iter().all(|&m| m.abs() < 1e-12));
        let sv = st.apply(&v);
        for (s, (orig, sd)) in sv.values.iter().zip(v.values.iter().zip(st.std.iter())) {
            assert!((s - orig / sd).abs() < 1e-9);
        }

        // Large random corpus: post-standardization stats near (0, 1).
        let corpus: Vec<HandcraftedFeatureVector> = (0..200)
            .map(|_| HandcraftedFeatureVector {
                values: Array1::from_vec((0..6).map(|_| rng.random_range(-2.0..5.0)).collect()),
            })
            .collect();
        let st = fit_standardizer(&corpus).unwrap();
        let zs: Vec<_> = corpus.iter().map(|v| st.apply(v)).collect();
        for d in 0..6 {
            let vals: Vec<f64> = zs.iter().map(|z| z.values[d]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let s = (vals.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-6);
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(fit_standardizer(&[]).is_err());
    }

    #[test]
    fn hcf_blob_round_trip() {
        let v = extract_features(&clip(sine(330.0, 4000))).unwrap();
        let mut buf = Vec::new();
        write_hcf_blob(&mut buf, &v).unwrap();
        assert_eq!(&buf[..4], b"HCF1");
        let back = read_hcf_blob(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.len(), D_SUP);
        for (a, b) in back.values.iter().zip(v.values.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let c = clip(sine(523.25, 5000));
        let a = extract_features(&c).unwrap();
        let b = extract_features(&c).unwrap();
        assert_eq!(a.values, b.values);
    }
}
