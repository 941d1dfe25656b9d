//! Paired random augmentation of log-mel segments: shared random crop, then
//! per-view log-domain mixup against a FIFO memory bank and random resize
//! crop (pitch-shift/time-stretch), with per-view re-standardization.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::frontend::{LogMelSpectrogram, NormalizationStats};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Upper bound of the mixing-ratio draw, lambda ~ U(0, mixup_alpha).
    pub mixup_alpha: f64,
    pub memory_capacity: usize,
    pub freq_scale_range: (f64, f64),
    pub time_scale_range: (f64, f64),
    /// Virtual canvas size as a multiple of the input, per axis.
    pub virtual_crop_scale: f64,
    /// Training segment length in frames (96 = the 0.95 s window).
    pub segment_frames: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            mixup_alpha: 0.4,
            memory_capacity: 2048,
            freq_scale_range: (0.6, 1.5),
            time_scale_range: (0.6, 1.5),
            virtual_crop_scale: 1.5,
            segment_frames: 96,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixup_alpha) {
            return Err(CoreError::Config("mixup_alpha must be in [0,1]".into()));
        }
        for (lo, hi) in [self.freq_scale_range, self.time_scale_range] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(CoreError::Config("scale ranges need 0 < lo <= hi".into()));
            }
        }
        if self.segment_frames == 0 {
            return Err(CoreError::Config("segment_frames must be >= 1".into()));
        }
        if self.virtual_crop_scale < 1.0 {
            return Err(CoreError::Config("virtual_crop_scale must be >= 1".into()));
        }
        Ok(())
    }
}

/// FIFO queue of past segments used as mixup background material.
#[derive(Debug, Clone)]
pub struct MixupMemoryBank {
    entries: VecDeque<Array2<f64>>,
    capacity: usize,
}

impl MixupMemoryBank {
    pub fn new(capacity: usize) -> Self {
        MixupMemoryBank { entries: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, seg: Array2<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(seg);
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.entries[idx]
    }
}

/// Two augmented views of one source segment, identical shapes.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub view_a: LogMelSpectrogram,
    pub view_b: LogMelSpectrogram,
}

/// Random temporal crop to exactly `segment_frames` frames. Shorter inputs
/// are cyclically tiled from a random rotation.
pub fn crop_segment(
    lms: &LogMelSpectrogram,
    segment_frames: usize,
    rng: &mut impl Rng,
) -> Result<LogMelSpectrogram> {
    if segment_frames == 0 {
        return Err(CoreError::Config("segment_frames must be >= 1".into()));
    }
    let t = lms.n_frames();
    let n_mels = lms.n_mels();
    let values = if t >= segment_frames {
        let start = rng.random_range(0..=t - segment_frames);
        lms.values.slice(ndarray::s![.., start..start + segment_frames]).to_owned()
    } else {
        let start = rng.random_range(0..t);
        let mut out = Array2::<f64>::zeros((n_mels, segment_frames));
        for j in 0..segment_frames {
            let src = (start + j) % t;
            out.column_mut(j).assign(&lms.values.column(src));
        }
        out
    };
    Ok(LogMelSpectrogram::from_values(values))
}

/// Log-domain mixup with an explicit ratio: `log((1-l)*exp(x) + l*exp(m))`.
/// The endpoints return the inputs exactly.
pub fn mixup_with_lambda(seg: &Array2<f64>, background: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if seg.dim() != background.dim() {
        return Err(CoreError::Config(format!(
            "mixup shape mismatch: {:?} vs {:?}",
            seg.dim(),
            background.dim()
        )));
    }
    if lambda == 0.0 {
        return Ok(seg.clone());
    }
    if lambda == 1.0 {
        return Ok(background.clone());
    }
    let mut out = seg.clone();
    out.zip_mut_with(background, |x, &m| {
        *x = ((1.0 - lambda) * x.exp() + lambda * m.exp()).ln();
    });
    Ok(out)
}

/// Draws lambda ~ U(0, alpha) and a random bank entry, mixes, then pushes the
/// input segment to the bank. An empty bank is the identity.
pub fn mixup(
    seg: &Array2<f64>,
    bank: &mut MixupMemoryBank,
    mixup_alpha: f64,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let out = if bank.is_empty() || mixup_alpha == 0.0 {
        seg.clone()
    } else {
        let lambda = rng.random_range(0.0..mixup_alpha);
        let idx = rng.random_range(0..bank.len());
        mixup_with_lambda(seg, bank.get(idx), lambda)?
    };
    bank.push(seg.clone());
    Ok(out)
}

/// Bilinear resize with half-pixel-center sampling; a same-size resize is an
/// exact copy.
fn bilinear_resize(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for i in 0..out_h {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for j in 0..out_w {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            out[(i, j)] = src[(y0, x0)] * (1.0 - dy) * (1.0 - dx)
                + src[(y0, x1)] * (1.0 - dy) * dx
                + src[(y1, x0)] * dy * (1.0 - dx)
                + src[(y1, x1)] * dy * dx;
        }
    }
    out
}

/// Random resize crop on a zero-padded virtual canvas. Samples frequency and
/// time scales, crops `(round(f*H), round(t*W))` at a uniform offset, and
/// resizes back to the input shape. Draw order: f, t, freq offset, time
/// offset.
pub fn random_resize_crop(
    seg: &Array2<f64>,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let (h, w) = seg.dim();
    let ch = (h as f64 * cfg.virtual_crop_scale).ceil() as usize;
    let cw = (w as f64 * cfg.virtual_crop_scale).ceil() as usize;
    let oy0 = (ch - h) / 2;
    let ox0 = (cw - w) / 2;
    let mut canvas = Array2::<f64>::zeros((ch, cw));
    canvas.slice_mut(ndarray::s![oy0..oy0 + h, ox0..ox0 + w]).assign(&seg.view());

    let (flo, fhi) = cfg.freq_scale_range;
    let (tlo, thi) = cfg.time_scale_range;
    let f = if fhi > flo { rng.random_range(flo..fhi) } else { flo };
    let t = if thi > tlo { rng.random_range(tlo..thi) } else { tlo };
    let crop_h = ((h as f64 * f).round() as usize).clamp(1, ch);
    let crop_w = ((w as f64 * t).round() as usize).clamp(1, cw);
    let oy = rng.random_range(0..=ch - crop_h);
    let ox = rng.random_range(0..=cw - crop_w);
    let crop = canvas.slice(ndarray::s![oy..oy + crop_h, ox..ox + crop_w]).to_owned();
    bilinear_resize(&crop, h, w)
}

/// Standardizes with the array's own mean/std (std clamped at 1e-8).
pub fn restandardize_own(values: &mut Array2<f64>) {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    values.mapv_inplace(|v| (v - mean) / std);
}

/// Full augmentation pipeline for one training example:
/// dataset standardization, one shared crop, then per view independent
/// mixup + random resize crop and per-view re-standardization.
pub fn make_view_pair<R: Rng>(
    lms: &LogMelSpectrogram,
    stats: &NormalizationStats,
    cfg: &AugmentationConfig,
    bank: &mut MixupMemoryBank,
    rng: &mut R,
) -> Result<ViewPair> {
    cfg.validate()?;
    let standardized = crate::frontend::standardize(lms, stats);
    let seg = crop_segment(&standardized, cfg.segment_frames, rng)?;

    let mut make_view = |bank: &mut MixupMemoryBank, rng: &mut R| -> Result<LogMelSpectrogram> {
        let mixed = mixup(&seg.values, bank, cfg.mixup_alpha, rng)?;
        let mut warped = random_resize_crop(&mixed, cfg, rng);
        restandardize_own(&mut warped);
        Ok(LogMelSpectrogram::from_values(warped))
    };
    let view_a = make_view(bank, rng)?;
    let view_b = make_view(bank, rng)?;
    Ok(ViewPair { view_a, view_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_lms(rng: &mut ChaCha8Rng, mels: usize, t: usize) -> LogMelSpectrogram {
        let v: Vec<f64> = (0..mels * t).map(|_| rng.random_range(-2.0..2.0)).collect();
        LogMelSpectrogram::from_values(Array2::from_shape_vec((mels, t), v).unwrap())
    }

    #[test]
    fn crop_exact_width_is_identity() {
        let mut r = rng(1);
        let lms = random_lms(&mut r, 8, 20);
        let seg = crop_segment(&lms, 20, &mut r).unwrap();
        assert_eq!(seg.values, lms.values);
    }

    #[test]
    fn crop_is_source_slice() {
        let mut r = rng(2);
        let lms = random_lms(&mut r, 4, 200);
        for _ in 0..20 {
            let seg = crop_segment(&lms, 96, &mut r).unwrap();
            assert_eq!(seg.n_frames(), 96);
            // Find the matching slice.
            let found = (0..=104).any(|s| {
                seg.values == lms.values.slice(ndarray::s![.., s..s + 96]).to_owned()
            });
            assert!(found, "crop is not a contiguous source slice");
        }
    }

    #[test]
    fn crop_tiles_short_input() {
        let mut r = rng(3);
        let lms = random_lms(&mut r, 4, 10);
        let seg = crop_segment(&lms, 25, &mut r).unwrap();
        assert_eq!(seg.n_frames(), 25);
        // Columns repeat with period 10.
        for j in 0..15 {
            assert_eq!(
                seg.values.column(j).to_owned(),
                seg.values.column(j + 10).to_owned()
            );
        }
        assert!(crop_segment(&lms, 0, &mut r).is_err());
    }

    #[test]
    fn mixup_endpoints_and_self_mix() {
        let mut r = rng(4);
        let a = random_lms(&mut r, 6, 12).values;
        let b = random_lms(&mut r, 6, 12).values;
        assert_eq!(mixup_with_lambda(&a, &b, 0.0).unwrap(), a);
        assert_eq!(mixup_with_lambda(&a, &b, 1.0).unwrap(), b);
        let self_mixed = mixup_with_lambda(&a, &a, 0.37).unwrap();
        for (x, y) in self_mixed.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        let wrong = Array2::<f64>::zeros((6, 13));
        assert!(mixup_with_lambda(&a, &wrong, 0.5).is_err());
    }

    #[test]
    fn mixup_empty_bank_is_identity_and_pushes() {
        let mut r = rng(5);
        let a = random_lms(&mut r, 6, 12).values;
        let mut bank = MixupMemoryBank::new(4);
        let out = mixup(&a, &mut bank, 0.4, &mut r).unwrap();
        assert_eq!(out, a);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn bank_fifo_eviction() {
        let mut bank = MixupMemoryBank::new(3);
        for i in 0..5 {
            bank.push(Array2::from_elem((1, 1), i as f64));
        }
        assert_eq!(bank.len(), 3);
        // First two entries evicted.
        assert_eq!(bank.get(0)[(0, 0)], 2.0);
        assert_eq!(bank.get(2)[(0, 0)], 4.0);
    }

    #[test]
    fn rrc_unit_scales_canvas_1_is_identity() {
        let mut r = rng(6);
        let seg = random_lms(&mut r, 64, 96).values;
        let cfg = AugmentationConfig {
            freq_scale_range: (1.0, 1.0),
            time_scale_range: (1.0, 1.0),
            virtual_crop_scale: 1.0,
            ..Default::default()
        };
        let out = random_resize_crop(&seg, &cfg, &mut r);
        assert_eq!(out, seg);
    }

    #[test]
    fn rrc_constant_input_stays_constant() {
        let mut r = rng(7);
        let seg = Array2::from_elem((64, 96), 1.7);
        // Crops stay inside the input region (canvas == input).
        let cfg = AugmentationConfig {
            freq_scale_range: (0.6, 0.9),
            time_scale_range: (0.6, 0.9),
            virtual_crop_scale: 1.0,
            ..Default::default()
        };
        for _ in 0..10 {
            let out = random_resize_crop(&seg, &cfg, &mut r);
            assert_eq!(out.dim(), (64, 96));
            for &v in out.iter() {
                assert!((v - 1.7).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rrc_seeded_determinism() {
        let mut r = rng(8);
        let seg = random_lms(&mut r, 64, 96).values;
        let cfg = AugmentationConfig::default();
        let out1 = random_resize_crop(&seg, &cfg, &mut rng(99));
        let out2 = random_resize_crop(&seg, &cfg, &mut rng(99));
        assert_eq!(out1, out2);
    }

    #[test]
    fn view_pair_postnorm_and_shapes() {
        let mut r = rng(9);
        let lms = random_lms(&mut r, 64, 150);
        let stats = NormalizationStats { mean: 0.1, std: 1.4 };
        let cfg = AugmentationConfig { segment_frames: 96, ..Default::default() };
        let mut bank = MixupMemoryBank::new(16);
        for _ in 0..5 {
            let pair = make_view_pair(&lms, &stats, &cfg, &mut bank, &mut r).unwrap();
            for v in [&pair.view_a, &pair.view_b] {
                assert_eq!(v.values.dim(), (64, 96));
                let n = v.values.len() as f64;
                let mean = v.values.sum() / n;
                let std = (v.values.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
                assert!(mean.abs() < 1e-6, "mean {mean}");
                assert!((std - 1.0).abs() < 1e-6, "std {std}");
                assert!(v.values.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn view_pair_all_randomness_disabled_gives_equal_views() {
        let mut r = rng(10);
        let lms = random_lms(&mut r, 64, 96);
        let stats = NormalizationStats::identity();
        let cfg = AugmentationConfig {
            mixup_alpha: 0.0,
            freq_scale_range: (1.0, 1.0),
            time_scale_range: (1.0, 1.0),
            virtual_crop_scale: 1.0,
            segment_frames: 96,
            ..Default::default()
        };
        let mut bank = MixupMemoryBank::new(16);
        let pair = make_view_pair(&lms, &stats, &cfg, &mut bank, &mut r).unwrap();
        assert_eq!(pair.view_a.values, pair.view_b.values);
    }

    #[test]
    fn augmentation_stream_reproducible() {
        let mut r1 = rng(11);
        let mut r2 = rng(11);
        let mut src = rng(12);
        let lms = random_lms(&mut src, 64, 200);
        let stats = NormalizationStats::identity();
        let cfg = AugmentationConfig::default();
        let mut bank1 = MixupMemoryBank::new(8);
        let mut bank2 = MixupMemoryBank::new(8);
        for _ in 0..6 {
            let p1 = make_view_pair(&lms, &stats, &cfg, &mut bank1, &mut r1).unwrap();
            let p2 = make_view_pair(&lms, &stats, &cfg, &mut bank2, &mut r2).unwrap();
            assert_eq!(p1.view_a.values, p2.view_a.values);
            assert_eq!(p1.view_b.values, p2.view_b.values);
        }
    }
}
