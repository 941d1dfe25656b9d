//! Central-finite-difference gradient verification.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::params::ParamStore;
use crate::tape::Grads;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: Vec<GradCheckFailure>,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with a small absolute floor so exact zero/zero agreements
/// pass and denormal-scale noise is not amplified.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient against central differences with step `h`
/// for `n_samples` randomly chosen parameter scalars.
///
/// `loss_fn(store, want_grads)` must be a deterministic function of the store
/// contents; it returns gradients only when asked, so the finite-difference
/// probes skip the backward pass.
pub fn check_gradients(
    store: &mut ParamStore,
    loss_fn: &mut dyn FnMut(&ParamStore, bool) -> (f64, Option<Grads>),
    n_samples: usize,
    h: f64,
    tolerance: f64,
    rng: &mut impl Rng,
) -> GradCheckReport {
    let (_, grads) = loss_fn(store, true);
    let grads = grads.expect("loss_fn must return gradients when asked");

    // Sample (tensor, flat index) pairs over all trainable scalars.
    let mut slots: Vec<(String, usize)> = Vec::new();
    for name in store.trainable_names() {
        let len = store.get(&name).len();
        for i in 0..len {
            slots.push((name.clone(), i));
        }
    }
    slots.shuffle(rng);
    slots.truncate(n_samples);

    let mut report = GradCheckReport { checked: 0, failures: Vec::new(), max_rel_err: 0.0 };
    for (name, idx) in slots {
        let analytic = grads.get(&name).map(|g| g.as_slice().unwrap()[idx]).unwrap_or(0.0);

        let orig = store.get(&name).as_slice().unwrap()[idx];
        store.get_mut(&name).as_slice_mut().unwrap()[idx] = orig + h;
        let (loss_plus, _) = loss_fn(store, false);
        store.get_mut(&name).as_slice_mut().unwrap()[idx] = orig - h;
        let (loss_minus, _) = loss_fn(store, false);
        store.get_mut(&name).as_slice_mut().unwrap()[idx] = orig;

        let numeric = (loss_plus - loss_minus) / (2.0 * h);
        let err = rel_err(analytic, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if err > tolerance {
            report.failures.push(GradCheckFailure { name, index: idx, analytic, numeric, rel_err: err });
        }
    }
    report
}
