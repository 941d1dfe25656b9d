//! Named parameter storage shared by networks and optimizers.

use std::collections::BTreeMap;

use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct Entry {
    pub value: ArrayD<f64>,
    /// Trainable parameters receive gradients; buffers (e.g. batch-norm
    /// running statistics) are carried along but never optimized.
    pub trainable: bool,
}

/// A flat, name-keyed tensor store. Keys use dotted paths such as
/// `online.encoder.block1.conv.weight`; iteration order is lexicographic and
/// therefore stable across runs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: &str, value: ArrayD<f64>) {
        let prev = self.entries.insert(name.to_string(), Entry { value, trainable: true });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn insert_buffer(&mut self, name: &str, value: ArrayD<f64>) {
        let prev = self.entries.insert(name.to_string(), Entry { value, trainable: false });
        assert!(prev.is_none(), "duplicate buffer {name}");
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        &self.entries.get(name).unwrap_or_else(|| panic!("missing tensor {name}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("missing tensor {name}")).value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|e| e.trainable).unwrap_or(false)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries.iter().filter(|(_, e)| e.trainable).map(|(k, _)| k.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars under a dotted-path prefix
    /// ("" counts everything).
    pub fn num_trainable_scalars(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, e)| e.trainable && k.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    /// Copies every entry whose name starts with `from` into `dst` with the
    /// prefix rewritten to `to`, preserving trainability.
    pub fn copy_subtree(&self, from: &str, to: &str, dst: &mut ParamStore) {
        for (k, e) in &self.entries {
            if let Some(rest) = k.strip_prefix(from) {
                dst.entries.insert(format!("{to}{rest}"), e.clone());
            }
        }
    }

    /// In-place exponential moving average: for every entry of `self` with a
    /// matching name in `online`, `self = tau*self + (1-tau)*online`.
    pub fn ema_from(&mut self, online: &ParamStore, map_name: impl Fn(&str) -> String, tau: f64) {
        for (k, e) in self.entries.iter_mut() {
            let src = map_name(k);
            let o = &online.entries.get(&src).unwrap_or_else(|| panic!("ema: missing online tensor {src}")).value;
            assert_eq!(o.shape(), e.value.shape(), "ema shape mismatch for {k}");
            e.value.zip_mut_with(o, |t, &s| *t = tau * *t + (1.0 - tau) * s);
        }
    }
}
