//! Named parameter storage shared by all layers of a model.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// What a parameter tensor is used for; drives the parameter report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    /// Affine weight whose both dimensions scale with channel width.
    ChannelAffine,
    /// Affine weight producing per-head gates (one dimension fixed by head count).
    GateAffine,
    /// Quality-regression weights.
    HeadAffine,
    Bias,
    Conv,
    Norm,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, kind, value: value.to_param(), trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces the values of a parameter, keeping its trainable flag.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) {
        let e = &mut self.entries[id.0];
        assert_eq!(data.len(), e.value.numel(), "parameter {} size", e.name);
        e.value = if e.trainable {
            Tensor::param(data, e.value.extents()).expect("extents unchanged")
        } else {
            Tensor::new(data, e.value.extents()).expect("extents unchanged")
        };
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = trainable;
            e.value = if trainable { e.value.to_param() } else { e.value.detach() };
        }
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn count_by_kind(&self) -> BTreeMap<ParamKind, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.kind).or_default() += e.value.numel();
        }
        m
    }
}

/// Draws initial values while building layers.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: &str, kind: ParamKind, extents: &[usize], bound: f64) -> ParamId {
        let t = Tensor::uniform(extents, -bound, bound, self.rng);
        self.store.add(name, kind, t)
    }

    pub fn constant(&mut self, name: &str, kind: ParamKind, extents: &[usize], v: f64) -> ParamId {
        self.store.add(name, kind, Tensor::full(extents, v))
    }

    pub fn values(&mut self, name: &str, kind: ParamKind, extents: &[usize], data: Vec<f64>) -> ParamId {
        let t = Tensor::new(data, extents).expect("init extents");
        self.store.add(name, kind, t)
    }

    pub fn sample(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}
