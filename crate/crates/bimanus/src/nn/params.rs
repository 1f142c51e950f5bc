//! Named parameter storage, initialisation, and optimisation.
//!
//! A [`ParamSet`] owns every trainable array of a model, keyed by a stable
//! name. Each training step binds the set onto a fresh graph as leaves,
//! runs forward and backward, collects gradients by name, and hands them to
//! [`Adam`]. Sets serialise to the crate's tensor archive, so checkpoints
//! are deterministic byte-for-byte.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::archive::Archive;
use crate::rngs::Stream;
use crate::{Error, Result};

use super::{Float, Gradients, Graph, Tid};

/// Named collection of trainable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Float> {
    map: BTreeMap<String, ArrayD<F>>,
}

impl<F: Float> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    /// Adds a parameter; a duplicate name is a wiring bug, so it panics.
    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<F>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    /// He-style normal initialisation: std = sqrt(2 / fan_in). Draws are
    /// made in `f64` and converted, so `f32` and `f64` models initialised
    /// from the same stream match to round-off.
    pub fn add_kaiming(
        &mut self,
        rng: &mut Stream,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
    ) {
        let std = (2.0 / fan_in as f64).sqrt();
        self.add_normal(rng, name, shape, std);
    }

    /// Zero-mean normal initialisation with the given standard deviation.
    pub fn add_normal(
        &mut self,
        rng: &mut Stream,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
    ) {
        let v = ArrayD::from_shape_fn(IxDyn(shape), |_| {
            let z: f64 = rng.sample(StandardNormal);
            F::of_f64(z * std)
        });
        self.insert(name, v);
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, ArrayD::zeros(IxDyn(shape)));
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, ArrayD::from_elem(IxDyn(shape), F::one()));
    }

    /// Borrows a parameter; a missing name is a wiring bug, so it panics.
    pub fn get(&self, name: &str) -> &ArrayD<F> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<F> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    /// Number of parameters (arrays).
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Binds every parameter onto `g` as a gradient-bearing leaf.
    pub fn bind_all(&self, g: &mut Graph<F>) -> Binding {
        let ids = self
            .map
            .iter()
            .map(|(name, value)| (name.clone(), g.leaf(value.clone(), true)))
            .collect();
        Binding { ids }
    }

    /// Binds every parameter onto `g` as a gradient-free leaf: the
    /// evaluation-mode (or frozen-weights) counterpart of
    /// [`ParamSet::bind_all`].
    pub fn bind_all_const(&self, g: &mut Graph<F>) -> Binding {
        let ids = self
            .map
            .iter()
            .map(|(name, value)| (name.clone(), g.leaf(value.clone(), false)))
            .collect();
        Binding { ids }
    }

    /// Serialises to a tensor archive (one entry per parameter).
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        for (name, value) in &self.map {
            a.insert(name.clone(), F::into_tensor(value.clone()));
        }
        a
    }

    /// Restores a set from an archive written by [`ParamSet::to_archive`].
    pub fn from_archive(a: &Archive) -> Result<Self> {
        let mut map = BTreeMap::new();
        for name in a.names() {
            if name == crate::archive::META_ENTRY {
                continue;
            }
            let t = a.get(name).unwrap();
            let arr = F::from_tensor(t).ok_or_else(|| {
                Error::CheckpointMismatch(format!(
                    "parameter {name} is not stored as {}",
                    F::DTYPE
                ))
            })?;
            map.insert(name.to_string(), arr);
        }
        Ok(ParamSet { map })
    }

    /// Hash of the serialised parameters; identical iff every array is
    /// byte-identical. Used to prove that frozen components stayed frozen.
    pub fn content_hash(&self) -> String {
        self.to_archive().content_hash()
    }
}

/// Name-to-node mapping produced by [`ParamSet::bind_all`].
pub struct Binding {
    ids: BTreeMap<String, Tid>,
}

impl Binding {
    /// The graph node a parameter was bound to.
    pub fn id(&self, name: &str) -> Tid {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ids.contains_key(name)
    }

    /// Collects gradients by parameter name. Parameters that did not
    /// influence the loss are absent from the result.
    pub fn grads<F: Float>(&self, grads: &mut Gradients<F>) -> BTreeMap<String, ArrayD<F>> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.ids {
            if let Some(g) = grads.take(*id) {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

/// Adam optimiser with bias correction; moments are kept per parameter and
/// allocated lazily on first use.
pub struct Adam<F: Float> {
    /// Step size; mutable so a schedule can reduce it during training.
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: BTreeMap<String, ArrayD<F>>,
    v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &BTreeMap<String, ArrayD<F>>) {
        self.t += 1;
        let b1 = F::of_f64(self.beta1);
        let b2 = F::of_f64(self.beta2);
        let one = F::one();
        let corr1 = F::of_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = F::of_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::of_f64(self.lr);
        let eps = F::of_f64(self.eps);
        for (name, g) in grads {
            let p = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / corr1;
                    let vhat = *v / corr2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Reduce-on-plateau schedule: when the observed metric has not improved
/// for `patience` consecutive observations, signals a reduction.
#[derive(Debug, Clone)]
pub struct Plateau {
    /// Multiplier applied to the learning rate on each reduction.
    pub factor: f64,
    /// Number of non-improving observations tolerated before reducing.
    pub patience: usize,
    best: f64,
    since: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Plateau {
            factor,
            patience,
            best: f64::INFINITY,
            since: 0,
        }
    }

    /// Feeds one metric observation; returns `true` when the rate should be
    /// reduced now (the caller applies `factor` itself).
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.since = 0;
            return false;
        }
        self.since += 1;
        if self.since > self.patience {
            self.since = 0;
            return true;
        }
        false
    }
}
