//! Latent interaction prior: a variational autoencoder over flattened
//! two-hand configurations.
//!
//! The prior learns what *plausible* close two-hand interactions look like
//! from synthesized, physically refined states. Its decoder maps a compact
//! latent vector to a full flattened configuration ([`crate::repr`]); after
//! training the decoder is frozen and reused as the output stage of image
//! reconstruction, which constrains predictions to the learned manifold.
//!
//! Training minimizes
//!
//! > `loss = kl_weight · KL(q(z|x) ‖ N(0, I)) + recon_weight · MSE(x̂, x)`
//!
//! where the posterior `q` is a diagonal Gaussian produced by the encoder
//! and `x̂` is the decoded reparameterized sample. `KL` is averaged over the
//! batch and `MSE` over every element, so the two weights mean the same
//! thing at any batch size or representation width. Setting `kl_weight`
//! to zero turns the model into a plain autoencoder (used as an ablation).
//!
//! Everything here is deterministic given a [`PriorConfig`]: weight
//! initialization, the holdout split, batch composition, and the
//! reparameterization noise each draw from their own named RNG stream.

use ndarray::{Array1, Array2, ArrayView2, Ix2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::{sha256_hex, Archive};
use crate::hand::{penetration_depth, penetration_depth_of_joints, Template};
use crate::nn::{to_f64, Adam, Binding, Float, Graph, ParamSet, Tid};
use crate::repr::{unflatten, ReprKind, Unflattened};
use crate::rngs::{stream, Stream};
use crate::{Error, Result};

/// Everything that determines a trained prior (given the training rows).
///
/// The encoder applies `enc_widths.len() + 1` linear layers with ReLU
/// between them; the final layer emits `2 · d_z` values, read as the
/// posterior mean (first half) and log-variance (second half). The decoder
/// applies `dec_widths.len() + 1` linear layers with ReLU between them and
/// no activation on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Which flattened form of a configuration the model works in.
    pub repr: ReprKind,
    /// Latent dimensionality.
    pub d_z: usize,
    /// Hidden widths of the encoder (the output width is fixed at `2·d_z`).
    pub enc_widths: Vec<usize>,
    /// Hidden widths of the decoder (the output width is fixed by `repr`).
    pub dec_widths: Vec<usize>,
    /// Weight of the KL term. Zero yields a plain autoencoder.
    pub kl_weight: f64,
    /// Weight of the reconstruction term.
    pub recon_weight: f64,
    /// Adam learning rate (held constant for the whole run).
    pub lr: f64,
    /// Rows per training step, drawn with replacement from the train split.
    pub batch: usize,
    /// Number of optimizer steps.
    pub steps: usize,
    /// Fraction of rows set aside for held-out evaluation, in `[0, 1)`.
    pub holdout: f64,
    /// Root seed for every stream the run draws from.
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            repr: ReprKind::Joints3d,
            d_z: 32,
            enc_widths: vec![256, 256, 128],
            dec_widths: vec![128, 256, 256, 256, 128],
            kl_weight: 1.0,
            recon_weight: 100.0,
            lr: 1e-3,
            batch: 64,
            steps: 2000,
            holdout: 0.1,
            seed: 0,
        }
    }
}

impl PriorConfig {
    /// Rejects configurations that cannot train.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d_z == 0 {
            return bad("d_z must be at least 1".into());
        }
        if self.batch == 0 || self.steps == 0 {
            return bad("batch and steps must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must be in [0, 1), got {}", self.holdout));
        }
        for (label, w) in [("kl_weight", self.kl_weight), ("recon_weight", self.recon_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{label} must be finite and non-negative, got {w}"));
            }
        }
        if self.enc_widths.iter().chain(&self.dec_widths).any(|&w| w == 0) {
            return bad("layer widths must be at least 1".into());
        }
        Ok(())
    }

    /// Stable hash of the configuration (hex SHA-256 of its canonical JSON
    /// form). Stamped into checkpoints and training reports.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

/// KL divergence of a diagonal Gaussian `N(μ, diag(exp(logvar)))` from the
/// standard normal: `0.5 · Σ_i (μ_i² + exp(logvar_i) − 1 − logvar_i)`.
///
/// Non-negative, and zero exactly when `μ = 0` and `logvar = 0`.
///
/// ```
/// use bimanus::prior::kl_divergence;
/// assert_eq!(kl_divergence(&[0.0], &[0.0]), 0.0);
/// assert_eq!(kl_divergence(&[1.0], &[0.0]), 0.5);
/// ```
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mu.len(), logvar.len(), "mean/log-variance length mismatch");
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
        * 0.5
}

/// Draws one posterior sample `z = μ + exp(logvar / 2) ⊙ ε`, `ε ~ N(0, I)`.
///
/// The same trick is applied inside the training graph (with ε fed as a
/// constant) so gradients flow through μ and logvar rather than through the
/// draw itself.
pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: &mut Stream) -> Vec<f64> {
    assert_eq!(mu.len(), logvar.len(), "mean/log-variance length mismatch");
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * eps
        })
        .collect()
}

/// `(fan_in, fan_out)` of every encoder and decoder layer, in order.
fn layer_dims(in_dim: usize, config: &PriorConfig) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let chain = |start: usize, widths: &[usize], end: usize| {
        let mut dims = Vec::with_capacity(widths.len() + 1);
        let mut prev = start;
        for &w in widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, end));
        dims
    };
    (
        chain(in_dim, &config.enc_widths, 2 * config.d_z),
        chain(config.d_z, &config.dec_widths, in_dim),
    )
}

/// Fresh parameters: Kaiming-initialized weights, zero biases, and a
/// zero-initialized final encoder layer so the posterior starts exactly at
/// the standard normal (initial KL is zero and its gradient vanishes there).
fn init_params<F: Float>(in_dim: usize, config: &PriorConfig, rng: &mut Stream) -> ParamSet<F> {
    let (enc, dec) = layer_dims(in_dim, config);
    let mut params = ParamSet::new();
    for (i, &(fan_in, fan_out)) in enc.iter().enumerate() {
        let name = format!("enc.{i}.w");
        if i + 1 == enc.len() {
            params.add_zeros(name, &[fan_in, fan_out]);
        } else {
            params.add_kaiming(rng, name, &[fan_in, fan_out], fan_in);
        }
        params.add_zeros(format!("enc.{i}.b"), &[fan_out]);
    }
    for (i, &(fan_in, fan_out)) in dec.iter().enumerate() {
        params.add_kaiming(rng, format!("dec.{i}.w"), &[fan_in, fan_out], fan_in);
        params.add_zeros(format!("dec.{i}.b"), &[fan_out]);
    }
    params
}

/// Builds the encoder on the graph: `x [N, dim]` to `(μ, logvar)`, each
/// `[N, d_z]`.
pub(crate) fn encode_graph<F: Float>(
    config: &PriorConfig,
    g: &mut Graph<F>,
    bind: &Binding,
    x: Tid,
) -> (Tid, Tid) {
    let layers = config.enc_widths.len() + 1;
    let mut h = x;
    for i in 0..layers {
        let w = bind.id(&format!("enc.{i}.w"));
        let b = bind.id(&format!("enc.{i}.b"));
        h = g.linear(h, w, b);
        if i + 1 < layers {
            h = g.relu(h);
        }
    }
    let mu = g.slice_axis(h, 1, 0, config.d_z);
    let logvar = g.slice_axis(h, 1, config.d_z, config.d_z);
    (mu, logvar)
}

/// Builds the decoder on the graph: `z [N, d_z]` to `x̂ [N, dim]`.
pub(crate) fn decode_graph<F: Float>(
    config: &PriorConfig,
    g: &mut Graph<F>,
    bind: &Binding,
    z: Tid,
) -> Tid {
    let layers = config.dec_widths.len() + 1;
    let mut h = z;
    for i in 0..layers {
        let w = bind.id(&format!("dec.{i}.w"));
        let b = bind.id(&format!("dec.{i}.b"));
        h = g.linear(h, w, b);
        if i + 1 < layers {
            h = g.relu(h);
        }
    }
    h
}

/// The loss node and its two reported components (both *unweighted*:
/// `kl` is the batch-mean KL in nats, `recon` the per-element MSE).
pub(crate) struct PriorLossNodes {
    pub loss: Tid,
    pub kl: Tid,
    pub recon: Tid,
}

/// Builds the full training loss for one batch, with the reparameterization
/// noise `eps [N, d_z]` fed as a constant.
pub(crate) fn loss_graph<F: Float>(
    config: &PriorConfig,
    g: &mut Graph<F>,
    bind: &Binding,
    x: &ArrayView2<'_, f64>,
    eps: &ArrayView2<'_, f64>,
) -> PriorLossNodes {
    let n = x.nrows();
    assert_eq!(eps.nrows(), n, "noise/batch row mismatch");
    assert_eq!(eps.ncols(), config.d_z, "noise width must equal d_z");

    let xc = g.constant_f64(&x.view().into_dyn());
    let (mu, logvar) = encode_graph(config, g, bind, xc);

    let half_lv = g.affine(logvar, 0.5, 0.0);
    let std = g.exp(half_lv);
    let epsc = g.constant_f64(&eps.view().into_dyn());
    let noise = g.mul(std, epsc);
    let z = g.add(mu, noise);

    let xhat = decode_graph(config, g, bind, z);
    let recon = g.sq_err_mean(xhat, xc);

    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let mu2_var = g.add(mu2, var);
    let lv_plus_1 = g.affine(logvar, 1.0, 1.0);
    let gap = g.sub(mu2_var, lv_plus_1);
    let total = g.sum_all(gap);
    let kl = g.scale(total, 0.5 / n as f64);

    let kl_term = g.scale(kl, config.kl_weight);
    let recon_term = g.scale(recon, config.recon_weight);
    let loss = g.add(kl_term, recon_term);
    PriorLossNodes { loss, kl, recon }
}

/// A trained (or freshly initialized) interaction prior.
///
/// Immutable once constructed: training produces a new value, and the
/// decoder that later stages reuse is exactly the one captured here, byte
/// for byte ([`Prior::content_hash`] proves it stayed untouched).
#[derive(Debug, Clone)]
pub struct Prior<F: Float> {
    config: PriorConfig,
    params: ParamSet<F>,
}

/// Format tag stored in checkpoint metadata.
const CHECKPOINT_KIND: &str = "interaction-prior";
/// Bumped on any incompatible change to the checkpoint layout.
const CHECKPOINT_VERSION: u64 = 1;

impl<F: Float> Prior<F> {
    /// A freshly initialized model (posterior starts at the standard
    /// normal; see [`init_params` internals](Prior::encode)).
    pub fn init(config: &PriorConfig, rng: &mut Stream) -> Result<Self> {
        config.validate()?;
        let params = init_params(config.repr.dim(), config, rng);
        Ok(Prior {
            config: config.clone(),
            params,
        })
    }

    /// Assembles a model from existing parameters, verifying that their
    /// names and shapes match the architecture exactly.
    pub fn from_parts(config: PriorConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let (enc, dec) = layer_dims(config.repr.dim(), &config);
        let mut expected = 0usize;
        for (prefix, dims) in [("enc", &enc), ("dec", &dec)] {
            for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
                for (suffix, shape) in [("w", vec![fan_in, fan_out]), ("b", vec![fan_out])] {
                    let name = format!("{prefix}.{i}.{suffix}");
                    if !params.contains(&name) {
                        return Err(Error::CheckpointMismatch(format!(
                            "missing parameter {name}"
                        )));
                    }
                    if params.get(&name).shape() != shape.as_slice() {
                        return Err(Error::CheckpointMismatch(format!(
                            "parameter {name} has shape {:?}, expected {shape:?}",
                            params.get(&name).shape()
                        )));
                    }
                    expected += 1;
                }
            }
        }
        if params.len() != expected {
            return Err(Error::CheckpointMismatch(format!(
                "{} parameters stored, architecture has {expected}",
                params.len()
            )));
        }
        Ok(Prior { config, params })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    /// Hash of the serialized parameters; equality proves bit-identical
    /// weights.
    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Width of the flattened representation this model works in.
    pub fn input_dim(&self) -> usize {
        self.config.repr.dim()
    }

    /// Posterior mean and log-variance for a batch of rows, each `[N, d_z]`.
    pub fn encode(&self, x: &ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let dim = self.input_dim();
        if x.ncols() != dim {
            return Err(Error::DimMismatch {
                what: "encoder input",
                expected: dim,
                got: x.ncols(),
            });
        }
        let mut g = Graph::new();
        let bind = self.params.bind_all(&mut g);
        let xc = g.constant_f64(&x.view().into_dyn());
        let (mu, logvar) = encode_graph(&self.config, &mut g, &bind, xc);
        let as2 = |t: Tid, g: &Graph<F>| {
            to_f64(g.value(t))
                .into_dimensionality::<Ix2>()
                .expect("encoder outputs are 2-d")
        };
        Ok((as2(mu, &g), as2(logvar, &g)))
    }

    /// Decoded configurations for a batch of latents: `[N, d_z]` to
    /// `[N, dim]`.
    pub fn decode(&self, z: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.config.d_z {
            return Err(Error::DimMismatch {
                what: "decoder input",
                expected: self.config.d_z,
                got: z.ncols(),
            });
        }
        let mut g = Graph::new();
        let bind = self.params.bind_all(&mut g);
        let zc = g.constant_f64(&z.view().into_dyn());
        let xhat = decode_graph(&self.config, &mut g, &bind, zc);
        Ok(to_f64(g.value(xhat))
            .into_dimensionality::<Ix2>()
            .expect("decoder output is 2-d"))
    }

    /// Draws `n` configurations from the prior: `z ~ N(0, I)` decoded, with
    /// a relative wrist offset picked uniformly from `tau_pool` (typically
    /// the training set's offsets) and the resulting maximum penetration
    /// depth attached where the representation supports it.
    ///
    /// Draw order (for reproducibility): all latent values row-major first,
    /// then one pool index per sample.
    pub fn sample_prior(
        &self,
        rng: &mut Stream,
        n: usize,
        tau_pool: &[[f64; 3]],
        template: &Template,
    ) -> Result<Vec<PriorSample>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if tau_pool.is_empty() {
            return Err(Error::Config(
                "sampling needs a non-empty pool of wrist offsets".into(),
            ));
        }
        let mut z = Array2::<f64>::zeros((n, self.config.d_z));
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let taus: Vec<[f64; 3]> = (0..n)
            .map(|_| tau_pool[rng.gen_range(0..tau_pool.len())])
            .collect();
        let xhat = self.decode(&z.view())?;
        let mut out = Vec::with_capacity(n);
        for (row, &tau) in xhat.outer_iter().zip(&taus) {
            let x_hat = row.to_vec();
            let form = unflatten(self.config.repr, &x_hat, tau)?;
            let penetration = match &form {
                Unflattened::Params(state) => Some(penetration_depth(state, template)),
                Unflattened::Joints(js) => Some(penetration_depth_of_joints(js, template)),
                Unflattened::Vertices(_) => None,
            };
            out.push(PriorSample {
                x_hat,
                tau,
                form,
                penetration,
            });
        }
        Ok(out)
    }

    /// Writes the model to a single-file checkpoint (parameter archive plus
    /// JSON metadata: format kind, version, dtype, config, config hash).
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut archive = self.params.to_archive();
        let meta = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "version": CHECKPOINT_VERSION,
            "dtype": F::DTYPE,
            "config": self.config,
            "config_hash": self.config.content_hash()?,
        });
        archive.set_meta_json(&meta)?;
        archive.save(path)
    }

    /// Loads a checkpoint written by [`Prior::save`], verifying format kind,
    /// version, dtype, and the parameter shapes against its stored config.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let archive = Archive::load(path)?;
        let meta = archive
            .meta_json()?
            .ok_or_else(|| Error::CheckpointMismatch("checkpoint has no metadata".into()))?;
        let expect = |field: &str, want: &serde_json::Value| -> Result<()> {
            if &meta[field] != want {
                return Err(Error::CheckpointMismatch(format!(
                    "{field} is {}, expected {want}",
                    meta[field]
                )));
            }
            Ok(())
        };
        expect("kind", &serde_json::json!(CHECKPOINT_KIND))?;
        expect("version", &serde_json::json!(CHECKPOINT_VERSION))?;
        expect("dtype", &serde_json::json!(F::DTYPE))?;
        let config: PriorConfig = serde_json::from_value(meta["config"].clone())?;
        let params = ParamSet::from_archive(&archive)?;
        Prior::from_parts(config, params)
    }
}

/// One draw from [`Prior::sample_prior`].
#[derive(Debug, Clone)]
pub struct PriorSample {
    /// The decoded flattened configuration.
    pub x_hat: Vec<f64>,
    /// The wrist offset attached to it, mm.
    pub tau: [f64; 3],
    /// The structured form of `x_hat` with `tau` applied.
    pub form: Unflattened,
    /// Maximum penetration depth of the configuration, mm (`None` when the
    /// representation cannot express capsules, i.e. surface points).
    pub penetration: Option<f64>,
}

/// One optimizer step of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorStepLog {
    pub step: usize,
    /// The optimized total (weighted sum of the two components).
    pub loss: f64,
    /// Batch-mean KL divergence, nats (unweighted).
    pub kl: f64,
    /// Per-element reconstruction MSE (unweighted).
    pub recon: f64,
}

/// What a training run did, with held-out quality against the mean-pose
/// baseline (predicting the training-mean row for every input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorTrainReport {
    /// One entry per optimizer step.
    pub log: Vec<PriorStepLog>,
    /// Loss at the final step.
    pub final_loss: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    /// Held-out per-element MSE of posterior-mean reconstructions.
    pub holdout_mse: Option<f64>,
    /// Held-out per-element MSE of the mean-pose baseline.
    pub baseline_mse: Option<f64>,
    /// Held-out mean joint error of reconstructions, mm (`None` for
    /// representations without joints or when there is no holdout).
    pub holdout_mpjpe: Option<f64>,
    /// Held-out mean joint error of the mean-pose baseline, mm.
    pub baseline_mpjpe: Option<f64>,
    /// Hash of the training configuration.
    pub config_hash: String,
}

/// Trains a prior on flattened configuration rows.
///
/// Rows are split into train/holdout by a seeded shuffle; batches are drawn
/// from the train split with replacement; the reparameterization noise is
/// redrawn every step. Aborts with [`Error::NonFinite`] the moment the loss
/// stops being a number, and never silently continues past it.
///
/// Mixing rows from several sources (different datasets, refined and
/// captured states) is fine — the model only sees the matrix.
pub fn train_prior<F: Float>(
    rows: ArrayView2<'_, f64>,
    config: &PriorConfig,
) -> Result<(Prior<F>, PriorTrainReport)> {
    config.validate()?;
    let dim = config.repr.dim();
    if rows.ncols() != dim {
        return Err(Error::DimMismatch {
            what: "prior training rows",
            expected: dim,
            got: rows.ncols(),
        });
    }
    let n = rows.nrows();
    let n_holdout = (config.holdout * n as f64).floor() as usize;
    let n_train = n - n_holdout;
    if n_train < 2 * config.batch {
        return Err(Error::Config(format!(
            "training split has {n_train} rows; need at least two batches ({} rows)",
            2 * config.batch
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(config.seed, "prior-holdout"));
    let (holdout_idx, train_idx) = order.split_at(n_holdout);

    let mut params: ParamSet<F> = init_params(dim, config, &mut stream(config.seed, "prior-init"));
    let mut adam = Adam::new(config.lr);
    let mut batch_rng = stream(config.seed, "prior-batches");
    let mut noise_rng = stream(config.seed, "prior-noise");

    let mut log = Vec::with_capacity(config.steps);
    let mut batch = Array2::<f64>::zeros((config.batch, dim));
    let mut eps = Array2::<f64>::zeros((config.batch, config.d_z));
    for step in 0..config.steps {
        for mut row in batch.outer_iter_mut() {
            let pick = train_idx[batch_rng.gen_range(0..n_train)];
            row.assign(&rows.row(pick));
        }
        for v in eps.iter_mut() {
            *v = noise_rng.sample(StandardNormal);
        }

        let mut g = Graph::new();
        let bind = params.bind_all(&mut g);
        let nodes = loss_graph(config, &mut g, &bind, &batch.view(), &eps.view());
        let loss = g.value_scalar(nodes.loss);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "prior loss".into(),
            });
        }
        log.push(PriorStepLog {
            step,
            loss,
            kl: g.value_scalar(nodes.kl),
            recon: g.value_scalar(nodes.recon),
        });
        let mut grads = g.backward(nodes.loss);
        let grad_map = bind.grads(&mut grads);
        adam.step(&mut params, &grad_map);
    }
    let final_loss = log.last().expect("steps >= 1").loss;

    let prior = Prior {
        config: config.clone(),
        params,
    };

    let mut report = PriorTrainReport {
        log,
        final_loss,
        n_train,
        n_holdout,
        holdout_mse: None,
        baseline_mse: None,
        holdout_mpjpe: None,
        baseline_mpjpe: None,
        config_hash: config.content_hash()?,
    };
    if n_holdout > 0 {
        let mut mean_row = Array1::<f64>::zeros(dim);
        for &k in train_idx {
            mean_row += &rows.row(k);
        }
        mean_row /= n_train as f64;

        let mut held = Array2::<f64>::zeros((n_holdout, dim));
        for (mut row, &k) in held.outer_iter_mut().zip(holdout_idx) {
            row.assign(&rows.row(k));
        }
        let (mu, _) = prior.encode(&held.view())?;
        let recon = prior.decode(&mu.view())?;

        let mse = |pred: &ArrayView2<'_, f64>| {
            let d = pred - &held;
            (&d * &d).mean().expect("holdout is non-empty")
        };
        report.holdout_mse = Some(mse(&recon.view()));
        let tiled = Array2::from_shape_fn((n_holdout, dim), |(_, j)| mean_row[j]);
        report.baseline_mse = Some(mse(&tiled.view()));

        let template = Template::builtin();
        let mean_joint_err = |pred: &Array2<f64>| -> Result<Option<f64>> {
            let mut total = 0.0;
            for (p, t) in pred.outer_iter().zip(held.outer_iter()) {
                let pj = unflatten(config.repr, p.as_slice().expect("row"), [0.0; 3])?
                    .joints(template);
                let tj = unflatten(config.repr, t.as_slice().expect("row"), [0.0; 3])?
                    .joints(template);
                match (pj, tj) {
                    (Some(pj), Some(tj)) => total += pj.mean_joint_distance(&tj),
                    _ => return Ok(None),
                }
            }
            Ok(Some(total / n_holdout as f64))
        };
        report.holdout_mpjpe = mean_joint_err(&recon)?;
        report.baseline_mpjpe = mean_joint_err(&tiled)?;
    }
    Ok((prior, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::{refine_physical, HandState, RefineConfig, ShapeParams};
    use crate::nn::max_param_grad_gap;
    use crate::repr::flatten;
    use crate::synth::sample_single_pose;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, UnitSphere};

    /// A small architecture that still has the full layer structure.
    fn tiny_config(repr: ReprKind) -> PriorConfig {
        PriorConfig {
            repr,
            d_z: 4,
            enc_widths: vec![16, 16, 8],
            dec_widths: vec![8, 16, 16, 16, 8],
            kl_weight: 1.0,
            recon_weight: 100.0,
            lr: 1e-3,
            batch: 8,
            steps: 50,
            holdout: 0.0,
            seed: 11,
            ..PriorConfig::default()
        }
    }

    /// A random in-limits two-hand state with the wrists a given distance
    /// apart (no physical refinement).
    fn random_state(rng: &mut Stream, dist: (f64, f64)) -> HandState {
        let template = Template::builtin();
        let right = sample_single_pose(rng, template, 1.0);
        let left = sample_single_pose(rng, template, 1.0);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let d = rng.gen_range(dist.0..dist.1);
        HandState {
            right,
            left,
            shape: ShapeParams {
                scale: rng.gen_range(0.8..1.2),
                radius_scale: rng.gen_range(0.9..1.1),
            },
            tau: [dir[0] * d, dir[1] * d, dir[2] * d],
        }
    }

    fn state_rows(rng: &mut Stream, n: usize, kind: ReprKind) -> Array2<f64> {
        let template = Template::builtin();
        let mut rows = Array2::zeros((n, kind.dim()));
        for mut row in rows.outer_iter_mut() {
            let s = random_state(rng, (60.0, 160.0));
            let v = flatten(&s, template, kind);
            row.assign(&ndarray::ArrayView1::from(&v[..]));
        }
        rows
    }

    #[test]
    fn kl_closed_form_matches_known_values() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_relative_eq!(kl_divergence(&[1.0], &[0.0]), 0.5, epsilon = 1e-15);
        let lv = 4.0f64.ln();
        assert_relative_eq!(
            kl_divergence(&[0.0], &[lv]),
            0.5 * (4.0 - 1.0 - lv),
            epsilon = 1e-12
        );
        // Additivity over dimensions.
        assert_relative_eq!(
            kl_divergence(&[1.0, 0.0], &[0.0, lv]),
            0.5 + 0.5 * (4.0 - 1.0 - lv),
            epsilon = 1e-12
        );
    }

    /// Independent oracle: KL(q ‖ p) = ∫ q(z) ln(q(z)/p(z)) dz by Simpson's
    /// rule over a wide interval, one dimension at a time.
    fn kl_by_integration(mu: f64, logvar: f64) -> f64 {
        let sigma = (0.5 * logvar).exp();
        let (lo, hi) = (mu - 12.0 * sigma.max(1.0), mu + 12.0 * sigma.max(1.0));
        let n = 40_001; // odd for Simpson's rule
        let h = (hi - lo) / (n - 1) as f64;
        let integrand = |z: f64| {
            let q = (-((z - mu) * (z - mu)) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            if q == 0.0 {
                return 0.0;
            }
            let log_q = -((z - mu) * (z - mu)) / (2.0 * sigma * sigma)
                - sigma.ln()
                - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let log_p = -z * z / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
            q * (log_q - log_p)
        };
        let mut total = integrand(lo) + integrand(hi);
        for i in 1..n - 1 {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * integrand(lo + i as f64 * h);
        }
        total * h / 3.0
    }

    #[test]
    fn kl_matches_numerical_integration() {
        for (mu, lv) in [
            (0.0, 0.0),
            (1.0, 0.0),
            (0.0, 4.0f64.ln()),
            (-0.7, -1.2),
            (2.5, 0.8),
        ] {
            let closed = kl_divergence(&[mu], &[lv]);
            let numeric = kl_by_integration(mu, lv);
            assert_relative_eq!(closed, numeric, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_only_at_the_standard_normal() {
        let mut rng = stream(3, "kl-prop");
        for _ in 0..200 {
            let mu: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let kl = kl_divergence(&mu, &lv);
            assert!(kl >= 0.0, "KL({mu:?}, {lv:?}) = {kl} < 0");
            let off_standard = mu.iter().any(|&m| m.abs() > 1e-3)
                || lv.iter().any(|&l| l.abs() > 1e-3);
            if off_standard {
                assert!(kl > 0.0, "KL vanished away from the standard normal");
            }
        }
        assert_eq!(kl_divergence(&[0.0; 8], &[0.0; 8]), 0.0);
    }

    #[test]
    fn reparameterized_samples_match_requested_moments() {
        let n = 100_000;
        let mu = 0.5;
        let lv = 4.0f64.ln(); // variance 4, std 2
        let mut rng = stream(4, "reparam");
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = reparameterize(&[mu], &[lv], &mut rng)[0];
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // Standard error of the mean is σ/√n; allow three of them.
        assert!(
            (mean - mu).abs() < 3.0 * 2.0 / (n as f64).sqrt(),
            "sample mean {mean} too far from {mu}"
        );
        assert!(
            (var - 4.0).abs() < 0.03 * 4.0,
            "sample variance {var} not within 3% of 4"
        );
    }

    #[test]
    fn single_linear_encoder_and_decoder_match_hand_computation() {
        // No hidden layers: the encoder is one linear map to 2·d_z and the
        // decoder one linear map back, so a plain nested loop is an oracle.
        let config = PriorConfig {
            repr: ReprKind::Params,
            d_z: 2,
            enc_widths: vec![],
            dec_widths: vec![],
            ..PriorConfig::default()
        };
        let dim = config.repr.dim();
        let mut params = ParamSet::<f64>::new();
        let val = |i: usize, j: usize| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4;
        params.insert(
            "enc.0.w",
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[dim, 4]), |ix| val(ix[0], ix[1])),
        );
        params.insert(
            "enc.0.b",
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[4]), |ix| val(5, ix[0])),
        );
        params.insert(
            "dec.0.w",
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[2, dim]), |ix| val(ix[0] + 1, ix[1])),
        );
        params.insert(
            "dec.0.b",
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[dim]), |ix| val(3, ix[0])),
        );
        let prior = Prior::from_parts(config, params).unwrap();

        let x = Array2::from_shape_fn((1, dim), |(_, j)| (j as f64 * 0.3).sin());
        let (mu, lv) = prior.encode(&x.view()).unwrap();
        for j in 0..4 {
            let mut want = val(5, j);
            for i in 0..dim {
                want += x[[0, i]] * val(i, j);
            }
            let got = if j < 2 { mu[[0, j]] } else { lv[[0, j - 2]] };
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }

        let z = Array2::from_shape_fn((1, 2), |(_, j)| 0.3 + j as f64);
        let xh = prior.decode(&z.view()).unwrap();
        for j in 0..dim {
            let want = val(3, j) + z[[0, 0]] * val(1, j) + z[[0, 1]] * val(2, j);
            assert_relative_eq!(xh[[0, j]], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn zeroed_parameters_decode_to_zero() {
        let config = tiny_config(ReprKind::Params);
        let mut params = ParamSet::<f64>::new();
        let (enc, dec) = layer_dims(config.repr.dim(), &config);
        for (prefix, dims) in [("enc", &enc), ("dec", &dec)] {
            for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
                params.add_zeros(format!("{prefix}.{i}.w"), &[fan_in, fan_out]);
                params.add_zeros(format!("{prefix}.{i}.b"), &[fan_out]);
            }
        }
        let prior = Prior::from_parts(config.clone(), params).unwrap();
        let z = Array2::from_shape_fn((3, config.d_z), |(i, j)| (i + j) as f64 - 1.0);
        let xh = prior.decode(&z.view()).unwrap();
        assert!(xh.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let config = tiny_config(ReprKind::Params);
        let prior: Prior<f64> = Prior::init(&config, &mut stream(1, "init")).unwrap();
        let bad_x = Array2::<f64>::zeros((2, config.repr.dim() + 1));
        assert!(matches!(
            prior.encode(&bad_x.view()),
            Err(Error::DimMismatch { expected, got, .. }) if expected == 48 && got == 49
        ));
        let bad_z = Array2::<f64>::zeros((2, config.d_z - 1));
        assert!(matches!(
            prior.decode(&bad_z.view()),
            Err(Error::DimMismatch { .. })
        ));
        let bad_rows = Array2::<f64>::zeros((64, config.repr.dim() - 1));
        assert!(matches!(
            train_prior::<f32>(bad_rows.view(), &config),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn fresh_models_start_at_the_standard_normal_posterior() {
        let config = tiny_config(ReprKind::Params);
        let prior: Prior<f64> = Prior::init(&config, &mut stream(9, "init")).unwrap();
        let mut rng = stream(10, "x");
        let x = Array2::from_shape_fn((5, config.repr.dim()), |_| rng.gen_range(-1.0..1.0));
        let (mu, lv) = prior.encode(&x.view()).unwrap();
        assert!(mu.iter().all(|&v| v == 0.0), "fresh posterior mean not 0");
        assert!(lv.iter().all(|&v| v == 0.0), "fresh posterior logvar not 0");
        // With μ = 0 and logvar = 0, a reparameterized draw is exactly ε.
        let mut r1 = stream(11, "eps");
        let mut r2 = stream(11, "eps");
        let z = reparameterize(&[0.0; 4], &[0.0; 4], &mut r1);
        let eps: Vec<f64> = (0..4).map(|_| r2.sample::<f64, _>(StandardNormal)).collect();
        assert_eq!(z, eps);
    }

    #[test]
    fn heavy_reconstruction_weight_memorizes_a_duplicated_state() {
        let template = Template::builtin();
        let state = random_state(&mut stream(21, "memo"), (60.0, 160.0));
        let row = flatten(&state, template, ReprKind::Params);
        let mut rows = Array2::zeros((16, row.len()));
        for mut r in rows.outer_iter_mut() {
            r.assign(&ndarray::ArrayView1::from(&row[..]));
        }
        let config = PriorConfig {
            recon_weight: 1e5,
            lr: 1e-2,
            steps: 600,
            ..tiny_config(ReprKind::Params)
        };
        let (prior, report) = train_prior::<f32>(rows.view(), &config).unwrap();
        assert_eq!(report.n_holdout, 0);
        assert!(report.holdout_mse.is_none() && report.holdout_mpjpe.is_none());
        let tail = &report.log[report.log.len() - 10..];
        let recon = tail.iter().map(|l| l.recon).sum::<f64>() / tail.len() as f64;
        assert!(
            recon < 1e-3,
            "failed to memorize a single duplicated state: tail recon MSE {recon}"
        );
        // The posterior mean reconstructs the memorized state.
        let (mu, _) = prior.encode(&rows.slice(ndarray::s![..1, ..])).unwrap();
        let xh = prior.decode(&mu.view()).unwrap();
        let err = xh
            .row(0)
            .iter()
            .zip(&row)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / row.len() as f64;
        assert!(err < 1e-2, "posterior-mean reconstruction off by MSE {err}");
    }

    #[test]
    fn training_loss_decreases_on_random_pose_data() {
        let rows = state_rows(&mut stream(31, "win"), 256, ReprKind::Joints3d);
        let config = PriorConfig {
            repr: ReprKind::Joints3d,
            d_z: 8,
            enc_widths: vec![32, 32, 16],
            dec_widths: vec![16, 32, 32, 32, 16],
            batch: 32,
            steps: 400,
            holdout: 0.0,
            seed: 5,
            ..PriorConfig::default()
        };
        let (_, report) = train_prior::<f32>(rows.view(), &config).unwrap();
        let window = |range: std::ops::Range<usize>| {
            report.log[range.clone()].iter().map(|l| l.loss).sum::<f64>() / range.len() as f64
        };
        let first = window(0..100);
        let last = window(300..400);
        assert!(
            last < 0.8 * first,
            "loss did not drop: first-window mean {first}, last-window mean {last}"
        );
        assert!(report.log.len() == 400 && report.final_loss.is_finite());
    }

    #[test]
    fn reconstruction_beats_the_mean_pose_baseline_on_held_out_rows() {
        let rows = state_rows(&mut stream(41, "recon"), 400, ReprKind::Joints3d);
        let config = PriorConfig {
            repr: ReprKind::Joints3d,
            d_z: 8,
            enc_widths: vec![64, 64, 32],
            dec_widths: vec![32, 64, 64, 64, 32],
            batch: 32,
            steps: 600,
            holdout: 0.15,
            seed: 6,
            ..PriorConfig::default()
        };
        let (_, report) = train_prior::<f32>(rows.view(), &config).unwrap();
        assert_eq!(report.n_holdout, 60);
        let (h_mse, b_mse) = (report.holdout_mse.unwrap(), report.baseline_mse.unwrap());
        let (h_jnt, b_jnt) = (report.holdout_mpjpe.unwrap(), report.baseline_mpjpe.unwrap());
        assert!(
            h_mse < b_mse,
            "held-out MSE {h_mse} not below mean-pose baseline {b_mse}"
        );
        assert!(
            h_jnt < b_jnt,
            "held-out joint error {h_jnt} not below mean-pose baseline {b_jnt}"
        );
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let rows = state_rows(&mut stream(51, "det"), 32, ReprKind::Params);
        let config = PriorConfig {
            steps: 60,
            ..tiny_config(ReprKind::Params)
        };
        let (p1, r1) = train_prior::<f32>(rows.view(), &config).unwrap();
        let (p2, r2) = train_prior::<f32>(rows.view(), &config).unwrap();
        assert_eq!(r1.final_loss.to_bits(), r2.final_loss.to_bits());
        assert_eq!(p1.content_hash(), p2.content_hash());
        // A different seed takes a different path.
        let other = PriorConfig {
            seed: config.seed + 1,
            ..config
        };
        let (p3, _) = train_prior::<f32>(rows.view(), &other).unwrap();
        assert_ne!(p1.content_hash(), p3.content_hash());
    }

    #[test]
    fn checkpoints_round_trip_and_reject_mismatched_dtype() {
        let config = tiny_config(ReprKind::Params);
        let prior: Prior<f32> = Prior::init(&config, &mut stream(61, "ckpt")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.ckpt");
        prior.save(&path).unwrap();

        let loaded: Prior<f32> = Prior::load(&path).unwrap();
        assert_eq!(loaded.content_hash(), prior.content_hash());
        assert_eq!(loaded.config(), prior.config());
        let z = Array2::from_shape_fn((2, config.d_z), |(i, j)| (i as f64) - (j as f64) * 0.5);
        assert_eq!(
            prior.decode(&z.view()).unwrap(),
            loaded.decode(&z.view()).unwrap()
        );

        assert!(matches!(
            Prior::<f64>::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));

        // A parameter set that does not match the architecture is refused.
        let mut archive = prior.params().to_archive();
        archive.remove("dec.0.b").unwrap();
        let short = ParamSet::<f32>::from_archive(&archive).unwrap();
        assert!(matches!(
            Prior::from_parts(config.clone(), short),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // Tiny widths, every layer dimension at most 8, checked in f64.
        let config = PriorConfig {
            repr: ReprKind::Params, // layer sizes below override its dim
            d_z: 2,
            enc_widths: vec![5, 4, 4],
            dec_widths: vec![3, 4, 4, 5, 6],
            kl_weight: 1.0,
            recon_weight: 100.0,
            ..PriorConfig::default()
        };
        let in_dim = 6;
        let mut params: ParamSet<f64> =
            init_params(in_dim, &config, &mut stream(71, "gradcheck"));
        // Perturb every parameter off its starting point: the zero final
        // encoder layer is a stationary point of the KL term, and zero
        // biases can leave narrow layers with pre-activations exactly at
        // the ReLU kink, where a finite difference straddles the corner.
        let mut rng = stream(72, "nudge");
        let names: Vec<String> = params.names().map(String::from).collect();
        for name in &names {
            for v in params.get_mut(name).iter_mut() {
                *v += rng.gen_range(0.05..0.3) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
        }
        let mut x = Array2::<f64>::zeros((3, in_dim));
        let mut eps = Array2::<f64>::zeros((3, config.d_z));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in eps.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }

        let mut g = Graph::new();
        let bind = params.bind_all(&mut g);
        let nodes = loss_graph(&config, &mut g, &bind, &x.view(), &eps.view());
        let mut grads = g.backward(nodes.loss);
        let analytic = bind.grads(&mut grads);

        let gap = max_param_grad_gap(&mut params, &analytic, 1e-5, |p| {
            let mut g = Graph::new();
            let bind = p.bind_all(&mut g);
            let nodes = loss_graph(&config, &mut g, &bind, &x.view(), &eps.view());
            g.value_scalar(nodes.loss)
        });
        assert!(gap <= 1e-4, "worst gradient gap {gap} above 1e-4");
    }

    #[test]
    fn sampling_is_deterministic_and_reports_penetration() {
        let template = Template::builtin();
        let config = tiny_config(ReprKind::Params);
        let prior: Prior<f32> = Prior::init(&config, &mut stream(81, "sample")).unwrap();
        let pool = [[-90.0, 5.0, 0.0], [0.0, 110.0, -10.0]];

        assert!(prior
            .sample_prior(&mut stream(82, "draws"), 0, &pool, template)
            .unwrap()
            .is_empty());
        assert!(matches!(
            prior.sample_prior(&mut stream(82, "draws"), 3, &[], template),
            Err(Error::Config(_))
        ));

        let a = prior
            .sample_prior(&mut stream(82, "draws"), 5, &pool, template)
            .unwrap();
        let b = prior
            .sample_prior(&mut stream(82, "draws"), 5, &pool, template)
            .unwrap();
        assert_eq!(a.len(), 5);
        for (s1, s2) in a.iter().zip(&b) {
            assert_eq!(s1.x_hat, s2.x_hat);
            assert_eq!(s1.tau, s2.tau);
            assert_eq!(s1.penetration, s2.penetration);
            assert!(pool.contains(&s1.tau));
            assert!(s1.penetration.is_some());
            assert!(matches!(s1.form, Unflattened::Params(_)));
        }

        // Surface-point models cannot report capsule penetration.
        let vconfig = PriorConfig {
            repr: ReprKind::Vertices,
            d_z: 2,
            enc_widths: vec![4],
            dec_widths: vec![4],
            ..PriorConfig::default()
        };
        let vprior: Prior<f32> = Prior::init(&vconfig, &mut stream(83, "sample")).unwrap();
        let vs = vprior
            .sample_prior(&mut stream(84, "draws"), 2, &pool, template)
            .unwrap();
        assert!(vs.iter().all(|s| s.penetration.is_none()));
    }

    #[test]
    fn samples_from_refined_training_data_penetrate_less_than_raw_splices() {
        let template = Template::builtin();
        let refine = RefineConfig::default();
        let mut rng = stream(91, "refined-data");

        // Refined close interactions to learn from, keeping their offsets.
        let mut rows = Vec::new();
        let mut pool = Vec::new();
        while rows.len() < 96 {
            let raw = random_state(&mut rng, (60.0, 160.0));
            let (refined, report) = refine_physical(&raw, template, &refine, &mut rng);
            if report.converged {
                rows.push(flatten(&refined, template, ReprKind::Params));
                pool.push(refined.tau);
            }
        }
        let dim = ReprKind::Params.dim();
        let mut data = Array2::zeros((rows.len(), dim));
        for (mut r, v) in data.outer_iter_mut().zip(&rows) {
            r.assign(&ndarray::ArrayView1::from(&v[..]));
        }
        let config = PriorConfig {
            d_z: 8,
            enc_widths: vec![32, 32, 16],
            dec_widths: vec![16, 32, 32, 32, 16],
            batch: 16,
            steps: 500,
            ..tiny_config(ReprKind::Params)
        };
        let (prior, _) = train_prior::<f32>(data.view(), &config).unwrap();

        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let samples = prior
            .sample_prior(&mut stream(92, "draws"), 100, &pool, template)
            .unwrap();
        let sampled: Vec<f64> = samples.iter().map(|s| s.penetration.unwrap()).collect();

        let mut raw_rng = stream(93, "raw-splices");
        let raw: Vec<f64> = (0..100)
            .map(|_| {
                let s = random_state(&mut raw_rng, (60.0, 160.0));
                penetration_depth(&s, template)
            })
            .collect();

        let (ms, mr) = (median(sampled), median(raw));
        assert!(
            ms < mr,
            "median sampled penetration {ms} not below raw-splice median {mr}"
        );
    }

    #[test]
    fn config_validation_rejects_bad_values_and_unknown_keys() {
        assert!(PriorConfig::default().validate().is_ok());
        for broken in [
            PriorConfig {
                d_z: 0,
                ..PriorConfig::default()
            },
            PriorConfig {
                batch: 0,
                ..PriorConfig::default()
            },
            PriorConfig {
                holdout: 1.0,
                ..PriorConfig::default()
            },
            PriorConfig {
                lr: 0.0,
                ..PriorConfig::default()
            },
            PriorConfig {
                kl_weight: -1.0,
                ..PriorConfig::default()
            },
            PriorConfig {
                enc_widths: vec![32, 0],
                ..PriorConfig::default()
            },
        ] {
            assert!(matches!(broken.validate(), Err(Error::Config(_))));
        }

        // Unknown keys are typos, not extensions.
        assert!(serde_json::from_str::<PriorConfig>(r#"{"d_zz": 3}"#).is_err());
        // Partial configs fill in defaults.
        let partial: PriorConfig = serde_json::from_str(r#"{"d_z": 7}"#).unwrap();
        assert_eq!(partial.d_z, 7);
        assert_eq!(partial.batch, PriorConfig::default().batch);
        // The hash covers every field.
        assert_ne!(
            partial.content_hash().unwrap(),
            PriorConfig::default().content_hash().unwrap()
        );
    }

    #[test]
    fn divergent_training_aborts_with_a_non_finite_error() {
        let rows = state_rows(&mut stream(101, "diverge"), 32, ReprKind::Params);
        let config = PriorConfig {
            lr: 1e12,
            steps: 50,
            ..tiny_config(ReprKind::Params)
        };
        match train_prior::<f32>(rows.view(), &config) {
            Err(Error::NonFinite { what, .. }) => assert_eq!(what, "prior loss"),
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }
}
