//! Convolutional feature extractor: one RGB image in, a per-joint heatmap
//! stack, a per-hand saliency pair, and a wrist-offset regression out.
//!
//! The backbone is a residual encoder with four cascading stages; a
//! symmetric four-block upsampling decoder with skip connections brings the
//! deepest features back to heatmap resolution and emits every output map
//! through one shared final layer. A small fully connected head on the
//! globally pooled deepest stage regresses the left-wrist offset τ.
//!
//! The training loss is
//!
//! ```text
//! L = Σ‖Ĥ − H*‖² + λ_s·‖M̂ − M*‖² + λ_τ·‖τ̂ − τ*‖²
//! ```
//!
//! summed per sample and averaged over the batch, with τ measured in
//! decimetres internally (see [`TAU_UNIT_MM`]) so all three terms live at
//! comparable scales; the public interface reports τ in millimetres.
//!
//! Everything is deterministic: initialisation, batch composition, and
//! augmentation each draw from their own named streams derived from the
//! config seed, and all kernels run single-threaded.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, ArrayViewD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{sha256_hex, Archive};
use crate::augment::{augment_sample, AugmentConfig, Sample2d};
use crate::camera::Camera;
use crate::hand::{Template, TOTAL_JOINTS};
use crate::iah::{iah_ground_truth, IahConfig};
use crate::nn::{to_f64, Adam, Binding, Float, Graph, ParamSet, Tid};
use crate::rngs::stream;
use crate::synth::SampleRecord;
use crate::{Error, Result};

const CHECKPOINT_KIND: &str = "feature-extractor";
const CHECKPOINT_VERSION: u32 = 1;

/// Millimetres per internal wrist-offset unit. The τ head regresses
/// decimetres so a typical two-hand offset is O(1); every public τ value is
/// converted back to millimetres.
pub const TAU_UNIT_MM: f64 = 100.0;

/// Extractor architecture and training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Channel widths of the four encoder stages.
    pub stage_widths: [usize; 4],
    /// Spatial reduction performed by the stem before stage 1: 4, 2, or 1.
    /// Heatmaps come out at `image_size / stem_downsample`.
    pub stem_downsample: usize,
    /// Expected input image side length (square images).
    pub image_size: usize,
    /// Weight of the saliency term.
    pub lambda_saliency: f64,
    /// Weight of the wrist-offset term (τ in internal units).
    pub lambda_tau: f64,
    /// Adam learning rate, fixed for the whole run.
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    /// Fraction of records held out for validation curves.
    pub holdout: f64,
    pub seed: u64,
    /// Augmentation recipe applied to every training draw.
    pub augment: AugmentConfig,
    /// Ground-truth heatmap recipe; its grid must equal
    /// `image_size / stem_downsample` and its channel count fixes the
    /// heatmap half of the final layer.
    pub iah: IahConfig,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            stage_widths: [32, 64, 128, 256],
            stem_downsample: 4,
            image_size: 256,
            lambda_saliency: 1.0,
            lambda_tau: 2000.0,
            lr: 1e-4,
            batch: 64,
            steps: 2000,
            holdout: 0.1,
            seed: 0,
            augment: AugmentConfig::default(),
            iah: IahConfig::default(),
        }
    }
}

impl ExtractorConfig {
    /// The desk-scale preset: narrower stages and a small batch, sized so a
    /// full training run fits a single CPU core. Stage 1 keeps 20 channels —
    /// the feature width the fusion stage consumes.
    pub fn desk() -> Self {
        ExtractorConfig {
            stage_widths: [20, 40, 80, 160],
            batch: 8,
            steps: 600,
            ..ExtractorConfig::default()
        }
    }

    /// Heatmap channels of the final layer (42 per-joint maps, or 1 for the
    /// all-in-one variant); the final layer adds 2 saliency channels.
    pub fn heatmap_channels(&self) -> usize {
        self.iah.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stage_widths.iter().any(|&w| w == 0) {
            return bad(format!("stage widths must be positive, got {:?}", self.stage_widths));
        }
        if ![1, 2, 4].contains(&self.stem_downsample) {
            return bad(format!("stem_downsample must be 1, 2, or 4, got {}", self.stem_downsample));
        }
        let unit = self.stem_downsample * 8;
        if self.image_size == 0 || self.image_size % unit != 0 {
            return bad(format!(
                "image_size must be a positive multiple of {unit} (stem_downsample * 8), got {}",
                self.image_size
            ));
        }
        for (name, v) in [
            ("lambda_saliency", self.lambda_saliency),
            ("lambda_tau", self.lambda_tau),
            ("lr", self.lr),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if self.batch == 0 || self.steps == 0 {
            return bad("batch and steps must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must be in [0, 1), got {}", self.holdout));
        }
        self.augment.validate()?;
        self.iah.validate()?;
        let grid = self.image_size / self.stem_downsample;
        if self.iah.grid != grid {
            return bad(format!(
                "heatmap grid {} does not match image_size / stem_downsample = {grid}",
                self.iah.grid
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    /// Stem convolution strides for the configured downsample factor.
    fn stem_strides(&self) -> (usize, usize) {
        match self.stem_downsample {
            4 => (2, 2),
            2 => (2, 1),
            _ => (1, 1),
        }
    }
}

/// How a parameter is initialised.
enum Init {
    /// He-normal with the given fan-in.
    Kaiming(usize),
    /// All zeros (biases, and the final layers that must start silent).
    Zeros,
}

/// The full parameter table: name, shape, and initialisation, in
/// initialisation draw order.
fn param_table(cfg: &ExtractorConfig) -> Vec<(String, Vec<usize>, Init)> {
    let [w0, w1, w2, w3] = cfg.stage_widths;
    let out_ch = cfg.heatmap_channels() + 2;
    let mut t: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut conv = |name: &str, co: usize, ci: usize, k: usize, zero: bool| {
        let init = if zero { Init::Zeros } else { Init::Kaiming(ci * k * k) };
        t.push((format!("{name}.w"), vec![co, ci, k, k], init));
        t.push((format!("{name}.b"), vec![co], Init::Zeros));
    };
    conv("stem.0", w0, 3, 3, false);
    conv("stem.1", w0, w0, 3, false);
    conv("res1.a", w0, w0, 3, false);
    conv("res1.b", w0, w0, 1, false);
    conv("down2", w1, w0, 3, false);
    conv("res2.a", w1, w1, 3, false);
    conv("res2.b", w1, w1, 1, false);
    conv("down3", w2, w1, 3, false);
    conv("res3.a", w2, w2, 3, false);
    conv("res3.b", w2, w2, 1, false);
    conv("down4", w3, w2, 3, false);
    conv("res4.a", w3, w3, 3, false);
    conv("res4.b", w3, w3, 1, false);
    conv("up1", w2, w3, 1, false);
    conv("fuse1", w2, w2, 3, false);
    conv("up2", w1, w2, 1, false);
    conv("fuse2", w1, w1, 3, false);
    conv("up3", w0, w1, 1, false);
    conv("fuse3", w0, w0, 3, false);
    conv("dec4", w0, w0, 3, false);
    // The shared final layer starts at zero so a fresh model emits flat
    // heatmaps and 0.5 saliency.
    conv("head", out_ch, w0, 1, true);
    let mut fc = |name: &str, din: usize, dout: usize, zero: bool| {
        let init = if zero { Init::Zeros } else { Init::Kaiming(din) };
        t.push((format!("{name}.w"), vec![din, dout], init));
        t.push((format!("{name}.b"), vec![dout], Init::Zeros));
    };
    fc("tau.0", w3, w3, false);
    // Zero-initialised so a fresh model predicts τ = 0.
    fc("tau.1", w3, 3, true);
    t
}

fn init_params<F: Float>(cfg: &ExtractorConfig) -> ParamSet<F> {
    let mut rng = stream(cfg.seed, "extractor-init");
    let mut params = ParamSet::new();
    for (name, shape, init) in param_table(cfg) {
        match init {
            Init::Kaiming(fan_in) => params.add_kaiming(&mut rng, name, &shape, fan_in),
            Init::Zeros => params.add_zeros(name, &shape),
        }
    }
    params
}

/// Output nodes of one forward pass.
pub(crate) struct ForwardNodes {
    /// Stage-1 feature map `[N, w0, g, g]`.
    pub f: Tid,
    /// Raw heatmap stack `[N, hc, g, g]` (no output activation).
    pub h: Tid,
    /// Saliency probabilities `[N, 2, g, g]` (after the sigmoid).
    pub m: Tid,
    /// Wrist offset `[N, 3]` in internal (decimetre) units.
    pub tau: Tid,
}

/// Builds the forward pass on `g` for a `[N, 3, S, S]` image batch bound as
/// `images`. Used by extraction, training, and the fusion stage.
pub(crate) fn forward_graph<F: Float>(
    cfg: &ExtractorConfig,
    g: &mut Graph<F>,
    bind: &Binding,
    images: Tid,
) -> ForwardNodes {
    let conv = |g: &mut Graph<F>, x: Tid, name: &str, stride: usize, pad: usize| -> Tid {
        let c = g.conv2d(x, bind.id(&format!("{name}.w")), stride, pad);
        g.bias_channel(c, bind.id(&format!("{name}.b")))
    };
    let res = |g: &mut Graph<F>, x: Tid, name: &str| -> Tid {
        let a = conv(g, x, &format!("{name}.a"), 1, 1);
        let a = g.relu(a);
        let b = conv(g, a, &format!("{name}.b"), 1, 0);
        let s = g.add(x, b);
        g.relu(s)
    };

    let (s0, s1) = cfg.stem_strides();
    let h = conv(g, images, "stem.0", s0, 1);
    let h = g.relu(h);
    let h = conv(g, h, "stem.1", s1, 1);
    let h = g.relu(h);
    let r1 = res(g, h, "res1");
    let d2 = conv(g, r1, "down2", 2, 1);
    let d2 = g.relu(d2);
    let r2 = res(g, d2, "res2");
    let d3 = conv(g, r2, "down3", 2, 1);
    let d3 = g.relu(d3);
    let r3 = res(g, d3, "res3");
    let d4 = conv(g, r3, "down4", 2, 1);
    let d4 = g.relu(d4);
    let r4 = res(g, d4, "res4");

    // Wrist-offset head: global pooling of the deepest stage, two FC layers.
    let pooled = g.avg_pool_global(r4);
    let t = g.linear(pooled, bind.id("tau.0.w"), bind.id("tau.0.b"));
    let t = g.relu(t);
    let tau = g.linear(t, bind.id("tau.1.w"), bind.id("tau.1.b"));

    // Decoder: three upsampling blocks with encoder skips, one refinement
    // block, and the shared final layer.
    let up = |g: &mut Graph<F>, x: Tid, upname: &str, fusename: &str, skip: Tid| -> Tid {
        let u = g.upsample2(x);
        let u = conv(g, u, upname, 1, 0);
        let s = g.add(u, skip);
        let f = conv(g, s, fusename, 1, 1);
        g.relu(f)
    };
    let e = up(g, r4, "up1", "fuse1", r3);
    let e = up(g, e, "up2", "fuse2", r2);
    let e = up(g, e, "up3", "fuse3", r1);
    let e = conv(g, e, "dec4", 1, 1);
    let e = g.relu(e);
    let out = conv(g, e, "head", 1, 0);

    let hc = cfg.heatmap_channels();
    let heat = g.slice_axis(out, 1, 0, hc);
    let m_logits = g.slice_axis(out, 1, hc, 2);
    let m = g.sigmoid(m_logits);
    ForwardNodes { f: r1, h: heat, m, tau }
}

/// Everything the extractor produces for a batch of images.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// Stage-1 feature maps `[N, w0, g, g]` at heatmap resolution.
    pub f: Array4<f64>,
    /// Predicted heatmap stack `[N, hc, g, g]`.
    pub h_hat: Array4<f64>,
    /// Predicted saliency pair `[N, 2, g, g]`, values in `[0, 1]`.
    pub m_hat: Array4<f64>,
    /// Predicted wrist offsets `[N, 3]`, millimetres.
    pub tau_hat: Array2<f64>,
}

/// The trained (or freshly initialised) extractor.
#[derive(Debug, Clone)]
pub struct Extractor<F: Float> {
    config: ExtractorConfig,
    params: ParamSet<F>,
}

impl<F: Float> Extractor<F> {
    /// A fresh model drawn from the config's init stream.
    pub fn init(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config);
        Ok(Extractor { config, params })
    }

    /// Rebuilds a model from existing parts, verifying the parameter set
    /// matches the architecture exactly.
    pub fn from_parts(config: ExtractorConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let table = param_table(&config);
        if params.len() != table.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} parameters, got {}",
                table.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &table {
            if !params.contains(name) {
                return Err(Error::CheckpointMismatch(format!("missing parameter {name}")));
            }
            let got = params.get(name).shape();
            if got != shape.as_slice() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {name} has shape {got:?}, expected {shape:?}"
                )));
            }
        }
        Ok(Extractor { config, params })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    /// SHA-256 over the serialised parameters: cheap identity for change
    /// detection.
    pub fn content_hash(&self) -> String {
        self.params.to_archive().content_hash()
    }

    /// Side length of the output heatmap grid.
    pub fn grid(&self) -> usize {
        self.config.image_size / self.config.stem_downsample
    }

    /// Runs the extractor on a `[N, 3, S, S]` image batch with values in
    /// `[0, 1]`.
    pub fn extract(&self, images: &ArrayView4<'_, f64>) -> Result<FeatureBundle> {
        let shape = images.shape();
        if shape[1] != 3 || shape[2] != self.config.image_size || shape[3] != self.config.image_size
        {
            return Err(Error::Config(format!(
                "expected images [n, 3, {s}, {s}], got {shape:?}",
                s = self.config.image_size
            )));
        }
        if shape[0] == 0 {
            return Err(Error::Config("image batch is empty".into()));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("image values must lie in [0, 1]".into()));
        }
        let mut g: Graph<F> = Graph::new();
        let bind = self.params.bind_all_const(&mut g);
        let x = g.constant_f64(&images.view().into_dyn());
        let nodes = forward_graph(&self.config, &mut g, &bind, x);
        let as4 = |g: &Graph<F>, t: Tid| -> Array4<f64> {
            to_f64(g.value(t))
                .into_dimensionality()
                .expect("forward outputs are 4-d")
        };
        let tau = to_f64(g.value(nodes.tau))
            .into_dimensionality::<ndarray::Ix2>()
            .expect("tau output is 2-d")
            * TAU_UNIT_MM;
        Ok(FeatureBundle {
            f: as4(&g, nodes.f),
            h_hat: as4(&g, nodes.h),
            m_hat: as4(&g, nodes.m),
            tau_hat: tau,
        })
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

    /// Loads a checkpoint written by [`Extractor::save`], verifying format
    /// kind, version, dtype, and parameter shapes against its stored config.
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
        let config: ExtractorConfig = serde_json::from_value(meta["config"].clone())?;
        let params = ParamSet::from_archive(&archive)?;
        Extractor::from_parts(config, params)
    }
}

/// The 2-D supervision loss, split into its (weighted) terms;
/// `total = heatmap + saliency + tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loss2dBreakdown {
    pub total: f64,
    pub heatmap: f64,
    pub saliency: f64,
    pub tau: f64,
}

/// Computes the 2-D supervision loss from plain arrays: squared errors
/// summed per sample, averaged over the batch, with τ given in millimetres
/// and compared in internal units. The reference implementation the graph
/// version is tested against.
pub fn loss_2d(
    h_hat: &ArrayView4<'_, f64>,
    h_star: &ArrayView4<'_, f64>,
    m_hat: &ArrayView4<'_, f64>,
    m_star: &ArrayView4<'_, f64>,
    tau_hat_mm: &ArrayView2<'_, f64>,
    tau_star_mm: &ArrayView2<'_, f64>,
    lambda_saliency: f64,
    lambda_tau: f64,
) -> Result<Loss2dBreakdown> {
    let n = h_hat.shape()[0];
    let check = |what: &'static str, got: &[usize], want: &[usize]| -> Result<()> {
        if got != want {
            return Err(Error::Config(format!(
                "{what} shape {got:?} does not match target {want:?}"
            )));
        }
        Ok(())
    };
    check("heatmap", h_hat.shape(), h_star.shape())?;
    check("saliency", m_hat.shape(), m_star.shape())?;
    check("tau", tau_hat_mm.shape(), tau_star_mm.shape())?;
    for (what, got) in [
        ("saliency batch", m_hat.shape()[0]),
        ("tau batch", tau_hat_mm.shape()[0]),
    ] {
        if got != n {
            return Err(Error::DimMismatch {
                what,
                expected: n,
                got,
            });
        }
    }
    if n == 0 {
        return Err(Error::Config("loss over an empty batch".into()));
    }
    let nf = n as f64;
    let sq = |a: &ArrayViewD<'_, f64>, b: &ArrayViewD<'_, f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let heatmap = sq(&h_hat.view().into_dyn(), &h_star.view().into_dyn()) / nf;
    let saliency = lambda_saliency * sq(&m_hat.view().into_dyn(), &m_star.view().into_dyn()) / nf;
    let tau = lambda_tau
        * tau_hat_mm
            .iter()
            .zip(tau_star_mm.iter())
            .map(|(a, b)| {
                let d = (a - b) / TAU_UNIT_MM;
                d * d
            })
            .sum::<f64>()
        / nf;
    Ok(Loss2dBreakdown {
        total: heatmap + saliency + tau,
        heatmap,
        saliency,
        tau,
    })
}

/// Loss nodes of one training step; values match [`loss_2d`].
pub(crate) struct Loss2dNodes {
    pub total: Tid,
    pub heatmap: Tid,
    pub saliency: Tid,
    pub tau: Tid,
}

/// Builds the 2-D supervision loss over forward outputs. τ targets are
/// given in millimetres and converted to internal units here.
pub(crate) fn loss_2d_graph<F: Float>(
    g: &mut Graph<F>,
    fwd: &ForwardNodes,
    h_star: &ArrayView4<'_, f64>,
    m_star: &ArrayView4<'_, f64>,
    tau_star_mm: &ArrayView2<'_, f64>,
    lambda_saliency: f64,
    lambda_tau: f64,
) -> Loss2dNodes {
    let n = h_star.shape()[0] as f64;
    let hs = g.constant_f64(&h_star.view().into_dyn());
    let h_raw = g.sq_err_sum(fwd.h, hs);
    let heatmap = g.scale(h_raw, 1.0 / n);
    let ms = g.constant_f64(&m_star.view().into_dyn());
    let m_raw = g.sq_err_sum(fwd.m, ms);
    let saliency = g.scale(m_raw, lambda_saliency / n);
    let tau_star = tau_star_mm.mapv(|v| v / TAU_UNIT_MM);
    let ts = g.constant_f64(&tau_star.view().into_dyn());
    let t_raw = g.sq_err_sum(fwd.tau, ts);
    let tau = g.scale(t_raw, lambda_tau / n);
    let ht = g.add(heatmap, saliency);
    let total = g.add(ht, tau);
    Loss2dNodes {
        total,
        heatmap,
        saliency,
        tau,
    }
}

/// Position `[u, v]` of a map's largest element (ties resolve to the first
/// in row-major order).
pub fn argmax_uv(map: &ArrayView2<'_, f64>) -> [f64; 2] {
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for ((v, u), &x) in map.indexed_iter() {
        if x > best_v {
            best_v = x;
            best = (v, u);
        }
    }
    [best.1 as f64, best.0 as f64]
}

/// One optimisation step's loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorStepLog {
    pub step: usize,
    pub total: f64,
    pub heatmap: f64,
    pub saliency: f64,
    pub tau: f64,
}

/// One validation measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorValPoint {
    /// Step *after* which the measurement was taken.
    pub step: usize,
    /// Mean un-augmented loss over the holdout.
    pub loss: f64,
    /// Mean Euclidean distance (heatmap pixels) between each predicted
    /// heatmap's argmax and the true joint position; absent for the
    /// all-in-one variant, whose single channel has no per-joint argmax.
    pub argmax_px: Option<f64>,
}

/// Everything [`train_extractor`] reports besides the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorTrainReport {
    pub log: Vec<ExtractorStepLog>,
    pub val: Vec<ExtractorValPoint>,
    pub final_loss: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub config_hash: String,
}

/// The 2-D supervision bundle of one record, in model units.
fn record_sample(rec: &SampleRecord, template: &Template, camera: &Camera) -> Sample2d {
    Sample2d {
        image: rec.image.mapv(|v| v as f64 / 255.0),
        joints2d: rec.joints2d(template, camera),
        saliency: rec.saliency.mapv(|v| v as f64),
        tau: rec.tau(),
    }
}

/// Trains a fresh extractor on rendered records.
///
/// Records are split into train/holdout by a seeded shuffle. Every batch
/// slot draws a record uniformly with replacement, augments it, and
/// regenerates its heatmap targets analytically from the augmented joints.
/// The learning rate stays fixed for the whole run. Aborts with
/// [`Error::NonFinite`] the moment the loss stops being finite.
pub fn train_extractor<F: Float>(
    records: &[SampleRecord],
    template: &Template,
    camera: &Camera,
    config: &ExtractorConfig,
) -> Result<(Extractor<F>, ExtractorTrainReport)> {
    config.validate()?;
    if camera.image_size != config.image_size || camera.heatmap_size != config.iah.grid {
        return Err(Error::Config(format!(
            "camera geometry {}/{} does not match config {}/{}",
            camera.image_size, camera.heatmap_size, config.image_size, config.iah.grid
        )));
    }
    let n = records.len();
    let n_holdout = (config.holdout * n as f64).floor() as usize;
    let n_train = n - n_holdout;
    if n_train < config.batch {
        return Err(Error::Config(format!(
            "{n_train} training records cannot fill a batch of {}",
            config.batch
        )));
    }

    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(config.seed, "extractor-holdout"));
    let (holdout_idx, train_idx) = order.split_at(n_holdout);

    let mut model: Extractor<F> = Extractor::init(config.clone())?;
    let mut adam = Adam::new(config.lr);
    let mut batch_rng = stream(config.seed, "extractor-batches");
    let mut aug_rng = stream(config.seed, "extractor-augment");

    let (s, grid, hc, b) = (
        config.image_size,
        config.iah.grid,
        config.heatmap_channels(),
        config.batch,
    );
    let mut images = Array4::<f64>::zeros((b, 3, s, s));
    let mut h_star = Array4::<f64>::zeros((b, hc, grid, grid));
    let mut m_star = Array4::<f64>::zeros((b, 2, grid, grid));
    let mut tau_star = Array2::<f64>::zeros((b, 3));

    // Validation cadence: eight curves points per run (plus the final step).
    let val_every = (config.steps / 8).max(1);
    let mut log = Vec::with_capacity(config.steps);
    let mut val = Vec::new();

    for step in 0..config.steps {
        for slot in 0..b {
            let pick = train_idx[batch_rng.gen_range(0..n_train)];
            let sample = record_sample(&records[pick], template, camera);
            let sample = augment_sample(&sample, &config.augment, &mut aug_rng);
            let h = iah_ground_truth(&sample.joints2d, &config.iah)?;
            images
                .index_axis_mut(Axis(0), slot)
                .assign(&sample.image);
            h_star.index_axis_mut(Axis(0), slot).assign(&h);
            m_star
                .index_axis_mut(Axis(0), slot)
                .assign(&sample.saliency);
            for k in 0..3 {
                tau_star[[slot, k]] = sample.tau[k];
            }
        }

        let mut g: Graph<F> = Graph::new();
        let bind = model.params.bind_all(&mut g);
        let x = g.constant_f64(&images.view().into_dyn());
        let fwd = forward_graph(config, &mut g, &bind, x);
        let nodes = loss_2d_graph(
            &mut g,
            &fwd,
            &h_star.view(),
            &m_star.view(),
            &tau_star.view(),
            config.lambda_saliency,
            config.lambda_tau,
        );
        let total = g.value_scalar(nodes.total);
        if !total.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "extractor loss".into(),
            });
        }
        log.push(ExtractorStepLog {
            step,
            total,
            heatmap: g.value_scalar(nodes.heatmap),
            saliency: g.value_scalar(nodes.saliency),
            tau: g.value_scalar(nodes.tau),
        });
        let mut grads = g.backward(nodes.total);
        let grad_map = bind.grads(&mut grads);
        adam.step(&mut model.params, &grad_map);
        // A rectifier maps NaN to zero, so rotten weights can hide behind a
        // finite loss; catch them at the source instead.
        let rotten = model
            .params
            .names()
            .any(|name| model.params.get(name).iter().any(|v| !v.is_finite()));
        if rotten {
            return Err(Error::NonFinite {
                step,
                what: "extractor weights".into(),
            });
        }

        if n_holdout > 0 && ((step + 1) % val_every == 0 || step + 1 == config.steps) {
            val.push(validate(
                &model, records, template, camera, holdout_idx, step,
            )?);
        }
    }

    let final_loss = log.last().expect("steps >= 1").total;
    let report = ExtractorTrainReport {
        log,
        val,
        final_loss,
        n_train,
        n_holdout,
        config_hash: config.content_hash()?,
    };
    Ok((model, report))
}

/// Un-augmented loss and argmax error over the holdout records.
fn validate<F: Float>(
    model: &Extractor<F>,
    records: &[SampleRecord],
    template: &Template,
    camera: &Camera,
    holdout_idx: &[usize],
    step: usize,
) -> Result<ExtractorValPoint> {
    let cfg = model.config();
    let hc = cfg.heatmap_channels();
    let per_joint = hc == TOTAL_JOINTS;
    let mut loss_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut dist_n = 0usize;
    for chunk in holdout_idx.chunks(cfg.batch) {
        let m = chunk.len();
        let mut images = Array4::<f64>::zeros((m, 3, cfg.image_size, cfg.image_size));
        let mut h_star = Array4::<f64>::zeros((m, hc, cfg.iah.grid, cfg.iah.grid));
        let mut m_star = Array4::<f64>::zeros((m, 2, cfg.iah.grid, cfg.iah.grid));
        let mut tau_star = Array2::<f64>::zeros((m, 3));
        let mut joints: Vec<Vec<[f64; 2]>> = Vec::with_capacity(m);
        for (slot, &idx) in chunk.iter().enumerate() {
            let sample = record_sample(&records[idx], template, camera);
            let h = iah_ground_truth(&sample.joints2d, &cfg.iah)?;
            images.index_axis_mut(Axis(0), slot).assign(&sample.image);
            h_star.index_axis_mut(Axis(0), slot).assign(&h);
            m_star
                .index_axis_mut(Axis(0), slot)
                .assign(&sample.saliency);
            for k in 0..3 {
                tau_star[[slot, k]] = sample.tau[k];
            }
            joints.push(sample.joints2d);
        }
        let bundle = model.extract(&images.view())?;
        let breakdown = loss_2d(
            &bundle.h_hat.view(),
            &h_star.view(),
            &bundle.m_hat.view(),
            &m_star.view(),
            &bundle.tau_hat.view(),
            &tau_star.view(),
            cfg.lambda_saliency,
            cfg.lambda_tau,
        )?;
        loss_sum += breakdown.total * m as f64;
        if per_joint {
            for (slot, j2d) in joints.iter().enumerate() {
                for (j, truth) in j2d.iter().enumerate() {
                    let pred = argmax_uv(&bundle.h_hat.slice(ndarray::s![slot, j, .., ..]));
                    dist_sum +=
                        ((pred[0] - truth[0]).powi(2) + (pred[1] - truth[1]).powi(2)).sqrt();
                    dist_n += 1;
                }
            }
        }
    }
    Ok(ExtractorValPoint {
        step,
        loss: loss_sum / holdout_idx.len() as f64,
        argmax_px: per_joint.then(|| dist_sum / dist_n as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::Template;
    use crate::nn::{max_param_grad_gap, Graph};
    use crate::synth::{build_records, SynthConfig};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::{s, Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// A micro config: 8x8 inputs processed at full resolution, two-channel
    /// stages — small enough for finite differences.
    fn micro_config() -> ExtractorConfig {
        let mut cfg = ExtractorConfig {
            stage_widths: [2, 2, 2, 2],
            stem_downsample: 1,
            image_size: 8,
            batch: 2,
            steps: 2,
            holdout: 0.0,
            augment: AugmentConfig::none(),
            ..ExtractorConfig::default()
        };
        cfg.iah.grid = 8;
        cfg
    }

    fn random_images(rng: &mut ChaCha12Rng, n: usize, s: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, s, s), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn fresh_models_emit_flat_heatmaps_half_saliency_and_zero_tau() {
        let cfg = micro_config();
        let model: Extractor<f64> = Extractor::init(cfg.clone()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for images in [
            Array4::zeros((1, 3, 8, 8)),
            random_images(&mut rng, 2, 8),
        ] {
            let out = model.extract(&images.view()).unwrap();
            assert!(out.h_hat.iter().all(|&v| v == 0.0), "heatmaps start flat");
            assert!(out.m_hat.iter().all(|&v| v == 0.5), "saliency starts at 0.5");
            assert!(out.tau_hat.iter().all(|&v| v == 0.0), "tau starts at zero");
            // The feature map itself is alive (non-zero) on non-zero input.
            if images.sum() > 0.0 {
                assert!(out.f.iter().any(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn extraction_is_deterministic_and_batches_equal_concatenated_singletons() {
        let cfg = micro_config();
        let model: Extractor<f64> = Extractor::init(cfg).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let images = random_images(&mut rng, 2, 8);
        let once = model.extract(&images.view()).unwrap();
        let twice = model.extract(&images.view()).unwrap();
        assert_eq!(once, twice, "extraction must be deterministic");

        let first = model.extract(&images.slice(s![0..1, .., .., ..])).unwrap();
        let second = model.extract(&images.slice(s![1..2, .., .., ..])).unwrap();
        for (batch, single) in [(&once.h_hat, &first.h_hat), (&once.m_hat, &second.m_hat)] {
            assert_eq!(batch.shape()[1..], single.shape()[1..]);
        }
        // Each sample's outputs are computed independently, so the batch
        // pass must equal the stacked singleton passes exactly.
        assert_eq!(once.h_hat.slice(s![0, .., .., ..]), first.h_hat.slice(s![0, .., .., ..]));
        assert_eq!(once.h_hat.slice(s![1, .., .., ..]), second.h_hat.slice(s![0, .., .., ..]));
        assert_eq!(once.f.slice(s![0, .., .., ..]), first.f.slice(s![0, .., .., ..]));
        assert_eq!(once.m_hat.slice(s![1, .., .., ..]), second.m_hat.slice(s![0, .., .., ..]));
        assert_eq!(once.tau_hat.row(0), first.tau_hat.row(0));
        assert_eq!(once.tau_hat.row(1), second.tau_hat.row(0));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let model: Extractor<f64> = Extractor::init(micro_config()).unwrap();
        // Wrong spatial size.
        assert!(model.extract(&Array4::zeros((1, 3, 16, 16)).view()).is_err());
        // Wrong channel count.
        assert!(model.extract(&Array4::zeros((1, 1, 8, 8)).view()).is_err());
        // Out-of-range values.
        assert!(model
            .extract(&Array4::from_elem((1, 3, 8, 8), 1.5).view())
            .is_err());
        // Empty batch.
        assert!(model.extract(&Array4::zeros((0, 3, 8, 8)).view()).is_err());
    }

    #[test]
    fn config_validation_rejects_incoherent_setups() {
        let ok = ExtractorConfig::default();
        assert!(ok.validate().is_ok());
        assert!(ExtractorConfig::desk().validate().is_ok());

        let mut bad = ExtractorConfig::default();
        bad.stem_downsample = 3;
        assert!(bad.validate().is_err());
        let mut bad = ExtractorConfig::default();
        bad.image_size = 100; // not a multiple of 32
        assert!(bad.validate().is_err());
        let mut bad = ExtractorConfig::default();
        bad.lambda_tau = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = ExtractorConfig::default();
        bad.iah.grid = 32; // decoder emits 64
        assert!(bad.validate().is_err());
        let mut bad = ExtractorConfig::default();
        bad.holdout = 1.0;
        assert!(bad.validate().is_err());
        // Unknown keys are rejected.
        assert!(serde_json::from_str::<ExtractorConfig>("{\"lr\":0.1,\"oops\":3}").is_err());
    }

    #[test]
    fn loss_is_zero_iff_predictions_match_targets() {
        let h = Array4::from_elem((2, 3, 4, 4), 0.25);
        let m = Array4::from_elem((2, 2, 4, 4), 0.5);
        let t = Array2::from_elem((2, 3), 10.0);
        let zero = loss_2d(
            &h.view(), &h.view(), &m.view(), &m.view(), &t.view(), &t.view(), 1.0, 2000.0,
        )
        .unwrap();
        assert_eq!(zero.total, 0.0);
        assert_eq!(zero.heatmap, 0.0);
        assert_eq!(zero.saliency, 0.0);
        assert_eq!(zero.tau, 0.0);

        let mut h2 = h.clone();
        h2[[1, 2, 3, 3]] += 0.5;
        let dh = loss_2d(
            &h2.view(), &h.view(), &m.view(), &m.view(), &t.view(), &t.view(), 1.0, 2000.0,
        )
        .unwrap();
        assert!(dh.heatmap > 0.0 && dh.saliency == 0.0 && dh.tau == 0.0);
        assert_abs_diff_eq!(dh.heatmap, 0.25 / 2.0, epsilon = 1e-12);
        assert_eq!(dh.total, dh.heatmap);
    }

    /// A 1 mm wrist-offset error is 0.01 internal units; with the default
    /// weight 2000 the loss contribution is exactly 0.2.
    #[test]
    fn one_millimetre_tau_error_costs_point_two() {
        let h = Array4::zeros((1, 1, 2, 2));
        let m = Array4::zeros((1, 2, 2, 2));
        let t_hat = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        let t_star = Array2::zeros((1, 3));
        let out = loss_2d(
            &h.view(), &h.view(), &m.view(), &m.view(),
            &t_hat.view(), &t_star.view(), 1.0, 2000.0,
        )
        .unwrap();
        assert_abs_diff_eq!(out.tau, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.total, 0.2, epsilon = 1e-12);
    }

    /// Hand-built 2x2 heatmaps against a spreadsheet-style manual sum.
    #[test]
    fn handbuilt_heatmap_loss_matches_the_manual_sum() {
        // One sample, one channel: prediction [[0.1, 0.2], [0.3, 0.4]],
        // target [[0.0, 0.5], [0.3, 0.1]].
        // Squared diffs: 0.01 + 0.09 + 0.00 + 0.09 = 0.19.
        let h_hat = Array4::from_shape_vec((1, 1, 2, 2), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let h_star = Array4::from_shape_vec((1, 1, 2, 2), vec![0.0, 0.5, 0.3, 0.1]).unwrap();
        // Saliency: prediction all 0.5, target [[1,0],[0,1]] per channel ->
        // each of 8 entries contributes 0.25: sum 2.0, weighted by 0.5 -> 1.0.
        let m_hat = Array4::from_elem((1, 2, 2, 2), 0.5);
        let m_star = Array4::from_shape_vec(
            (1, 2, 2, 2),
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        // Tau: off by (10, -20, 0) mm = (0.1, -0.2, 0) units -> 0.05, times 40.
        let t_hat = Array2::from_shape_vec((1, 3), vec![10.0, -20.0, 0.0]).unwrap();
        let t_star = Array2::zeros((1, 3));
        let out = loss_2d(
            &h_hat.view(), &h_star.view(), &m_hat.view(), &m_star.view(),
            &t_hat.view(), &t_star.view(), 0.5, 40.0,
        )
        .unwrap();
        assert_abs_diff_eq!(out.heatmap, 0.19, epsilon = 1e-12);
        assert_abs_diff_eq!(out.saliency, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.tau, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.total, 3.19, epsilon = 1e-12);
    }

    /// The in-graph loss must agree with the plain-array reference on
    /// random data.
    #[test]
    fn graph_loss_matches_the_reference_implementation() {
        let cfg = micro_config();
        let model: Extractor<f64> = Extractor::init(cfg.clone()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let images = random_images(&mut rng, 2, 8);
        let hc = cfg.heatmap_channels();
        let h_star = Array4::from_shape_fn((2, hc, 8, 8), |_| rng.gen_range(0.0..0.3));
        let m_star = Array4::from_shape_fn((2, 2, 8, 8), |_| rng.gen_range(0.0..1.0));
        let tau_star = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-80.0..80.0));

        let mut g: Graph<f64> = Graph::new();
        let bind = model.params().bind_all_const(&mut g);
        let x = g.constant_f64(&images.view().into_dyn());
        let fwd = forward_graph(&cfg, &mut g, &bind, x);
        let nodes = loss_2d_graph(
            &mut g, &fwd, &h_star.view(), &m_star.view(), &tau_star.view(),
            cfg.lambda_saliency, cfg.lambda_tau,
        );

        let bundle = model.extract(&images.view()).unwrap();
        let reference = loss_2d(
            &bundle.h_hat.view(), &h_star.view(), &bundle.m_hat.view(), &m_star.view(),
            &bundle.tau_hat.view(), &tau_star.view(), cfg.lambda_saliency, cfg.lambda_tau,
        )
        .unwrap();
        assert_abs_diff_eq!(g.value_scalar(nodes.total), reference.total, epsilon = 1e-9);
        assert_abs_diff_eq!(g.value_scalar(nodes.heatmap), reference.heatmap, epsilon = 1e-9);
        assert_abs_diff_eq!(g.value_scalar(nodes.saliency), reference.saliency, epsilon = 1e-9);
        assert_abs_diff_eq!(g.value_scalar(nodes.tau), reference.tau, epsilon = 1e-9);
    }

    /// Every parameter's analytic gradient must match central finite
    /// differences on the micro architecture. Parameters are nudged off
    /// their initial values first: zero-initialised layers otherwise leave
    /// ReLU pre-activations exactly at the kink, where finite differences
    /// straddle the corner.
    #[test]
    fn loss_gradients_match_finite_differences() {
        let cfg = micro_config();
        let model: Extractor<f64> = Extractor::init(cfg.clone()).unwrap();
        let mut params = model.params().clone();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let names: Vec<String> = params.names().map(String::from).collect();
        for name in &names {
            for v in params.get_mut(name).iter_mut() {
                let nudge: f64 = rng.gen_range(0.05..0.3);
                *v += if rng.gen::<bool>() { nudge } else { -nudge };
            }
        }
        let model = Extractor::from_parts(cfg.clone(), params.clone()).unwrap();

        let images = random_images(&mut rng, 2, 8);
        let hc = cfg.heatmap_channels();
        let h_star = Array4::from_shape_fn((2, hc, 8, 8), |_| rng.gen_range(0.0..0.3));
        let m_star = Array4::from_shape_fn((2, 2, 8, 8), |_| rng.gen_range(0.0..1.0));
        let tau_star = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-50.0..50.0));

        let build = |p: &ParamSet<f64>| -> (Graph<f64>, crate::nn::Binding, Tid) {
            let mut g: Graph<f64> = Graph::new();
            let bind = p.bind_all(&mut g);
            let x = g.constant_f64(&images.view().into_dyn());
            let fwd = forward_graph(&cfg, &mut g, &bind, x);
            let nodes = loss_2d_graph(
                &mut g, &fwd, &h_star.view(), &m_star.view(), &tau_star.view(),
                cfg.lambda_saliency, cfg.lambda_tau,
            );
            (g, bind, nodes.total)
        };
        let (g, bind, total) = build(model.params());
        let mut grads = g.backward(total);
        let analytic = bind.grads(&mut grads);

        let mut probe = model.params().clone();
        let gap = max_param_grad_gap(&mut probe, &analytic, 1e-5, |p| {
            let (g, _, total) = build(p);
            g.value_scalar(total)
        });
        assert!(gap <= 1e-3, "worst relative gradient gap {gap}");
    }

    /// The τ head reads only the pooled encoder; the heatmap branch reads
    /// only the decoder. Perturbing one side must not move the other.
    #[test]
    fn tau_and_heatmap_branches_are_independent() {
        let cfg = micro_config();
        let base: Extractor<f64> = Extractor::init(cfg.clone()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let images = random_images(&mut rng, 1, 8);
        let before = base.extract(&images.view()).unwrap();

        let mut heat_side = base.params().clone();
        for name in ["head.w", "head.b", "fuse3.w", "dec4.w"] {
            for v in heat_side.get_mut(name).iter_mut() {
                *v += 0.1;
            }
        }
        let model = Extractor::from_parts(cfg.clone(), heat_side).unwrap();
        let after = model.extract(&images.view()).unwrap();
        assert_eq!(before.tau_hat, after.tau_hat, "tau must ignore the heatmap branch");
        assert!(before.h_hat != after.h_hat);

        let mut tau_side = base.params().clone();
        for name in ["tau.0.w", "tau.1.w", "tau.1.b"] {
            for v in tau_side.get_mut(name).iter_mut() {
                *v += 0.1;
            }
        }
        let model = Extractor::from_parts(cfg, tau_side).unwrap();
        let after = model.extract(&images.view()).unwrap();
        assert_eq!(before.h_hat, after.h_hat, "heatmaps must ignore the tau head");
        assert_eq!(before.m_hat, after.m_hat);
        assert!(before.tau_hat != after.tau_hat);
    }

    /// Flipping prediction and target arrays with the same hand-swapping
    /// reversal is an isometry of the loss: the flipped pair scores the
    /// original loss (up to roundoff — the sums reassociate). Heatmap
    /// targets are regenerated analytically from reversed joints,
    /// exercising the kernel-vs-array consistency too.
    #[test]
    fn loss_is_invariant_under_a_consistent_flip_of_both_sides() {
        use crate::augment::partner_joint;
        let grid = 8;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut iah_cfg = IahConfig::default();
        iah_cfg.grid = grid;
        let joints: Vec<[f64; 2]> = (0..TOTAL_JOINTS)
            .map(|_| [rng.gen_range(0.0..grid as f64), rng.gen_range(0.0..grid as f64)])
            .collect();
        let h_star4 = {
            let h = iah_ground_truth(&joints, &iah_cfg).unwrap();
            h.insert_axis(Axis(0))
        };
        let h_hat = Array4::from_shape_fn((1, TOTAL_JOINTS, grid, grid), |_| {
            rng.gen_range(0.0..0.3)
        });
        let m_star = Array4::from_shape_fn((1, 2, grid, grid), |_| {
            if rng.gen::<bool>() { 1.0 } else { 0.0 }
        });
        let m_hat = Array4::from_shape_fn((1, 2, grid, grid), |_| rng.gen_range(0.0..1.0));
        let t_hat = Array2::from_shape_vec((1, 3), vec![31.0, -14.0, 8.0]).unwrap();
        let t_star = Array2::from_shape_vec((1, 3), vec![25.0, -10.0, 12.0]).unwrap();

        let original = loss_2d(
            &h_hat.view(), &h_star4.view(), &m_hat.view(), &m_star.view(),
            &t_hat.view(), &t_star.view(), 1.0, 2000.0,
        )
        .unwrap();

        // Lattice reversal: u -> (grid - 1) - u swaps array columns exactly.
        let flip_joints: Vec<[f64; 2]> = (0..TOTAL_JOINTS)
            .map(|j| {
                let p = joints[partner_joint(j)];
                [(grid - 1) as f64 - p[0], p[1]]
            })
            .collect();
        let h_star_flip = iah_ground_truth(&flip_joints, &iah_cfg)
            .unwrap()
            .insert_axis(Axis(0));
        let flip_stack = |a: &Array4<f64>, swap_pairs: bool| -> Array4<f64> {
            let mut out = Array4::zeros(a.raw_dim());
            let c = a.shape()[1];
            for ch in 0..c {
                let src = if swap_pairs {
                    if c == TOTAL_JOINTS { partner_joint(ch) } else { 1 - ch }
                } else {
                    ch
                };
                out.slice_mut(s![0, ch, .., ..])
                    .assign(&a.slice(s![0, src, .., ..;-1]));
            }
            out
        };
        let h_hat_flip = flip_stack(&h_hat, true);
        let m_hat_flip = flip_stack(&m_hat, true);
        let m_star_flip = flip_stack(&m_star, true);
        let sign = |t: &Array2<f64>| {
            let mut o = t.clone();
            o[[0, 1]] = -o[[0, 1]];
            o[[0, 2]] = -o[[0, 2]];
            o
        };
        let flipped = loss_2d(
            &h_hat_flip.view(), &h_star_flip.view(), &m_hat_flip.view(), &m_star_flip.view(),
            &sign(&t_hat).view(), &sign(&t_star).view(), 1.0, 2000.0,
        )
        .unwrap();
        assert_relative_eq!(flipped.total, original.total, max_relative = 1e-12);
        assert_relative_eq!(flipped.heatmap, original.heatmap, max_relative = 1e-12);
        assert_relative_eq!(flipped.saliency, original.saliency, max_relative = 1e-12);
        assert_relative_eq!(flipped.tau, original.tau, max_relative = 1e-12);
    }

    /// A camera with the standard field of view scaled down to the given
    /// image size (the full geometry divided by `256 / image_size`).
    fn scaled_camera(image_size: usize, heatmap_size: usize) -> Camera {
        let k = image_size as f64 / 256.0;
        Camera {
            focal: 350.0 * k,
            principal: [image_size as f64 / 2.0; 2],
            image_size,
            heatmap_size,
        }
    }

    fn render_records(n: usize, seed: u64, camera: Camera) -> Vec<SampleRecord> {
        let mut synth = SynthConfig::default();
        synth.camera = camera;
        synth.iah.grid = camera.heatmap_size;
        synth.framing_jitter *= camera.image_size as f64 / 256.0;
        let (records, _) = build_records(n, seed, &synth, Template::builtin()).unwrap();
        records
    }

    /// Shared fixture for training tests: a small rendered dataset at a
    /// quarter of the full geometry.
    fn tiny_dataset(n: usize) -> (Vec<SampleRecord>, Camera, ExtractorConfig) {
        let camera = scaled_camera(64, 16);
        let mut cfg = ExtractorConfig {
            stage_widths: [4, 6, 8, 10],
            stem_downsample: 4,
            image_size: 64,
            // The default rate suits long runs; this smoke test takes 120
            // steps, so it needs a faster pace to show visible progress.
            lr: 3e-3,
            batch: 4,
            steps: 120,
            holdout: 0.2,
            augment: AugmentConfig::none(),
            ..ExtractorConfig::default()
        };
        cfg.iah.grid = 16;
        (render_records(n, 11, camera), camera, cfg)
    }

    #[test]
    fn training_reduces_the_loss_and_is_deterministic() {
        let (records, camera, cfg) = tiny_dataset(24);
        let t = Template::builtin();
        let (model, report) = train_extractor::<f32>(&records, t, &camera, &cfg).unwrap();
        let first: f64 = report.log[..5].iter().map(|l| l.total).sum::<f64>() / 5.0;
        let last: f64 = report.log[report.log.len() - 5..]
            .iter()
            .map(|l| l.total)
            .sum::<f64>()
            / 5.0;
        assert!(
            last < 0.9 * first,
            "loss should drop: first window {first}, last window {last}"
        );
        assert!(!report.val.is_empty(), "holdout producing validation points");
        assert_eq!(report.n_train + report.n_holdout, records.len());

        let (model2, report2) = train_extractor::<f32>(&records, t, &camera, &cfg).unwrap();
        assert_eq!(report.final_loss, report2.final_loss, "same seed, same run");
        assert_eq!(model.content_hash(), model2.content_hash());

        let mut other = cfg.clone();
        other.seed = 99;
        let (_, report3) = train_extractor::<f32>(&records, t, &camera, &other).unwrap();
        assert!(report3.final_loss != report.final_loss, "different seed differs");
    }

    #[test]
    fn checkpoints_round_trip_and_reject_wrong_dtype() {
        let cfg = micro_config();
        let model: Extractor<f32> = Extractor::init(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extractor.ckpt");
        model.save(&path).unwrap();
        let loaded: Extractor<f32> = Extractor::load(&path).unwrap();
        assert_eq!(loaded.content_hash(), model.content_hash());
        assert_eq!(loaded.config(), model.config());
        match Extractor::<f64>::load(&path) {
            Err(Error::CheckpointMismatch(msg)) => assert!(msg.contains("dtype")),
            other => panic!("expected a dtype mismatch, got {other:?}"),
        }
    }

    #[test]
    fn divergent_training_aborts_with_a_non_finite_error() {
        let (records, camera, mut cfg) = tiny_dataset(12);
        cfg.lr = 1e12;
        cfg.steps = 30;
        cfg.holdout = 0.0;
        // Divergence may surface in the loss itself or — because rectifiers
        // map NaN to zero — only in the weights; either abort is correct.
        match train_extractor::<f32>(&records, Template::builtin(), &camera, &cfg) {
            Err(Error::NonFinite { what, .. }) => assert!(
                what.starts_with("extractor"),
                "unexpected non-finite source {what}"
            ),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn training_rejects_mismatched_camera_geometry() {
        let (records, camera, cfg) = tiny_dataset(12);
        let wrong = Camera {
            heatmap_size: 32,
            ..camera
        };
        assert!(matches!(
            train_extractor::<f32>(&records, Template::builtin(), &wrong, &cfg),
            Err(Error::Config(_))
        ));
    }

    /// Trains at a reduced desk geometry long enough for predicted heatmap
    /// argmaxes to land near the true joints on held-out images.
    #[test]
    fn trained_heatmap_argmaxes_land_near_the_true_joints() {
        let camera = scaled_camera(128, 32);
        let mut cfg = ExtractorConfig {
            stage_widths: [12, 24, 48, 96],
            stem_downsample: 4,
            image_size: 128,
            // Faster pace than the long-run default, to converge within a
            // test-sized step budget; augmentation has its own oracle tests
            // and is off here so every step sees clean supervision.
            lr: 1e-3,
            batch: 8,
            steps: 1100,
            holdout: 0.1,
            seed: 3,
            augment: AugmentConfig::none(),
            ..ExtractorConfig::default()
        };
        cfg.iah.grid = 32;
        // Half the native heatmap resolution, so half the peak width too.
        cfg.iah.sigma = vec![1.0; TOTAL_JOINTS];
        let records = render_records(220, 17, camera);
        let (_, report) =
            train_extractor::<f32>(&records, Template::builtin(), &camera, &cfg).unwrap();
        for point in &report.val {
            println!(
                "step {:>4}  val loss {:>10.3}  argmax {:.2} px",
                point.step,
                point.loss,
                point.argmax_px.unwrap()
            );
        }
        let last = report.val.last().unwrap();
        let err = last.argmax_px.unwrap();
        assert!(
            err < 4.0,
            "mean argmax error {err:.2} px should be under 4 px (val loss {:.3})",
            last.loss
        );
        // And the curve actually improved over training.
        let first = report.val.first().unwrap().argmax_px.unwrap();
        assert!(err < first, "argmax error should improve: {first:.2} -> {err:.2}");
    }
}
