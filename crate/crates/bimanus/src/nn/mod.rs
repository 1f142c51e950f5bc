//! Reverse-mode automatic differentiation on dense tensors.
//!
//! Training code builds a fresh [`Graph`] every step: leaves hold parameter
//! and input arrays, every operation computes its value eagerly, and
//! [`Graph::backward`] walks the tape once in reverse to accumulate
//! gradients. The op set is exactly what the models in this crate need.
//!
//! Values are generic over [`Float`], so the same model code trains in
//! `f32` for speed and gradient-checks in `f64` against central finite
//! differences. All kernels use fixed accumulation order, which keeps every
//! forward and backward pass bit-reproducible.
//!
//! Shape mismatches panic at construction time: shapes are static once a
//! model config is validated, so a mismatch is a programming error, not a
//! runtime condition to recover from.

mod check;
mod hinge;
mod kernels;
mod params;

pub use check::{central_diff, grad_floor, max_grad_gap, max_param_grad_gap};
pub use kernels::{convert, to_f64};
pub use params::{Adam, Binding, ParamSet, Plateau};

use ndarray::{ArrayD, ArrayViewD, Axis, Slice};

use crate::hand::Template;

/// Element type of a [`Graph`]: `f32` for training, `f64` for checking.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint metadata.
    const DTYPE: &'static str;
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Wraps an array in the matching archive tensor variant.
    fn into_tensor(a: ArrayD<Self>) -> crate::archive::TensorData;
    /// Extracts an array of this type from an archive tensor, if it matches.
    fn from_tensor(t: &crate::archive::TensorData) -> Option<ArrayD<Self>>;
}

impl Float for f32 {
    const DTYPE: &'static str = "f32";
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn into_tensor(a: ArrayD<Self>) -> crate::archive::TensorData {
        crate::archive::TensorData::F32(a)
    }
    fn from_tensor(t: &crate::archive::TensorData) -> Option<ArrayD<Self>> {
        match t {
            crate::archive::TensorData::F32(a) => Some(a.clone()),
            _ => None,
        }
    }
}

impl Float for f64 {
    const DTYPE: &'static str = "f64";
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn into_tensor(a: ArrayD<Self>) -> crate::archive::TensorData {
        crate::archive::TensorData::F64(a)
    }
    fn from_tensor(t: &crate::archive::TensorData) -> Option<ArrayD<Self>> {
        match t {
            crate::archive::TensorData::F64(a) => Some(a.clone()),
            _ => None,
        }
    }
}

/// Handle to a node in a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tid(usize);

/// One tape operation. Constants are kept as `f64` and converted at use, so
/// the enum itself carries no element type.
enum Op {
    Leaf,
    MatMul { a: Tid, b: Tid },
    MatMulBatchW { x: Tid, w: Tid },
    MatMulBatch { a: Tid, b: Tid },
    Conv2d { x: Tid, w: Tid, stride: usize, pad: usize },
    BiasChannel { x: Tid, b: Tid },
    BiasRow { x: Tid, b: Tid },
    BiasLead { x: Tid, b: Tid },
    Add { a: Tid, b: Tid },
    Sub { a: Tid, b: Tid },
    Mul { a: Tid, b: Tid },
    Affine { x: Tid, mul: f64 },
    Relu { x: Tid },
    Sigmoid { x: Tid },
    Exp { x: Tid },
    Abs { x: Tid },
    Square { x: Tid },
    SoftmaxLast { x: Tid },
    LayerNorm { x: Tid, gamma: Tid, beta: Tid, eps: f64 },
    Upsample2 { x: Tid },
    Patchify { x: Tid, p: usize },
    Reshape { x: Tid },
    Transpose { x: Tid, axes: Vec<usize> },
    Concat { parts: Vec<Tid>, axis: usize },
    SliceAxis { x: Tid, axis: usize, start: usize, len: usize },
    MeanAxis { x: Tid, axis: usize },
    SumAll { x: Tid },
    MeanAll { x: Tid },
    ClampPerDim { x: Tid, lo: Vec<f64>, hi: Vec<f64> },
    PenetrationHinge { x: Tid, taus: Vec<[f64; 3]>, template: Box<Template> },
}

struct Node<F: Float> {
    value: ArrayD<F>,
    op: Op,
    needs: bool,
}

/// Gradients of one backward pass, indexed by node handle.
pub struct Gradients<F: Float> {
    slots: Vec<Option<ArrayD<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Removes and returns the gradient of `t`, if it received one.
    pub fn take(&mut self, t: Tid) -> Option<ArrayD<F>> {
        self.slots[t.0].take()
    }
    /// Borrows the gradient of `t`, if it received one.
    pub fn get(&self, t: Tid) -> Option<&ArrayD<F>> {
        self.slots[t.0].as_ref()
    }
}

/// A dynamic tape of eager tensor operations.
pub struct Graph<F: Float> {
    nodes: Vec<Node<F>>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn acc<F: Float>(slot: &mut Option<ArrayD<F>>, contrib: ArrayD<F>) {
    match slot {
        Some(a) => *a += &contrib,
        None => *slot = Some(contrib),
    }
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Borrows the value of a node.
    pub fn value(&self, t: Tid) -> &ArrayD<F> {
        &self.nodes[t.0].value
    }

    /// The value of a single-element node as `f64` (e.g. a loss).
    pub fn value_scalar(&self, t: Tid) -> f64 {
        let v = &self.nodes[t.0].value;
        assert_eq!(v.len(), 1, "node is not a scalar");
        v.iter().next().unwrap().as_f64()
    }

    pub fn shape(&self, t: Tid) -> &[usize] {
        self.nodes[t.0].value.shape()
    }

    fn push(&mut self, value: ArrayD<F>, op: Op, needs: bool) -> Tid {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node { value, op, needs });
        Tid(self.nodes.len() - 1)
    }

    fn needs(&self, t: Tid) -> bool {
        self.nodes[t.0].needs
    }

    /// Adds an input or parameter array. Only nodes reachable from a leaf
    /// with `needs_grad` participate in the backward pass.
    pub fn leaf(&mut self, value: ArrayD<F>, needs_grad: bool) -> Tid {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Adds a constant (no gradient) leaf.
    pub fn constant(&mut self, value: ArrayD<F>) -> Tid {
        self.leaf(value, false)
    }

    /// Adds a constant leaf converted from `f64` data.
    pub fn constant_f64(&mut self, value: &ArrayViewD<'_, f64>) -> Tid {
        let v = kernels::convert::<F>(value);
        self.leaf(v, false)
    }

    /// `[m,k] x [k,n]` matrix product.
    pub fn matmul(&mut self, a: Tid, b: Tid) -> Tid {
        assert_eq!(
            self.shape(a)[1],
            self.shape(b)[0],
            "matmul inner dimensions differ"
        );
        let v = kernels::matmul2(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul { a, b }, needs)
    }

    /// `[B,m,k] x [k,n]` with one shared right factor.
    pub fn matmul_batch_w(&mut self, x: Tid, w: Tid) -> Tid {
        assert_eq!(
            self.shape(x)[2],
            self.shape(w)[0],
            "batched matmul inner dimensions differ"
        );
        let v = kernels::matmul_batch_w(self.value(x), self.value(w));
        let needs = self.needs(x) || self.needs(w);
        self.push(v, Op::MatMulBatchW { x, w }, needs)
    }

    /// `[B,m,k] x [B,k,n]`, independent per batch item.
    pub fn matmul_batch(&mut self, a: Tid, b: Tid) -> Tid {
        assert_eq!(self.shape(a)[0], self.shape(b)[0], "batch sizes differ");
        assert_eq!(
            self.shape(a)[2],
            self.shape(b)[1],
            "batched matmul inner dimensions differ"
        );
        let v = kernels::matmul_batch(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMulBatch { a, b }, needs)
    }

    /// 2-D convolution: `x [N,Ci,H,W]` with kernel `w [Co,Ci,kh,kw]`.
    pub fn conv2d(&mut self, x: Tid, w: Tid, stride: usize, pad: usize) -> Tid {
        assert_eq!(
            self.shape(x)[1],
            self.shape(w)[1],
            "conv input channels differ from kernel"
        );
        let v = kernels::conv2d_forward(self.value(x), self.value(w), stride, pad);
        let needs = self.needs(x) || self.needs(w);
        self.push(v, Op::Conv2d { x, w, stride, pad }, needs)
    }

    /// Adds a per-channel bias `b [C]` to `x [N,C,H,W]`.
    pub fn bias_channel(&mut self, x: Tid, b: Tid) -> Tid {
        assert_eq!(self.shape(x)[1], self.shape(b)[0], "bias channel count");
        let (nb, c) = (self.shape(x)[0], self.shape(x)[1]);
        let hw: usize = self.shape(x)[2..].iter().product();
        let mut v = self.value(x).clone();
        {
            let vf = v.as_slice_mut().unwrap();
            let bf = self.value(b).as_slice().unwrap();
            for i in 0..nb * c {
                let bias = bf[i % c];
                for e in &mut vf[i * hw..(i + 1) * hw] {
                    *e += bias;
                }
            }
        }
        let needs = self.needs(x) || self.needs(b);
        self.push(v, Op::BiasChannel { x, b }, needs)
    }

    /// Adds a bias `b [D]` along the last axis of `x [..., D]`.
    pub fn bias_row(&mut self, x: Tid, b: Tid) -> Tid {
        let d = *self.shape(x).last().unwrap();
        assert_eq!(d, self.shape(b)[0], "bias width");
        let mut v = self.value(x).clone();
        {
            let vf = v.as_slice_mut().unwrap();
            let bf = self.value(b).as_slice().unwrap();
            for lane in vf.chunks_exact_mut(d) {
                for j in 0..d {
                    lane[j] += bf[j];
                }
            }
        }
        let needs = self.needs(x) || self.needs(b);
        self.push(v, Op::BiasRow { x, b }, needs)
    }

    /// Adds `b [rest..]` to every item of `x [B, rest..]` (e.g. a learned
    /// position table added to each batch element).
    pub fn bias_lead(&mut self, x: Tid, b: Tid) -> Tid {
        assert_eq!(&self.shape(x)[1..], self.shape(b), "lead bias shape");
        let l = self.value(b).len();
        let mut v = self.value(x).clone();
        {
            let vf = v.as_slice_mut().unwrap();
            let bf = self.value(b).as_slice().unwrap();
            for lane in vf.chunks_exact_mut(l) {
                for j in 0..l {
                    lane[j] += bf[j];
                }
            }
        }
        let needs = self.needs(x) || self.needs(b);
        self.push(v, Op::BiasLead { x, b }, needs)
    }

    fn same_shape(&self, a: Tid, b: Tid, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what} operand shapes differ");
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Tid, b: Tid) -> Tid {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Add { a, b }, needs)
    }

    /// Elementwise difference of two same-shape tensors.
    pub fn sub(&mut self, a: Tid, b: Tid) -> Tid {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub { a, b }, needs)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Tid, b: Tid) -> Tid {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul { a, b }, needs)
    }

    /// Elementwise `mul * x + add` with scalar constants.
    pub fn affine(&mut self, x: Tid, mul: f64, add: f64) -> Tid {
        let (m, a) = (F::of_f64(mul), F::of_f64(add));
        let v = self.value(x).mapv(|e| e * m + a);
        let needs = self.needs(x);
        self.push(v, Op::Affine { x, mul }, needs)
    }

    /// Elementwise scaling by a constant.
    pub fn scale(&mut self, x: Tid, c: f64) -> Tid {
        self.affine(x, c, 0.0)
    }

    pub fn relu(&mut self, x: Tid) -> Tid {
        let z = F::zero();
        let v = self.value(x).mapv(|e| e.max(z));
        let needs = self.needs(x);
        self.push(v, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Tid) -> Tid {
        let one = F::one();
        let v = self.value(x).mapv(|e| one / (one + (-e).exp()));
        let needs = self.needs(x);
        self.push(v, Op::Sigmoid { x }, needs)
    }

    pub fn exp(&mut self, x: Tid) -> Tid {
        let v = self.value(x).mapv(|e| e.exp());
        let needs = self.needs(x);
        self.push(v, Op::Exp { x }, needs)
    }

    pub fn abs(&mut self, x: Tid) -> Tid {
        let v = self.value(x).mapv(|e| e.abs());
        let needs = self.needs(x);
        self.push(v, Op::Abs { x }, needs)
    }

    pub fn square(&mut self, x: Tid) -> Tid {
        let v = self.value(x).mapv(|e| e * e);
        let needs = self.needs(x);
        self.push(v, Op::Square { x }, needs)
    }

    /// Softmax over the last axis (rows sum to one).
    pub fn softmax_last(&mut self, x: Tid) -> Tid {
        let v = kernels::softmax_last_forward(self.value(x));
        let needs = self.needs(x);
        self.push(v, Op::SoftmaxLast { x }, needs)
    }

    /// Layer normalisation over the last axis with gain `gamma` and shift
    /// `beta`, both `[D]`.
    pub fn layer_norm(&mut self, x: Tid, gamma: Tid, beta: Tid) -> Tid {
        let d = *self.shape(x).last().unwrap();
        assert_eq!(self.shape(gamma), &[d], "layer norm gain shape");
        assert_eq!(self.shape(beta), &[d], "layer norm shift shape");
        let eps = 1e-5;
        let v = kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(v, Op::LayerNorm { x, gamma, beta, eps }, needs)
    }

    /// Nearest-neighbour x2 spatial upsampling of `[N,C,H,W]`.
    pub fn upsample2(&mut self, x: Tid) -> Tid {
        assert_eq!(self.shape(x).len(), 4, "upsampling expects [N,C,H,W]");
        let v = kernels::upsample2_forward(self.value(x));
        let needs = self.needs(x);
        self.push(v, Op::Upsample2 { x }, needs)
    }

    /// Splits `[N,C,H,W]` into `p x p` patch tokens `[N, T, C*p*p]`.
    pub fn patchify(&mut self, x: Tid, p: usize) -> Tid {
        assert_eq!(self.shape(x).len(), 4, "patchify expects [N,C,H,W]");
        let v = kernels::patchify_forward(self.value(x), p);
        let needs = self.needs(x);
        self.push(v, Op::Patchify { x, p }, needs)
    }

    /// Reinterprets the tensor with a new shape of equal element count.
    pub fn reshape(&mut self, x: Tid, shape: &[usize]) -> Tid {
        let n: usize = shape.iter().product();
        assert_eq!(self.value(x).len(), n, "reshape changes element count");
        let v = ArrayD::from_shape_vec(
            shape.to_vec(),
            self.value(x).as_slice().unwrap().to_vec(),
        )
        .unwrap();
        let needs = self.needs(x);
        self.push(v, Op::Reshape { x }, needs)
    }

    /// Permutes axes (generalised transpose).
    pub fn transpose(&mut self, x: Tid, axes: &[usize]) -> Tid {
        assert_eq!(axes.len(), self.shape(x).len(), "transpose rank");
        let v = self
            .value(x)
            .view()
            .permuted_axes(axes.to_vec())
            .as_standard_layout()
            .into_owned();
        let needs = self.needs(x);
        self.push(
            v,
            Op::Transpose {
                x,
                axes: axes.to_vec(),
            },
            needs,
        )
    }

    /// Concatenates tensors along `axis`.
    pub fn concat(&mut self, parts: &[Tid], axis: usize) -> Tid {
        assert!(!parts.is_empty(), "concat needs at least one part");
        let views: Vec<_> = parts.iter().map(|t| self.value(*t).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views)
            .expect("concat shapes agree off-axis")
            .as_standard_layout()
            .into_owned();
        let needs = parts.iter().any(|t| self.needs(*t));
        self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        )
    }

    /// Takes `len` consecutive entries starting at `start` along `axis`.
    pub fn slice_axis(&mut self, x: Tid, axis: usize, start: usize, len: usize) -> Tid {
        assert!(
            start + len <= self.shape(x)[axis],
            "slice exceeds axis extent"
        );
        let v = self
            .value(x)
            .slice_axis(
                Axis(axis),
                Slice::from(start as isize..(start + len) as isize),
            )
            .as_standard_layout()
            .into_owned();
        let needs = self.needs(x);
        self.push(v, Op::SliceAxis { x, axis, start, len }, needs)
    }

    /// Mean over one axis (the axis is removed).
    pub fn mean_axis(&mut self, x: Tid, axis: usize) -> Tid {
        let v = self
            .value(x)
            .mean_axis(Axis(axis))
            .expect("mean over empty axis")
            .as_standard_layout()
            .into_owned();
        let needs = self.needs(x);
        self.push(v, Op::MeanAxis { x, axis }, needs)
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: Tid) -> Tid {
        let v = ArrayD::from_elem(vec![1], self.value(x).sum());
        let needs = self.needs(x);
        self.push(v, Op::SumAll { x }, needs)
    }

    /// Mean of every element, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: Tid) -> Tid {
        let n = self.value(x).len();
        let v = ArrayD::from_elem(vec![1], self.value(x).sum() / F::of_f64(n as f64));
        let needs = self.needs(x);
        self.push(v, Op::MeanAll { x }, needs)
    }

    /// Clamps each column of `x [N,D]` to `[lo[d], hi[d]]`. The gradient
    /// passes only where the input was strictly inside its range.
    pub fn clamp_per_dim(&mut self, x: Tid, lo: &[f64], hi: &[f64]) -> Tid {
        let d = *self.shape(x).last().unwrap();
        assert_eq!(lo.len(), d, "clamp bound width");
        assert_eq!(hi.len(), d, "clamp bound width");
        let mut v = self.value(x).clone();
        {
            let vf = v.as_slice_mut().unwrap();
            for lane in vf.chunks_exact_mut(d) {
                for j in 0..d {
                    let (l, h) = (F::of_f64(lo[j]), F::of_f64(hi[j]));
                    lane[j] = lane[j].max(l).min(h);
                }
            }
        }
        let needs = self.needs(x);
        self.push(
            v,
            Op::ClampPerDim {
                x,
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            needs,
        )
    }

    /// Mean inter-/intra-hand penetration (mm) of a batch of flattened hand
    /// parameter rows `x [N, 48]`, each paired with a fixed wrist offset.
    /// Differentiable through forward kinematics and the capsule overlaps.
    pub fn penetration_hinge(&mut self, x: Tid, taus: &[[f64; 3]], template: &Template) -> Tid {
        assert_eq!(self.shape(x).len(), 2, "hinge expects a batch of rows");
        assert_eq!(
            self.shape(x)[0],
            taus.len(),
            "one wrist offset per batch row"
        );
        assert_eq!(
            self.shape(x)[1],
            crate::repr::ReprKind::Params.dim(),
            "hinge expects parameter rows"
        );
        let v = hinge::forward(self.value(x), taus, template);
        let v = ArrayD::from_elem(vec![1], F::of_f64(v));
        let needs = self.needs(x);
        self.push(
            v,
            Op::PenetrationHinge {
                x,
                taus: taus.to_vec(),
                template: Box::new(template.clone()),
            },
            needs,
        )
    }

    // ----- conveniences composed from the ops above -----

    /// Fully connected layer: `x [N,in] . w [in,out] + b [out]`.
    pub fn linear(&mut self, x: Tid, w: Tid, b: Tid) -> Tid {
        let m = self.matmul(x, w);
        self.bias_row(m, b)
    }

    /// Global average pooling of `[N,C,H,W]` to `[N,C]`.
    pub fn avg_pool_global(&mut self, x: Tid) -> Tid {
        let (n, c) = (self.shape(x)[0], self.shape(x)[1]);
        let hw: usize = self.shape(x)[2..].iter().product();
        let r = self.reshape(x, &[n, c, hw]);
        self.mean_axis(r, 2)
    }

    /// Sum of squared differences over every element.
    pub fn sq_err_sum(&mut self, a: Tid, b: Tid) -> Tid {
        let d = self.sub(a, b);
        let s = self.square(d);
        self.sum_all(s)
    }

    /// Mean squared difference per element.
    pub fn sq_err_mean(&mut self, a: Tid, b: Tid) -> Tid {
        let d = self.sub(a, b);
        let s = self.square(d);
        self.mean_all(s)
    }

    /// Mean absolute difference per element.
    pub fn abs_err_mean(&mut self, a: Tid, b: Tid) -> Tid {
        let d = self.sub(a, b);
        let s = self.abs(d);
        self.mean_all(s)
    }

    /// Runs the backward pass from a single-element loss node, returning a
    /// gradient per participating node. Interior gradients are freed as the
    /// walk passes them; leaf gradients remain for collection.
    pub fn backward(&self, loss: Tid) -> Gradients<F> {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward starts from a scalar loss"
        );
        let mut slots: Vec<Option<ArrayD<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(ArrayD::from_elem(
            self.nodes[loss.0].value.shape().to_vec(),
            F::one(),
        ));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs || slots[id].is_none() {
                continue;
            }
            let g = if matches!(node.op, Op::Leaf) {
                continue;
            } else {
                slots[id].take().unwrap()
            };
            self.dispatch(node, &g, &mut slots);
        }
        Gradients { slots }
    }

    fn dispatch(&self, node: &Node<F>, g: &ArrayD<F>, slots: &mut [Option<ArrayD<F>>]) {
        // Propagate into an input only if that input leads back to a
        // gradient-bearing leaf.
        macro_rules! feed {
            ($t:expr, $contrib:expr) => {
                if self.needs($t) {
                    acc(&mut slots[$t.0], $contrib);
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                feed!(*a, kernels::as2(g).dot(&kernels::as2(bv).t()).into_dyn());
                feed!(*b, kernels::as2(av).t().dot(&kernels::as2(g)).into_dyn());
            }
            Op::MatMulBatchW { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let x3 = xv.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let w2 = kernels::as2(wv);
                if self.needs(*x) {
                    let mut dx = ArrayD::zeros(xv.shape().to_vec());
                    for i in 0..x3.dim().0 {
                        let p = g3.index_axis(Axis(0), i).dot(&w2.t());
                        dx.index_axis_mut(Axis(0), i).assign(&p);
                    }
                    acc(&mut slots[x.0], dx);
                }
                if self.needs(*w) {
                    let mut dw = ndarray::Array2::<F>::zeros((w2.nrows(), w2.ncols()));
                    for i in 0..x3.dim().0 {
                        dw = dw
                            + x3.index_axis(Axis(0), i)
                                .t()
                                .dot(&g3.index_axis(Axis(0), i));
                    }
                    acc(&mut slots[w.0], dw.into_dyn());
                }
            }
            Op::MatMulBatch { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let a3 = av.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let b3 = bv.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                if self.needs(*a) {
                    let mut da = ArrayD::zeros(av.shape().to_vec());
                    for i in 0..a3.dim().0 {
                        let p = g3
                            .index_axis(Axis(0), i)
                            .dot(&b3.index_axis(Axis(0), i).t());
                        da.index_axis_mut(Axis(0), i).assign(&p);
                    }
                    acc(&mut slots[a.0], da);
                }
                if self.needs(*b) {
                    let mut db = ArrayD::zeros(bv.shape().to_vec());
                    for i in 0..a3.dim().0 {
                        let p = a3
                            .index_axis(Axis(0), i)
                            .t()
                            .dot(&g3.index_axis(Axis(0), i));
                        db.index_axis_mut(Axis(0), i).assign(&p);
                    }
                    acc(&mut slots[b.0], db);
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), g, *stride, *pad);
                feed!(*x, dx);
                feed!(*w, dw);
            }
            Op::BiasChannel { x, b } => {
                feed!(*x, g.clone());
                if self.needs(*b) {
                    let c = self.shape(*b)[0];
                    let hw: usize = g.shape()[2..].iter().product();
                    let gf = g.as_slice().unwrap();
                    let mut db = vec![F::zero(); c];
                    for (i, chunk) in gf.chunks_exact(hw).enumerate() {
                        let bias = &mut db[i % c];
                        for &e in chunk {
                            *bias += e;
                        }
                    }
                    acc(
                        &mut slots[b.0],
                        ArrayD::from_shape_vec(vec![c], db).unwrap(),
                    );
                }
            }
            Op::BiasRow { x, b } => {
                feed!(*x, g.clone());
                if self.needs(*b) {
                    let d = self.shape(*b)[0];
                    let gf = g.as_slice().unwrap();
                    let mut db = vec![F::zero(); d];
                    for lane in gf.chunks_exact(d) {
                        for j in 0..d {
                            db[j] += lane[j];
                        }
                    }
                    acc(
                        &mut slots[b.0],
                        ArrayD::from_shape_vec(vec![d], db).unwrap(),
                    );
                }
            }
            Op::BiasLead { x, b } => {
                feed!(*x, g.clone());
                if self.needs(*b) {
                    let l = self.value(*b).len();
                    let gf = g.as_slice().unwrap();
                    let mut db = vec![F::zero(); l];
                    for lane in gf.chunks_exact(l) {
                        for j in 0..l {
                            db[j] += lane[j];
                        }
                    }
                    acc(
                        &mut slots[b.0],
                        ArrayD::from_shape_vec(self.shape(*b).to_vec(), db).unwrap(),
                    );
                }
            }
            Op::Add { a, b } => {
                feed!(*a, g.clone());
                feed!(*b, g.clone());
            }
            Op::Sub { a, b } => {
                feed!(*a, g.clone());
                feed!(*b, g.mapv(|e| -e));
            }
            Op::Mul { a, b } => {
                feed!(*a, g * self.value(*b));
                feed!(*b, g * self.value(*a));
            }
            Op::Affine { x, mul } => {
                let m = F::of_f64(*mul);
                feed!(*x, g.mapv(|e| e * m));
            }
            Op::Relu { x } => {
                let z = F::zero();
                let mask = self.value(*x).mapv(|e| if e > z { F::one() } else { z });
                feed!(*x, g * &mask);
            }
            Op::Sigmoid { x } => {
                let one = F::one();
                let y = &node.value;
                feed!(*x, g * &y.mapv(|s| s * (one - s)));
            }
            Op::Exp { x } => {
                feed!(*x, g * &node.value);
            }
            Op::Abs { x } => {
                let z = F::zero();
                let sign = self.value(*x).mapv(|e| {
                    if e > z {
                        F::one()
                    } else if e < z {
                        -F::one()
                    } else {
                        z
                    }
                });
                feed!(*x, g * &sign);
            }
            Op::Square { x } => {
                let two = F::of_f64(2.0);
                feed!(*x, g * &self.value(*x).mapv(|e| e * two));
            }
            Op::SoftmaxLast { x } => {
                feed!(*x, kernels::softmax_last_backward(&node.value, g));
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (dx, dgamma, dbeta) =
                    kernels::layer_norm_backward(self.value(*x), self.value(*gamma), g, *eps);
                feed!(*x, dx);
                feed!(*gamma, dgamma);
                feed!(*beta, dbeta);
            }
            Op::Upsample2 { x } => {
                feed!(*x, kernels::upsample2_backward(g, self.shape(*x)));
            }
            Op::Patchify { x, p } => {
                feed!(*x, kernels::patchify_backward(g, self.shape(*x), *p));
            }
            Op::Reshape { x } => {
                let dx = ArrayD::from_shape_vec(
                    self.shape(*x).to_vec(),
                    g.as_slice().unwrap().to_vec(),
                )
                .unwrap();
                feed!(*x, dx);
            }
            Op::Transpose { x, axes } => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let dx = g
                    .view()
                    .permuted_axes(inverse)
                    .as_standard_layout()
                    .into_owned();
                feed!(*x, dx);
            }
            Op::Concat { parts, axis } => {
                let mut start = 0usize;
                for t in parts {
                    let len = self.shape(*t)[*axis];
                    if self.needs(*t) {
                        let piece = g
                            .slice_axis(
                                Axis(*axis),
                                Slice::from(start as isize..(start + len) as isize),
                            )
                            .as_standard_layout()
                            .into_owned();
                        acc(&mut slots[t.0], piece);
                    }
                    start += len;
                }
            }
            Op::SliceAxis { x, axis, start, len } => {
                let mut dx = ArrayD::zeros(self.shape(*x).to_vec());
                dx.slice_axis_mut(
                    Axis(*axis),
                    Slice::from(*start as isize..(*start + *len) as isize),
                )
                .assign(g);
                feed!(*x, dx);
            }
            Op::MeanAxis { x, axis } => {
                let extent = self.shape(*x)[*axis];
                let scaled = g.mapv(|e| e / F::of_f64(extent as f64));
                let dx = scaled
                    .insert_axis(Axis(*axis))
                    .broadcast(self.shape(*x).to_vec())
                    .unwrap()
                    .to_owned();
                feed!(*x, dx);
            }
            Op::SumAll { x } => {
                let s = *g.iter().next().unwrap();
                feed!(*x, ArrayD::from_elem(self.shape(*x).to_vec(), s));
            }
            Op::MeanAll { x } => {
                let n = self.value(*x).len();
                let s = *g.iter().next().unwrap() / F::of_f64(n as f64);
                feed!(*x, ArrayD::from_elem(self.shape(*x).to_vec(), s));
            }
            Op::ClampPerDim { x, lo, hi } => {
                let d = lo.len();
                let xv = self.value(*x);
                let xf = xv.as_slice().unwrap();
                let gf = g.as_slice().unwrap();
                let mut dx = vec![F::zero(); xf.len()];
                for (i, (&xi, &gi)) in xf.iter().zip(gf).enumerate() {
                    let j = i % d;
                    let within = xi.as_f64() >= lo[j] && xi.as_f64() <= hi[j];
                    if within {
                        dx[i] = gi;
                    }
                }
                feed!(
                    *x,
                    ArrayD::from_shape_vec(self.shape(*x).to_vec(), dx).unwrap()
                );
            }
            Op::PenetrationHinge { x, taus, template } => {
                let s = g.iter().next().unwrap().as_f64();
                let dx = hinge::backward(self.value(*x), taus, template, s);
                feed!(*x, dx);
            }
        }
    }
}
