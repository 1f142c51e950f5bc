//! Dense compute kernels behind the graph ops.
//!
//! Every kernel takes and returns standard-layout arrays; the graph
//! guarantees that invariant for all stored values. Loops are written
//! against flat slices so the hot paths (convolution, normalisation)
//! stay allocation-light and deterministic: accumulation order is fixed,
//! so repeated runs produce bit-identical results in both `f32` and `f64`.

use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewD, Axis, Ix2, Ix3};

use super::Float;

/// Views a tensor as a matrix, panicking with a clear message otherwise.
pub(crate) fn as2<F: Float>(a: &ArrayD<F>) -> ArrayView2<'_, F> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("operand must be a matrix")
}

fn flat<F: Float>(a: &ArrayD<F>) -> &[F] {
    a.as_slice().expect("graph values are standard layout")
}

/// `[m,k] x [k,n]` matrix product.
pub(crate) fn matmul2<F: Float>(a: &ArrayD<F>, b: &ArrayD<F>) -> ArrayD<F> {
    as2(a).dot(&as2(b)).into_dyn()
}

/// `[B,m,k] x [k,n]`: one shared right factor applied to every batch item.
pub(crate) fn matmul_batch_w<F: Float>(x: &ArrayD<F>, w: &ArrayD<F>) -> ArrayD<F> {
    let x3 = x.view().into_dimensionality::<Ix3>().expect("batched operand");
    let w2 = as2(w);
    let (b, m, _k) = x3.dim();
    let n = w2.ncols();
    let mut out = ArrayD::zeros(vec![b, m, n]);
    for i in 0..b {
        let prod = x3.index_axis(Axis(0), i).dot(&w2);
        out.index_axis_mut(Axis(0), i).assign(&prod);
    }
    out
}

/// `[B,m,k] x [B,k,n]`: independent product per batch item.
pub(crate) fn matmul_batch<F: Float>(a: &ArrayD<F>, b: &ArrayD<F>) -> ArrayD<F> {
    let a3 = a.view().into_dimensionality::<Ix3>().expect("batched operand");
    let b3 = b.view().into_dimensionality::<Ix3>().expect("batched operand");
    let (nb, m, _k) = a3.dim();
    let n = b3.dim().2;
    let mut out = ArrayD::zeros(vec![nb, m, n]);
    for i in 0..nb {
        let prod = a3
            .index_axis(Axis(0), i)
            .dot(&b3.index_axis(Axis(0), i));
        out.index_axis_mut(Axis(0), i).assign(&prod);
    }
    out
}

/// Output spatial extent of a convolution along one axis.
pub(crate) fn conv_out(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

/// Unrolls one image `[C,H,W]` into a `[C*kh*kw, Ho*Wo]` column buffer.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Float>(
    x: &[F],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    col: &mut [F],
) {
    let mut row = 0;
    for c in 0..ci {
        for dy in 0..kh {
            for dx in 0..kw {
                let base = row * ho * wo;
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    let dst = base + oy * wo;
                    if iy < 0 || iy >= h as isize {
                        col[dst..dst + wo].fill(F::zero());
                        continue;
                    }
                    let src = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        col[dst + ox] = if ix >= 0 && ix < w as isize {
                            x[src + ix as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Scatters a column buffer back onto an image, accumulating overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Float>(
    col: &[F],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    dx: &mut [F],
) {
    let mut row = 0;
    for c in 0..ci {
        for dy in 0..kh {
            for dxk in 0..kw {
                let base = row * ho * wo;
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * stride + dy) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + dxk) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[dst + ix as usize] += col[base + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward: `x [N,Ci,H,W]`, `w [Co,Ci,kh,kw]` -> `[N,Co,Ho,Wo]`.
pub(crate) fn conv2d_forward<F: Float>(
    x: &ArrayD<F>,
    w: &ArrayD<F>,
    stride: usize,
    pad: usize,
) -> ArrayD<F> {
    let (n, ci, h, wi) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(wi, kw, stride, pad));
    let rows = ci * kh * kw;
    let wmat = ArrayView2::from_shape((co, rows), flat(w)).expect("weight layout");
    let xf = flat(x);
    let mut col = vec![F::zero(); rows * ho * wo];
    let mut out = ArrayD::zeros(vec![n, co, ho, wo]);
    let of = out.as_slice_mut().expect("fresh output is contiguous");
    let plane = ci * h * wi;
    for i in 0..n {
        im2col(
            &xf[i * plane..(i + 1) * plane],
            (ci, h, wi),
            (kh, kw),
            stride,
            pad,
            (ho, wo),
            &mut col,
        );
        let cmat = ArrayView2::from_shape((rows, ho * wo), &col[..]).expect("col layout");
        let prod = wmat.dot(&cmat);
        let dst = i * co * ho * wo;
        of[dst..dst + co * ho * wo].copy_from_slice(prod.as_slice().expect("product layout"));
    }
    out
}

/// Convolution backward: gradients for the input and the kernel.
pub(crate) fn conv2d_backward<F: Float>(
    x: &ArrayD<F>,
    w: &ArrayD<F>,
    g: &ArrayD<F>,
    stride: usize,
    pad: usize,
) -> (ArrayD<F>, ArrayD<F>) {
    let (n, ci, h, wi) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(wi, kw, stride, pad));
    let rows = ci * kh * kw;
    let wmat = ArrayView2::from_shape((co, rows), flat(w)).expect("weight layout");
    let xf = flat(x);
    let gf = flat(g);
    let mut col = vec![F::zero(); rows * ho * wo];
    let mut dw2: Array2<F> = Array2::zeros((co, rows));
    let mut dx = ArrayD::zeros(x.shape().to_vec());
    let dxf = dx.as_slice_mut().expect("fresh output is contiguous");
    let plane = ci * h * wi;
    let gplane = co * ho * wo;
    for i in 0..n {
        im2col(
            &xf[i * plane..(i + 1) * plane],
            (ci, h, wi),
            (kh, kw),
            stride,
            pad,
            (ho, wo),
            &mut col,
        );
        let cmat = ArrayView2::from_shape((rows, ho * wo), &col[..]).expect("col layout");
        let gmat =
            ArrayView2::from_shape((co, ho * wo), &gf[i * gplane..(i + 1) * gplane]).unwrap();
        dw2 = dw2 + gmat.dot(&cmat.t());
        let dcol = wmat.t().dot(&gmat);
        col2im(
            dcol.as_slice().expect("product layout"),
            (ci, h, wi),
            (kh, kw),
            stride,
            pad,
            (ho, wo),
            &mut dxf[i * plane..(i + 1) * plane],
        );
    }
    let dw = ArrayD::from_shape_vec(w.shape().to_vec(), dw2.into_raw_vec_and_offset().0)
        .expect("kernel gradient shape");
    (dx, dw)
}

/// Nearest-neighbour x2 upsampling of `[N,C,H,W]`.
pub(crate) fn upsample2_forward<F: Float>(x: &ArrayD<F>) -> ArrayD<F> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let xf = flat(x);
    let mut out = ArrayD::zeros(vec![n, c, 2 * h, 2 * w]);
    let of = out.as_slice_mut().unwrap();
    for p in 0..n * c {
        let src = p * h * w;
        let dst = p * 4 * h * w;
        for y in 0..2 * h {
            let srow = src + (y / 2) * w;
            let drow = dst + y * 2 * w;
            for xx in 0..2 * w {
                of[drow + xx] = xf[srow + xx / 2];
            }
        }
    }
    out
}

/// Backward of x2 upsampling: each input cell collects its four copies.
pub(crate) fn upsample2_backward<F: Float>(g: &ArrayD<F>, xshape: &[usize]) -> ArrayD<F> {
    let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let gf = flat(g);
    let mut dx = ArrayD::zeros(xshape.to_vec());
    let df = dx.as_slice_mut().unwrap();
    for p in 0..n * c {
        let src = p * 4 * h * w;
        let dst = p * h * w;
        for y in 0..2 * h {
            let srow = src + y * 2 * w;
            let drow = dst + (y / 2) * w;
            for xx in 0..2 * w {
                df[drow + xx / 2] += gf[srow + xx];
            }
        }
    }
    dx
}

/// Splits `[N,C,H,W]` into non-overlapping `p x p` patches and flattens each
/// to a token: output `[N, (H/p)*(W/p), C*p*p]`, tokens in row-major grid
/// order, features ordered channel-major then row then column.
pub(crate) fn patchify_forward<F: Float>(x: &ArrayD<F>, p: usize) -> ArrayD<F> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    assert!(
        h % p == 0 && w % p == 0,
        "patch size {p} must divide {h}x{w}"
    );
    let (gh, gw) = (h / p, w / p);
    let xf = flat(x);
    let mut out = ArrayD::zeros(vec![n, gh * gw, c * p * p]);
    let of = out.as_slice_mut().unwrap();
    let tok = c * p * p;
    for i in 0..n {
        for gy in 0..gh {
            for gx in 0..gw {
                let t = (i * gh * gw + gy * gw + gx) * tok;
                for cc in 0..c {
                    for py in 0..p {
                        let src = ((i * c + cc) * h + gy * p + py) * w + gx * p;
                        let dst = t + (cc * p + py) * p;
                        of[dst..dst + p].copy_from_slice(&xf[src..src + p]);
                    }
                }
            }
        }
    }
    out
}

/// Backward of patchify: the inverse scatter (a bijection, so plain writes).
pub(crate) fn patchify_backward<F: Float>(g: &ArrayD<F>, xshape: &[usize], p: usize) -> ArrayD<F> {
    let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (gh, gw) = (h / p, w / p);
    let gf = flat(g);
    let mut dx = ArrayD::zeros(xshape.to_vec());
    let df = dx.as_slice_mut().unwrap();
    let tok = c * p * p;
    for i in 0..n {
        for gy in 0..gh {
            for gx in 0..gw {
                let t = (i * gh * gw + gy * gw + gx) * tok;
                for cc in 0..c {
                    for py in 0..p {
                        let dst = ((i * c + cc) * h + gy * p + py) * w + gx * p;
                        let src = t + (cc * p + py) * p;
                        df[dst..dst + p].copy_from_slice(&gf[src..src + p]);
                    }
                }
            }
        }
    }
    dx
}

/// Per-lane statistics of the last axis: `(mean, 1/sqrt(var+eps))`.
fn lane_stats<F: Float>(lane: &[F], eps: f64) -> (F, F) {
    let d = F::of_f64(lane.len() as f64);
    let mean = lane.iter().copied().sum::<F>() / d;
    let mut var = F::zero();
    for &v in lane {
        let c = v - mean;
        var += c * c;
    }
    var = var / d;
    let inv = F::one() / (var + F::of_f64(eps)).sqrt();
    (mean, inv)
}

/// Layer normalisation over the last axis with learned gain and shift.
pub(crate) fn layer_norm_forward<F: Float>(
    x: &ArrayD<F>,
    gamma: &ArrayD<F>,
    beta: &ArrayD<F>,
    eps: f64,
) -> ArrayD<F> {
    let d = *x.shape().last().expect("layer norm needs an axis");
    let xf = flat(x);
    let gm = flat(gamma);
    let bt = flat(beta);
    let mut out = ArrayD::zeros(x.shape().to_vec());
    let of = out.as_slice_mut().unwrap();
    for (lane, olane) in xf.chunks_exact(d).zip(of.chunks_exact_mut(d)) {
        let (mean, inv) = lane_stats(lane, eps);
        for j in 0..d {
            olane[j] = (lane[j] - mean) * inv * gm[j] + bt[j];
        }
    }
    out
}

/// Backward of layer normalisation; returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward<F: Float>(
    x: &ArrayD<F>,
    gamma: &ArrayD<F>,
    g: &ArrayD<F>,
    eps: f64,
) -> (ArrayD<F>, ArrayD<F>, ArrayD<F>) {
    let d = *x.shape().last().unwrap();
    let dn = F::of_f64(d as f64);
    let xf = flat(x);
    let gm = flat(gamma);
    let gf = flat(g);
    let mut dx = ArrayD::zeros(x.shape().to_vec());
    let dxf = dx.as_slice_mut().unwrap();
    let mut dgamma = vec![F::zero(); d];
    let mut dbeta = vec![F::zero(); d];
    let mut xhat = vec![F::zero(); d];
    for ((lane, glane), dlane) in xf
        .chunks_exact(d)
        .zip(gf.chunks_exact(d))
        .zip(dxf.chunks_exact_mut(d))
    {
        let (mean, inv) = lane_stats(lane, eps);
        let mut mg = F::zero();
        let mut mgx = F::zero();
        for j in 0..d {
            xhat[j] = (lane[j] - mean) * inv;
            let gj = glane[j] * gm[j];
            mg += gj;
            mgx += gj * xhat[j];
            dgamma[j] += glane[j] * xhat[j];
            dbeta[j] += glane[j];
        }
        mg = mg / dn;
        mgx = mgx / dn;
        for j in 0..d {
            dlane[j] = (glane[j] * gm[j] - mg - xhat[j] * mgx) * inv;
        }
    }
    (
        dx,
        ArrayD::from_shape_vec(vec![d], dgamma).unwrap(),
        ArrayD::from_shape_vec(vec![d], dbeta).unwrap(),
    )
}

/// Numerically stable softmax over the last axis.
pub(crate) fn softmax_last_forward<F: Float>(x: &ArrayD<F>) -> ArrayD<F> {
    let d = *x.shape().last().expect("softmax needs an axis");
    let xf = flat(x);
    let mut out = ArrayD::zeros(x.shape().to_vec());
    let of = out.as_slice_mut().unwrap();
    for (lane, olane) in xf.chunks_exact(d).zip(of.chunks_exact_mut(d)) {
        let mut m = lane[0];
        for &v in lane {
            m = m.max(v);
        }
        let mut total = F::zero();
        for j in 0..d {
            let e = (lane[j] - m).exp();
            olane[j] = e;
            total += e;
        }
        for v in olane.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Backward of softmax given its own output.
pub(crate) fn softmax_last_backward<F: Float>(y: &ArrayD<F>, g: &ArrayD<F>) -> ArrayD<F> {
    let d = *y.shape().last().unwrap();
    let yf = flat(y);
    let gf = flat(g);
    let mut dx = ArrayD::zeros(y.shape().to_vec());
    let dxf = dx.as_slice_mut().unwrap();
    for ((ylane, glane), dlane) in yf
        .chunks_exact(d)
        .zip(gf.chunks_exact(d))
        .zip(dxf.chunks_exact_mut(d))
    {
        let mut dot = F::zero();
        for j in 0..d {
            dot += ylane[j] * glane[j];
        }
        for j in 0..d {
            dlane[j] = ylane[j] * (glane[j] - dot);
        }
    }
    dx
}

/// Converts an `f64` array into the graph's element type.
pub fn convert<F: Float>(a: &ArrayViewD<'_, f64>) -> ArrayD<F> {
    a.mapv(F::of_f64)
}

/// Converts a graph-typed array back to `f64` (for metrics and storage).
pub fn to_f64<F: Float>(a: &ArrayD<F>) -> ArrayD<f64> {
    a.mapv(F::as_f64)
}
