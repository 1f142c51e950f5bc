//! Central-difference gradient checking.
//!
//! The convention used across the crate: a per-element gap
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)` where the
//! floor is `1e-6 * (1 + max|numeric|)`. The floor scales with the loss so
//! finite-difference round-off on large losses cannot dominate dimensions
//! whose true gradient is zero; for order-one losses it is effectively a
//! pure relative criterion.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::ParamSet;

/// Central finite-difference gradient of `f` at `x`. The step for element
/// `i` is `eps * max(1, |x_i|)`.
pub fn central_diff<Fm>(x: &[f64], eps: f64, mut f: Fm) -> Vec<f64>
where
    Fm: FnMut(&[f64]) -> f64,
{
    let mut buf = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = eps * x[i].abs().max(1.0);
        let orig = buf[i];
        buf[i] = orig + h;
        let fp = f(&buf);
        buf[i] = orig - h;
        let fm = f(&buf);
        buf[i] = orig;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Gap floor derived from the numeric gradient's magnitude (see module
/// docs).
pub fn grad_floor(numeric: &[f64]) -> f64 {
    let linf = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-6 * (1.0 + linf)
}

/// Worst per-element gap between two gradients of the same shape.
pub fn max_grad_gap(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let gap = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        worst = worst.max(gap);
    }
    worst
}

/// Checks an analytic gradient map against central differences of `loss`
/// over every element of every parameter in `params`, returning the worst
/// gap. Parameters missing from `analytic` are treated as zero gradients,
/// so a forgotten backward rule is caught rather than skipped.
pub fn max_param_grad_gap<L>(
    params: &mut ParamSet<f64>,
    analytic: &BTreeMap<String, ArrayD<f64>>,
    eps: f64,
    mut loss: L,
) -> f64
where
    L: FnMut(&ParamSet<f64>) -> f64,
{
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut worst = 0.0f64;
    for name in &names {
        let n = params.get(name).len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = params.get(name).as_slice().unwrap()[i];
            let h = eps * orig.abs().max(1.0);
            params.get_mut(name).as_slice_mut().unwrap()[i] = orig + h;
            let fp = loss(params);
            params.get_mut(name).as_slice_mut().unwrap()[i] = orig - h;
            let fm = loss(params);
            params.get_mut(name).as_slice_mut().unwrap()[i] = orig;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let zero;
        let a: &[f64] = match analytic.get(name) {
            Some(arr) => arr.as_slice().unwrap(),
            None => {
                zero = vec![0.0; n];
                &zero
            }
        };
        let floor = grad_floor(&numeric);
        worst = worst.max(max_grad_gap(a, &numeric, floor));
    }
    worst
}
