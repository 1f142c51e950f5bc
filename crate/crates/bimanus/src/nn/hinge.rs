//! Differentiable penetration penalty over flattened hand-parameter rows.
//!
//! Each row of the input is a full parameter vector (rotations, joint
//! angles, shape) with a fixed per-row wrist offset supplied alongside.
//! The value is the batch mean of the state's summed capsule overlaps, in
//! millimetres; its gradient flows through forward kinematics and the
//! capsule distance computation via the crate's dual numbers, one seeded
//! pass per input dimension. Rows describing separated hands contribute a
//! zero value and a zero gradient, which is exactly the hinge behaviour.

use ndarray::ArrayD;

use crate::hand::template::DOF_PER_HAND;
use crate::hand::{hand_capsules, hand_joints, penetration_sum, Dual, Scalar, Template, V3};
use crate::repr::ReprKind;

use super::Float;

/// Summed capsule overlap of one parameter row, generic over the scalar so
/// the same code produces values (`f64`) and derivatives (`Dual`).
fn row_penetration<S: Scalar>(vals: &[S], tau: [f64; 3], template: &Template) -> S {
    let scale = vals[46];
    let radius = vals[47];
    let right_rot = V3::new(vals[0], vals[1], vals[2]);
    let right_angles: [S; DOF_PER_HAND] = std::array::from_fn(|k| vals[3 + k]);
    let left_rot = V3::new(vals[23], vals[24], vals[25]);
    let left_angles: [S; DOF_PER_HAND] = std::array::from_fn(|k| vals[26 + k]);
    let right = hand_joints(template, &right_angles, scale, right_rot, false, V3::zeros());
    let left = hand_joints(
        template,
        &left_angles,
        scale,
        left_rot,
        true,
        V3::from_f64(tau),
    );
    let rc = hand_capsules(&right, template, scale * radius);
    let lc = hand_capsules(&left, template, scale * radius);
    penetration_sum(&rc, &lc, template)
}

/// Batch-mean penetration of `x [N, 48]`.
pub(super) fn forward<F: Float>(x: &ArrayD<F>, taus: &[[f64; 3]], template: &Template) -> f64 {
    let d = ReprKind::Params.dim();
    let xf = x.as_slice().expect("graph values are standard layout");
    let mut total = 0.0;
    for (row, &tau) in xf.chunks_exact(d).zip(taus) {
        let vals: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        total += row_penetration(&vals, tau, template);
    }
    total / taus.len() as f64
}

/// Gradient of [`forward`] scaled by the upstream scalar `g`.
pub(super) fn backward<F: Float>(
    x: &ArrayD<F>,
    taus: &[[f64; 3]],
    template: &Template,
    g: f64,
) -> ArrayD<F> {
    let d = ReprKind::Params.dim();
    let xf = x.as_slice().expect("graph values are standard layout");
    let scale = g / taus.len() as f64;
    let mut dx = vec![F::zero(); xf.len()];
    for (r, (row, &tau)) in xf.chunks_exact(d).zip(taus).enumerate() {
        let vals: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        // Skip the dual passes entirely when the row has no contact: the
        // hinge is identically zero in a neighbourhood, so the gradient is
        // exactly zero there.
        if row_penetration(&vals, tau, template) == 0.0 {
            continue;
        }
        let mut duals: Vec<Dual> = vals.iter().map(|&v| Dual::constant(v)).collect();
        for dim in 0..d {
            duals[dim] = Dual::variable(vals[dim]);
            let out = row_penetration(&duals, tau, template);
            duals[dim] = Dual::constant(vals[dim]);
            dx[r * d + dim] = F::of_f64(out.du * scale);
        }
    }
    ArrayD::from_shape_vec(x.shape().to_vec(), dx).unwrap()
}
