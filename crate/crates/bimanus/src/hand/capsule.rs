//! Capsule geometry: the volumetric hand surface, distances, penetration
//! measures, and deterministic surface sampling.
//!
//! Each of a hand's 20 bones carries a capsule (segment plus radius), giving
//! 40 capsules for a two-hand state. Penetration between two capsules is
//! `max(0, r_a + r_b - segment_distance)`. Two measures aggregate it:
//!
//! * [`penetration_depth`] — the **maximum** over all tested pairs, in mm;
//!   the quantity reported by evaluation and driven to zero by refinement;
//! * [`penetration_sum`] — the **sum** over the same pairs; smoother, used
//!   as the training-time penalty.
//!
//! Tested pairs are every right/left pair plus same-hand pairs that are not
//! kinematically adjacent (see [`super::template::bones_adjacent`]); bones
//! that share a joint always interpenetrate at the joint by construction and
//! carry no signal.

use super::fk::joints_of_unchecked;
use super::pose::{HandState, JointSet};
use super::scalar::{Scalar, V3};
use super::template::{bones_adjacent, Template, BONES_PER_HAND, JOINTS_PER_HAND, SCALE_RANGE};

/// A capsule: the set of points within `radius` of segment `a`..`b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule<S> {
    pub a: V3<S>,
    pub b: V3<S>,
    pub radius: S,
}

/// Minimum distance between segments `p1..q1` and `p2..q2`.
///
/// Clamped closest-point computation; branches follow the primal value, so
/// dual-number derivatives are the standard subgradient at boundary cases.
pub fn segment_distance<S: Scalar>(p1: V3<S>, q1: V3<S>, p2: V3<S>, q2: V3<S>) -> S {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let f = d2.dot(r);
    let eps = 1e-12;

    let (s, t) = if a.val() <= eps && e.val() <= eps {
        (S::zero(), S::zero())
    } else if a.val() <= eps {
        (S::zero(), (f / e).clamp01())
    } else {
        let c = d1.dot(r);
        if e.val() <= eps {
            ((-c / a).clamp01(), S::zero())
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            let s0 = if denom.val().abs() > eps {
                ((b * f - c * e) / denom).clamp01()
            } else {
                S::zero()
            };
            let t0 = (b * s0 + f) / e;
            if t0.val() < 0.0 {
                ((-c / a).clamp01(), S::zero())
            } else if t0.val() > 1.0 {
                (((b - c) / a).clamp01(), S::one())
            } else {
                (s0, t0)
            }
        }
    };

    let c1 = p1 + d1.scale(s);
    let c2 = p2 + d2.scale(t);
    (c1 - c2).norm()
}

/// Overlap depth of two capsules: 0 when separated, `r_a + r_b - d` when
/// interpenetrating.
pub fn capsule_overlap<S: Scalar>(a: &Capsule<S>, b: &Capsule<S>) -> S {
    (a.radius + b.radius - segment_distance(a.a, a.b, b.a, b.b)).relu()
}

/// Builds the 20 capsules of one hand from its state-frame joints.
///
/// `radius_mult` is the product of the hand's uniform scale and its radius
/// multiplier, so capsule girth tracks bone length under scaling.
pub fn hand_capsules<S: Scalar>(
    joints: &[V3<S>],
    template: &Template,
    radius_mult: S,
) -> [Capsule<S>; BONES_PER_HAND] {
    debug_assert_eq!(joints.len(), JOINTS_PER_HAND);
    std::array::from_fn(|i| {
        let bone = &template.bones[i];
        Capsule {
            a: joints[bone.parent_joint],
            b: joints[bone.child_joint],
            radius: S::from_f64(bone.radius) * radius_mult,
        }
    })
}

/// Capsules for both hands of a state (right array first).
pub fn state_capsules(
    state: &HandState,
    template: &Template,
) -> ([Capsule<f64>; BONES_PER_HAND], [Capsule<f64>; BONES_PER_HAND]) {
    let js = joints_of_unchecked(state, template);
    let right: Vec<V3<f64>> = js.right().iter().map(|p| V3::from_f64(*p)).collect();
    let left: Vec<V3<f64>> = js.left().iter().map(|p| V3::from_f64(*p)).collect();
    (
        hand_capsules(
            &right,
            template,
            state.shape.scale * state.shape.radius_scale,
        ),
        hand_capsules(
            &left,
            template,
            state.shape.scale * state.shape.radius_scale,
        ),
    )
}

/// Applies `f` to the overlap of every tested capsule pair: all right/left
/// pairs, then non-adjacent same-hand pairs of each hand.
fn for_each_overlap<S: Scalar>(
    right: &[Capsule<S>; BONES_PER_HAND],
    left: &[Capsule<S>; BONES_PER_HAND],
    template: &Template,
    mut f: impl FnMut(S),
) {
    for cr in right.iter() {
        for cl in left.iter() {
            f(capsule_overlap(cr, cl));
        }
    }
    for caps in [right, left] {
        for i in 0..BONES_PER_HAND {
            for j in (i + 1)..BONES_PER_HAND {
                if !bones_adjacent(&template.bones[i], &template.bones[j]) {
                    f(capsule_overlap(&caps[i], &caps[j]));
                }
            }
        }
    }
}

/// Maximum overlap depth across all tested pairs, mm. Zero means the state
/// is penetration-free.
pub fn penetration_depth(state: &HandState, template: &Template) -> f64 {
    let (right, left) = state_capsules(state, template);
    let mut depth = 0.0f64;
    for_each_overlap(&right, &left, template, |o| depth = depth.max(o));
    depth
}

/// Sum of overlap depths across all tested pairs (the training penalty).
pub fn penetration_sum<S: Scalar>(
    right: &[Capsule<S>; BONES_PER_HAND],
    left: &[Capsule<S>; BONES_PER_HAND],
    template: &Template,
) -> S {
    let mut total = S::zero();
    for_each_overlap(right, left, template, |o| total = total + o);
    total
}

/// Sum-of-overlaps for a state (convenience wrapper over
/// [`penetration_sum`]).
pub fn penetration_sum_of(state: &HandState, template: &Template) -> f64 {
    let (right, left) = state_capsules(state, template);
    penetration_sum(&right, &left, template)
}

/// Penetration depth computed directly from a joint set, for callers that
/// have geometry but no parameter vector (e.g. decoded joint
/// representations). Capsule radii are scaled by the skeleton's apparent
/// size — the mean bone length of both hands relative to the template's
/// rest pose, clamped to the legal scale range — with a neutral radius
/// multiplier.
pub fn penetration_depth_of_joints(js: &JointSet, template: &Template) -> f64 {
    let right: Vec<V3<f64>> = js.right().iter().map(|p| V3::from_f64(*p)).collect();
    let left: Vec<V3<f64>> = js.left().iter().map(|p| V3::from_f64(*p)).collect();
    let mut total = 0.0;
    for hand in [&right, &left] {
        for bone in template.bones.iter() {
            total += (hand[bone.child_joint] - hand[bone.parent_joint]).norm();
        }
    }
    let rest_total: f64 = (0..BONES_PER_HAND).map(|b| template.bone_length(b)).sum();
    let scale = (total / (2.0 * rest_total)).clamp(SCALE_RANGE.0, SCALE_RANGE.1);
    let rc = hand_capsules(&right, template, scale);
    let lc = hand_capsules(&left, template, scale);
    let mut depth = 0.0f64;
    for_each_overlap(&rc, &lc, template, |o| depth = depth.max(o));
    depth
}

/// Eight deterministic surface samples of one capsule: two rings at 1/3 and
/// 2/3 along the axis, four points each, in a frame derived from the axis
/// direction alone (so the sampling is translation-equivariant).
pub fn capsule_surface_points<S: Scalar>(c: &Capsule<S>) -> [V3<S>; 8] {
    let axis = c.b - c.a;
    let d = axis.normalized();
    // Reference axis least aligned with d, then an orthonormal pair (u, v).
    let (ax, ay, az) = (d.x.val().abs(), d.y.val().abs(), d.z.val().abs());
    let e = if ax <= ay && ax <= az {
        V3::from_f64([1.0, 0.0, 0.0])
    } else if ay <= az {
        V3::from_f64([0.0, 1.0, 0.0])
    } else {
        V3::from_f64([0.0, 0.0, 1.0])
    };
    let u = d.cross(e).normalized();
    let v = d.cross(u);

    let mut out = [V3::zeros(); 8];
    let third = S::from_f64(1.0 / 3.0);
    let two_thirds = S::from_f64(2.0 / 3.0);
    for (ri, t) in [third, two_thirds].into_iter().enumerate() {
        let center = c.a + axis.scale(t);
        let ru = u.scale(c.radius);
        let rv = v.scale(c.radius);
        out[4 * ri] = center + ru;
        out[4 * ri + 1] = center + rv;
        out[4 * ri + 2] = center - ru;
        out[4 * ri + 3] = center - rv;
    }
    out
}

/// All 320 surface samples of a state: 160 for the right hand, then 160 for
/// the left, each hand ordered by bone index then ring then angle.
pub fn surface_points_of(state: &HandState, template: &Template) -> Vec<[f64; 3]> {
    let (right, left) = state_capsules(state, template);
    let mut out = Vec::with_capacity(16 * BONES_PER_HAND);
    for caps in [&right, &left] {
        for c in caps.iter() {
            for p in capsule_surface_points(c) {
                out.push(p.to_f64());
            }
        }
    }
    out
}
