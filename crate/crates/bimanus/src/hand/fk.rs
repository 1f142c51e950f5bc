//! Forward kinematics: hand state to 3D joint positions.
//!
//! The kinematic chain per finger is
//!
//! ```text
//! R_mcp = Rot(palm_normal, abduction) * Rot(flex_axis, mcp_flexion)
//! R_pip = R_mcp * Rot(flex_axis, pip_flexion)
//! R_dip = R_pip * Rot(flex_axis, dip_flexion)
//! ```
//!
//! with both axes taken from the rest template, composed in the running
//! local frame (right multiplication). Rotations are isometries and the
//! uniform scale multiplies every rest offset, so bone lengths of the posed
//! hand are exactly `rest length x scale` — a property the tests pin down.
//!
//! The whole module is generic over [`Scalar`], so the same code produces
//! plain positions (`f64`) and derivative-carrying positions ([`Dual`]) for
//! Jacobians.
//!
//! [`Dual`]: super::scalar::Dual

use super::pose::{HandState, JointSet};
use super::scalar::{Scalar, M3, V3};
use super::template::{joint_index, Template, DOF_PER_HAND, JOINTS_PER_HAND, WRIST};
use crate::Result;

/// Joint positions of one hand in its local frame (wrist at origin, no
/// global rotation), for articulation `angles` and uniform `scale`.
pub fn fk_local<S: Scalar>(
    template: &Template,
    angles: &[S; DOF_PER_HAND],
    scale: S,
) -> [V3<S>; JOINTS_PER_HAND] {
    let mut joints = [V3::zeros(); JOINTS_PER_HAND];
    joints[WRIST] = V3::zeros();
    for (fi, finger) in template.fingers.iter().enumerate() {
        let flex_axis = V3::from_f64(finger.flex_axis.to_f64());
        let palm_normal = V3::from_f64(template.palm_normal.to_f64());
        let dir = V3::from_f64(finger.dir.to_f64());

        let mcp_flex = angles[4 * fi];
        let mcp_abduct = angles[4 * fi + 1];
        let pip_flex = angles[4 * fi + 2];
        let dip_flex = angles[4 * fi + 3];

        let r_mcp = M3::rotation(palm_normal, mcp_abduct)
            .mul_mat(&M3::rotation(flex_axis, mcp_flex));
        let r_pip = r_mcp.mul_mat(&M3::rotation(flex_axis, pip_flex));
        let r_dip = r_pip.mul_mat(&M3::rotation(flex_axis, dip_flex));

        let p_mcp = V3::from_f64(finger.mcp.to_f64()).scale(scale);
        let seg = |i: usize| dir.scale(scale * S::from_f64(finger.segment_lengths[i]));
        let p_pip = p_mcp + r_mcp.mul_vec(seg(0));
        let p_dip = p_pip + r_pip.mul_vec(seg(1));
        let p_tip = p_dip + r_dip.mul_vec(seg(2));

        joints[joint_index(fi, 0)] = p_mcp;
        joints[joint_index(fi, 1)] = p_pip;
        joints[joint_index(fi, 2)] = p_dip;
        joints[joint_index(fi, 3)] = p_tip;
    }
    joints
}

/// Places a local joint array into the state frame: optional mirror across
/// x = 0 (the left hand), then global rotation `rot` (axis-angle), then
/// translation `offset`.
pub fn place_hand<S: Scalar>(
    local: &[V3<S>; JOINTS_PER_HAND],
    rot: V3<S>,
    mirror: bool,
    offset: V3<S>,
) -> [V3<S>; JOINTS_PER_HAND] {
    let r = M3::from_axis_angle(rot);
    let mut out = [V3::zeros(); JOINTS_PER_HAND];
    for (o, &p) in out.iter_mut().zip(local.iter()) {
        let m = if mirror {
            V3::new(-p.x, p.y, p.z)
        } else {
            p
        };
        *o = r.mul_vec(m) + offset;
    }
    out
}

/// One hand end to end: articulation to state-frame joints.
pub fn hand_joints<S: Scalar>(
    template: &Template,
    angles: &[S; DOF_PER_HAND],
    scale: S,
    rot: V3<S>,
    mirror: bool,
    offset: V3<S>,
) -> [V3<S>; JOINTS_PER_HAND] {
    let local = fk_local(template, angles, scale);
    place_hand(&local, rot, mirror, offset)
}

/// Both hands of a state, without validating limits. Used by optimisation
/// loops that explore slightly out-of-range configurations on purpose.
pub fn joints_of_unchecked(state: &HandState, template: &Template) -> JointSet {
    let right = hand_joints(
        template,
        &state.right.angles,
        state.shape.scale,
        V3::from_f64(state.right.rot),
        false,
        V3::zeros(),
    );
    let left = hand_joints(
        template,
        &state.left.angles,
        state.shape.scale,
        V3::from_f64(state.left.rot),
        true,
        V3::from_f64(state.tau),
    );
    let mut joints = Vec::with_capacity(2 * JOINTS_PER_HAND);
    joints.extend(right.iter().map(|p| p.to_f64()));
    joints.extend(left.iter().map(|p| p.to_f64()));
    JointSet(joints)
}

/// Both hands of a state, after validating joint limits and scale range.
pub fn joints_of(state: &HandState, template: &Template) -> Result<JointSet> {
    state.validate(template)?;
    Ok(joints_of_unchecked(state, template))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::pose::{HandPose, ShapeParams, LEFT_WRIST, RIGHT_WRIST};
    use crate::hand::template::dof_index;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::{Rng, SeedableRng};

    fn nv(v: V3<f64>) -> Vector3<f64> {
        Vector3::new(v.x, v.y, v.z)
    }

    fn random_valid_state(rng: &mut impl Rng) -> HandState {
        let t = Template::builtin();
        let mut s = HandState::default();
        for pose in [&mut s.right, &mut s.left] {
            for (i, a) in pose.angles.iter_mut().enumerate() {
                let (lo, hi) = t.dof_limits(i);
                *a = rng.gen_range(lo..hi);
            }
            for r in pose.rot.iter_mut() {
                *r = rng.gen_range(-1.0..1.0);
            }
        }
        s.shape = ShapeParams {
            scale: rng.gen_range(0.7..1.3),
            radius_scale: rng.gen_range(0.8..1.2),
        };
        s.tau = [
            rng.gen_range(-200.0..50.0),
            rng.gen_range(-80.0..80.0),
            rng.gen_range(-80.0..80.0),
        ];
        s
    }

    #[test]
    fn rest_pose_reproduces_template_and_mirror() {
        let t = Template::builtin();
        let js = joints_of(&HandState::default(), t).unwrap();
        for (i, rest) in t.rest_joints.iter().enumerate() {
            let got = js.right()[i];
            assert_relative_eq!(got[0], rest.x, epsilon = 1e-12);
            assert_relative_eq!(got[1], rest.y, epsilon = 1e-12);
            assert_relative_eq!(got[2], rest.z, epsilon = 1e-12);
            // Left is the x-mirror shifted by tau.
            let tau = HandState::default().tau;
            let gl = js.left()[i];
            assert_relative_eq!(gl[0], -rest.x + tau[0], epsilon = 1e-12);
            assert_relative_eq!(gl[1], rest.y + tau[1], epsilon = 1e-12);
            assert_relative_eq!(gl[2], rest.z + tau[2], epsilon = 1e-12);
        }
        assert_eq!(js.right()[RIGHT_WRIST], [0.0; 3]);
    }

    /// Oracle: with only the index MCP flexed by angle `a`, the whole index
    /// finger rotates rigidly about the MCP flexion axis. Expected positions
    /// are composed here with nalgebra's rotations, independently of the
    /// crate's own matrix code.
    #[test]
    fn single_joint_flexion_matches_rotation_oracle() {
        let t = Template::builtin();
        let mut s = HandState::default();
        let a = std::f64::consts::FRAC_PI_2;
        s.right.angles[dof_index(1, 0)] = a;
        let js = joints_of(&s, t).unwrap();

        let f = &t.fingers[1];
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(nv(f.flex_axis)), a);
        let mcp = nv(f.mcp);
        let mut expected = mcp;
        let mut reach = 0.0;
        for (k, &len) in f.segment_lengths.iter().enumerate() {
            reach += len;
            expected = mcp + rot * (nv(f.dir) * reach);
            let got = js.right()[joint_index(1, k + 1)];
            assert_relative_eq!(got[0], expected.x, epsilon = 1e-9);
            assert_relative_eq!(got[1], expected.y, epsilon = 1e-9);
            assert_relative_eq!(got[2], expected.z, epsilon = 1e-9);
        }
        // 90 degrees of MCP flexion points the finger along the palm normal.
        let tip = js.right()[joint_index(1, 3)];
        assert_relative_eq!(tip[2], reach, epsilon = 1e-9);
    }

    /// Oracle for the full chain on one finger: abduction, MCP, PIP and DIP
    /// flexion plus a global rotation, composed independently with nalgebra.
    #[test]
    fn full_chain_matches_composition_oracle() {
        let t = Template::builtin();
        let mut s = HandState::default();
        let (abd, mcp, pip, dip) = (0.3, 0.9, 0.7, 0.4);
        let fi = 2; // middle finger
        s.right.angles[dof_index(fi, 0)] = mcp;
        s.right.angles[dof_index(fi, 1)] = abd;
        s.right.angles[dof_index(fi, 2)] = pip;
        s.right.angles[dof_index(fi, 3)] = dip;
        s.right.rot = [0.2, -0.4, 0.8];
        s.shape.scale = 1.1;
        let js = joints_of(&s, t).unwrap();

        let f = &t.fingers[fi];
        let axis_n = Unit::new_normalize(nv(t.palm_normal));
        let axis_f = Unit::new_normalize(nv(f.flex_axis));
        let r_g = Rotation3::new(Vector3::new(0.2, -0.4, 0.8));
        let r_mcp = Rotation3::from_axis_angle(&axis_n, abd)
            * Rotation3::from_axis_angle(&axis_f, mcp);
        let r_pip = r_mcp * Rotation3::from_axis_angle(&axis_f, pip);
        let r_dip = r_pip * Rotation3::from_axis_angle(&axis_f, dip);

        let sdir = nv(f.dir) * 1.1;
        let p_mcp = nv(f.mcp) * 1.1;
        let p_pip = p_mcp + r_mcp * (sdir * f.segment_lengths[0]);
        let p_dip = p_pip + r_pip * (sdir * f.segment_lengths[1]);
        let p_tip = p_dip + r_dip * (sdir * f.segment_lengths[2]);
        for (k, exp) in [p_mcp, p_pip, p_dip, p_tip].into_iter().enumerate() {
            let exp = r_g * exp;
            let got = js.right()[joint_index(fi, k)];
            assert_relative_eq!(got[0], exp.x, epsilon = 1e-9);
            assert_relative_eq!(got[1], exp.y, epsilon = 1e-9);
            assert_relative_eq!(got[2], exp.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn bone_lengths_are_rest_length_times_scale() {
        let t = Template::builtin();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..25 {
            let s = random_valid_state(&mut rng);
            let js = joints_of(&s, t).unwrap();
            for hand_joints in [js.right(), js.left()] {
                let scale = s.shape.scale;
                for (bi, bone) in t.bones.iter().enumerate() {
                    let p = hand_joints[bone.parent_joint];
                    let c = hand_joints[bone.child_joint];
                    let len = ((p[0] - c[0]).powi(2)
                        + (p[1] - c[1]).powi(2)
                        + (p[2] - c[2]).powi(2))
                    .sqrt();
                    assert_relative_eq!(
                        len,
                        t.bone_length(bi) * scale,
                        epsilon = 1e-9,
                        max_relative = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn left_wrist_lands_on_tau() {
        let t = Template::builtin();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let s = random_valid_state(&mut rng);
        let js = joints_of(&s, t).unwrap();
        assert_eq!(js.left()[0], js.0[LEFT_WRIST]);
        for k in 0..3 {
            assert_relative_eq!(js.left()[0][k], s.tau[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn mirrored_hand_is_isometric() {
        // Same pose on both hands: every right-hand bone length equals the
        // corresponding left-hand bone length (mirroring preserves distance).
        let t = Template::builtin();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let mut s = random_valid_state(&mut rng);
        s.left = HandPose {
            rot: s.right.rot,
            angles: s.right.angles,
        };
        let js = joints_of(&s, t).unwrap();
        for bone in t.bones.iter() {
            let d = |h: &[[f64; 3]]| {
                let p = h[bone.parent_joint];
                let c = h[bone.child_joint];
                ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
            };
            assert_relative_eq!(d(js.right()), d(js.left()), epsilon = 1e-9);
        }
    }

    /// Composing an extra rotation onto a hand's global rotation rotates that
    /// hand's joints rigidly about its own wrist and leaves the other hand
    /// untouched.
    #[test]
    fn global_rotation_is_a_wrist_centered_rigid_motion() {
        let t = Template::builtin();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(21);
        for _ in 0..10 {
            let s = random_valid_state(&mut rng);
            let base = joints_of(&s, t).unwrap();

            let extra = Vector3::new(
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            );
            let r_extra = Rotation3::new(extra);
            let composed = (r_extra * Rotation3::new(Vector3::from(s.left.rot))).scaled_axis();

            let mut s2 = s.clone();
            s2.left.rot = [composed.x, composed.y, composed.z];
            let rotated = joints_of(&s2, t).unwrap();

            let tau = Vector3::from(s.tau);
            for i in 0..21 {
                // Right hand unchanged.
                for k in 0..3 {
                    assert_relative_eq!(rotated.right()[i][k], base.right()[i][k], epsilon = 1e-9);
                }
                // Left hand: p' = R_extra (p - tau) + tau.
                let p = Vector3::from(base.left()[i]);
                let exp = r_extra * (p - tau) + tau;
                for (k, e) in [exp.x, exp.y, exp.z].into_iter().enumerate() {
                    assert_relative_eq!(rotated.left()[i][k], e, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn mirrored_state_joints_are_reflected_and_swapped() {
        use crate::hand::pose::mirror_state;
        let t = Template::builtin();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(33);
        for _ in 0..10 {
            let s = random_valid_state(&mut rng);
            let js = joints_of(&s, t).unwrap();
            let jm = joints_of(&mirror_state(&s), t).unwrap();
            // Reflect the original scene through x = 0 and re-anchor so the
            // reflected LEFT wrist (the new right wrist) sits at the origin.
            let anchor = [-s.tau[0], s.tau[1], s.tau[2]];
            for i in 0..21 {
                let exp_right = {
                    let p = js.left()[i];
                    [-p[0] - anchor[0], p[1] - anchor[1], p[2] - anchor[2]]
                };
                let exp_left = {
                    let p = js.right()[i];
                    [-p[0] - anchor[0], p[1] - anchor[1], p[2] - anchor[2]]
                };
                for k in 0..3 {
                    assert_relative_eq!(jm.right()[i][k], exp_right[k], epsilon = 1e-9);
                    assert_relative_eq!(jm.left()[i][k], exp_left[k], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn dual_positions_match_finite_differences() {
        use crate::hand::scalar::Dual;
        let t = Template::builtin();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let s = random_valid_state(&mut rng);
        // Derivative of the index TIP position w.r.t. the index PIP angle.
        let dof = dof_index(1, 2);
        let eval = |delta: f64| {
            let mut s2 = s.clone();
            s2.right.angles[dof] += delta;
            joints_of_unchecked(&s2, t).right()[joint_index(1, 3)]
        };
        let h = 1e-6;
        let (plus, minus) = (eval(h), eval(-h));

        let mut angles = [Dual::constant(0.0); DOF_PER_HAND];
        for (i, a) in s.right.angles.iter().enumerate() {
            angles[i] = if i == dof {
                Dual::variable(*a)
            } else {
                Dual::constant(*a)
            };
        }
        let joints = hand_joints(
            t,
            &angles,
            Dual::constant(s.shape.scale),
            V3::from_f64(s.right.rot),
            false,
            V3::zeros(),
        );
        let tip = joints[joint_index(1, 3)];
        for (ad, (p, m)) in [tip.x.du, tip.y.du, tip.z.du]
            .iter()
            .zip(plus.iter().zip(minus.iter()))
        {
            assert_relative_eq!(*ad, (p - m) / (2.0 * h), epsilon = 1e-7);
        }
    }
}
