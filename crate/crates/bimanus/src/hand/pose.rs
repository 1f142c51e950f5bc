//! Pose and shape parameters for one or two hands, plus the joint-set type
//! produced by forward kinematics.

use serde::{Deserialize, Serialize};

use super::template::{Template, DOF_PER_HAND, JOINTS_PER_HAND, SCALE_RANGE, TOTAL_JOINTS};
use crate::{Error, Result};

/// Which hand a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hand {
    Right,
    Left,
}

/// Pose of one hand: a global rotation (axis-angle, radians, magnitude < 2π)
/// and the 20 articulated joint angles (radians), indexed by
/// [`super::template::dof_index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub rot: [f64; 3],
    pub angles: [f64; 20],
}

impl Default for HandPose {
    fn default() -> Self {
        HandPose {
            rot: [0.0; 3],
            angles: [0.0; 20],
        }
    }
}

impl HandPose {
    /// Magnitude of the axis-angle rotation, radians.
    pub fn rot_magnitude(&self) -> f64 {
        (self.rot[0] * self.rot[0] + self.rot[1] * self.rot[1] + self.rot[2] * self.rot[2]).sqrt()
    }
}

/// Shape shared by both hands: a uniform bone-length scale and a multiplier
/// applied to every capsule radius. Both default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub scale: f64,
    pub radius_scale: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams {
            scale: 1.0,
            radius_scale: 1.0,
        }
    }
}

/// The full two-hand configuration.
///
/// The right wrist is pinned at the origin of the state frame; `tau` is the
/// left wrist position relative to it (mm). The left hand mirrors the
/// template across x = 0 before its global rotation is applied. Shape is
/// shared: both hands belong to the same person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub right: HandPose,
    pub left: HandPose,
    pub shape: ShapeParams,
    /// Left wrist relative to right wrist, mm.
    pub tau: [f64; 3],
}

impl Default for HandState {
    fn default() -> Self {
        HandState {
            right: HandPose::default(),
            left: HandPose::default(),
            shape: ShapeParams::default(),
            // Rest placement: left hand a comfortable span to the left.
            tau: [-140.0, 0.0, 0.0],
        }
    }
}

impl HandState {
    /// Checks every articulated angle against the template limits, the shared
    /// scale against [`SCALE_RANGE`], and each global rotation's axis-angle
    /// magnitude against 2π (beyond which the parameterization wraps).
    ///
    /// The limit error reports a flat articulation index: 0..20 for the right
    /// hand, 20..40 for the left.
    pub fn validate(&self, template: &Template) -> Result<()> {
        for (hand_offset, pose) in [(0, &self.right), (DOF_PER_HAND, &self.left)] {
            for (i, &a) in pose.angles.iter().enumerate() {
                let (lo, hi) = template.dof_limits(i);
                if !(a >= lo && a <= hi) {
                    return Err(Error::LimitViolation {
                        index: hand_offset + i,
                        value: a,
                        lo,
                        hi,
                    });
                }
            }
            let mag = pose.rot_magnitude();
            if !(mag < 2.0 * std::f64::consts::PI) {
                return Err(Error::RotationTooLarge(mag));
            }
        }
        if !(self.shape.scale >= SCALE_RANGE.0 && self.shape.scale <= SCALE_RANGE.1) {
            return Err(Error::ScaleOutOfRange(self.shape.scale));
        }
        Ok(())
    }

    /// Clamps every articulated angle into the template limits in place.
    pub fn clamp_angles(&mut self, template: &Template) {
        for pose in [&mut self.right, &mut self.left] {
            for (i, a) in pose.angles.iter_mut().enumerate() {
                let (lo, hi) = template.dof_limits(i);
                *a = a.clamp(lo, hi);
            }
        }
    }
}

/// Reflects a whole two-hand state through the plane x = 0 and relabels the
/// hands (a mirrored right hand is a left hand and vice versa), then
/// re-anchors the new right wrist at the origin.
///
/// The articulated angles carry over unchanged; each global rotation's
/// axis-angle vector `w` becomes `(w_x, −w_y, −w_z)`; τ becomes
/// `(τ_x, −τ_y, −τ_z)`. The resulting joints are exactly the mirrored,
/// re-anchored originals with the two hand blocks swapped.
pub fn mirror_state(s: &HandState) -> HandState {
    fn mirror_pose(p: &HandPose) -> HandPose {
        HandPose {
            rot: [p.rot[0], -p.rot[1], -p.rot[2]],
            angles: p.angles,
        }
    }
    HandState {
        right: mirror_pose(&s.left),
        left: mirror_pose(&s.right),
        shape: s.shape,
        tau: [s.tau[0], -s.tau[1], -s.tau[2]],
    }
}

/// 3D positions of all 42 joints (mm): right hand at 0..21, left at 21..42,
/// each hand ordered wrist first, then per finger MCP, PIP, DIP, TIP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSet(pub Vec<[f64; 3]>);

/// Index of the right wrist in a [`JointSet`].
pub const RIGHT_WRIST: usize = 0;
/// Index of the left wrist in a [`JointSet`].
pub const LEFT_WRIST: usize = JOINTS_PER_HAND;

impl JointSet {
    pub fn new(joints: Vec<[f64; 3]>) -> Result<Self> {
        if joints.len() != TOTAL_JOINTS {
            return Err(Error::DimMismatch {
                what: "joint set",
                expected: TOTAL_JOINTS,
                got: joints.len(),
            });
        }
        Ok(JointSet(joints))
    }

    pub fn right(&self) -> &[[f64; 3]] {
        &self.0[..JOINTS_PER_HAND]
    }

    pub fn left(&self) -> &[[f64; 3]] {
        &self.0[JOINTS_PER_HAND..]
    }

    pub fn hand(&self, hand: Hand) -> &[[f64; 3]] {
        match hand {
            Hand::Right => self.right(),
            Hand::Left => self.left(),
        }
    }

    /// Flattens to `[x0, y0, z0, x1, ...]` of length 126.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Rebuilds from a flat 126-vector.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * TOTAL_JOINTS {
            return Err(Error::DimMismatch {
                what: "flat joint set",
                expected: 3 * TOTAL_JOINTS,
                got: flat.len(),
            });
        }
        Ok(JointSet(
            flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        ))
    }

    /// Mean Euclidean distance to another joint set, mm.
    pub fn mean_joint_distance(&self, other: &JointSet) -> f64 {
        let n = self.0.len() as f64;
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / n
    }
}
