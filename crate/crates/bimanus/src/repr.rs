//! Flattened two-hand representations: the vectors `x` the interaction
//! prior is trained on.
//!
//! Three interchangeable forms are supported, all *relative-translation
//! free*: the left-wrist offset τ is estimated by a separate image branch
//! and must never leak into `x`. Each hand is therefore expressed in its own
//! wrist frame — the right block is already right-wrist-centered by
//! construction, and the left block is produced with the left wrist pinned
//! at the origin.
//!
//! | kind       | dim | contents                                            |
//! |------------|-----|-----------------------------------------------------|
//! | `joints3d` | 126 | 42 joints × 3, both blocks wrist-centered           |
//! | `vertices` | 960 | 320 capsule surface points × 3, wrist-centered      |
//! | `params`   | 48  | per hand: rotation 3 + angles 20; shared shape 2    |
//!
//! [`flatten`] and [`unflatten`] are exact inverses: `unflatten` re-attaches
//! a caller-supplied τ to place the left block back into the state frame.

use serde::{Deserialize, Serialize};

use crate::hand::{
    joints_of_unchecked, surface_points_of, HandPose, HandState, JointSet, ShapeParams, Template,
    DOF_PER_HAND, TOTAL_JOINTS, TOTAL_SURFACE_POINTS,
};
use crate::{Error, Result};

/// Which flattened form of a two-hand configuration to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReprKind {
    /// 42 wrist-centered joint positions, flattened (dim 126).
    Joints3d,
    /// 320 wrist-centered capsule surface points, flattened (dim 960).
    Vertices,
    /// Pose and shape parameters (dim 48).
    Params,
}

impl ReprKind {
    pub const ALL: [ReprKind; 3] = [ReprKind::Joints3d, ReprKind::Vertices, ReprKind::Params];

    /// Length of the flattened vector.
    pub fn dim(self) -> usize {
        match self {
            ReprKind::Joints3d => 3 * TOTAL_JOINTS,
            ReprKind::Vertices => 3 * TOTAL_SURFACE_POINTS,
            ReprKind::Params => 2 * (3 + DOF_PER_HAND) + 2,
        }
    }

    /// Stable lowercase name (used in file names and config keys).
    pub fn name(self) -> &'static str {
        match self {
            ReprKind::Joints3d => "joints3d",
            ReprKind::Vertices => "vertices",
            ReprKind::Params => "params",
        }
    }
}

/// The structured form a flattened vector decodes back into.
#[derive(Debug, Clone, PartialEq)]
pub enum Unflattened {
    /// State-frame joint set (τ re-attached to the left block).
    Joints(JointSet),
    /// State-frame surface points (τ re-attached to the left block).
    Vertices(Vec<[f64; 3]>),
    /// Full state (τ attached).
    Params(HandState),
}

impl Unflattened {
    /// State-frame joints, if this form can produce them: directly for
    /// `Joints`, via forward kinematics for `Params`, and not at all for
    /// `Vertices` (surface points do not identify joints).
    pub fn joints(&self, template: &Template) -> Option<JointSet> {
        match self {
            Unflattened::Joints(js) => Some(js.clone()),
            Unflattened::Params(state) => Some(joints_of_unchecked(state, template)),
            Unflattened::Vertices(_) => None,
        }
    }
}

/// Zeroed-τ copy of a state: used to evaluate per-hand wrist-centered
/// geometry without any subtraction (keeps flatten/unflatten exact).
fn centered(state: &HandState) -> HandState {
    let mut s = state.clone();
    s.tau = [0.0; 3];
    s
}

/// Flattens a state into the chosen representation. τ never enters the
/// result.
pub fn flatten(state: &HandState, template: &Template, kind: ReprKind) -> Vec<f64> {
    match kind {
        ReprKind::Joints3d => joints_of_unchecked(&centered(state), template).to_flat(),
        ReprKind::Vertices => surface_points_of(&centered(state), template)
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect(),
        ReprKind::Params => {
            let mut x = Vec::with_capacity(kind.dim());
            for pose in [&state.right, &state.left] {
                x.extend_from_slice(&pose.rot);
                x.extend_from_slice(&pose.angles);
            }
            x.push(state.shape.scale);
            x.push(state.shape.radius_scale);
            x
        }
    }
}

/// Rebuilds the structured form from a flattened vector, re-attaching the
/// caller-supplied τ (left-wrist offset, mm).
pub fn unflatten(kind: ReprKind, x: &[f64], tau: [f64; 3]) -> Result<Unflattened> {
    if x.len() != kind.dim() {
        return Err(Error::DimMismatch {
            what: "flattened representation",
            expected: kind.dim(),
            got: x.len(),
        });
    }
    let attach = |points: &mut [[f64; 3]]| {
        let half = points.len() / 2;
        for p in &mut points[half..] {
            p[0] += tau[0];
            p[1] += tau[1];
            p[2] += tau[2];
        }
    };
    Ok(match kind {
        ReprKind::Joints3d => {
            let mut js = JointSet::from_flat(x)?;
            attach(&mut js.0);
            Unflattened::Joints(js)
        }
        ReprKind::Vertices => {
            let mut pts: Vec<[f64; 3]> =
                x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            attach(&mut pts);
            Unflattened::Vertices(pts)
        }
        ReprKind::Params => {
            let read_pose = |off: usize| HandPose {
                rot: [x[off], x[off + 1], x[off + 2]],
                angles: {
                    let mut a = [0.0; DOF_PER_HAND];
                    a.copy_from_slice(&x[off + 3..off + 3 + DOF_PER_HAND]);
                    a
                },
            };
            let stride = 3 + DOF_PER_HAND;
            Unflattened::Params(HandState {
                right: read_pose(0),
                left: read_pose(stride),
                shape: ShapeParams {
                    scale: x[2 * stride],
                    radius_scale: x[2 * stride + 1],
                },
                tau,
            })
        }
    })
}
