//! The parametric hand template: rest-pose skeleton, capsule radii, and
//! joint limits, loaded from a versioned JSON asset.
//!
//! The template describes a canonical **right** hand in millimetres, wrist at
//! the origin, fingers pointing along +y, palm facing +z (so positive finger
//! flexion curls towards +z). The left hand is derived by mirroring across
//! the x = 0 plane; see [`super::fk`].
//!
//! Skeleton layout per hand (21 joints, 20 articulated degrees of freedom,
//! 20 bones):
//!
//! * joint 0 is the wrist; finger `f` (thumb, index, middle, ring, pinky)
//!   contributes joints `1 + 4f + {0,1,2,3}` for MCP, PIP, DIP, TIP;
//! * finger `f` contributes degrees of freedom `4f + {0,1,2,3}` for MCP
//!   flexion, MCP abduction, PIP flexion, DIP flexion;
//! * finger `f` contributes bones `4f + {0,1,2,3}` for the metacarpal
//!   (wrist to MCP) and the proximal, middle, and distal phalanges. Each
//!   bone carries a capsule radius.

use std::sync::OnceLock;

use serde::Deserialize;

use super::scalar::V3;
use crate::{Error, Result};

/// Joints per hand.
pub const JOINTS_PER_HAND: usize = 21;
/// Articulated degrees of freedom per hand (excludes the global rotation).
pub const DOF_PER_HAND: usize = 20;
/// Bones (and capsules) per hand.
pub const BONES_PER_HAND: usize = 20;
/// Fingers per hand.
pub const FINGERS: usize = 5;
/// Joints across both hands; right hand occupies 0..21, left 21..42.
pub const TOTAL_JOINTS: usize = 2 * JOINTS_PER_HAND;
/// Fixed surface sample count per hand (8 per capsule).
pub const SURFACE_POINTS_PER_HAND: usize = 8 * BONES_PER_HAND;
/// Surface samples across both hands.
pub const TOTAL_SURFACE_POINTS: usize = 2 * SURFACE_POINTS_PER_HAND;

/// Supported range for the uniform shape scale.
pub const SCALE_RANGE: (f64, f64) = (0.7, 1.3);

/// Flat index of the wrist joint within a hand.
pub const WRIST: usize = 0;

/// Flat joint index for finger `f` and part `p` (0 MCP, 1 PIP, 2 DIP, 3 TIP).
pub fn joint_index(finger: usize, part: usize) -> usize {
    debug_assert!(finger < FINGERS && part < 4);
    1 + 4 * finger + part
}

/// Flat degree-of-freedom index for finger `f` and channel `c`
/// (0 MCP flexion, 1 MCP abduction, 2 PIP flexion, 3 DIP flexion).
pub fn dof_index(finger: usize, channel: usize) -> usize {
    debug_assert!(finger < FINGERS && channel < 4);
    4 * finger + channel
}

#[derive(Deserialize)]
struct RawFinger {
    name: String,
    mcp: [f64; 3],
    dir: [f64; 3],
    segment_lengths: [f64; 3],
    bone_radii: [f64; 4],
}

#[derive(Deserialize)]
struct RawLimits {
    mcp_flex: [f64; 2],
    mcp_abduct: [f64; 2],
    thumb_abduct: [f64; 2],
    pip_flex: [f64; 2],
    dip_flex: [f64; 2],
}

#[derive(Deserialize)]
struct RawTemplate {
    version: u32,
    units: String,
    handedness: String,
    palm_normal: [f64; 3],
    fingers: Vec<RawFinger>,
    limits_deg: RawLimits,
}

/// One finger of the template, with derived rest geometry.
#[derive(Debug, Clone)]
pub struct FingerTemplate {
    pub name: String,
    /// MCP position relative to the wrist, mm.
    pub mcp: V3<f64>,
    /// Unit direction of the straight finger in the palm plane.
    pub dir: V3<f64>,
    /// Proximal, middle, distal phalanx lengths, mm.
    pub segment_lengths: [f64; 3],
    /// Capsule radii for metacarpal, proximal, middle, distal bones, mm.
    pub bone_radii: [f64; 4],
    /// Flexion axis: `dir x palm_normal`, so positive flexion curls towards
    /// the palm side.
    pub flex_axis: V3<f64>,
}

/// Joint angle limits in radians.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub mcp_flex: (f64, f64),
    pub mcp_abduct: (f64, f64),
    pub thumb_abduct: (f64, f64),
    pub pip_flex: (f64, f64),
    pub dip_flex: (f64, f64),
}

/// One bone of the skeleton: joint indices it spans plus capsule radius.
#[derive(Debug, Clone, Copy)]
pub struct Bone {
    pub parent_joint: usize,
    pub child_joint: usize,
    pub finger: usize,
    /// 0 metacarpal, 1 proximal, 2 middle, 3 distal.
    pub segment: usize,
    /// Rest radius in mm (scaled by shape parameters at use sites).
    pub radius: f64,
}

/// Two bones of the same hand are kinematically adjacent when they share a
/// joint: consecutive segments of one finger, or any two metacarpals (all of
/// which meet at the wrist). Adjacent pairs are excluded from self-collision.
pub fn bones_adjacent(a: &Bone, b: &Bone) -> bool {
    (a.finger == b.finger && a.segment.abs_diff(b.segment) == 1)
        || (a.segment == 0 && b.segment == 0)
}

/// The full hand template.
#[derive(Debug, Clone)]
pub struct Template {
    pub version: u32,
    pub palm_normal: V3<f64>,
    pub fingers: Vec<FingerTemplate>,
    pub limits: Limits,
    /// Rest-pose joint positions (wrist at origin), mm.
    pub rest_joints: [V3<f64>; JOINTS_PER_HAND],
    /// Bone table, indexed by `4 * finger + segment`.
    pub bones: [Bone; BONES_PER_HAND],
    /// Mean rest bone length, mm; used to recover scale in IK.
    pub mean_bone_length: f64,
}

impl Template {
    /// Parses a template from its JSON representation, validating structure.
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: RawTemplate = serde_json::from_str(json)?;
        if raw.version != 1 {
            return Err(Error::Config(format!(
                "unsupported hand template version {}",
                raw.version
            )));
        }
        if raw.units != "mm" {
            return Err(Error::Config(format!(
                "hand template must use mm, got `{}`",
                raw.units
            )));
        }
        if raw.handedness != "right" {
            return Err(Error::Config(
                "hand template must describe the right hand".into(),
            ));
        }
        if raw.fingers.len() != FINGERS {
            return Err(Error::Config(format!(
                "expected {FINGERS} fingers, got {}",
                raw.fingers.len()
            )));
        }
        let palm_normal = V3::from_f64(raw.palm_normal).normalized();

        let deg = std::f64::consts::PI / 180.0;
        let pair = |v: [f64; 2], what: &str| -> Result<(f64, f64)> {
            if v[0] >= v[1] {
                return Err(Error::Config(format!("limits for {what} are empty")));
            }
            Ok((v[0] * deg, v[1] * deg))
        };
        let limits = Limits {
            mcp_flex: pair(raw.limits_deg.mcp_flex, "mcp_flex")?,
            mcp_abduct: pair(raw.limits_deg.mcp_abduct, "mcp_abduct")?,
            thumb_abduct: pair(raw.limits_deg.thumb_abduct, "thumb_abduct")?,
            pip_flex: pair(raw.limits_deg.pip_flex, "pip_flex")?,
            dip_flex: pair(raw.limits_deg.dip_flex, "dip_flex")?,
        };

        let mut fingers = Vec::with_capacity(FINGERS);
        for f in &raw.fingers {
            for &l in &f.segment_lengths {
                if l <= 0.0 {
                    return Err(Error::Config(format!(
                        "finger `{}` has a non-positive segment length",
                        f.name
                    )));
                }
            }
            for &r in &f.bone_radii {
                if r <= 0.0 {
                    return Err(Error::Config(format!(
                        "finger `{}` has a non-positive bone radius",
                        f.name
                    )));
                }
            }
            let dir = V3::from_f64(f.dir);
            if dir.norm() < 1e-9 {
                return Err(Error::Config(format!(
                    "finger `{}` has a zero direction",
                    f.name
                )));
            }
            let dir = dir.normalized();
            fingers.push(FingerTemplate {
                name: f.name.clone(),
                mcp: V3::from_f64(f.mcp),
                dir,
                segment_lengths: f.segment_lengths,
                bone_radii: f.bone_radii,
                flex_axis: dir.cross(palm_normal).normalized(),
            });
        }

        // Derived rest joints: walk each straight finger out from its MCP.
        let mut rest_joints = [V3::zeros(); JOINTS_PER_HAND];
        for (fi, f) in fingers.iter().enumerate() {
            let mut p = f.mcp;
            rest_joints[joint_index(fi, 0)] = p;
            for (si, &len) in f.segment_lengths.iter().enumerate() {
                p = p + f.dir.scale(len);
                rest_joints[joint_index(fi, si + 1)] = p;
            }
        }

        let mut bones = [Bone {
            parent_joint: 0,
            child_joint: 0,
            finger: 0,
            segment: 0,
            radius: 1.0,
        }; BONES_PER_HAND];
        for (fi, f) in fingers.iter().enumerate() {
            for seg in 0..4 {
                let parent_joint = if seg == 0 { WRIST } else { joint_index(fi, seg - 1) };
                bones[4 * fi + seg] = Bone {
                    parent_joint,
                    child_joint: joint_index(fi, seg),
                    finger: fi,
                    segment: seg,
                    radius: f.bone_radii[seg],
                };
            }
        }

        let mean_bone_length = bones
            .iter()
            .map(|b| (rest_joints[b.child_joint] - rest_joints[b.parent_joint]).norm())
            .sum::<f64>()
            / BONES_PER_HAND as f64;

        Ok(Template {
            version: raw.version,
            palm_normal,
            fingers,
            limits,
            rest_joints,
            bones,
            mean_bone_length,
        })
    }

    /// The built-in template, parsed once from the embedded asset.
    pub fn builtin() -> &'static Template {
        static CELL: OnceLock<Template> = OnceLock::new();
        CELL.get_or_init(|| {
            Template::from_json(include_str!("hand_template.json"))
                .expect("embedded hand template is valid")
        })
    }

    /// Limits (radians) for the flat degree-of-freedom index `dof`.
    pub fn dof_limits(&self, dof: usize) -> (f64, f64) {
        let finger = dof / 4;
        match dof % 4 {
            0 => self.limits.mcp_flex,
            1 => {
                if finger == 0 {
                    self.limits.thumb_abduct
                } else {
                    self.limits.mcp_abduct
                }
            }
            2 => self.limits.pip_flex,
            _ => self.limits.dip_flex,
        }
    }

    /// Rest length of bone `b`, mm.
    pub fn bone_length(&self, b: usize) -> f64 {
        let bone = &self.bones[b];
        (self.rest_joints[bone.child_joint] - self.rest_joints[bone.parent_joint]).norm()
    }
}
