//! The capsule-based parametric two-hand model.
//!
//! * [`template`] — rest skeleton, radii, and joint limits (versioned asset);
//! * [`pose`] — pose/shape parameter types and the 42-joint set;
//! * [`fk`] — forward kinematics, generic over plain and dual scalars;
//! * [`capsule`] — capsule surface, distances, penetration measures,
//!   deterministic surface sampling;
//! * [`ik`] — inverse kinematics (scale + global alignment + damped least
//!   squares over joint angles);
//! * [`refine`] — sampling-based physical refinement that removes
//!   interpenetration while staying close to the input pose;
//! * [`scalar`] — the scalar abstraction and dual numbers used throughout.

pub mod capsule;
pub mod fk;
pub mod ik;
pub mod pose;
pub mod refine;
pub mod scalar;
pub mod template;

pub use capsule::{
    capsule_overlap, capsule_surface_points, hand_capsules, penetration_depth,
    penetration_depth_of_joints, penetration_sum, penetration_sum_of, segment_distance,
    state_capsules, surface_points_of, Capsule,
};
pub use fk::{fk_local, hand_joints, joints_of, joints_of_unchecked, place_hand};
pub use ik::{fit_state, IkReport};
pub use pose::{mirror_state, Hand, HandPose, HandState, JointSet, ShapeParams, LEFT_WRIST, RIGHT_WRIST};
pub use refine::{refine_physical, RefineConfig, RefineReport};
pub use scalar::{Dual, Scalar, M3, V3};
pub use template::{
    bones_adjacent, dof_index, joint_index, Bone, FingerTemplate, Limits, Template,
    BONES_PER_HAND, DOF_PER_HAND, FINGERS, JOINTS_PER_HAND, SCALE_RANGE, SURFACE_POINTS_PER_HAND,
    TOTAL_JOINTS, TOTAL_SURFACE_POINTS, WRIST,
};
