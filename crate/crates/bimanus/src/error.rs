use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A joint angle was outside the limits of the hand model.
    ///
    /// Carries the flat articulation index (0..20 per hand) and the offending
    /// value in radians.
    #[error("joint {index} angle {value} rad outside limits [{lo}, {hi}]")]
    LimitViolation {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A shape scale was outside the supported range.
    #[error("shape scale {0} outside supported range [0.7, 1.3]")]
    ScaleOutOfRange(f64),

    /// A global-rotation axis-angle vector had magnitude ≥ 2π, where the
    /// parameterization wraps and becomes ambiguous.
    #[error("global rotation magnitude {0} rad is ≥ 2π")]
    RotationTooLarge(f64),

    /// A point to be projected sat at or behind the camera plane.
    #[error("point at z = {0} mm is behind the camera")]
    BehindCamera(f64),

    /// Physical refinement failed to reach the target penetration depth.
    #[error("refinement did not converge: residual penetration {depth} mm")]
    NotConverged { depth: f64 },

    /// A line of an external pose file did not match the documented schema.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// An input tensor or slice had the wrong length or shape.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Generic shape error with a free-form description.
    #[error("shape error: {0}")]
    Shape(String),

    /// A binary archive was malformed or had an unexpected layout.
    #[error("archive error: {0}")]
    Archive(String),

    /// A named entry was missing from an archive or parameter set.
    #[error("missing entry: {0}")]
    MissingEntry(String),

    /// Configuration was structurally invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint did not match the model it was loaded into.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// A training loss or gradient stopped being finite.
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { step: usize, what: String },

    /// A component that must stay fixed during training was modified.
    #[error("frozen component changed: {0}")]
    FrozenViolation(String),

    /// A predicted skeleton had a zero-length bone, so it cannot be scaled.
    #[error("degenerate skeleton: bone {bone} has zero length")]
    DegenerateSkeleton { bone: usize },

    /// A pipeline stage was invoked before the artifact it consumes exists.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    /// Wrapped I/O error.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Wrapped JSON (de)serialisation error.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Image encoding/decoding error.
    #[error("image error: {0}")]
    Image(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
