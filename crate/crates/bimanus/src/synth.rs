//! Synthetic two-hand scene generation: sample single-hand poses, splice
//! them into close interactions, refine away interpenetration, frame the
//! scene for the camera, and render.
//!
//! Every record is produced from an RNG stream derived from
//! `(root seed, record index)`, so dataset content is independent of worker
//! count and records can be regenerated individually.

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::hand::{
    fit_state, joints_of_unchecked, refine_physical, HandPose, HandState, JointSet, RefineConfig,
    RefineReport, ShapeParams, Template,
};

use crate::iah::IahConfig;
use crate::render::render;
use crate::repr::{flatten, unflatten, ReprKind, Unflattened};
use crate::rngs::{indexed_stream, Stream};
use crate::{Error, Result};

/// Everything that determines synthetic dataset content (except `n` and the
/// root seed, which are passed alongside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub camera: Camera,
    pub iah: IahConfig,
    pub refine: RefineConfig,
    /// Half-angle of the global-rotation cone, radians: rotation axes are
    /// uniform on the sphere, magnitudes uniform below this bound.
    pub rotation_cone: f64,
    /// Wrist-distance window for spliced states, mm (forces close
    /// interaction).
    pub wrist_distance: (f64, f64),
    /// Sampled range of the shared bone-length scale.
    pub scale_range: (f64, f64),
    /// Sampled range of the shared capsule-radius multiplier.
    pub radius_scale_range: (f64, f64),
    /// Distance of the right wrist from the camera, mm.
    pub scene_depth: f64,
    /// The wrist midpoint is framed within ± this many pixels of the image
    /// center, uniformly.
    pub framing_jitter: f64,
    /// Sampling attempts per record before the builder gives up.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            camera: Camera::default(),
            iah: IahConfig::default(),
            refine: RefineConfig::default(),
            rotation_cone: 1.0,
            wrist_distance: (60.0, 160.0),
            scale_range: (0.8, 1.2),
            radius_scale_range: (0.9, 1.1),
            scene_depth: 500.0,
            framing_jitter: 25.0,
            max_attempts: 64,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.iah.validate()?;
        if !(self.camera.focal > 0.0) {
            return Err(Error::Config("camera focal length must be positive".into()));
        }
        if !(self.wrist_distance.0 > 0.0 && self.wrist_distance.1 > self.wrist_distance.0) {
            return Err(Error::Config("wrist-distance window must be ordered".into()));
        }
        if !(self.scene_depth > 0.0) {
            return Err(Error::Config("scene depth must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One synthesized dataset item: the physical state plus everything the
/// camera saw. Geometry-derived quantities (joints, heatmaps, flattened
/// representations) are recomputed on demand from the state — they are pure
/// functions of it, so storing them would only duplicate data.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub state: HandState,
    /// World offset added to state-frame points before projection, mm.
    pub scene_offset: [f64; 3],
    /// Rendered RGB image, `[3, H, W]`, 0..=255.
    pub image: ndarray::Array3<u8>,
    /// Binary visibility masks, `[2, g, g]` (channel 0 right, 1 left).
    pub saliency: ndarray::Array3<u8>,
    /// Record index within its dataset (also its RNG stream index).
    pub index: u64,
    /// Sampling attempts consumed (1 = first try accepted).
    pub attempts: u32,
    /// Residual maximum penetration depth after refinement, mm.
    pub final_depth: f64,
    /// Wrist distance as sampled, before refinement, mm.
    pub wrist_distance_sampled: f64,
}

impl SampleRecord {
    /// State-frame 3D joints.
    pub fn joints3d(&self, template: &Template) -> JointSet {
        joints_of_unchecked(&self.state, template)
    }

    /// Heatmap-grid 2D joints: the exact projection of [`Self::joints3d`].
    pub fn joints2d(&self, template: &Template, camera: &Camera) -> Vec<[f64; 2]> {
        camera.project_joints_to_heatmap(&self.joints3d(template), self.scene_offset)
    }

    /// Ground-truth heatmap stack for the record.
    pub fn iah(
        &self,
        template: &Template,
        camera: &Camera,
        cfg: &IahConfig,
    ) -> Result<ndarray::Array3<f64>> {
        crate::iah::iah_ground_truth(&self.joints2d(template, camera), cfg)
    }

    /// Flattened representation vector of the state.
    pub fn repr(&self, template: &Template, kind: ReprKind) -> Vec<f64> {
        flatten(&self.state, template, kind)
    }

    /// Left-wrist offset, mm.
    pub fn tau(&self) -> [f64; 3] {
        self.state.tau
    }
}

/// Stacks the chosen flattened representation of every record's state into
/// an `[n, dim]` matrix — the training input for the interaction prior.
/// Rows from several datasets can be concatenated freely; a row carries no
/// reference back to its source.
pub fn flatten_records(
    records: &[SampleRecord],
    template: &Template,
    kind: ReprKind,
) -> ndarray::Array2<f64> {
    let mut rows = ndarray::Array2::zeros((records.len(), kind.dim()));
    for (mut row, rec) in rows.outer_iter_mut().zip(records) {
        let v = flatten(&rec.state, template, kind);
        row.assign(&ndarray::ArrayView1::from(&v[..]));
    }
    rows
}

/// Draws one hand's articulation uniformly within the joint limits and a
/// global rotation uniform over the configured cone.
pub fn sample_single_pose(rng: &mut Stream, template: &Template, cone: f64) -> HandPose {
    let mut pose = HandPose::default();
    for (i, a) in pose.angles.iter_mut().enumerate() {
        let (lo, hi) = template.dof_limits(i);
        *a = rng.gen_range(lo..hi);
    }
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.gen_range(0.0..cone);
    pose.rot = [axis[0] * angle, axis[1] * angle, axis[2] * angle];
    pose
}

/// How a splice went: the refinement outcome plus the wrist distance that
/// was sampled before refinement (refinement may move the wrists slightly).
#[derive(Debug, Clone, Copy)]
pub struct SpliceReport {
    pub refine: RefineReport,
    pub sampled_wrist_distance: f64,
}

/// Splices two single-hand poses into a close two-hand interaction: shared
/// shape and a relative translation with wrist distance inside the
/// configured window are sampled, then the state is physically refined.
///
/// Fails with [`Error::NotConverged`] when refinement cannot push the
/// maximum penetration below the target depth; dataset building rejects
/// such draws.
pub fn splice_two_hands(
    rng: &mut Stream,
    right: HandPose,
    left: HandPose,
    config: &SynthConfig,
    template: &Template,
) -> Result<(HandState, SpliceReport)> {
    let shape = ShapeParams {
        scale: rng.gen_range(config.scale_range.0..config.scale_range.1),
        radius_scale: rng.gen_range(config.radius_scale_range.0..config.radius_scale_range.1),
    };
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let dist = rng.gen_range(config.wrist_distance.0..config.wrist_distance.1);
    let state = HandState {
        right,
        left,
        shape,
        tau: [dir[0] * dist, dir[1] * dist, dir[2] * dist],
    };
    let (refined, report) = refine_physical(&state, template, &config.refine, rng);
    if !report.converged {
        return Err(Error::NotConverged {
            depth: report.final_depth,
        });
    }
    Ok((
        refined,
        SpliceReport {
            refine: report,
            sampled_wrist_distance: dist,
        },
    ))
}

/// Places the state in front of the camera: the right wrist sits at the
/// configured depth and the wrist midpoint is framed near the image center
/// with a uniform jitter.
fn sample_scene_offset(state: &HandState, config: &SynthConfig, rng: &mut Stream) -> [f64; 3] {
    let j = config.framing_jitter;
    let (ju, jv) = (rng.gen_range(-j..j), rng.gen_range(-j..j));
    let mid = [state.tau[0] / 2.0, state.tau[1] / 2.0, state.tau[2] / 2.0];
    let zm = mid[2] + config.scene_depth;
    [
        ju * zm / config.camera.focal - mid[0],
        jv * zm / config.camera.focal - mid[1],
        config.scene_depth,
    ]
}

/// Builds one record from its dedicated RNG stream, retrying rejected draws
/// (non-convergent refinement, joints outside the frame) up to
/// `max_attempts` times. Returns the record and the attempts consumed.
pub fn build_record(
    root_seed: u64,
    index: u64,
    config: &SynthConfig,
    template: &Template,
) -> Result<SampleRecord> {
    let label = format!("record{index}");
    for attempt in 0..config.max_attempts as u64 {
        let mut rng = indexed_stream(root_seed, &label, attempt);
        let right = sample_single_pose(&mut rng, template, config.rotation_cone);
        let left = sample_single_pose(&mut rng, template, config.rotation_cone);
        let (state, report) = match splice_two_hands(&mut rng, right, left, config, template) {
            Ok(ok) => ok,
            Err(Error::NotConverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        let wrist_distance_sampled = report.sampled_wrist_distance;
        let offset = sample_scene_offset(&state, config, &mut rng);

        let joints = joints_of_unchecked(&state, template);
        let all_in_frame = joints.0.iter().all(|p| {
            let world = [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
            match config.camera.try_project(world) {
                Ok(uv) => config.camera.in_bounds(uv),
                Err(_) => false,
            }
        });
        if !all_in_frame {
            continue;
        }

        let out = render(&state, template, &config.camera, offset);
        let final_depth = crate::hand::penetration_depth(&state, template);
        return Ok(SampleRecord {
            state,
            scene_offset: offset,
            image: out.image,
            saliency: out.saliency,
            index,
            attempts: attempt as u32 + 1,
            final_depth,
            wrist_distance_sampled,
        });
    }
    Err(Error::NotConverged { depth: f64::NAN })
}

/// Aggregate statistics of a dataset build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub accepted: usize,
    pub attempts: usize,
    /// Fraction of attempts that were rejected.
    pub rejection_rate: f64,
}

/// Builds `n` accepted records, in parallel across indices. Content is a
/// pure function of `(root_seed, n, config)` — worker count does not enter.
pub fn build_records(
    n: usize,
    root_seed: u64,
    config: &SynthConfig,
    template: &Template,
) -> Result<(Vec<SampleRecord>, SynthStats)> {
    config.validate()?;
    let records: Result<Vec<SampleRecord>> = (0..n as u64)
        .into_par_iter()
        .map(|i| build_record(root_seed, i, config, template))
        .collect();
    let records = records?;
    let attempts: usize = records.iter().map(|r| r.attempts as usize).sum();
    let stats = SynthStats {
        accepted: n,
        attempts,
        rejection_rate: if attempts == 0 {
            0.0
        } else {
            (attempts - n) as f64 / attempts as f64
        },
    };
    Ok((records, stats))
}

/// One line of the external pose exchange format. Exactly one of `joints`
/// (126 numbers: 42 × xyz, millimeters, any global frame) or `params`
/// (48 numbers: per hand rotation 3 + angles 20, then shared scale and
/// radius multiplier) must be present. `handed` declares block order:
/// `"right-first"` or `"left-first"`. `tau` (left wrist minus right wrist,
/// mm) is required with `params` and optional with `joints` (where it is
/// implied by the wrist positions).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    joints: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<Vec<f64>>,
    handed: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<[f64; 3]>,
}

/// Outcome of an external pose import.
#[derive(Debug, Clone)]
pub struct ImportReport {
    /// States that imported and refined to the penetration target.
    pub states: Vec<HandState>,
    /// Lines whose states could not be refined to the target (dropped).
    pub unconverged: usize,
    /// Mean joint error introduced by inverse kinematics on joint-only
    /// lines, mm (0 when every line carried parameters).
    pub mean_ik_error: f64,
}

/// Reads a pose-exchange JSONL file into refined two-hand states.
///
/// Joint-only lines go through inverse kinematics; every state is then
/// physically refined, and states that cannot reach the penetration target
/// are dropped (counted in the report). Malformed lines fail with
/// [`Error::Schema`] naming the 1-based line number.
pub fn import_external_poses(
    path: impl AsRef<std::path::Path>,
    config: &SynthConfig,
    template: &Template,
) -> Result<ImportReport> {
    let text = std::fs::read_to_string(path)?;
    let mut states = Vec::new();
    let mut unconverged = 0;
    let mut ik_error_sum = 0.0;
    let mut ik_lines = 0usize;

    for (li, line) in text.lines().enumerate() {
        let line_no = li + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            line: line_no,
            message,
        };
        let parsed: PoseLine =
            serde_json::from_str(line).map_err(|e| schema_err(e.to_string()))?;
        let left_first = match parsed.handed.as_str() {
            "right-first" => false,
            "left-first" => true,
            other => {
                return Err(schema_err(format!(
                    "handed must be \"right-first\" or \"left-first\", got \"{other}\""
                )))
            }
        };

        let mut state = match (&parsed.joints, &parsed.params) {
            (Some(_), Some(_)) => {
                return Err(schema_err("line carries both joints and params".into()))
            }
            (None, None) => {
                return Err(schema_err("line carries neither joints nor params".into()))
            }
            (Some(joints), None) => {
                if joints.len() != 126 {
                    return Err(schema_err(format!(
                        "joints must hold 126 numbers, got {}",
                        joints.len()
                    )));
                }
                let mut js = JointSet::from_flat(joints).map_err(|e| schema_err(e.to_string()))?;
                if left_first {
                    let (a, b) = js.0.split_at_mut(21);
                    a.swap_with_slice(b);
                }
                let (state, report) = fit_state(&js, template);
                ik_error_sum += report.mpjpe;
                ik_lines += 1;
                state
            }
            (None, Some(params)) => {
                if params.len() != 48 {
                    return Err(schema_err(format!(
                        "params must hold 48 numbers, got {}",
                        params.len()
                    )));
                }
                let Some(tau) = parsed.tau else {
                    return Err(schema_err("params lines require tau".into()));
                };
                let mut p = params.clone();
                if left_first {
                    let (a, rest) = p.split_at_mut(23);
                    a.swap_with_slice(&mut rest[..23]);
                }
                match unflatten(ReprKind::Params, &p, tau)? {
                    Unflattened::Params(s) => s,
                    _ => unreachable!("params kind unflattens to params"),
                }
            }
        };

        state.clamp_angles(template);
        let mut rng = indexed_stream(0, "import-refine", line_no as u64);
        let (refined, report) = refine_physical(&state, template, &config.refine, &mut rng);
        if report.converged {
            states.push(refined);
        } else {
            unconverged += 1;
        }
    }

    Ok(ImportReport {
        states,
        unconverged,
        mean_ik_error: if ik_lines == 0 {
            0.0
        } else {
            ik_error_sum / ik_lines as f64
        },
    })
}

/// Writes states to the pose-exchange JSONL format (`params` lines,
/// right-first blocks). Importing the file recovers the states exactly.
pub fn export_poses(
    path: impl AsRef<std::path::Path>,
    states: &[HandState],
    template: &Template,
) -> Result<()> {
    let mut out = String::new();
    for s in states {
        let line = PoseLine {
            joints: None,
            params: Some(flatten(s, template, ReprKind::Params)),
            handed: "right-first".to_string(),
            tau: Some(s.tau),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
