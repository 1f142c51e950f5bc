//! Sampling-based physical refinement: remove interpenetration from a
//! two-hand state while staying close to the input pose.
//!
//! Each iteration draws a handful of candidate perturbations of the joint
//! angles, global rotations, and the left-wrist offset, scores them by
//! `penetration sum + w * deviation from the input`, and keeps the best
//! candidate whose **maximum** penetration depth does not exceed the current
//! one. That acceptance rule makes the reported depth monotonically
//! non-increasing over iterations — refinement can stall, but it can never
//! make a state worse.
//!
//! One of the candidates is always a directed separation move (shifting the
//! left wrist along the line between the two hands' centroids), which
//! resolves the common case — two spliced hands overlapping — in a few
//! iterations; the random candidates handle finger-level tangles.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::capsule::{penetration_depth, penetration_sum_of};
use super::fk::joints_of_unchecked;
use super::pose::HandState;
use super::template::Template;
use crate::rngs::Stream;

/// Tuning knobs for [`refine_physical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Candidate perturbations drawn per iteration.
    pub samples_per_iter: usize,
    /// Iteration budget.
    pub max_iters: usize,
    /// Standard deviation of joint-angle perturbations, radians.
    pub angle_step: f64,
    /// Standard deviation of global-rotation perturbations, radians.
    pub rot_step: f64,
    /// Standard deviation of wrist-offset perturbations, mm.
    pub tau_step: f64,
    /// Depth (mm) below which the state counts as resolved.
    pub target_depth: f64,
    /// Weight of the deviation-from-input term in the candidate score.
    pub deviation_weight: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            samples_per_iter: 16,
            max_iters: 200,
            angle_step: 0.05,
            rot_step: 0.03,
            tau_step: 2.0,
            target_depth: 1.0,
            deviation_weight: 0.1,
        }
    }
}

/// Outcome of a refinement run.
#[derive(Debug, Clone, Copy)]
pub struct RefineReport {
    /// Maximum penetration depth of the input state, mm.
    pub initial_depth: f64,
    /// Maximum penetration depth of the returned state, mm.
    pub final_depth: f64,
    /// Iterations actually spent.
    pub iterations: usize,
    /// Whether `final_depth <= target_depth` was reached within budget.
    pub converged: bool,
}

/// Mean joint distance between a candidate and the reference joints, mm.
fn deviation(candidate: &HandState, reference: &crate::hand::pose::JointSet, t: &Template) -> f64 {
    joints_of_unchecked(candidate, t).mean_joint_distance(reference)
}

/// Refines `state` until its maximum penetration depth drops to
/// `cfg.target_depth` or the iteration budget runs out.
///
/// The returned state is always at least as good as the input (depth never
/// increases); `converged` on the report says whether the target was met.
pub fn refine_physical(
    state: &HandState,
    template: &Template,
    cfg: &RefineConfig,
    rng: &mut Stream,
) -> (HandState, RefineReport) {
    let original_joints = joints_of_unchecked(state, template);
    let initial_depth = penetration_depth(state, template);
    let mut current = state.clone();
    let mut current_depth = initial_depth;
    let mut current_score = penetration_sum_of(&current, template); // deviation is 0 at start

    let mut iterations = 0;
    if current_depth > cfg.target_depth {
        let angle_noise = Normal::new(0.0, cfg.angle_step).expect("positive std");
        let rot_noise = Normal::new(0.0, cfg.rot_step).expect("positive std");
        let tau_noise = Normal::new(0.0, cfg.tau_step).expect("positive std");

        for _ in 0..cfg.max_iters {
            iterations += 1;
            let mut best: Option<(HandState, f64, f64)> = None;

            for k in 0..cfg.samples_per_iter {
                let mut cand = current.clone();
                if k == 0 {
                    // Directed separation: push the left wrist away from the
                    // right hand along the centroid axis.
                    let js = joints_of_unchecked(&cand, template);
                    let centroid = |pts: &[[f64; 3]]| {
                        let n = pts.len() as f64;
                        [
                            pts.iter().map(|p| p[0]).sum::<f64>() / n,
                            pts.iter().map(|p| p[1]).sum::<f64>() / n,
                            pts.iter().map(|p| p[2]).sum::<f64>() / n,
                        ]
                    };
                    let cr = centroid(js.right());
                    let cl = centroid(js.left());
                    let d = [cl[0] - cr[0], cl[1] - cr[1], cl[2] - cr[2]];
                    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    if n > 1e-9 {
                        let step = cfg.tau_step.min(current_depth).max(0.25);
                        for i in 0..3 {
                            cand.tau[i] += d[i] / n * step;
                        }
                    } else {
                        cand.tau[0] -= cfg.tau_step;
                    }
                } else {
                    for pose in [&mut cand.right, &mut cand.left] {
                        for a in pose.angles.iter_mut() {
                            *a += angle_noise.sample(rng);
                        }
                        for r in pose.rot.iter_mut() {
                            *r += rot_noise.sample(rng);
                        }
                    }
                    for tcomp in cand.tau.iter_mut() {
                        *tcomp += tau_noise.sample(rng);
                    }
                    cand.clamp_angles(template);
                }

                let depth = penetration_depth(&cand, template);
                if depth > current_depth {
                    continue; // never allow the reported metric to worsen
                }
                let score = penetration_sum_of(&cand, template)
                    + cfg.deviation_weight * deviation(&cand, &original_joints, template);
                let better = match &best {
                    Some((_, _, s)) => score < *s,
                    None => score < current_score,
                };
                if better {
                    best = Some((cand, depth, score));
                }
            }

            if let Some((cand, depth, score)) = best {
                current = cand;
                current_depth = depth;
                current_score = score;
            }
            if current_depth <= cfg.target_depth {
                break;
            }
        }
    }

    let report = RefineReport {
        initial_depth,
        final_depth: current_depth,
        iterations,
        converged: current_depth <= cfg.target_depth,
    };
    (current, report)
}
