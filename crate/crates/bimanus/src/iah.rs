//! Interaction adjacency heatmaps: the 2D joint encoding.
//!
//! Channel `j` of the stack mixes the joint's own narrow Laplacian kernel
//! with widened kernels centred on every other joint that lies spatially
//! close to it in the image — from either hand. The side lobes make
//! "which joints are near which" an explicit, learnable 2D signal:
//!
//! ```text
//! H_j(u,v) = 1/(2 sigma_j) exp(-(|u-u_j| + |v-v_j|) / sigma_j)
//!          + sum over k in A_j(d) of
//!            1/(2 alpha sigma_j) exp(-(|u-u_k| + |v-v_k|) / (alpha sigma_j))
//! ```
//!
//! where `A_j(d)` collects joints within a Chebyshev radius of `d * sigma_j`
//! heatmap pixels. `alpha > 1` widens and flattens the neighbour kernels.
//! Values are raw kernel evaluations — no normalisation or clamping — so
//! the regression target's absolute scale is part of the contract.
//!
//! Three ablation variants share the machinery: a Gaussian-kernel version
//! with matched peak height, a joint-wise version without neighbour terms,
//! and an all-in-one version that sums every identity kernel into a single
//! channel.
//!
//! The implementation exploits that both kernels factor over axes:
//! `exp(-(|du|+|dv|)/s) = exp(-|du|/s) * exp(-|dv|/s)`, so each term is an
//! outer product of two precomputed 1D profiles.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::hand::TOTAL_JOINTS;
use crate::{Error, Result};

/// Heatmap flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IahVariant {
    /// Full interaction encoding with Laplacian kernels (the default).
    LaplacianIah,
    /// Same structure, Gaussian kernels with matched peak values.
    GaussianIah,
    /// Identity kernel only — no interaction lobes.
    JointWise,
    /// Every joint's identity kernel summed into one channel.
    AllInOne,
}

impl IahVariant {
    /// Channels the variant produces.
    pub fn channels(self) -> usize {
        match self {
            IahVariant::AllInOne => 1,
            _ => TOTAL_JOINTS,
        }
    }
}

/// Heatmap generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IahConfig {
    /// Per-joint kernel scale, heatmap pixels. One entry per joint; the
    /// default shares 2.0 across all 42.
    pub sigma: Vec<f64>,
    /// Widening factor for neighbour kernels; must exceed 1.
    pub alpha: f64,
    /// Adjacency radius in units of `sigma_j`.
    pub d: f64,
    pub variant: IahVariant,
    /// Grid side length (square).
    pub grid: usize,
}

impl Default for IahConfig {
    fn default() -> Self {
        IahConfig {
            sigma: vec![2.0; TOTAL_JOINTS],
            alpha: 2.0,
            d: 2.5,
            variant: IahVariant::LaplacianIah,
            grid: 64,
        }
    }
}

impl IahConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.len() != TOTAL_JOINTS {
            return Err(Error::DimMismatch {
                what: "sigma vector",
                expected: TOTAL_JOINTS,
                got: self.sigma.len(),
            });
        }
        if !self.sigma.iter().all(|&s| s > 0.0) {
            return Err(Error::Config("sigma entries must be positive".into()));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::Config("alpha must exceed 1 (a widening factor)".into()));
        }
        if !(self.d > 0.0) {
            return Err(Error::Config("adjacency radius d must be positive".into()));
        }
        if self.grid == 0 {
            return Err(Error::Config("grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.variant.channels()
    }
}

/// Indices of joints adjacent to joint `j`: every `k != j` whose Chebyshev
/// distance to joint `j` on the heatmap grid is at most `d * sigma_j`.
pub fn adjacency_set(joints2d: &[[f64; 2]], j: usize, cfg: &IahConfig) -> Vec<usize> {
    let radius = cfg.d * cfg.sigma[j];
    let pj = joints2d[j];
    (0..joints2d.len())
        .filter(|&k| {
            k != j && {
                let dk = (joints2d[k][0] - pj[0])
                    .abs()
                    .max((joints2d[k][1] - pj[1]).abs());
                dk <= radius
            }
        })
        .collect()
}

/// 1D kernel profile along one axis: `exp(-|x - c| / s)` (Laplacian) or
/// `exp(-(x - c)^2 / (2 s^2))` (Gaussian) for every integer grid coordinate.
fn axis_profile(grid: usize, center: f64, s: f64, gaussian: bool) -> Vec<f64> {
    (0..grid)
        .map(|x| {
            let dx = x as f64 - center;
            if gaussian {
                (-(dx * dx) / (2.0 * s * s)).exp()
            } else {
                (-dx.abs() / s).exp()
            }
        })
        .collect()
}

/// Adds `w * row ⊗ col` into one channel. `row` runs over v (rows), `col`
/// over u (columns): the stack is indexed `[channel, v, u]`.
fn add_outer(channel: &mut ndarray::ArrayViewMut2<f64>, w: f64, row: &[f64], col: &[f64]) {
    for (v, rv) in row.iter().enumerate() {
        let wv = w * rv;
        let mut line = channel.row_mut(v);
        let line = line.as_slice_mut().expect("row is contiguous");
        for (u, cu) in col.iter().enumerate() {
            line[u] += wv * cu;
        }
    }
}

/// Generates the ground-truth heatmap stack for 42 joints given in
/// heatmap-grid coordinates `(u, v)` (subpixel allowed).
///
/// Returns `[channels, grid, grid]` indexed `[c, v, u]`.
pub fn iah_ground_truth(joints2d: &[[f64; 2]], cfg: &IahConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    if joints2d.len() != TOTAL_JOINTS {
        return Err(Error::DimMismatch {
            what: "joints2d",
            expected: TOTAL_JOINTS,
            got: joints2d.len(),
        });
    }
    let g = cfg.grid;
    let gaussian = cfg.variant == IahVariant::GaussianIah;
    let mut stack = Array3::<f64>::zeros((cfg.channels(), g, g));

    match cfg.variant {
        IahVariant::AllInOne => {
            let mut ch = stack.index_axis_mut(ndarray::Axis(0), 0);
            for (k, p) in joints2d.iter().enumerate() {
                let s = cfg.sigma[k];
                let col = axis_profile(g, p[0], s, false);
                let row = axis_profile(g, p[1], s, false);
                add_outer(&mut ch, 1.0 / (2.0 * s), &row, &col);
            }
        }
        _ => {
            for j in 0..TOTAL_JOINTS {
                let s = cfg.sigma[j];
                let mut ch = stack.index_axis_mut(ndarray::Axis(0), j);
                let col = axis_profile(g, joints2d[j][0], s, gaussian);
                let row = axis_profile(g, joints2d[j][1], s, gaussian);
                add_outer(&mut ch, 1.0 / (2.0 * s), &row, &col);

                if cfg.variant != IahVariant::JointWise {
                    let ws = cfg.alpha * s;
                    for k in adjacency_set(joints2d, j, cfg) {
                        let col = axis_profile(g, joints2d[k][0], ws, gaussian);
                        let row = axis_profile(g, joints2d[k][1], ws, gaussian);
                        add_outer(&mut ch, 1.0 / (2.0 * ws), &row, &col);
                    }
                }
            }
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// A joint layout with every joint far from the others except a chosen
    /// pair at a controlled Chebyshev distance.
    fn spread_joints() -> Vec<[f64; 2]> {
        (0..TOTAL_JOINTS)
            .map(|i| {
                let x = (i % 7) as f64 * 9.0 + 1.0;
                let y = (i / 7) as f64 * 9.0 + 1.0;
                [x, y]
            })
            .collect()
    }

    #[test]
    fn isolated_grid_aligned_peak_is_quarter() {
        let cfg = IahConfig::default();
        let joints = spread_joints(); // 9px spacing > 5px radius: no neighbours
        let stack = iah_ground_truth(&joints, &cfg).unwrap();
        for (j, p) in joints.iter().enumerate() {
            assert_relative_eq!(
                stack[[j, p[1] as usize, p[0] as usize]],
                0.25,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn adjacency_set_matches_chebyshev_rule() {
        let mut joints = spread_joints();
        let cfg = IahConfig::default(); // radius 5.0
        joints[3] = [30.0, 30.0];
        joints[10] = [35.0, 30.0]; // Chebyshev 5.0: inside (<=)
        joints[20] = [30.0, 35.5]; // Chebyshev 5.5: outside
        joints[30] = [34.0, 34.0]; // Chebyshev 4.0: inside
        let a = adjacency_set(&joints, 3, &cfg);
        assert!(a.contains(&10));
        assert!(a.contains(&30));
        assert!(!a.contains(&20));
        assert!(!a.contains(&3));
        // Symmetry under the shared default sigma.
        assert!(adjacency_set(&joints, 10, &cfg).contains(&3));
    }

    #[test]
    fn adjacent_pair_values_match_closed_form() {
        // Joint k exactly 3 px right of joint j, both in a corner the spread
        // lattice leaves empty (nearest other joint is 12 px away in
        // Chebyshev distance): channel j at k's pixel is the widened
        // kernel's own peak plus the identity tail.
        let mut joints = spread_joints();
        joints[0] = [58.0, 58.0];
        joints[1] = [61.0, 58.0];
        let cfg = IahConfig::default();
        let stack = iah_ground_truth(&joints, &cfg).unwrap();
        let expected = 0.125 + 0.25 * (-3.0f64 / 2.0).exp();
        assert_relative_eq!(stack[[0, 58, 61]], expected, epsilon = 1e-12);
        // And channel j's own peak gains the widened tail of k.
        let expected_peak = 0.25 + 0.125 * (-3.0f64 / 4.0).exp();
        assert_relative_eq!(stack[[0, 58, 58]], expected_peak, epsilon = 1e-12);
    }

    #[test]
    fn translation_equivariance_on_interior() {
        let cfg = IahConfig::default();
        let joints = spread_joints();
        let shifted: Vec<[f64; 2]> = joints.iter().map(|p| [p[0] + 3.0, p[1] + 2.0]).collect();
        let a = iah_ground_truth(&joints, &cfg).unwrap();
        let b = iah_ground_truth(&shifted, &cfg).unwrap();
        // Compare interior pixels only: the stack is not padded.
        for c in 0..42 {
            for v in 0..(64 - 2) {
                for u in 0..(64 - 3) {
                    let diff = (a[[c, v, u]] - b[[c, v + 2, u + 3]]).abs();
                    assert!(diff < 1e-12, "c={c} v={v} u={u} diff={diff}");
                }
            }
        }
    }

    #[test]
    fn identity_peak_dominates_without_neighbours() {
        let cfg = IahConfig::default();
        let joints = spread_joints();
        let stack = iah_ground_truth(&joints, &cfg).unwrap();
        for (j, p) in joints.iter().enumerate() {
            let mut best = (0usize, 0usize, f64::MIN);
            for v in 0..64 {
                for u in 0..64 {
                    if stack[[j, v, u]] > best.2 {
                        best = (v, u, stack[[j, v, u]]);
                    }
                }
            }
            assert_eq!((best.1, best.0), (p[0] as usize, p[1] as usize));
        }
    }

    #[test]
    fn laplacian_decays_faster_than_gaussian_on_axis() {
        let joints = spread_joints();
        let lap = iah_ground_truth(&joints, &IahConfig::default()).unwrap();
        let gau = iah_ground_truth(
            &joints,
            &IahConfig {
                variant: IahVariant::GaussianIah,
                ..IahConfig::default()
            },
        )
        .unwrap();
        let p = joints[5];
        let (u, v) = (p[0] as usize, p[1] as usize);
        // Matched peaks...
        assert_relative_eq!(lap[[5, v, u]], gau[[5, v, u]], epsilon = 1e-12);
        // ...but at offset (2, 0) the Laplacian has decayed further.
        let l2 = lap[[5, v, u + 2]];
        let g2 = gau[[5, v, u + 2]];
        assert_relative_eq!(l2, 0.25 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(g2, 0.25 * (-0.5f64).exp(), epsilon = 1e-12);
        assert!(l2 < g2);
    }

    #[test]
    fn variant_channel_counts() {
        let joints = spread_joints();
        for (variant, ch) in [
            (IahVariant::LaplacianIah, 42),
            (IahVariant::GaussianIah, 42),
            (IahVariant::JointWise, 42),
            (IahVariant::AllInOne, 1),
        ] {
            let cfg = IahConfig {
                variant,
                ..IahConfig::default()
            };
            let stack = iah_ground_truth(&joints, &cfg).unwrap();
            assert_eq!(stack.shape(), &[ch, 64, 64]);
            assert!(stack.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn joint_wise_drops_interaction_lobes() {
        let mut joints = spread_joints();
        joints[0] = [20.0, 40.0];
        joints[1] = [23.0, 40.0];
        let jw = iah_ground_truth(
            &joints,
            &IahConfig {
                variant: IahVariant::JointWise,
                ..IahConfig::default()
            },
        )
        .unwrap();
        // Channel 0 at joint 1's pixel holds only the identity tail.
        assert_relative_eq!(
            jw[[0, 40, 23]],
            0.25 * (-1.5f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let joints = spread_joints();
        let mut cfg = IahConfig::default();
        cfg.alpha = 1.0;
        assert!(iah_ground_truth(&joints, &cfg).is_err());
        let mut cfg = IahConfig::default();
        cfg.sigma = vec![2.0; 10];
        assert!(iah_ground_truth(&joints, &cfg).is_err());
        let cfg = IahConfig::default();
        assert!(iah_ground_truth(&joints[..30], &cfg).is_err());
    }
}
