//! Pinhole camera: 3D world points to image and heatmap coordinates.
//!
//! The camera sits at the origin looking down +z, x right, y down. World
//! units are millimetres, image units pixels. Scenes place the two-hand
//! state at a fixed offset in front of the camera (see [`crate::synth`]);
//! the camera itself never moves within a dataset.

use serde::{Deserialize, Serialize};

use crate::hand::JointSet;

/// Intrinsics plus image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    /// Focal length in pixels (square pixels: shared by x and y).
    pub focal: f64,
    /// Principal point, pixels.
    pub principal: [f64; 2],
    /// Image width and height, pixels.
    pub image_size: usize,
    /// Side length of the heatmap/feature grid the image maps onto.
    pub heatmap_size: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal: 350.0,
            principal: [128.0, 128.0],
            image_size: 256,
            heatmap_size: 64,
        }
    }
}

impl Camera {
    /// Ratio between heatmap and image coordinates.
    pub fn heatmap_scale(&self) -> f64 {
        self.heatmap_size as f64 / self.image_size as f64
    }

    /// Projects a world point (z > 0) to pixel coordinates `(u, v)`.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        debug_assert!(p[2] > 0.0, "point behind the camera");
        [
            self.focal * p[0] / p[2] + self.principal[0],
            self.focal * p[1] / p[2] + self.principal[1],
        ]
    }

    /// Checked projection: fails with [`crate::Error::BehindCamera`] when the
    /// point sits at or behind the camera plane.
    pub fn try_project(&self, p: [f64; 3]) -> crate::Result<[f64; 2]> {
        if p[2] <= 0.0 {
            return Err(crate::Error::BehindCamera(p[2]));
        }
        Ok(self.project(p))
    }

    /// Projects to heatmap-grid coordinates.
    pub fn project_to_heatmap(&self, p: [f64; 3]) -> [f64; 2] {
        let uv = self.project(p);
        let s = self.heatmap_scale();
        [uv[0] * s, uv[1] * s]
    }

    /// Projects all 42 joints of a state-frame joint set placed at
    /// `scene_offset`, returning pixel coordinates.
    pub fn project_joints(&self, joints: &JointSet, scene_offset: [f64; 3]) -> Vec<[f64; 2]> {
        joints
            .0
            .iter()
            .map(|p| {
                self.project([
                    p[0] + scene_offset[0],
                    p[1] + scene_offset[1],
                    p[2] + scene_offset[2],
                ])
            })
            .collect()
    }

    /// Same as [`Camera::project_joints`] but in heatmap-grid units.
    pub fn project_joints_to_heatmap(
        &self,
        joints: &JointSet,
        scene_offset: [f64; 3],
    ) -> Vec<[f64; 2]> {
        let s = self.heatmap_scale();
        self.project_joints(joints, scene_offset)
            .into_iter()
            .map(|uv| [uv[0] * s, uv[1] * s])
            .collect()
    }

    /// Whether pixel coordinates land inside the image.
    pub fn in_bounds(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0
            && uv[1] >= 0.0
            && uv[0] < self.image_size as f64
            && uv[1] < self.image_size as f64
    }

    /// The ray direction through pixel center `(u + 0.5, v + 0.5)`,
    /// unnormalised (z component is 1).
    pub fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        [
            (u - self.principal[0]) / self.focal,
            (v - self.principal[1]) / self.focal,
            1.0,
        ]
    }
}
