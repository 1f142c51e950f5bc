//! Deterministic capsule renderer and per-hand saliency masks.
//!
//! Renders a two-hand state into an RGB image by casting one ray per pixel
//! against the 40 hand capsules (nearest hit wins), restricted to each
//! capsule's conservative screen bounding box. Each hand has a flat base
//! colour of similar hue; brightness falls off with depth, which is the only
//! shading cue. Pixel values are produced directly as `u8`, so the stored
//! image **is** the canonical image — converting to float (`k / 255`) and
//! back is lossless by construction.
//!
//! Saliency masks are rendered the same way on the heatmap grid: channel 0
//! marks pixels whose nearest hit belongs to the right hand, channel 1 the
//! left. The two channels are disjoint by construction (one nearest hit per
//! pixel).

use ndarray::Array3;

use crate::camera::Camera;
use crate::hand::{
    hand_capsules, joints_of_unchecked, Capsule, HandState, Template, V3,
};

/// Background colour (RGB). Exposed so image-space transforms (rotation
/// padding in [`crate::augment`]) can fill vacated pixels consistently.
pub const BACKGROUND: [u8; 3] = [28, 30, 36];
/// Flat base colours per hand: similar warm hues, deliberately close.
const RIGHT_COLOR: [f64; 3] = [225.0, 168.0, 140.0];
const LEFT_COLOR: [f64; 3] = [200.0, 158.0, 158.0];

/// A rendered record: `[3, H, W]` RGB image and `[2, g, g]` binary saliency
/// (channel 0 right hand, channel 1 left hand, values 0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Array3<u8>,
    pub saliency: Array3<u8>,
}

/// Smallest positive ray parameter at which `t * dir` (origin at the camera)
/// hits the capsule, if any. `dir` need not be normalised.
fn ray_capsule_t(dir: [f64; 3], cap: &Capsule<f64>) -> Option<f64> {
    let d = V3::new(dir[0], dir[1], dir[2]);
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    };

    // Sphere caps at both endpoints.
    for c in [cap.a, cap.b] {
        let qa = d.dot(d);
        let qb = -2.0 * d.dot(c);
        let qc = c.dot(c) - cap.radius * cap.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            consider((-qb - sq) / (2.0 * qa));
            consider((-qb + sq) / (2.0 * qa));
        }
    }

    // Finite open cylinder around the axis.
    let axis = cap.b - cap.a;
    let len = axis.norm();
    if len > 1e-12 {
        let n = axis.scale(1.0 / len);
        let m = -cap.a; // camera origin relative to endpoint a
        let dd = d - n.scale(d.dot(n));
        let mm = m - n.scale(m.dot(n));
        let qa = dd.dot(dd);
        if qa > 1e-18 {
            let qb = 2.0 * dd.dot(mm);
            let qc = mm.dot(mm) - cap.radius * cap.radius;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                    let s = (d.scale(t) - cap.a).dot(n);
                    if s >= 0.0 && s <= len {
                        consider(t);
                    }
                }
            }
        }
    }
    best
}

/// World-space capsules of both hands, placed at `scene_offset`.
fn world_capsules(
    state: &HandState,
    template: &Template,
    scene_offset: [f64; 3],
) -> [Vec<Capsule<f64>>; 2] {
    let js = joints_of_unchecked(state, template);
    let place = |pts: &[[f64; 3]]| -> Vec<V3<f64>> {
        pts.iter()
            .map(|p| {
                V3::new(
                    p[0] + scene_offset[0],
                    p[1] + scene_offset[1],
                    p[2] + scene_offset[2],
                )
            })
            .collect()
    };
    let right = hand_capsules(
        &place(js.right()),
        template,
        state.shape.scale * state.shape.radius_scale,
    );
    let left = hand_capsules(
        &place(js.left()),
        template,
        state.shape.scale * state.shape.radius_scale,
    );
    [right.to_vec(), left.to_vec()]
}

/// Conservative screen-space bounding box of a capsule, in a grid of
/// `size` pixels covering the camera image, or `None` when fully behind the
/// near plane. `scale` converts image pixels to grid pixels (1 for the
/// image itself, `heatmap_scale` for the saliency grid).
fn screen_bbox(cap: &Capsule<f64>, cam: &Camera, size: usize, scale: f64) -> Option<(usize, usize, usize, usize)> {
    const NEAR: f64 = 25.0;
    if cap.a.z < NEAR || cap.b.z < NEAR {
        return None;
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in [cap.a, cap.b] {
        let uv = cam.project([p.x, p.y, p.z]);
        let pad = cam.focal * cap.radius / p.z + 1.0;
        for k in 0..2 {
            lo[k] = lo[k].min((uv[k] - pad) * scale);
            hi[k] = hi[k].max((uv[k] + pad) * scale);
        }
    }
    let clampi = |x: f64| -> i64 { x.floor() as i64 };
    let (u0, v0) = (clampi(lo[0]).max(0), clampi(lo[1]).max(0));
    let (u1, v1) = (
        (clampi(hi[0]) + 1).min(size as i64),
        (clampi(hi[1]) + 1).min(size as i64),
    );
    if u0 >= u1 || v0 >= v1 {
        return None;
    }
    Some((u0 as usize, v0 as usize, u1 as usize, v1 as usize))
}

/// Depth-based brightness: nearer surfaces render brighter.
fn shade(z: f64) -> f64 {
    (1.6 - z / 450.0).clamp(0.35, 1.0)
}

/// Renders the image and saliency masks for a state placed at
/// `scene_offset` in front of `camera`.
pub fn render(
    state: &HandState,
    template: &Template,
    camera: &Camera,
    scene_offset: [f64; 3],
) -> RenderOutput {
    let hands = world_capsules(state, template, scene_offset);
    let n = camera.image_size;
    let g = camera.heatmap_size;

    // Depth and hand-id buffers at image resolution.
    let mut zbuf = vec![f64::INFINITY; n * n];
    let mut idbuf = vec![u8::MAX; n * n];
    for (hand_id, caps) in hands.iter().enumerate() {
        for cap in caps {
            let Some((u0, v0, u1, v1)) = screen_bbox(cap, camera, n, 1.0) else {
                continue;
            };
            for v in v0..v1 {
                for u in u0..u1 {
                    let dir = camera.pixel_ray(u as f64 + 0.5, v as f64 + 0.5);
                    if let Some(t) = ray_capsule_t(dir, cap) {
                        let idx = v * n + u;
                        if t < zbuf[idx] {
                            zbuf[idx] = t;
                            idbuf[idx] = hand_id as u8;
                        }
                    }
                }
            }
        }
    }

    let mut image = Array3::<u8>::zeros((3, n, n));
    for v in 0..n {
        for u in 0..n {
            let idx = v * n + u;
            let rgb = match idbuf[idx] {
                0 => {
                    let s = shade(zbuf[idx]);
                    RIGHT_COLOR.map(|c| (c * s).round().clamp(0.0, 255.0) as u8)
                }
                1 => {
                    let s = shade(zbuf[idx]);
                    LEFT_COLOR.map(|c| (c * s).round().clamp(0.0, 255.0) as u8)
                }
                _ => BACKGROUND,
            };
            for c in 0..3 {
                image[[c, v, u]] = rgb[c];
            }
        }
    }

    // Saliency at heatmap resolution: one centre ray per coarse pixel.
    let mut saliency = Array3::<u8>::zeros((2, g, g));
    let ratio = camera.image_size as f64 / camera.heatmap_size as f64;
    let mut szbuf = vec![f64::INFINITY; g * g];
    let mut sidbuf = vec![u8::MAX; g * g];
    for (hand_id, caps) in hands.iter().enumerate() {
        for cap in caps {
            let Some((u0, v0, u1, v1)) = screen_bbox(cap, camera, g, 1.0 / ratio) else {
                continue;
            };
            for v in v0..v1 {
                for u in u0..u1 {
                    let dir = camera.pixel_ray(
                        (u as f64 + 0.5) * ratio,
                        (v as f64 + 0.5) * ratio,
                    );
                    if let Some(t) = ray_capsule_t(dir, cap) {
                        let idx = v * g + u;
                        if t < szbuf[idx] {
                            szbuf[idx] = t;
                            sidbuf[idx] = hand_id as u8;
                        }
                    }
                }
            }
        }
    }
    for v in 0..g {
        for u in 0..g {
            match sidbuf[v * g + u] {
                0 => saliency[[0, v, u]] = 1,
                1 => saliency[[1, v, u]] = 1,
                _ => {}
            }
        }
    }

    RenderOutput { image, saliency }
}

/// Encodes an RGB `[3, H, W]` array as a PNG file (for inspection, not for
/// dataset storage).
pub fn save_png(image: &Array3<u8>, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if c != 3 {
        return Err(crate::Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            buf.put_pixel(
                u as u32,
                v as u32,
                image::Rgb([image[[0, v, u]], image[[1, v, u]], image[[2, v, u]]]),
            );
        }
    }
    buf.save(path.as_ref())
        .map_err(|e| crate::Error::Image(e.to_string()))
}
