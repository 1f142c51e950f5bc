//! Training-time augmentation for image + 2-D supervision bundles.
//!
//! Geometric transforms (horizontal flip, in-plane rotation) act on the
//! image by index manipulation or inverse-mapped resampling, and on the
//! ground truth **analytically**: 2-D joints and the wrist offset τ are
//! remapped in closed form, and heatmap targets are regenerated from the
//! remapped joints by the caller (never warped as pixel arrays). Saliency
//! masks, which cannot be regenerated without re-rendering, are index-mapped
//! alongside the image. Photometric transforms (Gaussian blur, brightness)
//! change only the image.
//!
//! # Coordinate conventions
//!
//! Image and saliency arrays are *center-sampled*: array index `x` holds the
//! scene content at continuous coordinate `x + 0.5` (the renderer casts one
//! ray per pixel center). Joint positions are continuous heatmap-grid
//! coordinates `u_hm = u_img · g / S` for an `S`-pixel image and `g`-pixel
//! grid. Both geometric transforms assume the camera's principal point sits
//! at the image center — true of every camera this crate constructs — which
//! makes them *exact*:
//!
//! * a horizontal index flip of the image equals re-rendering the scene
//!   mirrored through the optical axis, so joints map to `u' = g − u`, the
//!   two hands swap roles (a mirrored right hand is a left hand), and
//!   τ — the left wrist relative to the right — becomes `(τx, −τy, −τz)`;
//! * rotating the image by θ about its center equals rotating the scene by
//!   θ about the optical axis, so joints rotate about the grid center `g/2`
//!   and τ rotates by the same angle in the camera `xy` plane.

use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hand::{JOINTS_PER_HAND, TOTAL_JOINTS};
use crate::{Error, Result};

/// One sample's augmentable parts: the image, its 2-D supervision, and the
/// wrist offset. Heatmap targets are *not* part of the bundle; they are
/// regenerated from `joints2d` after augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample2d {
    /// `[3, S, S]` RGB image, values in `[0, 1]`.
    pub image: Array3<f64>,
    /// 42 joint positions in heatmap-grid coordinates (right hand 0..21,
    /// left 21..42).
    pub joints2d: Vec<[f64; 2]>,
    /// `[2, g, g]` per-hand visibility masks (channel 0 right, 1 left).
    pub saliency: Array3<f64>,
    /// Left-wrist offset relative to the right wrist, mm.
    pub tau: [f64; 3],
}

/// Augmentation recipe. Every field at its `none()` value disables the
/// corresponding transform; [`Default`] is the mild recipe used by the
/// desk-scale training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability of a horizontal flip.
    pub flip_prob: f64,
    /// Rotation angle is drawn uniformly from `[-max_rotation, max_rotation]`
    /// radians.
    pub max_rotation: f64,
    /// Blur standard deviation is drawn uniformly from `[0, max_blur_sigma]`
    /// image pixels.
    pub max_blur_sigma: f64,
    /// Brightness factor range `[lo, hi]`, applied multiplicatively and
    /// clamped back to `[0, 1]`.
    pub brightness: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            max_rotation: 0.15,
            max_blur_sigma: 1.0,
            brightness: [0.85, 1.15],
        }
    }
}

impl AugmentConfig {
    /// The identity recipe: no augmentation at all.
    pub fn none() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            max_rotation: 0.0,
            max_blur_sigma: 0.0,
            brightness: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must lie in [0, 1], got {}",
                self.flip_prob
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.max_rotation) {
            return Err(Error::Config(format!(
                "max_rotation must lie in [0, pi], got {}",
                self.max_rotation
            )));
        }
        if !self.max_blur_sigma.is_finite() || self.max_blur_sigma < 0.0 {
            return Err(Error::Config(format!(
                "max_blur_sigma must be finite and >= 0, got {}",
                self.max_blur_sigma
            )));
        }
        let [lo, hi] = self.brightness;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!(
                "brightness range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// The render background colour in `[0, 1]` floats — the fill used for
/// pixels a rotation vacates.
pub fn background_fill() -> [f64; 3] {
    crate::render::BACKGROUND.map(|c| c as f64 / 255.0)
}

/// Heatmap-channel index of the same anatomical joint on the other hand.
pub fn partner_joint(j: usize) -> usize {
    (j + JOINTS_PER_HAND) % TOTAL_JOINTS
}

/// Mirrors a sample through the optical axis: horizontal image flip with the
/// hand roles swapped. Geometry — joints, τ, and the saliency masks — is
/// exactly what re-rendering the mirrored scene would produce (see module
/// docs). One caveat: the renderer's per-hand base colours follow the
/// handedness *label*, so a flipped image shows each hand in the other
/// hand's palette; shape, not paint, remains the reliable handedness cue in
/// flip-augmented training data. Joints must have the standard 42-joint
/// layout.
pub fn flip_sample(sample: &Sample2d) -> Sample2d {
    let g = sample.saliency.shape()[1] as f64;
    debug_assert_eq!(sample.joints2d.len(), TOTAL_JOINTS);
    let joints2d = (0..TOTAL_JOINTS)
        .map(|j| {
            let p = sample.joints2d[partner_joint(j)];
            [g - p[0], p[1]]
        })
        .collect();
    let mut saliency = Array3::zeros(sample.saliency.raw_dim());
    saliency
        .slice_mut(s![0, .., ..])
        .assign(&sample.saliency.slice(s![1, .., ..;-1]));
    saliency
        .slice_mut(s![1, .., ..])
        .assign(&sample.saliency.slice(s![0, .., ..;-1]));
    Sample2d {
        image: sample.image.slice(s![.., .., ..;-1]).to_owned(),
        joints2d,
        saliency,
        tau: [sample.tau[0], -sample.tau[1], -sample.tau[2]],
    }
}

/// Bilinear lookup of a center-sampled channel at continuous coordinate
/// `(u, v)`; taps outside the array use `fill`.
fn bilinear(ch: &ndarray::ArrayView2<f64>, u: f64, v: f64, fill: f64) -> f64 {
    let (h, w) = (ch.shape()[0] as i64, ch.shape()[1] as i64);
    let (x, y) = (u - 0.5, v - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let tap = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            fill
        } else {
            ch[[yy as usize, xx as usize]]
        }
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    tap(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + tap(y0, x0 + 1) * fx * (1.0 - fy)
        + tap(y0 + 1, x0) * (1.0 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
}

/// Rotates a sample by `theta` radians about the image center (positive
/// angles turn +x towards +y, i.e. clockwise on screen with y pointing
/// down). The image is inverse-mapped with bilinear interpolation and
/// `fill` in vacated pixels; saliency uses nearest-neighbour with zero fill;
/// joints and τ are rotated in closed form.
pub fn rotate_sample(sample: &Sample2d, theta: f64, fill: [f64; 3]) -> Sample2d {
    let (ct, st) = (theta.cos(), theta.sin());
    let rot = |p: [f64; 2], c: f64| -> [f64; 2] {
        [
            c + ct * (p[0] - c) - st * (p[1] - c),
            c + st * (p[0] - c) + ct * (p[1] - c),
        ]
    };
    let inv = |p: [f64; 2], c: f64| -> [f64; 2] {
        [
            c + ct * (p[0] - c) + st * (p[1] - c),
            c - st * (p[0] - c) + ct * (p[1] - c),
        ]
    };

    let n = sample.image.shape()[1];
    let mut image = Array3::zeros(sample.image.raw_dim());
    for c in 0..3 {
        let src = sample.image.slice(s![c, .., ..]);
        for y in 0..n {
            for x in 0..n {
                let p = inv([x as f64 + 0.5, y as f64 + 0.5], n as f64 / 2.0);
                image[[c, y, x]] = bilinear(&src, p[0], p[1], fill[c]);
            }
        }
    }

    let g = sample.saliency.shape()[1];
    let mut saliency = Array3::zeros(sample.saliency.raw_dim());
    for c in 0..2 {
        for y in 0..g {
            for x in 0..g {
                let p = inv([x as f64 + 0.5, y as f64 + 0.5], g as f64 / 2.0);
                // Continuous coordinate p maps to array index p - 0.5.
                let (xx, yy) = ((p[0] - 0.5).round(), (p[1] - 0.5).round());
                if xx >= 0.0 && yy >= 0.0 && (xx as usize) < g && (yy as usize) < g {
                    saliency[[c, y, x]] = sample.saliency[[c, yy as usize, xx as usize]];
                }
            }
        }
    }

    let gc = g as f64 / 2.0;
    Sample2d {
        image,
        joints2d: sample.joints2d.iter().map(|&p| rot(p, gc)).collect(),
        saliency,
        tau: [
            ct * sample.tau[0] - st * sample.tau[1],
            st * sample.tau[0] + ct * sample.tau[1],
            sample.tau[2],
        ],
    }
}

/// Separable Gaussian blur with kernel radius `ceil(3σ)`; border taps are
/// dropped and the kernel renormalised, so constant images stay constant.
/// `sigma == 0` returns the input unchanged.
pub fn blur_image(image: &Array3<f64>, sigma: f64) -> Array3<f64> {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let pass = |src: &Array3<f64>, horizontal: bool| -> Array3<f64> {
        let mut out = Array3::zeros(src.raw_dim());
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (i, kv) in kernel.iter().enumerate() {
                        let off = i as i64 - radius;
                        let (yy, xx) = if horizontal {
                            (y as i64, x as i64 + off)
                        } else {
                            (y as i64 + off, x as i64)
                        };
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            acc += kv * src[[ci, yy as usize, xx as usize]];
                            norm += kv;
                        }
                    }
                    out[[ci, y, x]] = acc / norm;
                }
            }
        }
        out
    };
    pass(&pass(image, true), false)
}

/// Multiplies the image by `factor` and clamps back to `[0, 1]`.
pub fn adjust_brightness(image: &Array3<f64>, factor: f64) -> Array3<f64> {
    image.mapv(|v| (v * factor).clamp(0.0, 1.0))
}

/// Applies one randomly drawn augmentation pass: flip, then rotation, then
/// blur, then brightness. Exactly four uniform variates are consumed per
/// call regardless of the configuration, so RNG streams stay aligned across
/// recipe changes.
pub fn augment_sample(
    sample: &Sample2d,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Sample2d {
    let u_flip: f64 = rng.gen();
    let u_rot: f64 = rng.gen();
    let u_blur: f64 = rng.gen();
    let u_bright: f64 = rng.gen();

    let mut out = if u_flip < cfg.flip_prob {
        flip_sample(sample)
    } else {
        sample.clone()
    };
    let theta = (2.0 * u_rot - 1.0) * cfg.max_rotation;
    if theta != 0.0 {
        out = rotate_sample(&out, theta, background_fill());
    }
    let sigma = u_blur * cfg.max_blur_sigma;
    if sigma > 0.0 {
        out.image = blur_image(&out.image, sigma);
    }
    let factor = cfg.brightness[0] + u_bright * (cfg.brightness[1] - cfg.brightness[0]);
    if factor != 1.0 {
        out.image = adjust_brightness(&out.image, factor);
    }
    out
}
