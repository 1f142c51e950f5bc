//! Two-hand interaction reconstruction on a desk-scale budget.
//!
//! This crate implements a complete, deterministic pipeline for recovering the
//! 3D pose of two closely interacting hands from a single RGB image:
//!
//! * a capsule-based parametric hand model with forward/inverse kinematics and
//!   a sampling-based refinement step that resolves inter-penetration
//!   ([`hand`]),
//! * a synthetic data generator that poses, splices, renders, and annotates
//!   two-hand scenes ([`synth`], [`camera`], [`render`], [`dataset`]),
//! * *interaction adjacency heatmaps*, a 2D joint encoding whose side lobes
//!   make spatial proximity between joints of either hand explicit ([`iah`]),
//! * a latent interaction prior — a variational autoencoder trained on
//!   plausible two-hand configurations whose frozen decoder constrains
//!   reconstruction ([`prior`]),
//! * a convolutional image encoder with heatmap/saliency heads
//!   ([`extractor`]) and a patch-transformer fusion module that maps fused 2D
//!   evidence into the prior's latent space ([`fusion`]),
//! * evaluation metrics, an ablation harness, and plotting ([`metrics`],
//!   [`ablation`], [`plot`]).
//!
//! Everything — initialisation, data generation, augmentation, training —
//! is driven by named deterministic RNG streams ([`rngs`]), so a given
//! configuration and seed reproduce results byte for byte.
//!
//! The typical flow is wired together by [`config::RunConfig`] and exposed on
//! the command line by the `bimanus` binary; see the book under `book/` for a
//! guided tour.

pub mod archive;
pub mod augment;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod docs;
pub mod extractor;
pub mod fusion;
pub mod hand;
pub mod iah;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod prior;
pub mod render;
pub mod repr;
pub mod rngs;
pub mod synth;

pub mod ablation;

mod error;

pub use error::{Error, Result};
