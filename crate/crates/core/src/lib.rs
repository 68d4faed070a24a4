//! Core algorithms for monocular UGV keypoint detection and 6-DoF pose recovery.
//!
//! The pipeline, in the order data flows through it:
//!
//! 1. [`tensor`] - dense `f32` arrays, the tensor byte format and bilinear resizing.
//! 2. [`encoding`] - binary-disk heatmaps and part affinity fields built from
//!    annotations, the masked training loss and the background sampling schedule.
//! 3. [`network`] - forward inference of the multi-resolution keypoint network.
//! 4. [`decoding`] - peak extraction and greedy PAF assembly into ordered detections.
//! 5. [`geometry`] - pinhole camera, P4P solvers and the robot/camera/world frame chain.
//! 6. [`evaluation`] - quadrilateral IoU, precision/recall and distance metrics.
//! 7. [`synth`] - synthetic scenes with exact ground truth.
//!
//! The crate is `no_std` and only needs `alloc`. File IO, image decoding and the
//! command-line front end live in the `ugvkit` crate.
//!
//! # Conventions
//!
//! - Feature maps are channel-major `[C, H, W]`.
//! - Map pixel `(i, j)` has its center at `(j + 0.5, i + 0.5)` in map coordinates.
//! - Keypoints are ordered 1..4 as annotated; connections run 1→2, 2→3, 3→4, 4→1.

#![no_std]

extern crate alloc;

pub mod decoding;
pub mod encoding;
pub mod evaluation;
pub mod geometry;
pub mod network;
pub mod synth;
pub mod tensor;

pub use tensor::{ImageBuffer, Tensor, TensorError};

/// Number of keypoints on the UGV top surface.
pub const NUM_KEYPOINTS: usize = 4;
/// Heatmap channels: one per keypoint plus background.
pub const HEAT_CHANNELS: usize = 5;
/// PAF channels: two per directed connection.
pub const PAF_CHANNELS: usize = 8;

/// Directed connections between consecutive keypoints, closing the quadrilateral.
pub const CONNECTIONS: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];
