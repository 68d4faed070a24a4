//! File formats, image IO and the command-line front end for the UGV keypoint
//! pipeline in [`ugvkit_core`].
//!
//! - [`io`] - tensor files and PNG/PPM loading.
//! - [`formats`] - JSON-lines annotations, detections, poses and camera configs.
//! - [`weights`] - weight manifests.
//! - [`commands`] - one function per subcommand of the `ugvkit` binary.
//! - [`overlay`] - drawing detections and pose axes.

pub mod commands;
pub mod error;
pub mod formats;
pub mod io;
pub mod overlay;
pub mod weights;

pub use error::{Error, Result};
pub use ugvkit_core as core;
