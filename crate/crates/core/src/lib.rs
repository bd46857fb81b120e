//! Computational core for personalized gaze-saliency modeling.
//!
//! The crate covers the full non-model pipeline:
//!
//! * [`data_model`]: gaze logs, observer profiles, one-second scene
//!   segmentation and the P1/P2 demographic protocols.
//! * [`geometry`]: dynamic tile-grid selection, coordinate rescaling and the
//!   `[0, 1000]²` grid normalization.
//! * [`clustering`]: DBSCAN over fixation points and the adaptive
//!   skip/base/strict clustering policy.
//! * [`saliency`]: Gaussian heatmap rendering and map export.
//! * [`metrics`]: KL, CC, SIM, NSS and AUC-Judd.
//! * [`point_protocol`]: the `<ref>`/`<point>` wire format.
//! * [`rewards`]: format and spatial consistency rewards.
//! * [`cgrpo`]: group-relative policy optimization over a toy point-emitting
//!   policy.

pub mod cgrpo;
pub mod clustering;
pub mod data_model;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod point_protocol;
pub mod rewards;
pub mod saliency;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::GridPoint;

/// An ordered set of fixation points in grid coordinates.
pub type FixationSet = Vec<GridPoint>;
