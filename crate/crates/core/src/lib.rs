//! edgekit: a model-agnostic toolkit for curating object-detection datasets
//! around a detector's blind spots.
//!
//! The crate is organized as a pipeline, with each stage usable on its own:
//!
//! 1. [`datamodel`] loads and validates datasets, predictions, and camera-ID
//!    split specifications.
//! 2. [`geometry`] provides box IoU and greedy score-ordered matching.
//! 3. [`metrics`] builds precision-recall curves and computes AP / mAP with
//!    class-wise and time-of-day slicing.
//! 4. [`blindspot`] partitions ground truth by a baseline model's true
//!    positives and scores a second model only on what the baseline missed.
//! 5. [`curation`] scores caption variants by detection loss (edge-ness),
//!    builds preference pairs, and tracks augmentation accounting.
//! 6. [`dpo`] implements the preference objective on log-probability records
//!    plus a tiny trainable policy with analytic gradients.
//! 7. [`simharness`] generates seeded synthetic scenes and biased synthetic
//!    detections so the whole loop can run and be tested at desk scale.
//!
//! All outputs are deterministic functions of their inputs (and explicit
//! seeds); nothing in the crate reads clocks, environment, or global RNG
//! state.

pub mod blindspot;
pub mod curation;
pub mod datamodel;
pub mod dpo;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod simharness;

pub use error::{Error, Result};
