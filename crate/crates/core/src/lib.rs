//! Quasi-static ultrasound elastography from sparse dynamic-programming
//! time-delay estimates.
//!
//! DP runs on a handful of RF lines; the resulting samples are fitted by a
//! learned basis of principal displacement modes to give a dense coarse
//! field, which a regularized optimizer refines to sub-sample accuracy. The
//! mode weights double as features for a small MLP that predicts whether a
//! frame pair is suitable for strain imaging.

pub mod coarse;
pub mod dp;
pub mod error;
pub mod modes;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod refine;
pub mod select;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{DisplacementField, FramePairLabel, Provenance, RfFrame, StrainImage, WeightVector, Window};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
