//! Task heads and post-processing for classification, R-peak detection and
//! survival forecasting.

pub mod heads;
pub mod predictions;
pub mod rpeaks;
pub mod survival;

pub use heads::{HeadKind, HeadSpec, Pooling, Standardizer, TaskHead};
pub use rpeaks::{detect_rpeaks, RPeakPostConfig};
pub use survival::{breslow, survival_curve, Baseline};
