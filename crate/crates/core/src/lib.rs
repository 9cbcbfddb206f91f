//! Toolkit for unsupervised domain adaptation of LiDAR panoptic segmentation.
//!
//! Data-side adaptation ([`pose_correction`], [`virtual_scan`],
//! [`intensity_mapping`]) reshapes source scans to look like the target
//! sensor. Model-side adaptation ([`ot`], [`ias_sampling`], [`pdc_lite`])
//! aligns feature distributions and recalibrates normalization statistics.
//! [`panoptic_metrics`] scores the result and [`pipeline`] chains the stages.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod features;
pub mod ias_sampling;
pub mod intensity_mapping;
pub mod io;
pub mod ot;
pub mod panoptic_metrics;
pub mod pdc_lite;
pub mod pipeline;
pub mod pose_correction;
pub mod sensor_geometry;
pub mod synth;
pub mod virtual_scan;

pub use error::{Error, ErrorKind, Result};
