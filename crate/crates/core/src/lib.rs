//! Software model of a hybrid-array digital beamformer with
//! quadratic-surface SVM direction finding.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_geometry;
pub mod beamformer;
pub mod bench;
pub mod doa_pipeline;
pub mod error;
pub mod fixed_datapath;
pub mod linalg;
pub mod qr_solver;
pub mod qs_svm;
pub mod signal_sim;

pub use error::{Error, Result};
