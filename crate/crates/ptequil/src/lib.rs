//! File formats, reports and the command-line front end for the coupled
//! road/power equilibrium solver in `ptequil-core`.

// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod matpower;
pub mod report;
pub mod tables;
pub mod tntp;

pub use error::IoError;
