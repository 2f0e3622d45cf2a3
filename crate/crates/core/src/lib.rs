//! Joint BS association, power control and TDMA time allocation for
//! multi-cell wireless networked control.

pub mod comms;
pub mod benchmarks;
pub mod config;
pub mod control;
pub mod convex;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod sca;

pub use error::{Error, Result};
