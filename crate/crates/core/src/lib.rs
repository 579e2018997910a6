//! Ergodic-rate maximization for fluid active reconfigurable intelligent
//! surfaces: channel model, lifted reformulation, amplification-reflection
//! design, cross-entropy port selection and the outer alternating loop.

pub mod active_reflect;
pub mod ao_driver;
pub mod channel;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod oracle;
pub mod port_select;
pub mod reformulation;
pub mod rng;

pub use error::{Error, Result};
