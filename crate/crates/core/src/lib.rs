//! Simulation, sensing emulation, identification and temperature control
//! for laser-heated digital glass forming.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod harness;
pub mod lti;
pub mod optics;
pub mod plant;
pub mod sensing;
pub mod sysid;

pub use error::{Error, Result};
