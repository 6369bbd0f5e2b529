//! Particle simulation and numerical verification for controlled
//! path-dependent McKean-Vlasov equations on truncated Hilbert spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod calculus;
pub mod control;
pub mod error;
pub mod hilbert;
pub mod hjb;
pub mod measure;
pub mod pathspace;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
