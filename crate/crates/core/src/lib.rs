//! Simulation of two-qubit maximally entangled mixed states (MEMS): state
//! construction and entanglement measures, the optical creation bench,
//! concentration by local filtering and two-copy schemes, simulated
//! maximum-likelihood tomography, and the S_L-T plane analyses.

// `!(x > 0.0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod apparatus;
pub mod cli;
pub mod concentrate;
pub mod error;
pub mod qmat;
pub mod states;
pub mod tomography;

pub use error::{Error, Result};
