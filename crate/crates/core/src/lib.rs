//! Learning generalized linear models with multi-layer vector approximate
//! message passing (ML-VAMP), together with the state evolution that predicts
//! its generalization error in the large-system limit.

pub mod closedform;
pub mod denoisers;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mc;
pub mod mlvamp;
pub mod quadrature;
pub mod spectra;
pub mod stateevo;
pub mod synthdata;

pub use error::{Error, Result};
