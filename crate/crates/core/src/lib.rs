//! A deterministic simulator of a confidential-computing NPU.
//!
//! The crate models a trusted accelerator ([`device`]), the untrusted host
//! stack that drives it ([`host`]), and the two mutually distrusting parties
//! that own the model and the data ([`parties`]). Models are prepared by the
//! [`toolchain`]; [`harness`] wires everything into replayable scenarios,
//! an adversarial attack matrix, an offline trace checker and an analytic
//! cost estimator.

pub mod crypto;
pub mod device;
pub mod harness;
pub mod host;
pub mod isa;
pub mod layout;
pub mod parties;
pub mod toolchain;
pub mod trace;
