//! The untrusted host stack.
//!
//! [`HostRuntime`] parses a sealed model, lays it out in HBM, assigns PCs
//! and drives the device through its command port. The honest command
//! stream is a [`HostScript`]; [`apply_attack`] rewrites it into each
//! adversarial variant and declares the outcome a correct device must
//! produce.

mod attack;
mod layout;
mod runtime;
mod script;

pub use attack::{apply_attack, AttackPolicy, Outcome};
pub use layout::{HbmLayout, RegionPlan};
pub use runtime::{HostError, HostEvent, HostEventKind, HostLog, HostRuntime};
pub use script::{inference_steps, load_steps, mailbox, HostScript, HostStep, Payload, RoundInput};
