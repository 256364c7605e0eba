//! Each guide chapter becomes a module so rustdoc compiles and runs its
//! listings. A failing doc-test names the chapter it came from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod ch00_introduction {}
#[doc = include_str!("../../../book/src/sealing.md")]
pub mod ch01_sealing {}
#[doc = include_str!("../../../book/src/locking.md")]
pub mod ch02_locking {}
#[doc = include_str!("../../../book/src/attestation.md")]
pub mod ch03_attestation {}
#[doc = include_str!("../../../book/src/ppi.md")]
pub mod ch04_ppi {}
#[doc = include_str!("../../../book/src/attacks.md")]
pub mod ch05_attacks {}
#[doc = include_str!("../../../book/src/trace-check.md")]
pub mod ch06_trace_check {}
#[doc = include_str!("../../../book/src/costs.md")]
pub mod ch07_costs {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod ch08_cli {}
