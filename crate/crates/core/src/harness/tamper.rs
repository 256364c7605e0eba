//! The byte surface an attacker can flip before the model runs: sealed
//! binaries, sealed weights, the PC list, P₁, P₂ and the input ciphertext.

use crate::host::{HostScript, HostStep, Payload};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TamperField {
    Binary(usize),
    Weights,
    /// Big-endian `PC_START` of a compute task.
    Pc(usize),
    P1,
    P2,
    Input,
}

/// One contiguous tamperable field inside a script.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub field: TamperField,
    pub step: usize,
    pub len: usize,
}

/// Concatenation order: binaries ∥ weights ∥ PC list ∥ P₁ ∥ P₂ ∥ input.
pub fn tamper_surface(script: &HostScript) -> Vec<Segment> {
    let mut bins = Vec::new();
    let mut weights = Vec::new();
    let mut pcs = Vec::new();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    let mut input = Vec::new();
    for (step, s) in script.steps.iter().enumerate() {
        match s {
            HostStep::Write { bytes, payload: Payload::Binary(i), .. } => {
                bins.push(Segment { field: TamperField::Binary(*i), step, len: bytes.len() })
            }
            HostStep::Write { bytes, payload: Payload::Weights, .. } => {
                weights.push(Segment { field: TamperField::Weights, step, len: bytes.len() })
            }
            HostStep::Write { bytes, payload: Payload::Input(0), .. } if input.is_empty() => {
                input.push(Segment { field: TamperField::Input, step, len: bytes.len() })
            }
            HostStep::Submit(t) if t.kind.is_compute() => {
                pcs.push(Segment { field: TamperField::Pc(pcs.len()), step, len: 8 })
            }
            HostStep::Execute { .. } if p1.is_empty() => p1.push(Segment { field: TamperField::P1, step, len: 16 }),
            HostStep::Mailbox(_) if p2.is_empty() => p2.push(Segment { field: TamperField::P2, step, len: 16 }),
            _ => {}
        }
    }
    [bins, weights, pcs, p1, p2, input].concat()
}

pub fn surface_len(script: &HostScript) -> usize {
    tamper_surface(script).iter().map(|s| s.len).sum()
}

/// XORs `mask` into byte `offset` of the surface. Returns the field hit.
pub fn flip(script: &mut HostScript, mut offset: usize, mask: u8) -> Option<TamperField> {
    assert_ne!(mask, 0, "a zero mask is not a mutation");
    for seg in tamper_surface(script) {
        if offset >= seg.len {
            offset -= seg.len;
            continue;
        }
        match &mut script.steps[seg.step] {
            HostStep::Write { bytes, .. } => bytes[offset] ^= mask,
            HostStep::Submit(t) => {
                let mut be = t.pc_start.to_be_bytes();
                be[offset] ^= mask;
                t.pc_start = u64::from_be_bytes(be);
            }
            HostStep::Execute { p1 } => *p1 = xor_tag(p1, offset, mask),
            HostStep::Mailbox(m) => m.p2 = xor_tag(&m.p2, offset, mask),
            _ => unreachable!("surface only lists tamperable steps"),
        }
        return Some(seg.field);
    }
    None
}

fn xor_tag(tag: &crate::crypto::AuthTag, offset: usize, mask: u8) -> crate::crypto::AuthTag {
    let mut b = *tag.as_bytes();
    b[offset] ^= mask;
    crate::crypto::AuthTag::from_bytes(b)
}
