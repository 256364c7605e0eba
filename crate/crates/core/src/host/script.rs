//! The host's command stream, as data.
//!
//! The honest flow is built once as a [`HostScript`]. Attack policies are
//! rewrites of that script, so every deviation is explicit and replayable.

use crate::crypto::AuthTag;
use crate::device::{DebugOp, Mailbox, Phase, TaskDescriptor};
use crate::layout::RegionKind;
use crate::toolchain::SealedModel;

use super::layout::HbmLayout;

/// What a DMA write carries, so rewrites can target specific payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    Weights,
    Policy,
    Binary(usize),
    Input(u32),
}

#[derive(Clone, Debug)]
pub enum HostStep {
    Alloc { kind: RegionKind, base: u64, len: u64 },
    Write { addr: u64, bytes: Vec<u8>, payload: Payload },
    Submit(TaskDescriptor),
    Mailbox(Mailbox),
    Execute { p1: AuthTag },
    NextInput,
    Continue,
    AdvanceUntilIdle,
    /// Advance until the device reports `phase` (or stops making progress).
    AdvanceUntil(Phase),
    Interrupt,
    ReadOutput { round: u32, addr: u64, len: u64 },
    Probe { addr: u64, len: u64 },
    Debug(DebugOp),
    Clean,
}

/// Per-round material the data side hands the host.
#[derive(Clone, Debug)]
pub struct RoundInput {
    pub sealed_input: Vec<u8>,
    pub ppi: Option<(AuthTag, AuthTag)>,
}

#[derive(Clone, Debug, Default)]
pub struct HostScript {
    pub steps: Vec<HostStep>,
    /// `(round, source)`: deliver the output read in round `source` to the
    /// data provider as the result of `round`.
    pub output_substitution: Option<(u32, u32)>,
}

impl HostScript {
    pub fn position(&self, pred: impl Fn(&HostStep) -> bool) -> Option<usize> {
        self.steps.iter().position(pred)
    }

    /// Index of the first `EXECUTE_MODEL`.
    pub fn execute_index(&self) -> Option<usize> {
        self.position(|s| matches!(s, HostStep::Execute { .. }))
    }

    pub fn submits(&self) -> Vec<usize> {
        (0..self.steps.len()).filter(|&i| matches!(self.steps[i], HostStep::Submit(_))).collect()
    }
}

/// Allocation, sealed-blob writes and task submission.
pub fn load_steps(model: &SealedModel, layout: &HbmLayout) -> Vec<HostStep> {
    let mut steps: Vec<HostStep> = layout
        .regions
        .iter()
        .map(|(&kind, r)| HostStep::Alloc { kind, base: r.base, len: r.len })
        .collect();
    let params = layout.base(RegionKind::ModelParams);
    steps.push(HostStep::Write { addr: params, bytes: model.weights.clone(), payload: Payload::Weights });
    steps.push(HostStep::Write {
        addr: params + layout.weights_len,
        bytes: model.policy.clone(),
        payload: Payload::Policy,
    });
    for (i, (pc, bin)) in layout.pcs.iter().zip(&model.binaries).enumerate() {
        steps.push(HostStep::Write { addr: *pc, bytes: bin.clone(), payload: Payload::Binary(i) });
    }
    steps.extend(layout.tasks(model).into_iter().map(HostStep::Submit));
    steps
}

pub fn mailbox(layout: &HbmLayout, p1: AuthTag, p2: AuthTag, pcs: &[u64], round: &RoundInput) -> Mailbox {
    Mailbox {
        p1,
        p2,
        pcs: pcs.to_vec(),
        binary_lens: layout.binary_lens.clone(),
        weights_len: layout.weights_len,
        policy_len: layout.policy_len,
        input_len: round.sealed_input.len() as u64,
        output_len: layout.output_len,
        ppi: round.ppi,
    }
}

/// Input writes, execution and output reads for every round, then cleanup.
pub fn inference_steps(layout: &HbmLayout, pcs: &[u64], p1: AuthTag, p2: AuthTag, rounds: &[RoundInput]) -> Vec<HostStep> {
    let input = layout.base(RegionKind::Input);
    let output = layout.base(RegionKind::Output);
    let mut steps = Vec::new();
    for (r, round) in rounds.iter().enumerate() {
        let r = r as u32;
        if r > 0 {
            steps.push(HostStep::NextInput);
        }
        steps.push(HostStep::Write { addr: input, bytes: round.sealed_input.clone(), payload: Payload::Input(r) });
        steps.push(HostStep::Mailbox(mailbox(layout, p1, p2, pcs, round)));
        steps.push(if r == 0 { HostStep::Execute { p1 } } else { HostStep::Continue });
        steps.push(HostStep::AdvanceUntilIdle);
        steps.push(HostStep::ReadOutput {
            round: r,
            addr: output,
            len: layout.output_len + crate::crypto::SEAL_OVERHEAD as u64,
        });
    }
    steps.push(HostStep::Clean);
    steps.push(HostStep::AdvanceUntilIdle);
    steps
}
