//! Adversarial host policies as rewrites of the honest script.

use serde::{Deserialize, Serialize};

use super::script::{HostScript, HostStep, Payload};
use crate::device::{DebugOp, Phase, TaskDescriptor, TaskKind};
use crate::layout::RegionKind;

use super::layout::HbmLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackPolicy {
    Honest,
    TamperPc,
    ReorderTasks,
    InjectTask,
    DmaProbeLocked,
    AliasOutputToModel,
    InterruptLockWindow,
    InterruptEncryptWindow,
    DebugProbe,
    SubmitAfterLock,
    TamperSealedBytes,
    ReplayOldOutput,
}

impl AttackPolicy {
    pub const ALL: [AttackPolicy; 12] = [
        AttackPolicy::Honest,
        AttackPolicy::TamperPc,
        AttackPolicy::ReorderTasks,
        AttackPolicy::InjectTask,
        AttackPolicy::DmaProbeLocked,
        AttackPolicy::AliasOutputToModel,
        AttackPolicy::InterruptLockWindow,
        AttackPolicy::InterruptEncryptWindow,
        AttackPolicy::DebugProbe,
        AttackPolicy::SubmitAfterLock,
        AttackPolicy::TamperSealedBytes,
        AttackPolicy::ReplayOldOutput,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).unwrap().as_str().unwrap().to_owned()
    }

    /// The outcome each policy must produce against a correct device.
    pub fn expected(self) -> Outcome {
        use AttackPolicy::*;
        match self {
            Honest => Outcome::Ok,
            TamperPc | ReorderTasks | InjectTask | TamperSealedBytes => Outcome::AttestAbort,
            DmaProbeLocked | AliasOutputToModel | InterruptEncryptWindow => Outcome::SmmuFault,
            InterruptLockWindow => Outcome::NoDecryptScheduled,
            DebugProbe => Outcome::Rejected,
            SubmitAfterLock => Outcome::QueueLocked,
            ReplayOldOutput => Outcome::OutputAuthFailsAtDataProvider,
        }
    }
}

/// What a run ended with, from the outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Ok,
    AttestAbort,
    SmmuFault,
    QueueLocked,
    Rejected,
    NoDecryptScheduled,
    OutputAuthFailsAtDataProvider,
    PpiReject,
    LockAbort,
    VmFault,
    HostError,
}

/// Rewrites `script` according to `policy`. `seed` picks the tampered byte.
pub fn apply_attack(policy: AttackPolicy, script: &HostScript, layout: &HbmLayout, seed: u64) -> HostScript {
    let mut s = script.clone();
    let exec = s.execute_index().unwrap_or(s.steps.len());
    let submits = s.submits();
    let task_at = |s: &HostScript, i: usize| match &s.steps[i] {
        HostStep::Submit(t) => t.clone(),
        _ => unreachable!(),
    };
    let fresh_id = submits.len() as u32 + 100;
    match policy {
        AttackPolicy::Honest => {}
        AttackPolicy::TamperPc => {
            if let [a, b, ..] = submits[..] {
                let (pa, pb) = (task_at(&s, a).pc_start, task_at(&s, b).pc_start);
                set_pc(&mut s.steps[a], pb);
                set_pc(&mut s.steps[b], pa);
            } else if let Some(&a) = submits.first() {
                let pa = task_at(&s, a).pc_start;
                set_pc(&mut s.steps[a], pa + 16);
            } else {
                let mut t = TaskDescriptor::compute(fresh_id, TaskKind::Kernel, 0, vec![], 0);
                t.pc_start = layout.base(RegionKind::ModelBinaries);
                s.steps.insert(exec, HostStep::Submit(t));
            }
        }
        AttackPolicy::ReorderTasks => {
            if let [a, b, ..] = submits[..] {
                s.steps.swap(a, b);
            } else {
                let t = TaskDescriptor::compute(fresh_id, TaskKind::Kernel, 0, vec![], 0);
                s.steps.insert(exec, HostStep::Submit(t));
            }
        }
        AttackPolicy::InjectTask => {
            let mut t = match submits.last() {
                Some(&i) => task_at(&s, i),
                None => TaskDescriptor::compute(0, TaskKind::Kernel, 0, vec![], 0),
            };
            t.task_id = fresh_id;
            let at = submits.last().map_or(exec, |i| i + 1);
            s.steps.insert(at, HostStep::Submit(t));
        }
        AttackPolicy::DmaProbeLocked => {
            s.steps.splice(
                exec + 1..exec + 1,
                [
                    HostStep::AdvanceUntil(Phase::Running),
                    HostStep::Probe { addr: layout.base(RegionKind::Input), len: 16 },
                    HostStep::Probe { addr: layout.base(RegionKind::ModelParams), len: 16 },
                ],
            );
        }
        AttackPolicy::AliasOutputToModel => {
            for step in &mut s.steps {
                if let HostStep::ReadOutput { round: 0, addr, .. } = step {
                    *addr = layout.base(RegionKind::ModelParams);
                }
            }
        }
        AttackPolicy::InterruptLockWindow => s.steps.insert(exec + 1, HostStep::Interrupt),
        AttackPolicy::InterruptEncryptWindow => {
            let out = layout.regions[&RegionKind::Output];
            s.steps.splice(
                exec + 1..exec + 1,
                [
                    HostStep::AdvanceUntil(Phase::EncryptOut),
                    HostStep::Interrupt,
                    HostStep::Probe { addr: out.base, len: out.len },
                ],
            );
        }
        AttackPolicy::DebugProbe => {
            let addr = layout.base(RegionKind::ModelParams);
            s.steps.splice(
                exec + 1..exec + 1,
                [HostStep::AdvanceUntil(Phase::Running), HostStep::Debug(DebugOp::MemoryInspect { addr, len: 64 })],
            );
        }
        AttackPolicy::SubmitAfterLock => {
            let mut t = match submits.first() {
                Some(&i) => task_at(&s, i),
                None => TaskDescriptor::compute(0, TaskKind::Kernel, 0, vec![], 0),
            };
            t.task_id = fresh_id;
            s.steps.insert(exec + 1, HostStep::Submit(t));
        }
        AttackPolicy::TamperSealedBytes => {
            let writes: Vec<usize> = (0..s.steps.len())
                .filter(|&i| matches!(s.steps[i], HostStep::Write { payload: Payload::Binary(_), .. }))
                .collect();
            let total: usize = writes.iter().map(|&i| write_len(&s.steps[i])).sum();
            if total > 0 {
                let mut at = (seed % total as u64) as usize;
                for i in writes {
                    let n = write_len(&s.steps[i]);
                    if at < n {
                        if let HostStep::Write { bytes, .. } = &mut s.steps[i] {
                            bytes[at] ^= 0x01;
                        }
                        break;
                    }
                    at -= n;
                }
            }
        }
        AttackPolicy::ReplayOldOutput => s.output_substitution = Some((1, 0)),
    }
    s
}

fn set_pc(step: &mut HostStep, pc: u64) {
    if let HostStep::Submit(t) = step {
        t.pc_start = pc;
    }
}

fn write_len(step: &HostStep) -> usize {
    match step {
        HostStep::Write { bytes, .. } => bytes.len(),
        _ => 0,
    }
}
