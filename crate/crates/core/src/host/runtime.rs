//! Executes host scripts against a device through its command port.

use std::collections::BTreeMap;

use thiserror::Error;

use super::layout::HbmLayout;
use super::script::{inference_steps, load_steps, HostScript, HostStep, RoundInput};
use crate::crypto::AuthTag;
use crate::device::{AbortReason, CommandPort, DeviceCommand, DeviceError, DeviceResponse, DeviceStatus, Phase};
use crate::toolchain::SealedModel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("device is not idle")]
    DeviceNotIdle,
    #[error("model does not fit in device memory")]
    OutOfMemory,
    #[error("no model loaded")]
    NotLoaded,
    #[error("device aborted the session: {0}")]
    AbortedSession(AbortReason),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HostEventKind {
    Error(DeviceError),
    Aborted(AbortReason),
    Output { round: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostEvent {
    pub step: usize,
    pub kind: HostEventKind,
}

/// What the host saw while running a script.
#[derive(Clone, Debug, Default)]
pub struct HostLog {
    pub events: Vec<HostEvent>,
    pub outputs: BTreeMap<u32, Vec<u8>>,
    pub skipped: usize,
}

impl HostLog {
    pub fn errors(&self) -> impl Iterator<Item = &DeviceError> {
        self.events.iter().filter_map(|e| match &e.kind {
            HostEventKind::Error(err) => Some(err),
            _ => None,
        })
    }

    pub fn abort(&self) -> Option<&AbortReason> {
        self.events.iter().find_map(|e| match &e.kind {
            HostEventKind::Aborted(r) => Some(r),
            _ => None,
        })
    }
}

/// The untrusted runtime. Talks to the device only through `P`.
pub struct HostRuntime<P: CommandPort> {
    port: P,
    hbm_size: u64,
    layout: Option<HbmLayout>,
    pcs: Vec<u64>,
}

impl<P: CommandPort> HostRuntime<P> {
    pub fn new(port: P, hbm_size: u64) -> Self {
        Self { port, hbm_size, layout: None, pcs: Vec::new() }
    }

    pub fn port(&mut self) -> &mut P {
        &mut self.port
    }

    pub fn layout(&self) -> Option<&HbmLayout> {
        self.layout.as_ref()
    }

    pub fn status(&mut self) -> Result<DeviceStatus, DeviceError> {
        match self.port.submit(DeviceCommand::Status)? {
            DeviceResponse::Status(s) => Ok(s),
            other => unreachable!("status answered with {other:?}"),
        }
    }

    /// Plans the layout for `model` and returns the PC list for signing.
    pub fn plan(&mut self, model: &SealedModel) -> Result<Vec<u64>, HostError> {
        if self.status()?.phase != Phase::Idle {
            return Err(HostError::DeviceNotIdle);
        }
        let layout = HbmLayout::plan(model, self.hbm_size).ok_or(HostError::OutOfMemory)?;
        self.pcs = layout.task_pcs(model);
        self.layout = Some(layout);
        Ok(self.pcs.clone())
    }

    /// The full honest command stream for `rounds`.
    pub fn honest_script(&self, model: &SealedModel, p1: AuthTag, p2: AuthTag, rounds: &[RoundInput]) -> Result<HostScript, HostError> {
        let layout = self.layout.as_ref().ok_or(HostError::NotLoaded)?;
        let mut steps = load_steps(model, layout);
        steps.extend(inference_steps(layout, &self.pcs, p1, p2, rounds));
        Ok(HostScript { steps, output_substitution: None })
    }

    /// Allocates regions, writes the sealed model and submits its tasks.
    pub fn load_model(&mut self, model: &SealedModel) -> Result<Vec<u64>, HostError> {
        let pcs = self.plan(model)?;
        let steps = load_steps(model, self.layout.as_ref().unwrap());
        let log = self.execute(&HostScript { steps, output_substitution: None });
        let first = log.errors().next().cloned();
        match first {
            Some(e) => Err(e.into()),
            None => Ok(pcs),
        }
    }

    /// Runs every round and returns each round's sealed output.
    pub fn run_inference(&mut self, p1: AuthTag, p2: AuthTag, rounds: &[RoundInput]) -> Result<Vec<Vec<u8>>, HostError> {
        let layout = self.layout.as_ref().ok_or(HostError::NotLoaded)?;
        let mut steps = inference_steps(layout, &self.pcs, p1, p2, rounds);
        // Leave the session up; the caller cleans.
        steps.truncate(steps.len() - 2);
        let log = self.execute(&HostScript { steps, output_substitution: None });
        if let Some(r) = log.abort() {
            return Err(HostError::AbortedSession(r.clone()));
        }
        if let Some(e) = log.errors().next() {
            return Err(e.clone().into());
        }
        Ok(log.outputs.into_values().collect())
    }

    pub fn clean(&mut self) -> Result<(), HostError> {
        self.port.submit(DeviceCommand::Clean)?;
        self.advance_until(|_| false);
        self.layout = None;
        Ok(())
    }

    /// Advances while the device makes progress and `stop` is false.
    fn advance_until(&mut self, stop: impl Fn(&DeviceStatus) -> bool) -> Option<DeviceStatus> {
        loop {
            let status = self.status().ok()?;
            if stop(&status) {
                return Some(status);
            }
            match self.port.submit(DeviceCommand::Advance) {
                Ok(DeviceResponse::Stepped(true)) => continue,
                _ => return self.status().ok(),
            }
        }
    }

    /// Executes `script` step by step. Device errors are recorded, not
    /// fatal; once the device aborts, everything up to the next `Clean` is
    /// skipped.
    pub fn execute(&mut self, script: &HostScript) -> HostLog {
        let mut log = HostLog::default();
        let mut aborted = false;
        for (i, step) in script.steps.iter().enumerate() {
            if aborted && !matches!(step, HostStep::Clean | HostStep::AdvanceUntilIdle) {
                log.skipped += 1;
                continue;
            }
            let (command, read_round) = match step {
                HostStep::Alloc { kind, base, len } => (DeviceCommand::AllocRegion { kind: *kind, base: *base, len: *len }, None),
                HostStep::Write { addr, bytes, .. } => (DeviceCommand::DmaWrite { addr: *addr, bytes: bytes.clone() }, None),
                HostStep::Submit(t) => (DeviceCommand::SubmitTask(t.clone()), None),
                HostStep::Mailbox(m) => (DeviceCommand::WriteMailbox(m.clone()), None),
                HostStep::Execute { p1 } => (DeviceCommand::ExecuteModel { p1: *p1 }, None),
                HostStep::NextInput => (DeviceCommand::NextInput, None),
                HostStep::Continue => (DeviceCommand::ContinueRound, None),
                HostStep::Interrupt => (DeviceCommand::Interrupt, None),
                HostStep::ReadOutput { round, addr, len } => (DeviceCommand::DmaRead { addr: *addr, len: *len }, Some(*round)),
                HostStep::Probe { addr, len } => (DeviceCommand::DmaRead { addr: *addr, len: *len }, None),
                HostStep::Debug(op) => (DeviceCommand::Debug(op.clone()), None),
                HostStep::Clean => {
                    aborted = false;
                    (DeviceCommand::Clean, None)
                }
                HostStep::AdvanceUntilIdle => {
                    self.advance_until(|_| false);
                    self.port.submit(DeviceCommand::PollCompletions).ok();
                    aborted |= self.note_abort(i, &mut log);
                    continue;
                }
                HostStep::AdvanceUntil(phase) => {
                    let target = *phase;
                    self.advance_until(|s| s.phase == target || s.phase == Phase::Aborted);
                    aborted |= self.note_abort(i, &mut log);
                    continue;
                }
            };
            match self.port.submit(command) {
                Ok(DeviceResponse::Bytes(bytes)) => {
                    if let Some(round) = read_round {
                        log.outputs.insert(round, bytes);
                        log.events.push(HostEvent { step: i, kind: HostEventKind::Output { round } });
                    }
                }
                Ok(_) => {}
                Err(e) => log.events.push(HostEvent { step: i, kind: HostEventKind::Error(e) }),
            }
            aborted |= self.note_abort(i, &mut log);
        }
        log
    }

    fn note_abort(&mut self, step: usize, log: &mut HostLog) -> bool {
        let Ok(status) = self.status() else {
            return false;
        };
        match status.abort {
            Some(reason) if status.phase == Phase::Aborted => {
                if log.abort() != Some(&reason) {
                    log.events.push(HostEvent { step, kind: HostEventKind::Aborted(reason) });
                }
                true
            }
            _ => false,
        }
    }
}
