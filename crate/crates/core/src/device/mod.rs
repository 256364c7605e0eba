//! The confidential NPU.
//!
//! A single-threaded step machine. Host commands arrive through
//! [`CommandPort`]; work that the hardware would do asynchronously (lock,
//! attestation, decryption, kernels, sealing, cleanup) advances one step per
//! [`DeviceCommand::Advance`] so the host can interleave commands anywhere.
//!
//! A round runs LOCKING → ATTESTING → DECRYPTING → RUNNING → ENCRYPT_OUT →
//! RUNNING. Later rounds of a resident model skip attestation and relock
//! only INPUT and OUTPUT. Every authentication check of a round completes
//! before the first plaintext byte is written to HBM, so an abort leaves
//! the regions as ciphertext.

mod boot;
mod command;
mod memory;
mod task;
mod vm;

pub use boot::{
    alias_cert_message, device_cert_message, firmware_message, provider_cert_message, reference_firmware,
    DeviceConfig, DeviceIdentity, Vendor,
};
pub use command::{
    AbortReason, CommandPort, DebugOp, DeviceCommand, DeviceError, DeviceResponse, DeviceStatus, KexError, Mailbox,
    Phase, PpiFailure,
};
pub use memory::{Region, RegionTable};
pub use task::{operator_ids, CompletionRecord, ComputeUnit, CqStatus, TaskDescriptor, TaskKind, TASK_RECORD_LEN};
pub use vm::VmFault;

use serde::Serialize;
use sha2::{Digest, Sha256};

use boot::Hsm;
use memory::{Hbm, Smmu};
use crate::crypto::{
    derive_key, dh_derive, dh_keygen, sign, verify, AuthTag, BlobKind, FirmwareMeasurement, SealedBlob,
    VendorSignature, SEAL_OVERHEAD,
};
use crate::layout::{page_of, DmaDirection, LifecycleState, RegionKind, PAGE_SIZE};
use crate::parties::commit::{chain_binding, pc_commitment};
use crate::parties::messages::{KexInit, KexReply, Message, Role};
use crate::parties::ppi::verify_ppi;
use crate::toolchain::{chain_commitment, ModelPolicy};
use crate::trace::{Actor, Event, ExecutionTrace, PageRange, Status, TraceEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Unmap,
    UnmapAck,
    AttestPc,
    AttestBinaries,
    Decrypt,
    RunTask(usize),
    SealOutput,
    RemapOutput,
    Zeroize,
    Release,
}

/// Everything about the device except key material and HBM contents.
#[derive(Clone, Debug, Serialize)]
pub struct DeviceSnapshot {
    pub phase: Phase,
    pub measurement: Option<FirmwareMeasurement>,
    pub regions: RegionTable,
    pub unmapped_pages: Vec<u64>,
    pub taskq_tail: u64,
    pub mailbox: Option<Mailbox>,
    pub completions: Vec<CompletionRecord>,
    pub rounds_completed: u32,
    pub model_resident: bool,
    pub ppi_budget: Option<u32>,
    pub ppi_used: u32,
    pub abort: Option<AbortReason>,
    pub hbm_digest: String,
}

pub struct NpuDevice {
    config: DeviceConfig,
    hsm: Hsm,
    hbm: Hbm,
    smmu: Smmu,
    regions: RegionTable,
    phase: Phase,
    step: Option<Step>,
    lock_targets: Vec<RegionKind>,
    taskq_tail: u64,
    mailbox: Option<Mailbox>,
    tasks: Vec<TaskDescriptor>,
    execute_task: Option<TaskDescriptor>,
    /// Opened binaries awaiting commit: `(pc, sealed_len, plaintext)`.
    staged_binaries: Vec<(u64, u64, Vec<u8>)>,
    completions: Vec<CompletionRecord>,
    cq_cursor: usize,
    rounds_completed: u32,
    model_resident: bool,
    policy: Option<ModelPolicy>,
    ppi_used: u32,
    abort: Option<AbortReason>,
    trace: ExecutionTrace,
}

impl NpuDevice {
    fn from_parts(hsm: Hsm, config: DeviceConfig) -> Self {
        Self {
            hbm: Hbm::new(config.hbm_size),
            smmu: Smmu::new(config.hbm_size),
            config,
            hsm,
            regions: RegionTable::default(),
            phase: Phase::Idle,
            step: None,
            lock_targets: Vec::new(),
            taskq_tail: 0,
            mailbox: None,
            tasks: Vec::new(),
            execute_task: None,
            staged_binaries: Vec::new(),
            completions: Vec::new(),
            cq_cursor: 0,
            rounds_completed: 0,
            model_resident: false,
            policy: None,
            ppi_used: 0,
            abort: None,
            trace: ExecutionTrace::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_busy(&self) -> bool {
        self.step.is_some()
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn regions(&self) -> &RegionTable {
        &self.regions
    }

    pub fn abort_reason(&self) -> Option<&AbortReason> {
        self.abort.as_ref()
    }

    pub fn identity(&self) -> Option<DeviceIdentity> {
        self.hsm.identity()
    }

    pub fn vendor_key(&self) -> crate::crypto::VerifyingKey {
        self.hsm.vendor
    }

    pub fn status(&self) -> DeviceStatus {
        DeviceStatus {
            phase: self.phase,
            rounds_completed: self.rounds_completed,
            busy: self.is_busy(),
            abort: self.abort.clone(),
        }
    }

    pub fn snapshot(&self) -> DeviceSnapshot {
        DeviceSnapshot {
            phase: self.phase,
            measurement: self.hsm.alias.as_ref().map(|a| a.measurement),
            regions: self.regions.clone(),
            unmapped_pages: self.smmu.unmapped_pages(),
            taskq_tail: self.taskq_tail,
            mailbox: self.mailbox.clone(),
            completions: self.completions.clone(),
            rounds_completed: self.rounds_completed,
            model_resident: self.model_resident,
            ppi_budget: self.policy.and_then(|p| p.ppi_budget),
            ppi_used: self.ppi_used,
            abort: self.abort.clone(),
            hbm_digest: hex::encode(Sha256::digest(self.hbm.read(0, self.hbm.size()))),
        }
    }

    /// Key bytes held by the HSM. Audit hook for confinement tests; nothing
    /// on the host path can reach it.
    pub fn audit_key_material(&self) -> Vec<Vec<u8>> {
        self.hsm.key_material()
    }

    /// Whether `needle` occurs anywhere in HBM. Audit hook.
    pub fn audit_memory_contains(&self, needle: &[u8]) -> bool {
        !needle.is_empty() && self.hbm.read(0, self.hbm.size()).windows(needle.len()).any(|w| w == needle)
    }

    pub fn measured_boot(&mut self, image: &[u8], signature: &VendorSignature) -> Result<DeviceIdentity, DeviceError> {
        if self.hsm.alias.is_some() {
            return Err(DeviceError::AlreadyBooted);
        }
        match self.hsm.boot(image, signature) {
            Some(id) => {
                self.record(TraceEntry::new(Actor::ControlCpu, Event::Boot).detail(id.measurement.to_hex()));
                Ok(id)
            }
            None => {
                self.record(TraceEntry::new(Actor::ControlCpu, Event::Boot).status(Status::Rejected));
                Err(DeviceError::BootRejected)
            }
        }
    }

    fn record(&mut self, entry: TraceEntry) {
        self.trace.push(entry);
    }

    fn require_booted(&self) -> Result<(), DeviceError> {
        if self.hsm.alias.is_some() {
            Ok(())
        } else {
            Err(DeviceError::NotBooted)
        }
    }

    fn invalid(&self, command: &'static str) -> DeviceError {
        DeviceError::InvalidPhase { command, phase: self.phase }
    }

    fn running_idle(&self) -> bool {
        self.phase == Phase::Running && self.step.is_none()
    }

    fn complete(&mut self, task_id: u32, ok: bool, detail: u32) {
        let status = if ok { CqStatus::Ok } else { CqStatus::Failed };
        self.completions.push(CompletionRecord { task_id, status, detail });
    }

    fn set_state(&mut self, kind: RegionKind, state: LifecycleState) {
        if let Some(r) = self.regions.get_mut(kind) {
            debug_assert!(r.state == state || r.state.can_move_to(state), "{:?}: {:?} -> {state:?}", kind, r.state);
            r.state = state;
        }
    }

    fn region(&self, kind: RegionKind) -> &Region {
        self.regions.get(kind).expect("region presence is checked before a round starts")
    }

    fn region_entry(&self, actor: Actor, event: Event, kind: RegionKind) -> TraceEntry {
        let r = self.region(kind);
        TraceEntry::new(actor, event).region(kind).pages(r.pages())
    }

    fn abort(&mut self, reason: AbortReason) {
        self.record(TraceEntry::new(Actor::Scheduler, Event::Abort).status(Status::Failed).detail(reason.to_string()));
        if let Some(e) = &self.execute_task {
            let id = e.task_id;
            self.complete(id, false, reason.code());
        }
        self.staged_binaries.clear();
        self.abort = Some(reason);
        self.phase = Phase::Aborted;
        self.step = None;
    }

    // ---- host commands -------------------------------------------------

    fn key_exchange(&mut self, bytes: &[u8]) -> Result<Vec<u8>, KexError> {
        let (alias_key, measurement) = match &self.hsm.alias {
            Some(a) => (a.key.clone(), a.measurement),
            None => return Err(KexError::NotBooted),
        };
        let Ok(Message::KexInit(init)) = Message::decode(bytes) else {
            return Err(KexError::Malformed);
        };
        let KexInit { role, ephemeral, provider_key, provider_cert, init_sig } = init;
        if !verify(&self.hsm.vendor, &provider_cert_message(role, &provider_key), &provider_cert) {
            return Err(KexError::UntrustedProvider);
        }
        if !verify(&provider_key, &KexInit::signed_message(role, &ephemeral), &init_sig) {
            return Err(KexError::BadSignature);
        }
        let pair = dh_keygen(&mut self.hsm.rng);
        let shared = dh_derive(&pair, &ephemeral).map_err(|_| KexError::InvalidGroupElement)?;
        let session = derive_key(&shared, &measurement, role.key_context());
        self.hsm.sessions.insert(role, session);
        let id = self.hsm.identity().expect("booted");
        let transcript = KexReply::transcript(role, &ephemeral, &pair.public(), &measurement);
        Ok(Message::KexReply(KexReply {
            ephemeral: pair.public(),
            measurement,
            alias_key: id.alias_key,
            alias_cert: id.alias_cert,
            root_key: id.root_key,
            device_cert: id.device_cert,
            transcript_sig: sign(&alias_key, &transcript),
        })
        .encode())
    }

    fn alloc_region(&mut self, kind: RegionKind, base: u64, len: u64) -> Result<(), DeviceError> {
        self.require_booted()?;
        if !matches!(self.phase, Phase::Idle | Phase::Loaded) {
            return Err(self.invalid("alloc_region"));
        }
        let bad = |why: &str| DeviceError::BadRegion(format!("{kind:?}: {why}"));
        if len == 0 || !base.is_multiple_of(PAGE_SIZE) || !len.is_multiple_of(PAGE_SIZE) {
            return Err(bad("base and length must be non-zero page multiples"));
        }
        if !self.hbm.in_bounds(base, len) {
            return Err(bad("outside HBM"));
        }
        if self.regions.get(kind).is_some() {
            return Err(bad("already allocated"));
        }
        if self.regions.overlaps(base, len) {
            return Err(bad("overlaps another region"));
        }
        let region = Region { kind, base, len, state: LifecycleState::INITIAL };
        let direction = Region::host_direction(kind);
        self.smmu.map(region.pages(), direction);
        self.record(
            TraceEntry::new(Actor::Host, Event::AllocRegion)
                .region(kind)
                .pages(region.pages())
                .direction(direction)
                .lifecycle(region.state),
        );
        self.regions.insert(region);
        self.phase = Phase::Loaded;
        Ok(())
    }

    fn dma_check(&self, addr: u64, len: u64, write: bool) -> Result<(), DeviceError> {
        let access = if write { "write" } else { "read" };
        if !self.hbm.in_bounds(addr, len) {
            return Err(DeviceError::SmmuFault { page: page_of(addr), access });
        }
        self.smmu.check(addr, len, write).map_err(|f| DeviceError::SmmuFault { page: f.page, access })
    }

    fn touched_region(&self, addr: u64, len: u64) -> Option<RegionKind> {
        let range = PageRange::covering(addr, len.max(1));
        self.regions.iter().find(|r| r.pages().overlaps(&range)).map(|r| r.kind)
    }

    fn dma_write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), DeviceError> {
        let len = bytes.len() as u64;
        let range = PageRange::covering(addr, len);
        let mut entry = TraceEntry::new(Actor::Host, Event::DmaWrite).pages(range).digest_of(bytes);
        if let Some(kind) = self.touched_region(addr, len) {
            entry = entry.region(kind);
        }
        if let Some(d) = self.smmu.direction(page_of(addr)) {
            entry = entry.direction(d);
        }
        if let Err(e) = self.dma_check(addr, len, true) {
            self.record(entry.status(Status::Fault).detail(e.to_string()));
            return Err(e);
        }
        self.hbm.write(addr, bytes);
        if let Some(kind) = entry.region {
            if self.region(kind).state == LifecycleState::MappedZeroed {
                self.set_state(kind, LifecycleState::MappedEncrypted);
                entry = entry.lifecycle(LifecycleState::MappedEncrypted);
            }
        }
        self.record(entry);
        Ok(())
    }

    fn dma_read(&mut self, addr: u64, len: u64) -> Result<Vec<u8>, DeviceError> {
        let mut entry = TraceEntry::new(Actor::Host, Event::DmaRead).pages(PageRange::covering(addr, len));
        if let Some(kind) = self.touched_region(addr, len) {
            entry = entry.region(kind);
        }
        if let Some(d) = self.smmu.direction(page_of(addr)) {
            entry = entry.direction(d);
        }
        if let Err(e) = self.dma_check(addr, len, false) {
            self.record(entry.status(Status::Fault).detail(e.to_string()));
            return Err(e);
        }
        let bytes = self.hbm.read(addr, len).to_vec();
        self.record(entry.observed(&bytes));
        Ok(bytes)
    }

    fn push_task(&mut self, task: &TaskDescriptor) -> Result<(), DeviceError> {
        let Some(q) = self.regions.get(RegionKind::TaskQ) else {
            return Err(DeviceError::NoTaskQueue);
        };
        if self.taskq_tail + TASK_RECORD_LEN as u64 > q.len {
            return Err(DeviceError::QueueFull);
        }
        let at = q.base + self.taskq_tail;
        let bytes = task.to_bytes();
        self.hbm.write(at, &bytes);
        self.taskq_tail += TASK_RECORD_LEN as u64;
        let entry = TraceEntry::new(Actor::Host, Event::SubmitTask)
            .region(RegionKind::TaskQ)
            .pages(PageRange::covering(at, TASK_RECORD_LEN as u64))
            .digest_of(&bytes)
            .detail(format!("task {} {:?}", task.task_id, task.kind));
        self.record(entry);
        Ok(())
    }

    fn submit_task(&mut self, task: TaskDescriptor) -> Result<(), DeviceError> {
        if !matches!(self.phase, Phase::Idle | Phase::Loaded) {
            self.record(TraceEntry::new(Actor::Host, Event::SubmitTask).status(Status::Rejected).detail("queue locked"));
            return Err(DeviceError::QueueLocked);
        }
        if !task.kind.is_compute() {
            return Err(DeviceError::BadTask);
        }
        self.push_task(&task)
    }

    fn write_mailbox(&mut self, mailbox: Mailbox) -> Result<(), DeviceError> {
        if !(self.phase == Phase::Loaded || self.running_idle()) {
            return Err(self.invalid("write_mailbox"));
        }
        self.record(TraceEntry::new(Actor::Host, Event::MailboxWrite).digest_of(&mailbox.to_bytes()));
        self.mailbox = Some(mailbox);
        Ok(())
    }

    fn execute_model(&mut self, p1: AuthTag) -> Result<(), DeviceError> {
        self.require_booted()?;
        if self.phase != Phase::Loaded {
            return Err(self.invalid("execute_model"));
        }
        if let Some(missing) = RegionKind::ALL.iter().find(|k| self.regions.get(**k).is_none()) {
            return Err(DeviceError::BadRegion(format!("{missing:?} not allocated")));
        }
        let id = self.taskq_tail as u32 / TASK_RECORD_LEN as u32;
        let task = TaskDescriptor::execute_model(id, &p1);
        self.push_task(&task)?;
        self.execute_task = Some(task);
        self.record(TraceEntry::new(Actor::Host, Event::ExecuteModel).detail(format!("task {id}")));
        self.lock_targets = RegionKind::ALL.to_vec();
        self.phase = Phase::Locking;
        self.step = Some(Step::Unmap);
        Ok(())
    }

    fn continue_round(&mut self) -> Result<(), DeviceError> {
        if !self.running_idle() || !self.model_resident || self.mailbox.is_none() {
            return Err(self.invalid("continue_round"));
        }
        let input = self.region(RegionKind::Input).state;
        if !matches!(input, LifecycleState::MappedEncrypted | LifecycleState::MappedZeroed) {
            return Err(self.invalid("continue_round"));
        }
        self.record(TraceEntry::new(Actor::Host, Event::ContinueRound).detail(format!("round {}", self.rounds_completed)));
        self.lock_targets = vec![RegionKind::Input, RegionKind::Output];
        self.phase = Phase::Locking;
        self.step = Some(Step::Unmap);
        Ok(())
    }

    fn next_input(&mut self) -> Result<(), DeviceError> {
        if !self.running_idle() || self.rounds_completed == 0 {
            return Err(self.invalid("next_input"));
        }
        if self.region(RegionKind::Input).state != LifecycleState::UnmappedPlain {
            return Err(self.invalid("next_input"));
        }
        self.record(TraceEntry::new(Actor::Host, Event::NextInput));
        let (base, len, pages) = {
            let r = self.region(RegionKind::Input);
            (r.base, r.len, r.pages())
        };
        self.hbm.zero(base, len);
        self.record(self.region_entry(Actor::AiCpu, Event::Zeroize, RegionKind::Input));
        self.complete(operator_ids::ZEROIZE, true, 0);
        self.smmu.map(pages, DmaDirection::ToDevice);
        self.set_state(RegionKind::Input, LifecycleState::MappedZeroed);
        let entry = self
            .region_entry(Actor::MemoryManager, Event::Remap, RegionKind::Input)
            .direction(DmaDirection::ToDevice)
            .lifecycle(LifecycleState::MappedZeroed);
        self.record(entry);
        Ok(())
    }

    fn interrupt(&mut self) {
        match self.phase {
            Phase::Locking | Phase::Attesting => {
                self.record(TraceEntry::new(Actor::Host, Event::Interrupt).detail("lock window"));
                self.abort(AbortReason::Interrupted);
            }
            Phase::EncryptOut => {
                self.record(
                    TraceEntry::new(Actor::Host, Event::Interrupt).status(Status::Deferred).detail("sealing in progress"),
                );
            }
            _ => self.record(TraceEntry::new(Actor::Host, Event::Interrupt).detail("ignored")),
        }
    }

    fn clean(&mut self) -> Result<(), DeviceError> {
        if !(matches!(self.phase, Phase::Loaded | Phase::Aborted) || self.running_idle()) {
            return Err(self.invalid("clean"));
        }
        self.record(TraceEntry::new(Actor::Host, Event::Clean));
        self.phase = Phase::Cleaning;
        self.step = Some(Step::Zeroize);
        Ok(())
    }

    fn poll(&mut self) -> Vec<CompletionRecord> {
        let fresh = self.completions[self.cq_cursor..].to_vec();
        self.cq_cursor = self.completions.len();
        let bytes: Vec<u8> = fresh.iter().flat_map(|c| c.to_bytes()).collect();
        self.record(TraceEntry::new(Actor::Host, Event::PollCompletions).observed(&bytes));
        fresh
    }

    // ---- device-side steps ---------------------------------------------

    /// Runs one pending step. Returns false when there was nothing to do.
    pub fn advance(&mut self) -> bool {
        let Some(step) = self.step else {
            return false;
        };
        match step {
            Step::Unmap => self.step_unmap(),
            Step::UnmapAck => self.step_unmap_ack(),
            Step::AttestPc => self.step_attest_pc(),
            Step::AttestBinaries => self.step_attest_binaries(),
            Step::Decrypt => self.step_decrypt(),
            Step::RunTask(i) => self.step_run_task(i),
            Step::SealOutput => self.step_seal_output(),
            Step::RemapOutput => self.step_remap_output(),
            Step::Zeroize => self.step_zeroize(),
            Step::Release => self.step_release(),
        }
        true
    }

    /// Logs bytes the host relayed between parties, so leakage searches
    /// cover them. The device does not interpret them.
    pub fn log_relay(&mut self, bytes: &[u8], detail: &str) {
        self.record(TraceEntry::new(Actor::Host, Event::Relay).observed(bytes).detail(detail));
    }

    /// Advances until the device is idle again.
    pub fn run_until_idle(&mut self) {
        while self.advance() {}
    }

    fn step_unmap(&mut self) {
        if self.config.inject_unmap_failure {
            self.record(
                TraceEntry::new(Actor::MemoryManager, Event::Unmap).status(Status::Failed).detail("unmap refused"),
            );
            self.abort(AbortReason::LockFailure);
            return;
        }
        for kind in self.lock_targets.clone() {
            let pages = self.region(kind).pages();
            self.smmu.unmap(pages);
            self.set_state(kind, LifecycleState::UnmappedEncrypted);
            let entry = self
                .region_entry(Actor::MemoryManager, Event::Unmap, kind)
                .lifecycle(LifecycleState::UnmappedEncrypted);
            self.record(entry);
        }
        self.step = Some(Step::UnmapAck);
    }

    fn step_unmap_ack(&mut self) {
        self.record(TraceEntry::new(Actor::MemoryManager, Event::UnmapAck));
        if self.model_resident {
            self.phase = Phase::Decrypting;
            self.step = Some(Step::Decrypt);
        } else {
            self.phase = Phase::Attesting;
            self.step = Some(Step::AttestPc);
        }
    }

    fn read_task_queue(&self) -> Option<(Vec<TaskDescriptor>, TaskDescriptor)> {
        let q = self.region(RegionKind::TaskQ);
        let raw = self.hbm.read(q.base, self.taskq_tail);
        let mut records = raw
            .chunks_exact(TASK_RECORD_LEN)
            .map(|c| TaskDescriptor::from_bytes(c.try_into().unwrap()).ok())
            .collect::<Option<Vec<_>>>()?;
        let last = records.pop()?;
        if last.kind != TaskKind::ExecuteModel || records.iter().any(|t| !t.kind.is_compute()) {
            return None;
        }
        Some((records, last))
    }

    fn step_attest_pc(&mut self) {
        if self.hsm.session(Role::Data).is_none() || self.hsm.session(Role::Model).is_none() {
            return self.abort(AbortReason::MissingSessionKeys);
        }
        let Some((tasks, exec)) = self.read_task_queue() else {
            return self.abort(AbortReason::MalformedTaskQueue);
        };
        self.execute_task = Some(exec.clone());
        let pcs: Vec<u64> = tasks.iter().map(|t| t.pc_start).collect();
        let expected = pc_commitment(self.hsm.session(Role::Data).unwrap(), &pcs);
        if !expected.verify(&AuthTag::from_bytes(exec.payload)) {
            self.record(TraceEntry::new(Actor::Scheduler, Event::AttestPc).status(Status::Failed));
            return self.abort(AbortReason::PcCommitmentMismatch);
        }
        self.record(TraceEntry::new(Actor::Scheduler, Event::AttestPc).detail(format!("{} tasks", tasks.len())));
        self.tasks = tasks;
        self.step = Some(Step::AttestBinaries);
    }

    fn step_attest_binaries(&mut self) {
        let Some(mb) = self.mailbox.clone() else {
            return self.abort(AbortReason::MailboxMissing);
        };
        let kd = self.hsm.session(Role::Data).unwrap().clone();
        let km = self.hsm.session(Role::Model).unwrap().clone();
        let exec_p1 = AuthTag::from_bytes(self.execute_task.as_ref().unwrap().payload);
        let fail = |this: &mut Self, reason| {
            this.record(this.region_entry(Actor::AiCpu, Event::AttestBinaries, RegionKind::ModelBinaries).status(Status::Failed));
            this.complete(operator_ids::ATTEST, false, 0);
            this.abort(reason);
        };
        if !mb.p1.verify(&exec_p1) || !pc_commitment(&kd, &mb.pcs).verify(&mb.p1) || mb.pcs.len() != mb.binary_lens.len()
        {
            return fail(self, AbortReason::MailboxMismatch);
        }
        let bins = self.region(RegionKind::ModelBinaries).clone();
        let mut staged = Vec::with_capacity(mb.pcs.len());
        for (index, (&pc, &len)) in mb.pcs.iter().zip(&mb.binary_lens).enumerate() {
            if !bins.contains(pc, len) {
                return fail(self, AbortReason::BinaryOutOfRegion { index });
            }
            let opened = SealedBlob::from_bytes(self.hbm.read(pc, len))
                .ok()
                .and_then(|b| b.open(&km, BlobKind::Binary, index as u32).ok());
            match opened {
                Some(pt) => staged.push((pc, len, pt)),
                None => return fail(self, AbortReason::BinaryAuthFailure { index }),
            }
        }
        let chain = chain_commitment(&km, staged.iter().map(|(_, _, pt)| pt.as_slice()));
        if !chain_binding(&kd, &chain).verify(&mb.p2) {
            return fail(self, AbortReason::ChainCommitmentMismatch);
        }
        let entry = self
            .region_entry(Actor::AiCpu, Event::AttestBinaries, RegionKind::ModelBinaries)
            .detail(format!("{} binaries", staged.len()));
        self.record(entry);
        self.complete(operator_ids::ATTEST, true, 0);
        self.staged_binaries = staged;
        self.phase = Phase::Decrypting;
        self.step = Some(Step::Decrypt);
    }

    fn open_at(&self, kind: RegionKind, offset: u64, len: u64, key_role: Role, blob: BlobKind, index: u32) -> Option<Vec<u8>> {
        let r = self.region(kind);
        if offset.checked_add(len).is_none_or(|e| e > r.len) {
            return None;
        }
        let key = self.hsm.session(key_role)?;
        SealedBlob::from_bytes(self.hbm.read(r.base + offset, len)).ok()?.open(key, blob, index).ok()
    }

    fn step_decrypt(&mut self) {
        let mb = self.mailbox.clone().expect("mailbox checked at attestation or continue");
        let first = !self.model_resident;
        let round = self.rounds_completed;
        let fail = |this: &mut Self, reason| {
            this.complete(operator_ids::DECRYPT, false, 0);
            this.abort(reason);
        };

        let params_len = self.region(RegionKind::ModelParams).len;
        let out_len = self.region(RegionKind::Output).len;
        if mb.output_len + SEAL_OVERHEAD as u64 > out_len
            || (first && mb.weights_len.saturating_add(mb.policy_len) > params_len)
        {
            return fail(self, AbortReason::ManifestOutOfBounds);
        }
        let mut model_plain = None;
        if first {
            let Some(weights) = self.open_at(RegionKind::ModelParams, 0, mb.weights_len, Role::Model, BlobKind::Weights, 0)
            else {
                return fail(self, AbortReason::WeightsAuthFailure);
            };
            let policy = self
                .open_at(RegionKind::ModelParams, mb.weights_len, mb.policy_len, Role::Model, BlobKind::Policy, 0)
                .and_then(|p| ModelPolicy::from_bytes(&p).ok());
            let Some(policy) = policy else {
                return fail(self, AbortReason::PolicyAuthFailure);
            };
            model_plain = Some((weights, policy));
        }
        let Some(input) = self.open_at(RegionKind::Input, 0, mb.input_len, Role::Data, BlobKind::Input, round) else {
            return fail(self, AbortReason::InputAuthFailure);
        };

        let policy = model_plain.as_ref().map(|(_, p)| *p).or(self.policy).unwrap_or_default();
        if let Some(budget) = policy.ppi_budget {
            let failure = if self.ppi_used >= budget {
                Some(PpiFailure::BudgetExhausted)
            } else if let Some((tag1, t1)) = &mb.ppi {
                let kd = self.hsm.session(Role::Data).unwrap();
                let km = self.hsm.session(Role::Model).unwrap();
                (!verify_ppi(kd, km, &input, tag1, t1)).then_some(PpiFailure::InvalidTokens)
            } else {
                Some(PpiFailure::MissingTokens)
            };
            if let Some(failure) = failure {
                self.record(
                    TraceEntry::new(Actor::AiCpu, Event::PpiVerify).status(Status::Rejected).detail(format!("{failure:?}")),
                );
                return fail(self, AbortReason::PpiReject { failure });
            }
            self.ppi_used += 1;
            self.record(
                TraceEntry::new(Actor::AiCpu, Event::PpiVerify).detail(format!("{} remaining", budget - self.ppi_used)),
            );
        }

        // Every check passed; commit plaintexts in place.
        if let Some((weights, policy)) = model_plain {
            for (pc, len, pt) in std::mem::take(&mut self.staged_binaries) {
                self.hbm.zero(pc, len);
                self.hbm.write(pc, &pt);
            }
            self.set_state(RegionKind::ModelBinaries, LifecycleState::UnmappedPlain);
            let e = self
                .region_entry(Actor::AiCpu, Event::BinaryDecrypt, RegionKind::ModelBinaries)
                .lifecycle(LifecycleState::UnmappedPlain);
            self.record(e);
            let base = self.region(RegionKind::ModelParams).base;
            self.hbm.zero(base, mb.weights_len + mb.policy_len);
            self.hbm.write(base, &weights);
            self.set_state(RegionKind::ModelParams, LifecycleState::UnmappedPlain);
            let e = self
                .region_entry(Actor::AiCpu, Event::ModelDecrypt, RegionKind::ModelParams)
                .lifecycle(LifecycleState::UnmappedPlain);
            self.record(e);
            self.set_state(RegionKind::Workspace, LifecycleState::UnmappedPlain);
            let e = self
                .region_entry(Actor::AiCpu, Event::Lifecycle, RegionKind::Workspace)
                .lifecycle(LifecycleState::UnmappedPlain);
            self.record(e);
            self.policy = Some(policy);
            self.model_resident = true;
        }
        let (in_base, in_len) = (self.region(RegionKind::Input).base, self.region(RegionKind::Input).len);
        self.hbm.zero(in_base, in_len);
        self.hbm.write(in_base, &input);
        self.set_state(RegionKind::Input, LifecycleState::UnmappedPlain);
        let e = self
            .region_entry(Actor::AiCpu, Event::InputDecrypt, RegionKind::Input)
            .lifecycle(LifecycleState::UnmappedPlain)
            .detail(format!("round {round}"));
        self.record(e);
        let (out_base, out_len) = (self.region(RegionKind::Output).base, self.region(RegionKind::Output).len);
        self.hbm.zero(out_base, out_len);
        self.set_state(RegionKind::Output, LifecycleState::UnmappedPlain);
        let e = self
            .region_entry(Actor::AiCpu, Event::Lifecycle, RegionKind::Output)
            .lifecycle(LifecycleState::UnmappedPlain);
        self.record(e);
        self.complete(operator_ids::DECRYPT, true, 0);
        self.phase = Phase::Running;
        self.step = Some(if self.tasks.is_empty() { Step::SealOutput } else { Step::RunTask(0) });
        if self.tasks.is_empty() {
            self.phase = Phase::EncryptOut;
        }
    }

    fn step_run_task(&mut self, i: usize) {
        let task = self.tasks[i].clone();
        match vm::execute(&mut self.hbm, &self.regions, task.pc_start, &task.arg_ptrs) {
            Ok(ops) => {
                let names: Vec<String> = ops.iter().map(|o| format!("{o:?}").to_uppercase()).collect();
                self.record(
                    TraceEntry::new(Actor::AiCore, Event::Kernel).detail(format!("task {}: {}", task.task_id, names.join(","))),
                );
                self.complete(task.task_id, true, 0);
            }
            Err(fault) => {
                self.record(TraceEntry::new(Actor::AiCore, Event::Kernel).status(Status::Failed));
                self.complete(task.task_id, false, AbortReason::VmFault { task_id: 0, fault: fault.clone() }.code());
                return self.abort(AbortReason::VmFault { task_id: task.task_id, fault });
            }
        }
        if i + 1 < self.tasks.len() {
            self.step = Some(Step::RunTask(i + 1));
        } else {
            self.phase = Phase::EncryptOut;
            self.step = Some(Step::SealOutput);
        }
    }

    fn step_seal_output(&mut self) {
        let out_len = self.mailbox.as_ref().unwrap().output_len;
        let r = self.region(RegionKind::Output).clone();
        let plain = self.hbm.read(r.base, out_len).to_vec();
        let nonce = self.hsm.output_nonces.next(BlobKind::Output);
        let key = self.hsm.session(Role::Data).unwrap();
        let blob = SealedBlob::seal(key, nonce, BlobKind::Output, self.rounds_completed, &plain).to_bytes();
        self.hbm.zero(r.base, r.len);
        self.hbm.write(r.base, &blob);
        let e = self.region_entry(Actor::AiCpu, Event::Encrypt, RegionKind::Output).detail(format!("{} bytes", blob.len()));
        self.record(e);
        self.complete(operator_ids::ENCRYPT, true, 0);
        self.step = Some(Step::RemapOutput);
    }

    fn step_remap_output(&mut self) {
        let pages = self.region(RegionKind::Output).pages();
        self.smmu.map(pages, DmaDirection::FromDevice);
        self.set_state(RegionKind::Output, LifecycleState::MappedCipherOut);
        let e = self
            .region_entry(Actor::MemoryManager, Event::Remap, RegionKind::Output)
            .direction(DmaDirection::FromDevice)
            .lifecycle(LifecycleState::MappedCipherOut);
        self.record(e);
        if let Some(id) = self.execute_task.as_ref().map(|t| t.task_id) {
            self.complete(id, true, self.rounds_completed);
        }
        self.rounds_completed += 1;
        self.phase = Phase::Running;
        self.step = None;
    }

    fn step_zeroize(&mut self) {
        let kinds: Vec<RegionKind> = self.regions.iter().map(|r| r.kind).collect();
        for kind in kinds {
            let (base, len) = (self.region(kind).base, self.region(kind).len);
            self.hbm.zero(base, len);
            let e = self.region_entry(Actor::AiCpu, Event::Zeroize, kind);
            self.record(e);
        }
        self.staged_binaries.clear();
        self.complete(operator_ids::ZEROIZE, true, 0);
        self.step = Some(Step::Release);
    }

    fn step_release(&mut self) {
        let regions: Vec<Region> = self.regions.iter().cloned().collect();
        for r in regions {
            self.smmu.map(r.pages(), DmaDirection::Bidirectional);
            self.set_state(r.kind, LifecycleState::MappedZeroed);
            self.record(
                TraceEntry::new(Actor::MemoryManager, Event::Release)
                    .region(r.kind)
                    .pages(r.pages())
                    .direction(DmaDirection::Bidirectional)
                    .lifecycle(LifecycleState::MappedZeroed),
            );
        }
        self.regions.clear();
        self.taskq_tail = 0;
        self.mailbox = None;
        self.tasks.clear();
        self.execute_task = None;
        self.rounds_completed = 0;
        self.model_resident = false;
        self.policy = None;
        self.ppi_used = 0;
        self.abort = None;
        self.phase = Phase::Idle;
        self.step = None;
    }
}

impl CommandPort for NpuDevice {
    fn submit(&mut self, command: DeviceCommand) -> Result<DeviceResponse, DeviceError> {
        use DeviceCommand as C;
        Ok(match command {
            C::Boot { image, signature } => DeviceResponse::Identity(self.measured_boot(&image, &signature)?),
            C::KeyExchange(bytes) => {
                if !matches!(self.phase, Phase::Idle | Phase::Loaded) {
                    return Err(self.invalid("key_exchange"));
                }
                match self.key_exchange(&bytes) {
                    Ok(reply) => {
                        self.record(TraceEntry::new(Actor::ControlCpu, Event::KeyExchange).observed(&reply));
                        DeviceResponse::Kex(reply)
                    }
                    Err(e) => {
                        self.record(
                            TraceEntry::new(Actor::ControlCpu, Event::KeyExchange).status(Status::Rejected).detail(e.to_string()),
                        );
                        return Err(e.into());
                    }
                }
            }
            C::AllocRegion { kind, base, len } => {
                self.alloc_region(kind, base, len)?;
                DeviceResponse::Ok
            }
            C::DmaWrite { addr, bytes } => {
                self.dma_write(addr, &bytes)?;
                DeviceResponse::Ok
            }
            C::DmaRead { addr, len } => DeviceResponse::Bytes(self.dma_read(addr, len)?),
            C::SubmitTask(task) => {
                self.submit_task(task)?;
                DeviceResponse::Ok
            }
            C::WriteMailbox(mb) => {
                self.write_mailbox(mb)?;
                DeviceResponse::Ok
            }
            C::ExecuteModel { p1 } => {
                self.execute_model(p1)?;
                DeviceResponse::Ok
            }
            C::ContinueRound => {
                self.continue_round()?;
                DeviceResponse::Ok
            }
            C::NextInput => {
                self.next_input()?;
                DeviceResponse::Ok
            }
            C::Interrupt => {
                self.interrupt();
                DeviceResponse::Ok
            }
            C::Clean => {
                self.clean()?;
                DeviceResponse::Ok
            }
            C::Debug(op) => {
                self.record(
                    TraceEntry::new(Actor::ControlCpu, Event::Debug).status(Status::Rejected).detail(format!("{op:?}")),
                );
                return Err(DeviceError::DebugRejected);
            }
            C::PollCompletions => DeviceResponse::Completions(self.poll()),
            C::Status => DeviceResponse::Status(self.status()),
            C::Advance => DeviceResponse::Stepped(self.advance()),
        })
    }
}
