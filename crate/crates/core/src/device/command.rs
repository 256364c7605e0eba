//! The device's command interface: what the untrusted host may ask for and
//! what it gets back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::boot::DeviceIdentity;
use super::task::{CompletionRecord, TaskDescriptor};
use super::vm::VmFault;
use crate::crypto::{AuthTag, VendorSignature};
use crate::layout::RegionKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Idle,
    Loaded,
    Locking,
    Attesting,
    Decrypting,
    Running,
    EncryptOut,
    Cleaning,
    Aborted,
}

/// Host-supplied description of what is where. None of it is trusted: every
/// field is either covered by a commitment or bounds-checked.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mailbox {
    pub p1: AuthTag,
    pub p2: AuthTag,
    pub pcs: Vec<u64>,
    /// Sealed length of the binary at each PC.
    pub binary_lens: Vec<u64>,
    pub weights_len: u64,
    pub policy_len: u64,
    pub input_len: u64,
    /// Plaintext output length.
    pub output_len: u64,
    /// `(Tag₁, T₁)` when the model carries an inference budget.
    pub ppi: Option<(AuthTag, AuthTag)>,
}

impl Mailbox {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("mailbox serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DebugOp {
    MemoryInspect { addr: u64, len: u64 },
    ProfilerStart,
    Unknown(u32),
}

#[derive(Clone, Debug)]
pub enum DeviceCommand {
    Boot { image: Vec<u8>, signature: VendorSignature },
    KeyExchange(Vec<u8>),
    AllocRegion { kind: RegionKind, base: u64, len: u64 },
    DmaWrite { addr: u64, bytes: Vec<u8> },
    DmaRead { addr: u64, len: u64 },
    SubmitTask(TaskDescriptor),
    WriteMailbox(Mailbox),
    ExecuteModel { p1: AuthTag },
    ContinueRound,
    NextInput,
    Interrupt,
    Clean,
    Debug(DebugOp),
    PollCompletions,
    Status,
    /// Lets the device make one step of progress.
    Advance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub phase: Phase,
    pub rounds_completed: u32,
    pub busy: bool,
    pub abort: Option<AbortReason>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeviceResponse {
    Ok,
    Identity(DeviceIdentity),
    Bytes(Vec<u8>),
    Kex(Vec<u8>),
    Completions(Vec<CompletionRecord>),
    Status(DeviceStatus),
    /// Whether `Advance` did anything.
    Stepped(bool),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PpiFailure {
    BudgetExhausted,
    MissingTokens,
    InvalidTokens,
}

/// Why the device abandoned a round.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", tag = "reason")]
pub enum AbortReason {
    #[error("SMMU refused to unmap the model regions")]
    LockFailure,
    #[error("interrupted before the memory lock was acknowledged")]
    Interrupted,
    #[error("session keys missing")]
    MissingSessionKeys,
    #[error("malformed task queue")]
    MalformedTaskQueue,
    #[error("mailbox missing")]
    MailboxMissing,
    #[error("mailbox PC list does not match its commitment")]
    MailboxMismatch,
    #[error("task PC list does not match P1")]
    PcCommitmentMismatch,
    #[error("binary {index} lies outside MODEL_BINARIES")]
    BinaryOutOfRegion { index: usize },
    #[error("binary {index} failed authentication")]
    BinaryAuthFailure { index: usize },
    #[error("binary chain does not match P2")]
    ChainCommitmentMismatch,
    #[error("model weights failed authentication")]
    WeightsAuthFailure,
    #[error("model policy failed authentication")]
    PolicyAuthFailure,
    #[error("input failed authentication")]
    InputAuthFailure,
    #[error("manifest lengths exceed their regions")]
    ManifestOutOfBounds,
    #[error("pay-per-inference check failed: {failure:?}")]
    PpiReject { failure: PpiFailure },
    #[error("task {task_id} faulted: {fault}")]
    VmFault { task_id: u32, fault: VmFault },
}

impl AbortReason {
    /// Numeric code reported in completion records.
    pub fn code(&self) -> u32 {
        match self {
            AbortReason::LockFailure => 1,
            AbortReason::Interrupted => 2,
            AbortReason::MissingSessionKeys => 3,
            AbortReason::MalformedTaskQueue => 4,
            AbortReason::MailboxMissing => 5,
            AbortReason::MailboxMismatch => 6,
            AbortReason::PcCommitmentMismatch => 7,
            AbortReason::BinaryOutOfRegion { .. } => 8,
            AbortReason::BinaryAuthFailure { .. } => 9,
            AbortReason::ChainCommitmentMismatch => 10,
            AbortReason::WeightsAuthFailure => 11,
            AbortReason::PolicyAuthFailure => 12,
            AbortReason::InputAuthFailure => 13,
            AbortReason::ManifestOutOfBounds => 14,
            AbortReason::PpiReject { .. } => 15,
            AbortReason::VmFault { .. } => 16,
        }
    }

    /// Failures of a MAC or tag check during attestation or decryption.
    pub fn is_attestation_failure(&self) -> bool {
        matches!(
            self,
            AbortReason::MalformedTaskQueue
                | AbortReason::MailboxMismatch
                | AbortReason::PcCommitmentMismatch
                | AbortReason::BinaryOutOfRegion { .. }
                | AbortReason::BinaryAuthFailure { .. }
                | AbortReason::ChainCommitmentMismatch
                | AbortReason::WeightsAuthFailure
                | AbortReason::PolicyAuthFailure
                | AbortReason::InputAuthFailure
                | AbortReason::ManifestOutOfBounds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KexError {
    #[error("device has not booted")]
    NotBooted,
    #[error("malformed key-exchange message")]
    Malformed,
    #[error("provider key is not certified")]
    UntrustedProvider,
    #[error("signature check failed")]
    BadSignature,
    #[error("peer sent a low-order point")]
    InvalidGroupElement,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device has not booted")]
    NotBooted,
    #[error("device already booted")]
    AlreadyBooted,
    #[error("firmware signature rejected")]
    BootRejected,
    #[error("{command} not allowed in phase {phase:?}")]
    InvalidPhase { command: &'static str, phase: Phase },
    #[error("bad region request: {0}")]
    BadRegion(String),
    #[error("SMMU fault at page {page} ({access})")]
    SmmuFault { page: u64, access: &'static str },
    #[error("task queue is locked")]
    QueueLocked,
    #[error("task queue is full")]
    QueueFull,
    #[error("no task queue region allocated")]
    NoTaskQueue,
    #[error("EXECUTE_MODEL is issued with execute_model, not submit_task")]
    BadTask,
    #[error("key exchange failed: {0}")]
    KeyExchange(#[from] KexError),
    #[error("debug interface is disabled")]
    DebugRejected,
}

/// Anything the host can send commands to. The honest device implements it;
/// tests wrap it to intercept traffic.
pub trait CommandPort {
    fn submit(&mut self, command: DeviceCommand) -> Result<DeviceResponse, DeviceError>;
}

impl<T: CommandPort + ?Sized> CommandPort for &mut T {
    fn submit(&mut self, command: DeviceCommand) -> Result<DeviceResponse, DeviceError> {
        (**self).submit(command)
    }
}
