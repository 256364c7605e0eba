//! Task descriptors as they sit in the task queue, and completion records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{AuthTag, TAG_LEN};
use crate::isa::MAX_ARGS;

/// Serialized size of one descriptor in the TASKQ region.
pub const TASK_RECORD_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum TaskKind {
    /// One operator binary run on an AI core.
    Kernel = 1,
    /// Operator that stages input data into the workspace.
    H2dCopy = 2,
    /// Operator that writes results into OUTPUT.
    D2hCopy = 3,
    /// End-of-queue marker carrying `P₁`; starts the secure round.
    ExecuteModel = 4,
}

impl TaskKind {
    /// Kinds that run an operator binary at `pc_start`.
    pub fn is_compute(self) -> bool {
        !matches!(self, TaskKind::ExecuteModel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum ComputeUnit {
    AiCore = 1,
    AiCpu = 2,
}

/// Layout: `task_id u32 ‖ kind u8 ‖ unit u8 ‖ argc u8 ‖ 0 ‖ pc_start u64
/// ‖ arg_ptrs 3×u64 ‖ payload [16] ‖ workspace_ptr u64`, little-endian.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: u32,
    pub kind: TaskKind,
    pub unit: ComputeUnit,
    pub pc_start: u64,
    pub arg_ptrs: Vec<u64>,
    pub workspace_ptr: u64,
    pub payload: [u8; TAG_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskDecodeError {
    #[error("unknown task kind {0}")]
    Kind(u8),
    #[error("unknown compute unit {0}")]
    Unit(u8),
    #[error("argument count {0} exceeds {MAX_ARGS}")]
    Args(u8),
}

impl TaskDescriptor {
    pub fn compute(task_id: u32, kind: TaskKind, pc_start: u64, arg_ptrs: Vec<u64>, workspace_ptr: u64) -> Self {
        Self { task_id, kind, unit: ComputeUnit::AiCore, pc_start, arg_ptrs, workspace_ptr, payload: [0; TAG_LEN] }
    }

    pub fn execute_model(task_id: u32, p1: &AuthTag) -> Self {
        Self {
            task_id,
            kind: TaskKind::ExecuteModel,
            unit: ComputeUnit::AiCpu,
            pc_start: 0,
            arg_ptrs: Vec::new(),
            workspace_ptr: 0,
            payload: *p1.as_bytes(),
        }
    }

    pub fn to_bytes(&self) -> [u8; TASK_RECORD_LEN] {
        let mut out = [0u8; TASK_RECORD_LEN];
        out[..4].copy_from_slice(&self.task_id.to_le_bytes());
        out[4] = self.kind as u8;
        out[5] = self.unit as u8;
        out[6] = self.arg_ptrs.len().min(MAX_ARGS) as u8;
        out[8..16].copy_from_slice(&self.pc_start.to_le_bytes());
        for (i, p) in self.arg_ptrs.iter().take(MAX_ARGS).enumerate() {
            out[16 + 8 * i..24 + 8 * i].copy_from_slice(&p.to_le_bytes());
        }
        out[40..56].copy_from_slice(&self.payload);
        out[56..].copy_from_slice(&self.workspace_ptr.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; TASK_RECORD_LEN]) -> Result<Self, TaskDecodeError> {
        let kind = match b[4] {
            1 => TaskKind::Kernel,
            2 => TaskKind::H2dCopy,
            3 => TaskKind::D2hCopy,
            4 => TaskKind::ExecuteModel,
            k => return Err(TaskDecodeError::Kind(k)),
        };
        let unit = match b[5] {
            1 => ComputeUnit::AiCore,
            2 => ComputeUnit::AiCpu,
            u => return Err(TaskDecodeError::Unit(u)),
        };
        let argc = b[6];
        if argc as usize > MAX_ARGS {
            return Err(TaskDecodeError::Args(argc));
        }
        let word = |at: usize| u64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        Ok(Self {
            task_id: u32::from_le_bytes(b[..4].try_into().unwrap()),
            kind,
            unit,
            pc_start: word(8),
            arg_ptrs: (0..argc as usize).map(|i| word(16 + 8 * i)).collect(),
            workspace_ptr: word(56),
            payload: b[40..56].try_into().unwrap(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CqStatus {
    Ok,
    Failed,
}

/// Completion-queue entry visible to the host. `detail` is an abort or
/// fault code, zero on success.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub task_id: u32,
    pub status: CqStatus,
    pub detail: u32,
}

impl CompletionRecord {
    pub fn to_bytes(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[..4].copy_from_slice(&self.task_id.to_le_bytes());
        out[4] = match self.status {
            CqStatus::Ok => 0,
            CqStatus::Failed => 1,
        };
        out[8..].copy_from_slice(&self.detail.to_le_bytes());
        out
    }
}

/// Task ids the AI-CPU operators report under.
pub mod operator_ids {
    pub const ATTEST: u32 = 0xffff_ff01;
    pub const DECRYPT: u32 = 0xffff_ff02;
    pub const ENCRYPT: u32 = 0xffff_ff03;
    pub const ZEROIZE: u32 = 0xffff_ff04;
}
