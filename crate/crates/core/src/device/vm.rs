//! AI-Core interpreter.
//!
//! Executes the plaintext binary at a task's `PC_START` against HBM.
//! Operands must lie wholly inside one region: sources in INPUT,
//! MODEL_PARAMS, WORKSPACE or OUTPUT, destinations in WORKSPACE or OUTPUT.
//! Any violation stops the task with a [`VmFault`] before anything is written.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::memory::{Hbm, RegionTable};
use crate::isa::{
    decode_tensor, encode_tensor, kernels, BinaryError, Opcode, OperatorBinary, BINARY_HEADER_LEN, INSTRUCTION_LEN,
};
use crate::layout::RegionKind;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum VmFault {
    #[error("binary at {pc:#x} is not inside MODEL_BINARIES")]
    BinaryOutOfBounds { pc: u64 },
    #[error("invalid binary: {0}")]
    InvalidBinary(String),
    #[error("binary expects {expected} arguments, task supplies {supplied}")]
    ArgCountMismatch { expected: u16, supplied: usize },
    #[error("instruction {index} has a zero dimension")]
    ZeroDimension { index: usize },
    #[error("operand slot {slot} of instruction {index} falls outside every region")]
    OperandOutOfBounds { index: usize, slot: u32 },
    #[error("instruction {index} reads from {region:?}")]
    ForbiddenRead { index: usize, region: RegionKind },
    #[error("instruction {index} writes to {region:?}")]
    ForbiddenWrite { index: usize, region: RegionKind },
}

impl From<BinaryError> for VmFault {
    fn from(e: BinaryError) -> Self {
        VmFault::InvalidBinary(e.to_string())
    }
}

fn readable(kind: RegionKind) -> bool {
    matches!(kind, RegionKind::Input | RegionKind::ModelParams | RegionKind::Workspace | RegionKind::Output)
}

fn writable(kind: RegionKind) -> bool {
    matches!(kind, RegionKind::Workspace | RegionKind::Output)
}

/// Fetches and validates the binary at `pc`.
pub(crate) fn fetch(hbm: &Hbm, regions: &RegionTable, pc: u64) -> Result<OperatorBinary, VmFault> {
    let bins = regions
        .get(RegionKind::ModelBinaries)
        .filter(|r| r.contains(pc, BINARY_HEADER_LEN as u64))
        .ok_or(VmFault::BinaryOutOfBounds { pc })?;
    let header = hbm.read(pc, BINARY_HEADER_LEN as u64);
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as u64;
    let total = BINARY_HEADER_LEN as u64 + count.saturating_mul(INSTRUCTION_LEN as u64);
    if !bins.contains(pc, total) {
        return Err(VmFault::BinaryOutOfBounds { pc });
    }
    Ok(OperatorBinary::parse(hbm.read(pc, total))?)
}

/// Runs one task. Returns the opcodes executed, `HALT` excluded.
pub(crate) fn execute(hbm: &mut Hbm, regions: &RegionTable, pc: u64, args: &[u64]) -> Result<Vec<Opcode>, VmFault> {
    let binary = fetch(hbm, regions, pc)?;
    if binary.arg_count as usize > args.len() {
        return Err(VmFault::ArgCountMismatch { expected: binary.arg_count, supplied: args.len() });
    }
    let mut ran = Vec::new();
    for (index, ins) in binary.instructions.iter().enumerate() {
        if ins.opcode == Opcode::Halt {
            break;
        }
        let (m, k, n) = (ins.m as usize, ins.k as usize, ins.n as usize);
        if m == 0 || n == 0 || (ins.opcode == Opcode::MatMul && k == 0) {
            return Err(VmFault::ZeroDimension { index });
        }
        let elems = ins.operand_elems();
        let mut operands = Vec::with_capacity(3);
        for (pos, slot) in ins.slots().enumerate() {
            let addr = args[slot as usize];
            let len = elems[pos] as u64 * 2;
            let region = regions
                .containing(addr, len)
                .ok_or(VmFault::OperandOutOfBounds { index, slot })?;
            if pos == 0 && !writable(region.kind) {
                return Err(VmFault::ForbiddenWrite { index, region: region.kind });
            }
            if pos > 0 && !readable(region.kind) {
                return Err(VmFault::ForbiddenRead { index, region: region.kind });
            }
            operands.push((addr, len));
        }
        let load = |i: usize| decode_tensor(hbm.read(operands[i].0, operands[i].1));
        let result = match ins.opcode {
            Opcode::MatMul => kernels::matmul(&load(1), &load(2), m, k, n),
            Opcode::Add => kernels::add(&load(1), &load(2)),
            Opcode::Relu => kernels::relu(&load(1)),
            Opcode::Softmax => kernels::softmax(&load(1), m, n),
            Opcode::Copy => load(1),
            Opcode::Halt => unreachable!(),
        };
        hbm.write(operands[0].0, &encode_tensor(&result));
        ran.push(ins.opcode);
    }
    Ok(ran)
}
