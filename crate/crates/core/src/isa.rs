//! The operator instruction set executed by the AI-Core interpreter.
//!
//! Each operator binary is a 16-byte header followed by fixed 16-byte
//! instructions and must end in `HALT`. Operand slots index the task's
//! argument table; the interpreter resolves them to HBM addresses.
//!
//! Tensors are row-major `i16` arrays stored little-endian.

use thiserror::Error;

pub const INSTRUCTION_LEN: usize = 16;
pub const BINARY_HEADER_LEN: usize = 16;
pub const BINARY_MAGIC: &[u8; 4] = b"ACCB";
pub const BINARY_VERSION: u16 = 1;
pub const MAX_ARGS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Halt = 0x00,
    MatMul = 0x01,
    Relu = 0x02,
    Add = 0x03,
    Softmax = 0x04,
    Copy = 0x05,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x00 => Opcode::Halt,
            0x01 => Opcode::MatMul,
            0x02 => Opcode::Relu,
            0x03 => Opcode::Add,
            0x04 => Opcode::Softmax,
            0x05 => Opcode::Copy,
            _ => return None,
        })
    }

    /// Operand slots read by this opcode, destination first.
    pub fn slots_used(self) -> usize {
        match self {
            Opcode::Halt => 0,
            Opcode::Relu | Opcode::Softmax | Opcode::Copy => 2,
            Opcode::MatMul | Opcode::Add => 3,
        }
    }
}

/// `[opcode][dst u32][a u32][b u32][m][k][n]`, integers little-endian.
///
/// For `MATMUL` the shapes are `a: m×k`, `b: k×n`, `dst: m×n`. Every other
/// operator works on `m×n` tensors and ignores `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dst: u32,
    pub a: u32,
    pub b: u32,
    pub m: u8,
    pub k: u8,
    pub n: u8,
}

impl Instruction {
    pub const HALT: Instruction = Instruction { opcode: Opcode::Halt, dst: 0, a: 0, b: 0, m: 0, k: 0, n: 0 };

    pub fn encode(&self) -> [u8; INSTRUCTION_LEN] {
        let mut out = [0u8; INSTRUCTION_LEN];
        out[0] = self.opcode as u8;
        out[1..5].copy_from_slice(&self.dst.to_le_bytes());
        out[5..9].copy_from_slice(&self.a.to_le_bytes());
        out[9..13].copy_from_slice(&self.b.to_le_bytes());
        out[13] = self.m;
        out[14] = self.k;
        out[15] = self.n;
        out
    }

    pub fn decode(bytes: &[u8; INSTRUCTION_LEN]) -> Result<Self, BinaryError> {
        let opcode = Opcode::from_u8(bytes[0]).ok_or(BinaryError::UnknownOpcode(bytes[0]))?;
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(Self { opcode, dst: word(1), a: word(5), b: word(9), m: bytes[13], k: bytes[14], n: bytes[15] })
    }

    pub fn slots(&self) -> impl Iterator<Item = u32> + '_ {
        [self.dst, self.a, self.b].into_iter().take(self.opcode.slots_used())
    }

    /// Element counts of (dst, a, b) for the used slots.
    pub fn operand_elems(&self) -> [usize; 3] {
        let (m, k, n) = (self.m as usize, self.k as usize, self.n as usize);
        match self.opcode {
            Opcode::MatMul => [m * n, m * k, k * n],
            Opcode::Add => [m * n, m * n, m * n],
            Opcode::Relu | Opcode::Softmax | Opcode::Copy => [m * n, m * n, 0],
            Opcode::Halt => [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BinaryError {
    #[error("binary shorter than its header")]
    Truncated,
    #[error("bad binary magic")]
    BadMagic,
    #[error("unsupported binary version {0}")]
    BadVersion(u16),
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("binary does not end in HALT")]
    MissingHalt,
    #[error("operand slot {slot} outside the {arg_count}-entry argument table")]
    SlotOutOfRange { slot: u32, arg_count: u16 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorBinary {
    pub arg_count: u16,
    pub instructions: Vec<Instruction>,
}

impl OperatorBinary {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BINARY_HEADER_LEN + self.instructions.len() * INSTRUCTION_LEN);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&self.arg_count.to_le_bytes());
        out.extend_from_slice(&(self.instructions.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for ins in &self.instructions {
            out.extend_from_slice(&ins.encode());
        }
        out
    }

    /// Parses and validates a binary: known opcodes, slots within the
    /// argument table, terminating `HALT`.
    pub fn parse(bytes: &[u8]) -> Result<Self, BinaryError> {
        if bytes.len() < BINARY_HEADER_LEN {
            return Err(BinaryError::Truncated);
        }
        if &bytes[..4] != BINARY_MAGIC {
            return Err(BinaryError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != BINARY_VERSION {
            return Err(BinaryError::BadVersion(version));
        }
        let arg_count = u16::from_le_bytes([bytes[6], bytes[7]]);
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[BINARY_HEADER_LEN..];
        if body.len() < count.saturating_mul(INSTRUCTION_LEN) {
            return Err(BinaryError::Truncated);
        }
        let mut instructions = Vec::with_capacity(count);
        for chunk in body.chunks_exact(INSTRUCTION_LEN).take(count) {
            let ins = Instruction::decode(chunk.try_into().unwrap())?;
            if let Some(slot) = ins.slots().find(|&s| s >= arg_count as u32) {
                return Err(BinaryError::SlotOutOfRange { slot, arg_count });
            }
            instructions.push(ins);
        }
        if instructions.last().map(|i| i.opcode) != Some(Opcode::Halt) {
            return Err(BinaryError::MissingHalt);
        }
        Ok(Self { arg_count, instructions })
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Vec<i16> {
    bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()
}

pub fn encode_tensor(values: &[i16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Operator arithmetic over `i16` tensors. Accumulation is wide and results
/// saturate back into `i16`.
pub mod kernels {
    fn saturate(v: i64) -> i16 {
        v.clamp(i16::MIN as i64, i16::MAX as i64) as i16
    }

    pub fn matmul(a: &[i16], b: &[i16], m: usize, k: usize, n: usize) -> Vec<i16> {
        let mut out = vec![0i16; m * n];
        for i in 0..m {
            for j in 0..n {
                let acc: i64 = (0..k).map(|t| a[i * k + t] as i64 * b[t * n + j] as i64).sum();
                out[i * n + j] = saturate(acc);
            }
        }
        out
    }

    pub fn relu(a: &[i16]) -> Vec<i16> {
        a.iter().map(|&x| x.max(0)).collect()
    }

    pub fn add(a: &[i16], b: &[i16]) -> Vec<i16> {
        a.iter().zip(b).map(|(&x, &y)| x.saturating_add(y)).collect()
    }

    /// Row-wise base-2 fixed-point softmax: each element gets weight
    /// `2^-(max - x)` (clamped at 15 halvings) and the row is normalized to
    /// sum to roughly 32767.
    pub fn softmax(a: &[i16], rows: usize, cols: usize) -> Vec<i16> {
        let mut out = vec![0i16; rows * cols];
        for r in 0..rows {
            let row = &a[r * cols..(r + 1) * cols];
            let Some(&max) = row.iter().max() else { continue };
            let weights: Vec<u64> = row
                .iter()
                .map(|&x| 1u64 << (15 - (max as i32 - x as i32).min(15)))
                .collect();
            let sum: u64 = weights.iter().sum();
            for (c, w) in weights.iter().enumerate() {
                out[r * cols + c] = (w * 32767 / sum) as i16;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_2x2() {
        let out = kernels::matmul(&[1, 2, 3, 4], &[5, 6, 7, 8], 2, 2, 2);
        assert_eq!(out, vec![19, 22, 43, 50]);
    }

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(kernels::relu(&[-1, 0, 7]), vec![0, 0, 7]);
    }

    #[test]
    fn add_saturates() {
        assert_eq!(kernels::add(&[i16::MAX, -3], &[1, 4]), vec![i16::MAX, 1]);
    }

    #[test]
    fn softmax_uniform_row() {
        assert_eq!(kernels::softmax(&[5, 5], 1, 2), vec![16383, 16383]);
        let out = kernels::softmax(&[10, 9, -100], 1, 3);
        // weights 32768, 16384, 1 over a sum of 49153
        assert_eq!(out, vec![21844, 10922, 0]);
    }

    #[test]
    fn binary_must_halt() {
        let bin = OperatorBinary { arg_count: 2, instructions: vec![] };
        assert_eq!(OperatorBinary::parse(&bin.to_bytes()), Err(BinaryError::MissingHalt));
    }

    #[test]
    fn binary_rejects_unknown_opcode_and_bad_slot() {
        let relu = Instruction { opcode: Opcode::Relu, dst: 0, a: 2, b: 0, m: 1, k: 0, n: 3 };
        let bin = OperatorBinary { arg_count: 2, instructions: vec![relu, Instruction::HALT] };
        assert_eq!(
            OperatorBinary::parse(&bin.to_bytes()),
            Err(BinaryError::SlotOutOfRange { slot: 2, arg_count: 2 })
        );
        let mut bytes = OperatorBinary { arg_count: 2, instructions: vec![Instruction::HALT] }.to_bytes();
        bytes[BINARY_HEADER_LEN] = 0x7f;
        assert_eq!(OperatorBinary::parse(&bytes), Err(BinaryError::UnknownOpcode(0x7f)));
    }

    fn arb_instruction() -> impl Strategy<Value = Instruction> {
        (0u8..6, any::<u32>(), any::<u32>(), any::<u32>(), any::<u8>(), any::<u8>(), any::<u8>()).prop_map(
            |(op, dst, a, b, m, k, n)| Instruction { opcode: Opcode::from_u8(op).unwrap(), dst, a, b, m, k, n },
        )
    }

    proptest! {
        #[test]
        fn instruction_encoding_roundtrips(ins in arb_instruction()) {
            prop_assert_eq!(Instruction::decode(&ins.encode()).unwrap(), ins);
        }

        #[test]
        fn tensor_encoding_roundtrips(v in proptest::collection::vec(any::<i16>(), 0..64)) {
            prop_assert_eq!(decode_tensor(&encode_tensor(&v)), v);
        }
    }
}
