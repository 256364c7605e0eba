//! HBM layout vocabulary shared by the toolchain, the host runtime, the
//! device and the trace checker: page geometry, region kinds, DMA
//! directions and the memory lifecycle graph.

use serde::{Deserialize, Serialize};

pub const PAGE_SIZE: u64 = 4096;

/// Alignment the host runtime uses when placing operator binaries.
pub const PC_ALIGN: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum RegionKind {
    ModelParams = 1,
    ModelBinaries = 2,
    Workspace = 3,
    Input = 4,
    Output = 5,
    TaskQ = 6,
}

impl RegionKind {
    pub const ALL: [RegionKind; 6] = [
        RegionKind::TaskQ,
        RegionKind::ModelParams,
        RegionKind::ModelBinaries,
        RegionKind::Workspace,
        RegionKind::Input,
        RegionKind::Output,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => RegionKind::ModelParams,
            2 => RegionKind::ModelBinaries,
            3 => RegionKind::Workspace,
            4 => RegionKind::Input,
            5 => RegionKind::Output,
            6 => RegionKind::TaskQ,
            _ => return None,
        })
    }

    /// Regions the host must never read back, mapped or not.
    pub fn is_host_read_forbidden(self) -> bool {
        matches!(
            self,
            RegionKind::Input | RegionKind::ModelParams | RegionKind::ModelBinaries | RegionKind::Workspace
        )
    }

    /// Regions that hold model state and stay locked across inference rounds.
    pub fn is_model_resident(self) -> bool {
        matches!(
            self,
            RegionKind::ModelParams | RegionKind::ModelBinaries | RegionKind::Workspace | RegionKind::TaskQ
        )
    }
}

/// DMA direction of a host mapping, as tracked by the memory manager.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DmaDirection {
    Bidirectional,
    ToDevice,
    FromDevice,
}

impl DmaDirection {
    pub fn permits_read(self) -> bool {
        matches!(self, DmaDirection::Bidirectional | DmaDirection::FromDevice)
    }

    pub fn permits_write(self) -> bool {
        matches!(self, DmaDirection::Bidirectional | DmaDirection::ToDevice)
    }
}

/// Per-region memory lifecycle state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleState {
    /// Host-mapped; holds ciphertext (or nothing yet).
    MappedEncrypted,
    /// Locked away from the host, contents still ciphertext.
    UnmappedEncrypted,
    /// Locked, holds plaintext.
    UnmappedPlain,
    /// Zeroed by the device and handed back to the host.
    MappedZeroed,
    /// Output sealed under the data key and mapped device-to-host.
    MappedCipherOut,
}

impl LifecycleState {
    /// Regions start mapped and encrypted when allocated.
    pub const INITIAL: LifecycleState = LifecycleState::MappedEncrypted;

    pub fn is_mapped(self) -> bool {
        matches!(
            self,
            LifecycleState::MappedEncrypted | LifecycleState::MappedZeroed | LifecycleState::MappedCipherOut
        )
    }

    /// Edges of the lifecycle graph. The forward path is lock, decrypt,
    /// then either seal-and-remap (output) or zeroize-and-remap; the
    /// remaining edges close the loop for multi-round sessions and cleanup
    /// after an abort.
    pub fn can_move_to(self, next: LifecycleState) -> bool {
        use LifecycleState::*;
        matches!(
            (self, next),
            (MappedEncrypted, UnmappedEncrypted)
                | (MappedEncrypted, MappedZeroed)
                | (UnmappedEncrypted, UnmappedPlain)
                | (UnmappedEncrypted, MappedZeroed)
                | (UnmappedPlain, MappedCipherOut)
                | (UnmappedPlain, MappedZeroed)
                | (MappedZeroed, MappedEncrypted)
                | (MappedZeroed, UnmappedEncrypted)
                | (MappedCipherOut, UnmappedEncrypted)
                | (MappedCipherOut, MappedZeroed)
        )
    }
}

/// Number of pages needed to hold `len` bytes (at least one).
pub fn pages_for(len: u64) -> u64 {
    len.div_ceil(PAGE_SIZE).max(1)
}

pub fn page_of(addr: u64) -> u64 {
    addr / PAGE_SIZE
}

pub fn align_up(v: u64, align: u64) -> u64 {
    v.div_ceil(align) * align
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_math() {
        assert_eq!(pages_for(0), 1);
        assert_eq!(pages_for(4096), 1);
        assert_eq!(pages_for(4097), 2);
        assert_eq!(pages_for(1 << 30), 262_144);
        assert_eq!(align_up(17, 16), 32);
        assert_eq!(align_up(32, 16), 32);
    }

    #[test]
    fn plaintext_is_never_mapped_directly() {
        use LifecycleState::*;
        let all = [MappedEncrypted, UnmappedEncrypted, UnmappedPlain, MappedZeroed, MappedCipherOut];
        for to in all {
            if to.is_mapped() && to != MappedCipherOut && to != MappedZeroed {
                assert!(!UnmappedPlain.can_move_to(to));
            }
        }
        assert!(!MappedEncrypted.can_move_to(UnmappedPlain));
        assert!(!UnmappedPlain.can_move_to(UnmappedEncrypted));
    }
}
