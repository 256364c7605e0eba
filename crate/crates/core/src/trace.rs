//! The ordered event log of a device run.
//!
//! Every host command, every SMMU change and every security-relevant
//! operator invocation becomes one [`TraceEntry`]. Host reads carry the
//! bytes the host received (up to [`OBSERVED_BYTES_CAP`]) so leakage can be
//! searched for offline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::layout::{page_of, DmaDirection, LifecycleState, RegionKind, PAGE_SIZE};

/// Host-observable payloads up to this size are stored verbatim.
pub const OBSERVED_BYTES_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Actor {
    Host,
    ControlCpu,
    Scheduler,
    MemoryManager,
    AiCpu,
    AiCore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    Boot,
    KeyExchange,
    Relay,
    AllocRegion,
    DmaWrite,
    DmaRead,
    SubmitTask,
    MailboxWrite,
    ExecuteModel,
    ContinueRound,
    Interrupt,
    Unmap,
    UnmapAck,
    AttestPc,
    AttestBinaries,
    BinaryDecrypt,
    ModelDecrypt,
    InputDecrypt,
    PpiVerify,
    Lifecycle,
    Kernel,
    Encrypt,
    Remap,
    Zeroize,
    Release,
    NextInput,
    Clean,
    Debug,
    PollCompletions,
    Abort,
}

impl Event {
    /// Events that write plaintext into device memory.
    pub fn is_decrypt(self) -> bool {
        matches!(self, Event::BinaryDecrypt | Event::ModelDecrypt | Event::InputDecrypt)
    }

    /// Events that hand pages back to the host.
    pub fn is_remap(self) -> bool {
        matches!(self, Event::Remap | Event::Release)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    Fault,
    Rejected,
    Failed,
    Deferred,
}

/// Half-open page interval `[first, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRange {
    pub first: u64,
    pub end: u64,
}

impl PageRange {
    /// Pages touched by `len` bytes at `addr` (a zero-length access touches
    /// none).
    pub fn covering(addr: u64, len: u64) -> Self {
        if len == 0 {
            return Self { first: page_of(addr), end: page_of(addr) };
        }
        Self { first: page_of(addr), end: page_of(addr + len - 1) + 1 }
    }

    pub fn of_region(base: u64, len: u64) -> Self {
        Self { first: base / PAGE_SIZE, end: (base + len) / PAGE_SIZE }
    }

    pub fn overlaps(&self, other: &PageRange) -> bool {
        self.first < other.end && other.first < self.end
    }

    pub fn pages(&self) -> impl Iterator<Item = u64> {
        self.first..self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub actor: Actor,
    pub event: Event,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_range: Option<PageRange>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<DmaDirection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifecycle: Option<LifecycleState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_bytes_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_bytes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TraceEntry {
    pub fn new(actor: Actor, event: Event) -> Self {
        Self {
            seq: 0,
            actor,
            event,
            region: None,
            page_range: None,
            status: Status::Ok,
            direction: None,
            lifecycle: None,
            observed_bytes_digest: None,
            observed_bytes: None,
            detail: None,
        }
    }

    pub fn region(mut self, region: RegionKind) -> Self {
        self.region = Some(region);
        self
    }

    pub fn pages(mut self, range: PageRange) -> Self {
        self.page_range = Some(range);
        self
    }

    pub fn status(mut self, status: Status) -> Self {
        self.status = status;
        self
    }

    pub fn direction(mut self, direction: DmaDirection) -> Self {
        self.direction = Some(direction);
        self
    }

    pub fn lifecycle(mut self, state: LifecycleState) -> Self {
        self.lifecycle = Some(state);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    /// Records bytes the host received: always a digest, and the bytes
    /// themselves when they fit under the cap.
    pub fn observed(mut self, bytes: &[u8]) -> Self {
        self.observed_bytes_digest = Some(hex::encode(Sha256::digest(bytes)));
        if bytes.len() <= OBSERVED_BYTES_CAP {
            self.observed_bytes = Some(hex::encode(bytes));
        }
        self
    }

    /// Records only the digest of bytes the host sent.
    pub fn digest_of(mut self, bytes: &[u8]) -> Self {
        self.observed_bytes_digest = Some(hex::encode(Sha256::digest(bytes)));
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionTrace {
    entries: Vec<TraceEntry>,
}

impl ExecutionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mut entry: TraceEntry) {
        entry.seq = self.entries.len() as u64;
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn from_entries(entries: Vec<TraceEntry>) -> Self {
        Self { entries }
    }

    pub fn count(&self, event: Event) -> usize {
        self.entries.iter().filter(|e| e.event == event).count()
    }

    /// Everything the host saw, concatenated: DMA reads, completion polls,
    /// key-exchange replies, relayed messages and error details.
    pub fn host_observable_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.entries {
            if let Some(hexed) = &e.observed_bytes {
                out.extend(hex::decode(hexed).unwrap_or_default());
            }
            if let Some(d) = &e.detail {
                out.extend_from_slice(d.as_bytes());
            }
        }
        out
    }

    /// SHA-256 over the JSON lines of the trace.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(serde_json::to_vec(e).expect("trace entries serialize"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
