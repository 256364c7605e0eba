//! Analytic cost estimator. Nothing here is measured: every figure is a
//! function of the constants in [`CostModel`].

use serde::Serialize;

use crate::crypto::{SEAL_OVERHEAD, TAG_LEN};
use crate::layout::{pages_for, RegionKind};
use crate::toolchain::SealedModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostModel {
    /// Map or unmap of one 4 KiB page, in nanoseconds.
    pub page_op_ns: u64,
    pub chunk_bytes: u64,
    pub lanes: u64,
    /// Aggregate AES-GCM throughput with every lane busy on small chunks.
    pub peak_mbps: u64,
    /// One lane, or any chunk larger than `chunk_bytes`.
    pub single_lane_mbps: u64,
    pub per_binary_overhead_bytes: u64,
}

impl CostModel {
    pub const DEFAULT: CostModel = CostModel {
        page_op_ns: 2_470,
        chunk_bytes: 1024,
        lanes: 4,
        peak_mbps: 6_100,
        single_lane_mbps: 1_600,
        per_binary_overhead_bytes: TAG_LEN as u64,
    };

    /// Unmap (or remap) latency for a region of `bytes`.
    pub fn page_op_ns_for(&self, bytes: u64) -> u64 {
        pages_for(bytes) * self.page_op_ns
    }

    /// Throughput bound in MB/s for work split into chunks of `chunk` bytes.
    pub fn throughput_mbps(&self, chunk: u64) -> u64 {
        if chunk > self.chunk_bytes {
            self.single_lane_mbps
        } else {
            (self.lanes * self.single_lane_mbps).min(self.peak_mbps)
        }
    }

    /// Time to push `bytes` through AES-GCM at the bound for `chunk`, in
    /// picoseconds, rounded up. 1 MB/s moves one byte per microsecond.
    pub fn crypto_ps(&self, bytes: u64, chunk: u64) -> u64 {
        (bytes as u128 * 1_000_000).div_ceil(self.throughput_mbps(chunk) as u128) as u64
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// How a buffer is split into crypto chunks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChunkPlan {
    pub bytes: u64,
    pub chunks: u64,
    pub largest_chunk: u64,
    /// Chunk count per lane, round-robin.
    pub per_lane: Vec<u64>,
}

pub fn chunk_plan(model: &CostModel, bytes: u64) -> ChunkPlan {
    let chunks = bytes.div_ceil(model.chunk_bytes);
    let per_lane = (0..model.lanes).map(|l| chunks / model.lanes + u64::from(l < chunks % model.lanes)).collect();
    ChunkPlan { bytes, chunks, largest_chunk: bytes.min(model.chunk_bytes), per_lane }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegionCost {
    pub region: RegionKind,
    pub bytes: u64,
    pub pages: u64,
    pub unmap_ns: u64,
    pub remap_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub analytic_only: bool,
    pub model: CostModel,
    pub blobs: u64,
    pub binaries: u64,
    pub inflation_bytes: u64,
    pub tag_bytes: u64,
    pub regions: Vec<RegionCost>,
    pub lock_ns: u64,
    pub decrypt_bytes: u64,
    pub decrypt_chunks: ChunkPlan,
    pub decrypt_throughput_mbps: u64,
    pub decrypt_ps: u64,
    pub input_decrypt_ps: u64,
}

/// Costs of loading `sealed` and running one inference over `input_len`
/// plaintext bytes.
pub fn estimate_costs(sealed: &SealedModel, input_len: u64) -> CostReport {
    estimate_with(&CostModel::DEFAULT, sealed, input_len)
}

pub fn estimate_with(model: &CostModel, sealed: &SealedModel, input_len: u64) -> CostReport {
    let overhead = SEAL_OVERHEAD as u64;
    let binaries = sealed.binaries.len() as u64;
    // Binaries, weights and the policy record are sealed separately.
    let blobs = binaries + 2;
    let binary_bytes: u64 = sealed.binaries.iter().map(|b| b.len() as u64).sum();
    let region_bytes = [
        (RegionKind::Input, input_len + overhead),
        (RegionKind::ModelParams, (sealed.weights.len() + sealed.policy.len()) as u64),
        (RegionKind::ModelBinaries, binary_bytes),
        (RegionKind::Workspace, sealed.tensor_extent(RegionKind::Workspace)),
    ];
    let regions: Vec<RegionCost> = region_bytes
        .iter()
        .map(|&(region, bytes)| RegionCost {
            region,
            bytes,
            pages: pages_for(bytes),
            unmap_ns: model.page_op_ns_for(bytes),
            remap_ns: model.page_op_ns_for(bytes),
        })
        .collect();
    let decrypt_bytes = binary_bytes + sealed.weights.len() as u64 - overhead * (binaries + 1);
    let plan = chunk_plan(model, decrypt_bytes);
    CostReport {
        analytic_only: true,
        model: *model,
        blobs,
        binaries,
        inflation_bytes: blobs * overhead,
        tag_bytes: binaries * model.per_binary_overhead_bytes,
        lock_ns: regions.iter().map(|r| r.unmap_ns).sum(),
        decrypt_throughput_mbps: model.throughput_mbps(plan.largest_chunk),
        decrypt_ps: model.crypto_ps(decrypt_bytes, plan.largest_chunk),
        input_decrypt_ps: model.crypto_ps(input_len, input_len.min(model.chunk_bytes)),
        decrypt_bytes,
        decrypt_chunks: plan,
        regions,
    }
}
