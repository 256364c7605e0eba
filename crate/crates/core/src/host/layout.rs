//! Where the host puts a sealed model in HBM.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::crypto::SEAL_OVERHEAD;
use crate::device::{TaskDescriptor, TaskKind, TASK_RECORD_LEN};
use crate::layout::{align_up, pages_for, RegionKind, PAGE_SIZE, PC_ALIGN};
use crate::toolchain::SealedModel;

/// Spare task-queue records beyond one per layer plus `EXECUTE_MODEL`.
const TASKQ_SLACK: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RegionPlan {
    pub base: u64,
    pub len: u64,
}

/// Region placement and PC assignment for one model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HbmLayout {
    pub regions: BTreeMap<RegionKind, RegionPlan>,
    /// `PC_START` of each binary, in binary order.
    pub pcs: Vec<u64>,
    pub binary_lens: Vec<u64>,
    pub weights_len: u64,
    pub policy_len: u64,
    pub input_len: u64,
    pub output_len: u64,
}

impl HbmLayout {
    /// Regions are placed back to back from address 0 in
    /// [`RegionKind::ALL`] order. Binaries are placed first-fit from the
    /// MODEL_BINARIES base at 16-byte alignment. Returns `None` if the model
    /// does not fit in `hbm_size` bytes.
    pub fn plan(model: &SealedModel, hbm_size: u64) -> Option<Self> {
        let binary_lens = model.sizes();
        let mut pcs = Vec::with_capacity(binary_lens.len());
        let mut cursor = 0u64;
        for len in &binary_lens {
            pcs.push(cursor);
            cursor = align_up(cursor + len, PC_ALIGN);
        }
        let input_len = model.tensor_extent(RegionKind::Input) + SEAL_OVERHEAD as u64;
        let output_len = model.tensor_extent(RegionKind::Output);
        let need = |kind: RegionKind| -> u64 {
            let bytes = match kind {
                RegionKind::TaskQ => (model.layers.len() as u64 + 1 + TASKQ_SLACK) * TASK_RECORD_LEN as u64,
                RegionKind::ModelParams => (model.weights.len() + model.policy.len()) as u64,
                RegionKind::ModelBinaries => cursor,
                RegionKind::Workspace => model.tensor_extent(RegionKind::Workspace),
                RegionKind::Input => input_len,
                RegionKind::Output => output_len + SEAL_OVERHEAD as u64,
            };
            pages_for(bytes) * PAGE_SIZE
        };
        let mut regions = BTreeMap::new();
        let mut at = 0u64;
        for kind in RegionKind::ALL {
            let len = need(kind);
            regions.insert(kind, RegionPlan { base: at, len });
            at += len;
        }
        if at > hbm_size {
            return None;
        }
        let bins = regions[&RegionKind::ModelBinaries].base;
        Some(Self {
            pcs: pcs.into_iter().map(|o| bins + o).collect(),
            binary_lens,
            weights_len: model.weights.len() as u64,
            policy_len: model.policy.len() as u64,
            input_len,
            output_len,
            regions,
        })
    }

    pub fn base(&self, kind: RegionKind) -> u64 {
        self.regions[&kind].base
    }

    /// One compute task per layer, in layer order.
    pub fn tasks(&self, model: &SealedModel) -> Vec<TaskDescriptor> {
        let workspace = self.base(RegionKind::Workspace);
        model
            .layers
            .iter()
            .zip(&model.layer_args)
            .enumerate()
            .map(|(i, (layer, args))| {
                let mut regions = Vec::with_capacity(args.len());
                let ptrs = args
                    .iter()
                    .map(|id| {
                        let t = model.tensor(*id).expect("sealed model tensor table is validated on parse");
                        regions.push(t.region);
                        self.base(t.region) + t.offset
                    })
                    .collect();
                let kind = match (regions.first(), regions.get(1)) {
                    (Some(RegionKind::Output), _) => TaskKind::D2hCopy,
                    (_, Some(RegionKind::Input)) if args.len() == 2 => TaskKind::H2dCopy,
                    _ => TaskKind::Kernel,
                };
                let pc = self.pcs[layer.binary_index as usize];
                TaskDescriptor::compute(i as u32, kind, pc, ptrs, workspace)
            })
            .collect()
    }

    /// The PC list the data provider signs: task `PC_START`s in queue order.
    pub fn task_pcs(&self, model: &SealedModel) -> Vec<u64> {
        self.tasks(model).iter().map(|t| t.pc_start).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{NonceCounter, SymKey};
    use crate::toolchain::{compile, seal, OperatorGraph};

    #[test]
    fn matmul_layout() {
        let model = compile(&OperatorGraph::matmul_2x2()).unwrap();
        let (sealed, _) = seal(&model, &SymKey::from_bytes([0; 16]), &mut NonceCounter::new());
        let l = HbmLayout::plan(&sealed, 16 << 20).unwrap();
        let bins = l.base(RegionKind::ModelBinaries);
        assert_eq!(l.binary_lens, [76, 76, 76]);
        assert_eq!(l.pcs, [bins, bins + 80, bins + 160]);
        assert!(l.regions.values().all(|r| r.base % PAGE_SIZE == 0 && r.len % PAGE_SIZE == 0));
        let tasks = l.tasks(&sealed);
        assert_eq!(tasks.iter().map(|t| t.kind).collect::<Vec<_>>(), [TaskKind::H2dCopy, TaskKind::Kernel, TaskKind::D2hCopy]);
        assert_eq!(l.task_pcs(&sealed), l.pcs);
        assert_eq!(l.output_len, 8);
        assert_eq!(l.input_len, 16 + 28);
    }

    #[test]
    fn too_small_hbm() {
        let model = compile(&OperatorGraph::matmul_2x2()).unwrap();
        let (sealed, _) = seal(&model, &SymKey::from_bytes([0; 16]), &mut NonceCounter::new());
        assert!(HbmLayout::plan(&sealed, 4 * PAGE_SIZE).is_none());
    }
}
