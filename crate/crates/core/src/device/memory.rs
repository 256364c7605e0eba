//! HBM, the region registry and the SMMU page table.

use serde::{Deserialize, Serialize};

use crate::layout::{DmaDirection, LifecycleState, RegionKind, PAGE_SIZE};
use crate::trace::PageRange;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub base: u64,
    pub len: u64,
    pub state: LifecycleState,
}

impl Region {
    pub fn pages(&self) -> PageRange {
        PageRange::of_region(self.base, self.len)
    }

    pub fn end(&self) -> u64 {
        self.base + self.len
    }

    pub fn contains(&self, addr: u64, len: u64) -> bool {
        addr >= self.base && addr.checked_add(len).is_some_and(|e| e <= self.end())
    }

    /// Direction of the host mapping while the region is owned by the host.
    pub fn host_direction(kind: RegionKind) -> DmaDirection {
        match kind {
            RegionKind::Output => DmaDirection::FromDevice,
            _ => DmaDirection::ToDevice,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTable {
    regions: Vec<Region>,
}

impl RegionTable {
    pub fn get(&self, kind: RegionKind) -> Option<&Region> {
        self.regions.iter().find(|r| r.kind == kind)
    }

    pub(crate) fn get_mut(&mut self, kind: RegionKind) -> Option<&mut Region> {
        self.regions.iter_mut().find(|r| r.kind == kind)
    }

    /// The region that wholly contains `[addr, addr + len)`.
    pub fn containing(&self, addr: u64, len: u64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(addr, len))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub(crate) fn insert(&mut self, region: Region) {
        self.regions.push(region);
        self.regions.sort_by_key(|r| r.kind);
    }

    pub(crate) fn clear(&mut self) {
        self.regions.clear();
    }

    pub fn overlaps(&self, base: u64, len: u64) -> bool {
        self.regions.iter().any(|r| base < r.end() && r.base < base + len)
    }
}

/// Device memory. Backed by one zero-initialized allocation.
#[derive(Clone)]
pub(crate) struct Hbm {
    bytes: Vec<u8>,
}

impl Hbm {
    pub fn new(size: u64) -> Self {
        Self { bytes: vec![0; size as usize] }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn in_bounds(&self, addr: u64, len: u64) -> bool {
        addr.checked_add(len).is_some_and(|e| e <= self.size())
    }

    pub fn read(&self, addr: u64, len: u64) -> &[u8] {
        &self.bytes[addr as usize..(addr + len) as usize]
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) {
        self.bytes[addr as usize..addr as usize + data.len()].copy_from_slice(data);
    }

    pub fn zero(&mut self, addr: u64, len: u64) {
        self.bytes[addr as usize..(addr + len) as usize].fill(0);
    }
}

/// Host-side page table. `None` means the page is unmapped.
///
/// Pages outside every region start mapped bidirectionally: that memory
/// belongs to the host and never holds device plaintext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Smmu {
    pages: Vec<Option<DmaDirection>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PageFault {
    pub page: u64,
}

impl Smmu {
    pub fn new(hbm_size: u64) -> Self {
        Self { pages: vec![Some(DmaDirection::Bidirectional); (hbm_size / PAGE_SIZE) as usize] }
    }

    pub fn map(&mut self, range: PageRange, direction: DmaDirection) {
        for p in range.pages() {
            self.pages[p as usize] = Some(direction);
        }
    }

    pub fn unmap(&mut self, range: PageRange) {
        for p in range.pages() {
            self.pages[p as usize] = None;
        }
    }

    pub fn direction(&self, page: u64) -> Option<DmaDirection> {
        self.pages.get(page as usize).copied().flatten()
    }

    /// Checks every page a host access touches.
    pub fn check(&self, addr: u64, len: u64, write: bool) -> Result<(), PageFault> {
        for page in PageRange::covering(addr, len).pages() {
            let ok = match self.direction(page) {
                Some(d) if write => d.permits_write(),
                Some(d) => d.permits_read(),
                None => false,
            };
            if !ok {
                return Err(PageFault { page });
            }
        }
        Ok(())
    }

    pub fn unmapped_pages(&self) -> Vec<u64> {
        self.pages
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_none())
            .map(|(i, _)| i as u64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smmu_directions() {
        let mut s = Smmu::new(4 * PAGE_SIZE);
        s.map(PageRange { first: 1, end: 2 }, DmaDirection::ToDevice);
        s.unmap(PageRange { first: 2, end: 3 });
        assert!(s.check(0, 10, false).is_ok());
        assert!(s.check(PAGE_SIZE, 10, true).is_ok());
        assert_eq!(s.check(PAGE_SIZE, 10, false), Err(PageFault { page: 1 }));
        assert_eq!(s.check(PAGE_SIZE - 1, 2, false), Err(PageFault { page: 1 }));
        assert_eq!(s.check(2 * PAGE_SIZE, 1, true), Err(PageFault { page: 2 }));
        assert_eq!(s.unmapped_pages(), vec![2]);
    }

    #[test]
    fn region_containment() {
        let r = Region { kind: RegionKind::Input, base: 4096, len: 4096, state: LifecycleState::INITIAL };
        assert!(r.contains(4096, 4096));
        assert!(!r.contains(4096, 4097));
        assert!(!r.contains(u64::MAX, 2));
    }
}
