//! Offline trace verification. Replays SMMU and lifecycle state from the
//! trace alone, so stored traces can be audited without re-running.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::layout::{DmaDirection, LifecycleState, RegionKind};
use crate::trace::{Event, ExecutionTrace, PageRange, Status, TraceEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Invariant {
    SmmuSoundness,
    DirectionExclusivity,
    Atomicity,
    LifecycleLegality,
    NoPlaintextLeak,
    CleanOrdering,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: Invariant,
    /// Sequence number of the offending entry, if there is one.
    pub seq: Option<u64>,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CheckReport {
    pub entries: usize,
    pub canaries: usize,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violated(&self, inv: Invariant) -> bool {
        self.violations.iter().any(|v| v.invariant == inv)
    }
}

const PROTECTED: [RegionKind; 4] =
    [RegionKind::Input, RegionKind::ModelParams, RegionKind::ModelBinaries, RegionKind::Workspace];

#[derive(Default)]
struct Replay {
    /// Pages not listed are BIDIRECTIONAL; `None` means unmapped.
    pages: BTreeMap<u64, Option<DmaDirection>>,
    regions: BTreeMap<RegionKind, (PageRange, LifecycleState)>,
    violations: Vec<Violation>,
    /// Inside a lock window, and whether its ack has been seen.
    window: Option<bool>,
    cleaning: Option<CleanSegment>,
    input_zeroed: bool,
    /// Position in the file. Ordering checks use this, not `seq`, so a
    /// reordered trace cannot hide behind its original numbering.
    pos: u64,
}

#[derive(Default)]
struct CleanSegment {
    last_zeroize: Option<u64>,
    first_release: Option<u64>,
}

impl Replay {
    fn flag(&mut self, invariant: Invariant, e: &TraceEntry, message: String) {
        self.violations.push(Violation { invariant, seq: Some(e.seq), message });
    }

    fn direction(&self, page: u64) -> Option<DmaDirection> {
        self.pages.get(&page).copied().unwrap_or(Some(DmaDirection::Bidirectional))
    }

    fn set(&mut self, range: PageRange, d: Option<DmaDirection>) {
        for p in range.pages() {
            self.pages.insert(p, d);
        }
    }

    fn transition(&mut self, e: &TraceEntry, kind: RegionKind, next: LifecycleState) {
        let Some((_, state)) = self.regions.get_mut(&kind) else {
            return self.flag(Invariant::LifecycleLegality, e, format!("{kind:?} changes state while unregistered"));
        };
        let prev = *state;
        *state = next;
        if prev != next && !prev.can_move_to(next) {
            self.flag(Invariant::LifecycleLegality, e, format!("{kind:?}: illegal {prev:?} -> {next:?}"));
        }
    }

    fn check_access(&mut self, e: &TraceEntry, write: bool) {
        let Some(range) = e.page_range else { return };
        let bad = range.pages().find(|&p| match self.direction(p) {
            None => true,
            Some(d) => !(if write { d.permits_write() } else { d.permits_read() }),
        });
        if let Some(p) = bad {
            let what = if write { "write" } else { "read" };
            self.flag(Invariant::SmmuSoundness, e, format!("host {what} succeeded on page {p} mapped {:?}", self.direction(p)));
        }
        if !write {
            let hit: Vec<RegionKind> = self
                .regions
                .iter()
                .filter(|(k, (r, _))| PROTECTED.contains(k) && r.overlaps(&range))
                .map(|(k, _)| *k)
                .collect();
            for kind in hit {
                self.flag(Invariant::DirectionExclusivity, e, format!("host read overlaps {kind:?}"));
            }
        }
    }

    fn protected_unmapped(&self) -> Option<RegionKind> {
        PROTECTED.iter().copied().find(|k| match self.regions.get(k) {
            Some((r, _)) => r.pages().any(|p| self.direction(p).is_some()),
            None => true,
        })
    }

    fn step(&mut self, e: &TraceEntry) {
        if e.status != Status::Ok {
            return;
        }
        match e.event {
            Event::AllocRegion => {
                if let (Some(kind), Some(range)) = (e.region, e.page_range) {
                    let state = e.lifecycle.unwrap_or(LifecycleState::INITIAL);
                    if state != LifecycleState::INITIAL {
                        self.flag(Invariant::LifecycleLegality, e, format!("{kind:?} allocated in {state:?}"));
                    }
                    self.regions.insert(kind, (range, state));
                    self.set(range, e.direction);
                }
                return;
            }
            Event::DmaRead => self.check_access(e, false),
            Event::DmaWrite => self.check_access(e, true),
            Event::ExecuteModel | Event::ContinueRound => self.window = Some(false),
            Event::UnmapAck => {
                if self.window.is_none() {
                    self.flag(Invariant::Atomicity, e, "unmap ack outside a lock window".into());
                }
                self.window = Some(true);
            }
            Event::Unmap => {
                if let Some(range) = e.page_range {
                    self.set(range, None);
                }
            }
            Event::Remap => {
                if let Some(range) = e.page_range {
                    self.set(range, e.direction);
                }
                if e.region == Some(RegionKind::Input) && !self.input_zeroed {
                    self.flag(Invariant::CleanOrdering, e, "input remapped before it was zeroed".into());
                }
            }
            Event::Zeroize => {
                if e.region == Some(RegionKind::Input) {
                    self.input_zeroed = true;
                }
                if let Some(seg) = &mut self.cleaning {
                    seg.last_zeroize = Some(self.pos);
                }
            }
            Event::InputDecrypt => self.input_zeroed = false,
            Event::Clean => self.cleaning = Some(CleanSegment::default()),
            Event::Release => {
                if let Some(range) = e.page_range {
                    self.set(range, e.direction);
                }
                if let Some(seg) = &mut self.cleaning {
                    seg.first_release.get_or_insert(self.pos);
                }
            }
            _ => {}
        }
        if e.event.is_decrypt() {
            if self.window != Some(true) {
                self.flag(Invariant::Atomicity, e, format!("{:?} without a preceding unmap ack", e.event));
            } else if let Some(kind) = self.protected_unmapped() {
                self.flag(Invariant::Atomicity, e, format!("{:?} while {kind:?} is still mapped", e.event));
            }
        }
        if let (Some(kind), Some(state)) = (e.region, e.lifecycle) {
            self.transition(e, kind, state);
        }
        if e.event == Event::Release {
            if let Some(kind) = e.region {
                self.regions.remove(&kind);
            }
        }
        if self.regions.is_empty() {
            self.close_clean(e);
        }
    }

    fn close_clean(&mut self, e: &TraceEntry) {
        if let Some(seg) = self.cleaning.take() {
            if let (Some(z), Some(r)) = (seg.last_zeroize, seg.first_release) {
                if z > r {
                    self.flag(Invariant::CleanOrdering, e, format!("zeroize at line {z} after first release at line {r}"));
                }
            }
            self.window = None;
        }
    }
}

/// Checks every invariant over `trace`. `canaries` are byte strings that must
/// never appear in host-observable bytes.
pub fn trace_check(trace: &ExecutionTrace, canaries: &[Vec<u8>]) -> CheckReport {
    let mut replay = Replay::default();
    for e in trace.entries() {
        replay.step(e);
        replay.pos += 1;
    }
    let seen = trace.host_observable_bytes();
    for (i, c) in canaries.iter().enumerate() {
        if !c.is_empty() && seen.windows(c.len()).any(|w| w == c.as_slice()) {
            replay.violations.push(Violation {
                invariant: Invariant::NoPlaintextLeak,
                seq: None,
                message: format!("canary {i} ({}) is host-observable", hex::encode(c)),
            });
        }
    }
    CheckReport { entries: trace.entries().len(), canaries: canaries.len(), violations: replay.violations }
}
