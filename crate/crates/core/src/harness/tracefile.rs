//! JSONL trace files: an optional header line, then one entry per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::world::CANARY_LEN;
use crate::host::AttackPolicy;
use crate::trace::{ExecutionTrace, TraceEntry};

pub const TRACE_FORMAT: &str = "ascendsim-trace";
pub const TRACE_VERSION: u32 = 1;

/// Auditor metadata. Not host-observable: the canaries listed here are
/// what the leakage check searches for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub attack: AttackPolicy,
    #[serde(default)]
    pub canaries: Vec<String>,
}

impl TraceHeader {
    pub fn new(seed: u64, attack: AttackPolicy, canaries: &[[u8; CANARY_LEN]]) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            seed,
            attack,
            canaries: canaries.iter().map(hex::encode).collect(),
        }
    }

    pub fn canary_bytes(&self) -> Result<Vec<Vec<u8>>, hex::FromHexError> {
        self.canaries.iter().map(hex::decode).collect()
    }
}

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: header must be the first line")]
    MisplacedHeader { line: usize },
    #[error("unsupported trace format {0:?} version {1}")]
    Format(String, u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub trace: ExecutionTrace,
}

impl TraceFile {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in self.trace.entries() {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        out
    }
}

/// Parses a trace file. The header is optional so hand-written traces can
/// be checked too.
pub fn parse_jsonl(text: &str) -> Result<(Option<TraceHeader>, ExecutionTrace), TraceFileError> {
    let mut header = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|source| TraceFileError::Json { line: line_no, source })?;
        if value.get("format").is_some() {
            if !entries.is_empty() || header.is_some() {
                return Err(TraceFileError::MisplacedHeader { line: line_no });
            }
            let h: TraceHeader =
                serde_json::from_value(value).map_err(|source| TraceFileError::Json { line: line_no, source })?;
            if h.format != TRACE_FORMAT || h.version != TRACE_VERSION {
                return Err(TraceFileError::Format(h.format, h.version));
            }
            header = Some(h);
        } else {
            let e: TraceEntry =
                serde_json::from_value(value).map_err(|source| TraceFileError::Json { line: line_no, source })?;
            entries.push(e);
        }
    }
    Ok((header, ExecutionTrace::from_entries(entries)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Actor, Event};

    #[test]
    fn round_trip() {
        let mut trace = ExecutionTrace::new();
        trace.push(TraceEntry::new(Actor::Host, Event::DmaRead).observed(b"xyz"));
        trace.push(TraceEntry::new(Actor::MemoryManager, Event::UnmapAck));
        let file = TraceFile { header: TraceHeader::new(9, AttackPolicy::Honest, &[[7u8; 16]]), trace };
        let text = file.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        let (h, t) = parse_jsonl(&text).unwrap();
        assert_eq!(h.unwrap(), file.header);
        assert_eq!(t, file.trace);
    }

    #[test]
    fn header_must_come_first() {
        let e = r#"{"seq":0,"actor":"HOST","event":"CLEAN","status":"OK"}"#;
        let h = serde_json::to_string(&TraceHeader::new(0, AttackPolicy::Honest, &[])).unwrap();
        assert!(parse_jsonl(&format!("{e}\n{h}\n")).is_err());
        assert!(parse_jsonl(&format!("{h}\n{e}\n")).is_ok());
        assert!(parse_jsonl("{\"seq\":0}\n").is_err());
    }
}
