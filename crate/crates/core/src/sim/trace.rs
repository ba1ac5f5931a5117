//! Trace records, the JSONL trace file and post-hoc checks over traces.

use serde::{Deserialize, Serialize};

use crate::evaluator::GateThresholds;
use crate::rules::RuleConfig;
use crate::state::{ControllerSituation, Counters, Fingerprint, TriggerCode};
use crate::transition::TransitionTable;

pub const TRACE_FORMAT: &str = "orchestra-trace/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ordinal: u32,
    pub before: ControllerSituation,
    pub trigger: TriggerCode,
    pub after: ControllerSituation,
    pub payload_digest: Fingerprint,
    pub counters: Counters,
    /// Logical seconds at the time the event was applied.
    pub logical_time: u64,
    /// Informational only; never compared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_us: Option<u64>,
}

impl TraceRecord {
    pub fn logical(&self) -> TraceRecord {
        TraceRecord {
            wall_clock_us: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub rules: RuleConfig,
    pub thresholds: GateThresholds,
    pub seconds_per_action: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn triggers(&self) -> Vec<TriggerCode> {
        self.records.iter().map(|r| r.trigger).collect()
    }

    pub fn terminal_trigger(&self) -> Option<TriggerCode> {
        self.records.last().map(|r| r.trigger)
    }

    /// Records without wall-clock fields, one JSON object per line.
    pub fn logical_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&r.logical()).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self, header: &TraceHeader) -> String {
        let mut out = serde_json::to_string(header).expect("trace header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses a trace file. The header line is optional.
    pub fn from_jsonl(text: &str) -> Result<(Option<TraceHeader>, Trace), TraceParseError> {
        let mut header = None;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fail = |e: serde_json::Error| TraceParseError {
                line: idx + 1,
                message: e.to_string(),
            };
            let value: serde_json::Value = serde_json::from_str(line).map_err(fail)?;
            if value.get("format").is_some() {
                if header.is_some() || !records.is_empty() {
                    return Err(TraceParseError {
                        line: idx + 1,
                        message: "header must be the first line".into(),
                    });
                }
                header = Some(serde_json::from_value(value).map_err(fail)?);
            } else {
                records.push(serde_json::from_value(value).map_err(fail)?);
            }
        }
        Ok((header, Trace::new(records)))
    }
}

/// Every problem found when re-checking a trace against `table`.
pub fn soundness_violations(trace: &Trace, table: &TransitionTable) -> Vec<String> {
    let mut out = Vec::new();
    let mut previous: Option<&TraceRecord> = None;
    for r in trace.records() {
        match table.lookup(r.before, r.trigger) {
            Some(target) if target == r.after => {}
            Some(target) => out.push(format!(
                "record {}: {} + {} went to {} but the table says {}",
                r.ordinal, r.before, r.trigger, r.after, target
            )),
            None => out.push(format!(
                "record {}: {} has no transition from {}",
                r.ordinal, r.trigger, r.before
            )),
        }
        match previous {
            None if r.before != ControllerSituation::Init => {
                out.push(format!("record {}: trace does not start at INIT", r.ordinal))
            }
            Some(p) if p.ordinal >= r.ordinal => {
                out.push(format!("record {}: ordinal not increasing", r.ordinal))
            }
            Some(p) if p.after != r.before => out.push(format!(
                "record {}: starts at {} but the previous record ended at {}",
                r.ordinal, r.before, p.after
            )),
            _ => {}
        }
        previous = Some(r);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum TraceDiff {
    Equal { records: usize },
    Diverged {
        /// 1-based position of the first differing record.
        ordinal: usize,
        left: Option<TraceRecord>,
        right: Option<TraceRecord>,
    },
}

impl TraceDiff {
    pub fn is_equal(&self) -> bool {
        matches!(self, Self::Equal { .. })
    }
}

/// Compares logical fields record by record; wall-clock readings are ignored.
pub fn diff_traces(a: &Trace, b: &Trace) -> TraceDiff {
    let (a, b) = (a.records(), b.records());
    for i in 0..a.len().max(b.len()) {
        let left = a.get(i).map(TraceRecord::logical);
        let right = b.get(i).map(TraceRecord::logical);
        if left != right {
            return TraceDiff::Diverged {
                ordinal: i + 1,
                left,
                right,
            };
        }
    }
    TraceDiff::Equal { records: a.len() }
}
