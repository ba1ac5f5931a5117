//! Declarative scenario documents.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::controller::{ExecOutcome, Injection};
use crate::evaluator::{FinalVerdict, GateThresholds};
use crate::planner::{AdjustmentLevel, SubtaskId, SubtaskNode};
use crate::rules::RuleConfig;
use crate::state::digest_of;
use crate::worker::WorkerAction;

pub const SCENARIO_FORMAT: &str = "orchestra-scenario/1";

/// One planner reply.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFixture {
    #[serde(default)]
    pub nodes: Vec<SubtaskNode>,
    #[serde(default)]
    pub edges: Vec<(SubtaskId, SubtaskId)>,
    /// Reply "intractable" instead of a plan.
    #[serde(default)]
    pub impossible: bool,
    /// Fail the provider call with this message.
    #[serde(default)]
    pub fail: Option<String>,
}

/// A planner reply used for a specific attempt and/or level.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplanFixture {
    #[serde(default)]
    pub attempt: Option<u32>,
    #[serde(default)]
    pub level: Option<AdjustmentLevel>,
    #[serde(default)]
    pub nodes: Vec<SubtaskNode>,
    #[serde(default)]
    pub edges: Vec<(SubtaskId, SubtaskId)>,
    #[serde(default)]
    pub impossible: bool,
    #[serde(default)]
    pub fail: Option<String>,
}

impl ReplanFixture {
    pub fn plan(&self) -> PlanFixture {
        PlanFixture {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            impossible: self.impossible,
            fail: self.fail.clone(),
        }
    }
}

/// One scripted worker reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkerStep {
    Generate {
        action: WorkerAction,
    },
    Done,
    Failed,
    CannotExecute {
        #[serde(default)]
        reason: String,
    },
    Supplement {
        query: String,
    },
    Stale {
        #[serde(default)]
        reason: String,
    },
    /// No reply at all.
    Silent,
    /// Read artifact `read` and memorize `prefix + content` under `write`.
    Relay {
        read: String,
        #[serde(default)]
        write: Option<String>,
        #[serde(default)]
        prefix: String,
    },
}

/// Scripted judge signals for one quality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeEntry {
    /// 1-based quality-check ordinal.
    pub check: u32,
    #[serde(default)]
    pub similarity: f64,
    #[serde(default)]
    pub progress: f64,
    #[serde(default)]
    pub uncertainty: f64,
    #[serde(default)]
    pub remediation: Option<WorkerAction>,
    #[serde(default)]
    pub query: Option<String>,
    /// The judge is unreachable for this check.
    #[serde(default)]
    pub error: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplementFixture {
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    #[serde(default)]
    pub unavailable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: String,
    #[serde(default)]
    pub name: String,
    pub task: String,
    /// Required; optional here only so its absence is reported by name.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_seconds_per_action")]
    pub seconds_per_action: u64,
    #[serde(default)]
    pub rules: RuleConfig,
    #[serde(default)]
    pub thresholds: GateThresholds,
    pub plan: PlanFixture,
    #[serde(default)]
    pub replans: Vec<ReplanFixture>,
    #[serde(default)]
    pub workers: BTreeMap<SubtaskId, Vec<WorkerStep>>,
    #[serde(default)]
    pub judge: Vec<JudgeEntry>,
    /// Final-check verdicts in order; `passed` once exhausted.
    #[serde(default)]
    pub verdicts: Vec<FinalVerdict>,
    /// Outcome per execution attempt; `completed` once exhausted.
    #[serde(default)]
    pub executor: Vec<ExecOutcome>,
    /// Chance that an unscheduled execution fails, drawn from the seed.
    #[serde(default)]
    pub error_rate: f64,
    /// Observation tokens handed to workers, cycled.
    #[serde(default)]
    pub observations: Vec<String>,
    #[serde(default)]
    pub supplement: SupplementFixture,
    #[serde(default)]
    pub injections: Vec<Injection>,
}

fn default_seconds_per_action() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses TOML, or JSON when the document starts with `{`, then validates.
pub fn load_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = if document.trim_start().starts_with('{') {
        serde_json::from_str(document).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    } else {
        toml::from_str(document).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(document, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.format != SCENARIO_FORMAT {
            return Err(invalid("format", format!("expected `{SCENARIO_FORMAT}`")));
        }
        if self.seed.is_none() {
            return Err(invalid("seed", "a seed is required for deterministic runs"));
        }
        if self.task.trim().is_empty() {
            return Err(invalid("task", "task text is empty"));
        }
        self.rules
            .validate()
            .map_err(|e| invalid(format!("rules.{}", e.0), e.to_string()))?;
        self.thresholds
            .validate()
            .map_err(|e| invalid("thresholds", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(invalid("error_rate", "must lie in [0, 1]"));
        }
        let mut known = BTreeSet::new();
        check_fixture("plan", &self.plan, &mut known)?;
        for (i, r) in self.replans.iter().enumerate() {
            check_fixture(&format!("replans[{i}]"), &r.plan(), &mut known)?;
        }
        for id in self.workers.keys() {
            if !known.contains(id) {
                return Err(invalid(
                    format!("workers.{id}"),
                    "no plan fixture defines this subtask",
                ));
            }
        }
        for (i, entry) in self.judge.iter().enumerate() {
            if entry.check == 0 {
                return Err(invalid(format!("judge[{i}].check"), "check ordinals start at 1"));
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            if inj.situation.is_terminal() {
                return Err(invalid(format!("injections[{i}].situation"), "DONE accepts no events"));
            }
            if inj.occurrence == 0 {
                return Err(invalid(format!("injections[{i}].occurrence"), "occurrences start at 1"));
            }
        }
        Ok(())
    }

    /// Stable digest of the parsed scenario, hex encoded.
    pub fn digest(&self) -> String {
        digest_of(self).to_hex()
    }
}

fn check_fixture(
    field: &str,
    fixture: &PlanFixture,
    known: &mut BTreeSet<SubtaskId>,
) -> Result<(), ScenarioError> {
    let ids: BTreeSet<&SubtaskId> = fixture.nodes.iter().map(|n| &n.id).collect();
    for (from, to) in &fixture.edges {
        for end in [from, to] {
            if !ids.contains(end) {
                return Err(invalid(
                    format!("{field}.edges"),
                    format!("edge endpoint `{end}` is not a node of this fixture"),
                ));
            }
        }
    }
    known.extend(ids.into_iter().cloned());
    Ok(())
}
