//! Quality gates: the gate decision function, its mapping onto QUALITY_CHECK
//! trigger codes, and the five-outcome final check.
//!
//! Similarity, progress and uncertainty estimates come from a [`Judge`]; in
//! simulation that is a scripted timeline, in production a model-backed
//! implementation of the same trait.

use serde::{Deserialize, Serialize};

use crate::planner::{SubtaskId, SubtaskNode};
use crate::state::{ControllerSituation, GlobalState, SubtaskStatus, TriggerCode};
use crate::transition::{Event, Payload};
use crate::worker::WorkerAction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeSignals {
    /// Current state against the target state.
    pub similarity: f64,
    /// Current state against the previous state.
    pub progress: f64,
    pub uncertainty: f64,
}

impl JudgeSignals {
    pub fn new(similarity: f64, progress: f64, uncertainty: f64) -> Self {
        Self {
            similarity,
            progress,
            uncertainty,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.similarity, self.progress, self.uncertainty]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateThresholds {
    pub tau_done: f64,
    pub tau_fail: f64,
    pub tau_supplement: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            tau_done: 0.9,
            tau_fail: 0.1,
            tau_supplement: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("gate thresholds must satisfy 0 <= tau_fail < tau_done <= 1 and 0 <= tau_supplement <= 1")]
pub struct InvalidThresholds;

impl GateThresholds {
    pub fn validate(&self) -> Result<(), InvalidThresholds> {
        let ordered = 0.0 <= self.tau_fail && self.tau_fail < self.tau_done && self.tau_done <= 1.0;
        if ordered && (0.0..=1.0).contains(&self.tau_supplement) {
            Ok(())
        } else {
            Err(InvalidThresholds)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    GateDone,
    GateFail,
    GateContinue,
    GateSupplement,
    GateError,
}

impl GateDecision {
    pub const ALL: [GateDecision; 5] = [
        Self::GateDone,
        Self::GateFail,
        Self::GateContinue,
        Self::GateSupplement,
        Self::GateError,
    ];
}

/// Decision precedence is done, fail, supplement, then continue as the
/// residual case. `progress == tau_fail` is not a failure.
pub fn gate_decide(signals: &JudgeSignals, thresholds: &GateThresholds) -> GateDecision {
    if !signals.is_valid() {
        GateDecision::GateError
    } else if signals.similarity > thresholds.tau_done {
        GateDecision::GateDone
    } else if signals.progress < thresholds.tau_fail {
        GateDecision::GateFail
    } else if signals.uncertainty > thresholds.tau_supplement {
        GateDecision::GateSupplement
    } else {
        GateDecision::GateContinue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckTrigger {
    PeriodicCheck,
    WorkerStale,
    WorkerSuccess,
}

impl CheckTrigger {
    pub const ALL: [CheckTrigger; 3] = [Self::PeriodicCheck, Self::WorkerStale, Self::WorkerSuccess];

    /// Which check a trigger entering QUALITY_CHECK requests.
    pub fn for_entry(trigger: TriggerCode) -> Option<CheckTrigger> {
        match trigger {
            TriggerCode::WorkerSuccess => Some(Self::WorkerSuccess),
            TriggerCode::WorkerStaleProgress => Some(Self::WorkerStale),
            TriggerCode::RuleQualityCheckSteps | TriggerCode::RuleQualityCheckRepeatedActions => {
                Some(Self::PeriodicCheck)
            }
            _ => None,
        }
    }
}

/// Maps a gate verdict onto a QUALITY_CHECK trigger code.
pub fn gate_trigger(gate: GateDecision, kind: CheckTrigger, last_unfulfilled: bool) -> TriggerCode {
    match (gate, kind) {
        (GateDecision::GateDone, _) if last_unfulfilled => TriggerCode::AllSubtasksCompleted,
        (GateDecision::GateDone, _) => TriggerCode::QualityCheckPassed,
        (GateDecision::GateFail, _) => TriggerCode::QualityCheckFailed,
        (GateDecision::GateContinue, CheckTrigger::WorkerStale) => TriggerCode::QualityCheckFailed,
        (GateDecision::GateContinue, _) => TriggerCode::QualityCheckPassed,
        (GateDecision::GateSupplement, _) => TriggerCode::QualityCheckSupplement,
        (GateDecision::GateError, _) => TriggerCode::QualityCheckError,
    }
}

pub struct CheckRequest<'a> {
    pub kind: CheckTrigger,
    /// 1-based count of quality checks in this run.
    pub ordinal: u32,
    pub subtask: Option<&'a SubtaskNode>,
    pub state: &'a GlobalState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub signals: JudgeSignals,
    /// Action the judge wants executed before work resumes.
    pub remediation: Option<WorkerAction>,
    /// What to look up if the verdict is supplement.
    pub query: Option<String>,
}

impl Assessment {
    pub fn signals(signals: JudgeSignals) -> Self {
        Self {
            signals,
            remediation: None,
            query: None,
        }
    }
}

pub struct FinalRequest<'a> {
    pub ordinal: u32,
    pub task: &'a str,
    pub state: &'a GlobalState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FinalVerdict {
    Passed,
    Failed,
    Pending {
        node: SubtaskNode,
        #[serde(default)]
        after: Vec<SubtaskId>,
    },
    Error,
    Impossible,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("judge unavailable: {0}")]
pub struct JudgeUnavailable(pub String);

pub trait Judge {
    fn assess(&mut self, request: &CheckRequest<'_>) -> Result<Assessment, JudgeUnavailable>;
    fn final_assess(&mut self, request: &FinalRequest<'_>) -> Result<FinalVerdict, JudgeUnavailable>;
}

fn current_node(state: &GlobalState) -> Option<&SubtaskNode> {
    let id = state.current_subtask.as_ref()?;
    state.plan.as_ref()?.node(id)
}

fn is_last_unfulfilled(state: &GlobalState) -> bool {
    let Some(current) = &state.current_subtask else {
        return false;
    };
    state
        .subtasks
        .iter()
        .all(|(id, s)| id == current || *s == SubtaskStatus::Fulfilled)
        && state.subtasks.contains_key(current)
}

/// Runs one quality check and returns the resulting controller event.
pub fn quality_check(
    kind: CheckTrigger,
    ordinal: u32,
    state: &GlobalState,
    judge: &mut dyn Judge,
    thresholds: &GateThresholds,
) -> Event {
    if state.situation != ControllerSituation::QualityCheck {
        return Event::note(TriggerCode::QualityCheckError, "quality check outside QUALITY_CHECK");
    }
    let subtask = current_node(state);
    let request = CheckRequest {
        kind,
        ordinal,
        subtask,
        state,
    };
    let assessment = match judge.assess(&request) {
        Ok(a) => a,
        Err(e) => return Event::note(TriggerCode::QualityCheckError, e.to_string()),
    };
    let gate = gate_decide(&assessment.signals, thresholds);
    if let Some(action) = assessment.remediation {
        if matches!(gate, GateDecision::GateFail | GateDecision::GateContinue | GateDecision::GateSupplement) {
            return Event::new(TriggerCode::QualityCheckExecuteAction, Payload::Action(action));
        }
    }
    let trigger = gate_trigger(gate, kind, is_last_unfulfilled(state));
    let payload = match trigger {
        TriggerCode::QualityCheckSupplement => {
            let query = assessment
                .query
                .or_else(|| subtask.map(|n| n.title.clone()))
                .unwrap_or_default();
            Payload::Query(query)
        }
        TriggerCode::QualityCheckError => Payload::Note("judge signals out of range".into()),
        _ => Payload::Gate(gate),
    };
    Event::new(trigger, payload)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalCheckOutcome {
    FinalCheckPassed,
    FinalCheckFailed,
    FinalCheckPending,
    FinalCheckError,
    TaskImpossible,
}

impl FinalCheckOutcome {
    pub fn trigger(self) -> TriggerCode {
        match self {
            Self::FinalCheckPassed => TriggerCode::FinalCheckPassed,
            Self::FinalCheckFailed => TriggerCode::FinalCheckFailed,
            Self::FinalCheckPending => TriggerCode::FinalCheckPending,
            Self::FinalCheckError => TriggerCode::FinalCheckError,
            Self::TaskImpossible => TriggerCode::TaskImpossible,
        }
    }

    pub fn from_trigger(trigger: TriggerCode) -> Option<Self> {
        [
            Self::FinalCheckPassed,
            Self::FinalCheckFailed,
            Self::FinalCheckPending,
            Self::FinalCheckError,
            Self::TaskImpossible,
        ]
        .into_iter()
        .find(|o| o.trigger() == trigger)
    }
}

/// Holistic verification once every subtask is fulfilled. A pending verdict
/// carries the plan grown by the newly discovered subtask.
pub fn final_check(task: &str, ordinal: u32, state: &GlobalState, judge: &mut dyn Judge) -> Event {
    if !state.all_fulfilled() {
        return Event::note(TriggerCode::FinalCheckError, "final check with unfulfilled subtasks");
    }
    let request = FinalRequest { ordinal, task, state };
    let verdict = match judge.final_assess(&request) {
        Ok(v) => v,
        Err(e) => return Event::note(TriggerCode::FinalCheckError, e.to_string()),
    };
    match verdict {
        FinalVerdict::Passed => Event::bare(TriggerCode::FinalCheckPassed),
        FinalVerdict::Failed => Event::bare(TriggerCode::FinalCheckFailed),
        FinalVerdict::Error => Event::bare(TriggerCode::FinalCheckError),
        FinalVerdict::Impossible => Event::bare(TriggerCode::TaskImpossible),
        FinalVerdict::Pending { node, after } => {
            let Some(plan) = state.plan.as_ref() else {
                return Event::note(TriggerCode::FinalCheckError, "no plan to extend");
            };
            match plan.with_node(node, &after) {
                Ok(grown) => Event::new(TriggerCode::FinalCheckPending, Payload::Plan(grown)),
                Err(e) => Event::note(TriggerCode::FinalCheckError, e.to_string()),
            }
        }
    }
}
