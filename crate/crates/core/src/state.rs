//! Status vocabularies, the closed trigger-code set, and the global state
//! tuple the controller mutates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::planner::{SubtaskDag, SubtaskId};
use crate::worker::WorkerAction;

/// What the controller is doing right now.
///
/// `REPLAN` is accepted as an input alias for [`ControllerSituation::Plan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ControllerSituation {
    Init,
    #[serde(alias = "REPLAN")]
    Plan,
    GetAction,
    ExecuteAction,
    QualityCheck,
    Supplement,
    FinalCheck,
    Done,
}

impl ControllerSituation {
    pub const ALL: [ControllerSituation; 8] = [
        Self::Init,
        Self::Plan,
        Self::GetAction,
        Self::ExecuteAction,
        Self::QualityCheck,
        Self::Supplement,
        Self::FinalCheck,
        Self::Done,
    ];

    /// Every situation a transition may leave from.
    pub const ACTIVE: [ControllerSituation; 7] = [
        Self::Init,
        Self::Plan,
        Self::GetAction,
        Self::ExecuteAction,
        Self::QualityCheck,
        Self::Supplement,
        Self::FinalCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Init => "INIT",
            Self::Plan => "PLAN",
            Self::GetAction => "GET_ACTION",
            Self::ExecuteAction => "EXECUTE_ACTION",
            Self::QualityCheck => "QUALITY_CHECK",
            Self::Supplement => "SUPPLEMENT",
            Self::FinalCheck => "FINAL_CHECK",
            Self::Done => "DONE",
        }
    }

    pub fn is_terminal(self) -> bool {
        self == Self::Done
    }
}

impl fmt::Display for ControllerSituation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown controller situation `{0}`")]
pub struct UnknownSituation(pub String);

impl FromStr for ControllerSituation {
    type Err = UnknownSituation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "REPLAN" {
            return Ok(Self::Plan);
        }
        Self::ALL
            .into_iter()
            .find(|sit| sit.as_str() == s)
            .ok_or_else(|| UnknownSituation(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Created,
    Pending,
    OnHold,
    Fulfilled,
    Rejected,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Fulfilled | Self::Rejected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    Ready,
    Pending,
    Stale,
    Fulfilled,
    Rejected,
}

impl SubtaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Fulfilled | Self::Rejected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Executed,
    Timeout,
    Blocked,
    Error,
}

/// Row groups of the trigger reference table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TriggerCategory {
    RuleValidation,
    TaskStatusRules,
    InitState,
    GetActionState,
    ExecuteAction,
    QualityCheck,
    PlanState,
    Supplement,
    FinalCheck,
    ErrorRecovery,
}

impl TriggerCategory {
    pub const ALL: [TriggerCategory; 10] = [
        Self::RuleValidation,
        Self::TaskStatusRules,
        Self::InitState,
        Self::GetActionState,
        Self::ExecuteAction,
        Self::QualityCheck,
        Self::PlanState,
        Self::Supplement,
        Self::FinalCheck,
        Self::ErrorRecovery,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::RuleValidation => "Rule Validation",
            Self::TaskStatusRules => "Task Status Rules",
            Self::InitState => "INIT State",
            Self::GetActionState => "GET_ACTION State",
            Self::ExecuteAction => "EXECUTE_ACTION",
            Self::QualityCheck => "QUALITY_CHECK",
            Self::PlanState => "PLAN State",
            Self::Supplement => "SUPPLEMENT",
            Self::FinalCheck => "FINAL_CHECK",
            Self::ErrorRecovery => "Error Recovery",
        }
    }

    /// The situation in which codes of this category are emitted, or `None`
    /// for the global monitors that are legal from every active situation.
    pub fn source(self) -> Option<ControllerSituation> {
        use ControllerSituation as S;
        match self {
            Self::RuleValidation | Self::TaskStatusRules | Self::ErrorRecovery => None,
            Self::InitState => Some(S::Init),
            Self::GetActionState => Some(S::GetAction),
            Self::ExecuteAction => Some(S::ExecuteAction),
            Self::QualityCheck => Some(S::QualityCheck),
            Self::PlanState => Some(S::Plan),
            Self::Supplement => Some(S::Supplement),
            Self::FinalCheck => Some(S::FinalCheck),
        }
    }

    pub fn is_global(self) -> bool {
        self.source().is_none()
    }
}

impl fmt::Display for TriggerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

macro_rules! trigger_codes {
    ($( $variant:ident => $name:literal, $cat:ident, $target:ident, $desc:literal; )*) => {
        /// The closed vocabulary of 40 trigger codes driving every transition.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum TriggerCode {
            $( #[serde(rename = $name)] $variant, )*
        }

        impl TriggerCode {
            pub const ALL: [TriggerCode; 40] = [ $( TriggerCode::$variant, )* ];

            pub fn as_str(self) -> &'static str {
                match self { $( TriggerCode::$variant => $name, )* }
            }

            pub fn category(self) -> TriggerCategory {
                match self { $( TriggerCode::$variant => TriggerCategory::$cat, )* }
            }

            /// Target situation listed in the reference table.
            pub fn target(self) -> ControllerSituation {
                match self { $( TriggerCode::$variant => ControllerSituation::$target, )* }
            }

            pub fn description(self) -> &'static str {
                match self { $( TriggerCode::$variant => $desc, )* }
            }
        }
    };
}

trigger_codes! {
    RuleQualityCheckSteps => "rule_quality_check_steps", RuleValidation, QualityCheck, "Periodic quality check every 5 steps";
    RuleQualityCheckRepeatedActions => "rule_quality_check_repeated_actions", RuleValidation, QualityCheck, "Triggered when identical actions repeated >3 times";
    RuleReplanLongExecution => "rule_replan_long_execution", RuleValidation, Plan, "Single subtask execution exceeds 15 actions";

    RuleMaxStateSwitchesReached => "rule_max_state_switches_reached", TaskStatusRules, Done, "Maximum state switches exceeded";
    RulePlanNumberExceeded => "rule_plan_number_exceeded", TaskStatusRules, Done, "Planning attempts exceed threshold";
    RuleStateSwitchCountExceeded => "rule_state_switch_count_exceeded", TaskStatusRules, Done, "State switch count limit reached";
    RuleTaskCompleted => "rule_task_completed", TaskStatusRules, Done, "Task successfully completed";
    RuleTaskRuntimeExceeded => "rule_task_runtime_exceeded", TaskStatusRules, Done, "Task runtime limit exceeded";

    SubtaskReady => "subtask_ready", InitState, GetAction, "First subtask available for execution";
    NoSubtasks => "no_subtasks", InitState, Plan, "No subtasks available, need planning";
    InitError => "init_error", InitState, Plan, "Error during initialization";

    NoCurrentSubtaskId => "no_current_subtask_id", GetActionState, Init, "Missing current subtask identifier";
    SubtaskNotFound => "subtask_not_found", GetActionState, Init, "Referenced subtask not found";
    WorkerSuccess => "worker_success", GetActionState, QualityCheck, "Worker completed subtask successfully";
    WorkCannotExecute => "work_cannot_execute", GetActionState, Plan, "Worker cannot execute current subtask";
    WorkerStaleProgress => "worker_stale_progress", GetActionState, QualityCheck, "Worker progress stagnated";
    WorkerSupplement => "worker_supplement", GetActionState, Supplement, "Worker requires additional information";
    WorkerGenerateAction => "worker_generate_action", GetActionState, ExecuteAction, "Worker generated new action";
    NoWorkerDecision => "no_worker_decision", GetActionState, Plan, "No decision from worker";
    GetActionError => "get_action_error", GetActionState, Plan, "Error during action generation";

    ExecutionError => "execution_error", ExecuteAction, GetAction, "Error during action execution";
    CommandCompleted => "command_completed", ExecuteAction, GetAction, "Command executed successfully";
    NoCommand => "no_command", ExecuteAction, GetAction, "No command available for execution";

    AllSubtasksCompleted => "all_subtasks_completed", QualityCheck, FinalCheck, "All subtasks finished";
    QualityCheckPassed => "quality_check_passed", QualityCheck, GetAction, "Quality assessment successful";
    QualityCheckFailed => "quality_check_failed", QualityCheck, Plan, "Quality assessment failed";
    QualityCheckSupplement => "quality_check_supplement", QualityCheck, Supplement, "Additional info needed";
    QualityCheckExecuteAction => "quality_check_execute_action", QualityCheck, ExecuteAction, "Additional execution required";
    QualityCheckError => "quality_check_error", QualityCheck, Plan, "Error during quality check";

    SubtaskReadyAfterPlan => "subtask_ready_after_plan", PlanState, GetAction, "New subtasks ready after planning";
    PlanError => "plan_error", PlanState, Init, "Error during planning phase";

    SupplementCompleted => "supplement_completed", Supplement, Plan, "Information supplement finished";
    SupplementError => "supplement_error", Supplement, Plan, "Error during supplementation";

    FinalCheckError => "final_check_error", FinalCheck, Done, "Error during final verification";
    FinalCheckPending => "final_check_pending", FinalCheck, GetAction, "Additional subtasks discovered";
    FinalCheckPassed => "final_check_passed", FinalCheck, Done, "Final verification successful";
    FinalCheckFailed => "final_check_failed", FinalCheck, Plan, "Final verification failed";
    TaskImpossible => "task_impossible", FinalCheck, Done, "Task determined impossible";

    UnknownState => "unknown_state", ErrorRecovery, Init, "Unrecognized system state";
    ErrorRecovery => "error_recovery", ErrorRecovery, Init, "General error recovery";
}

impl fmt::Display for TriggerCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown trigger code `{0}`")]
pub struct UnknownTrigger(pub String);

impl FromStr for TriggerCode {
    type Err = UnknownTrigger;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|code| code.as_str() == s)
            .ok_or_else(|| UnknownTrigger(s.to_string()))
    }
}

/// Category label of a trigger code.
pub fn classify_trigger(code: TriggerCode) -> &'static str {
    code.category().label()
}

/// Digest identifying an action by variant and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 16]);

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 || !s.is_ascii() {
            return None;
        }
        let mut out = [0u8; 16];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(pair, 16).ok()?;
        }
        Some(Self(out))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Fingerprint::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid fingerprint"))
    }
}

/// Truncated SHA-256 over any serializable value's canonical JSON.
pub(crate) fn digest_of<T: Serialize + ?Sized>(value: &T) -> Fingerprint {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    let hash = Sha256::digest(&bytes);
    let mut out = [0u8; 16];
    out.copy_from_slice(&hash[..16]);
    Fingerprint(out)
}

/// Fingerprint of an action: variant plus every parameter, nothing else.
pub fn action_fingerprint(action: &WorkerAction) -> Fingerprint {
    digest_of(action)
}

/// Measured quantities the rule engine bounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub steps_since_quality_check: u32,
    pub repeated_action_run: u32,
    pub current_subtask_actions: u32,
    pub state_switches: u32,
    pub plan_attempts: u32,
    /// Logical seconds.
    pub task_started_at: u64,
    pub last_action_fingerprint: Option<Fingerprint>,
}

impl Counters {
    pub fn started_at(task_started_at: u64) -> Self {
        Self {
            task_started_at,
            ..Self::default()
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.last_action_fingerprint.is_none() || self.repeated_action_run >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterEvent {
    ActionExecuted(Fingerprint),
    StateSwitched,
    PlanAttempted,
    QualityCheckRan,
    SubtaskChanged,
}

pub fn record_event(mut counters: Counters, event: CounterEvent) -> Counters {
    match event {
        CounterEvent::ActionExecuted(digest) => {
            counters.steps_since_quality_check += 1;
            counters.current_subtask_actions += 1;
            counters.repeated_action_run = if counters.last_action_fingerprint == Some(digest) {
                counters.repeated_action_run + 1
            } else {
                1
            };
            counters.last_action_fingerprint = Some(digest);
        }
        CounterEvent::StateSwitched => counters.state_switches += 1,
        CounterEvent::PlanAttempted => counters.plan_attempts += 1,
        CounterEvent::QualityCheckRan => counters.steps_since_quality_check = 0,
        CounterEvent::SubtaskChanged => {
            counters.current_subtask_actions = 0;
            counters.repeated_action_run = 0;
            counters.last_action_fingerprint = None;
        }
    }
    counters
}

/// The tuple (task status, subtask statuses, execution status, situation)
/// plus counters and the active plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub task: TaskStatus,
    pub subtasks: BTreeMap<SubtaskId, SubtaskStatus>,
    pub execution: Option<ExecutionStatus>,
    pub situation: ControllerSituation,
    pub counters: Counters,
    pub current_subtask: Option<SubtaskId>,
    pub plan: Option<SubtaskDag>,
}

impl GlobalState {
    pub fn new(task_started_at: u64) -> Self {
        Self {
            task: TaskStatus::Created,
            subtasks: BTreeMap::new(),
            execution: None,
            situation: ControllerSituation::Init,
            counters: Counters::started_at(task_started_at),
            current_subtask: None,
            plan: None,
        }
    }

    pub fn status_of(&self, id: &SubtaskId) -> Option<SubtaskStatus> {
        self.subtasks.get(id).copied()
    }

    /// First ready subtask in plan order.
    pub fn next_ready(&self) -> Option<SubtaskId> {
        let plan = self.plan.as_ref()?;
        plan.order()
            .iter()
            .find(|id| self.subtasks.get(*id) == Some(&SubtaskStatus::Ready))
            .cloned()
    }

    pub fn all_fulfilled(&self) -> bool {
        !self.subtasks.is_empty()
            && self.subtasks.values().all(|s| *s == SubtaskStatus::Fulfilled)
    }

    /// Recomputes `ready`/`pending` for every non-terminal, non-stale subtask
    /// from its predecessors.
    pub fn refresh_readiness(&mut self) {
        let Some(plan) = self.plan.as_ref() else {
            return;
        };
        let fulfilled: Vec<bool> = plan
            .order()
            .iter()
            .map(|id| {
                plan.predecessors(id)
                    .all(|p| self.subtasks.get(p) == Some(&SubtaskStatus::Fulfilled))
            })
            .collect();
        for (id, preds_done) in plan.order().iter().zip(fulfilled) {
            let status = self.subtasks.entry(id.clone()).or_insert(SubtaskStatus::Pending);
            if matches!(status, SubtaskStatus::Ready | SubtaskStatus::Pending) {
                *status = if preds_done {
                    SubtaskStatus::Ready
                } else {
                    SubtaskStatus::Pending
                };
            }
        }
    }

    /// Lists violated structural invariants; empty when the state is sound.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.situation == ControllerSituation::Done && !self.task.is_terminal() {
            out.push(format!("DONE with non-terminal task status {:?}", self.task));
        }
        if let Some(id) = &self.current_subtask {
            if !self.subtasks.contains_key(id) {
                out.push(format!("current subtask `{id}` does not exist"));
            }
        }
        if !self.counters.is_well_formed() {
            out.push("repeated_action_run is 0 while a fingerprint is recorded".to_string());
        }
        if let Some(plan) = &self.plan {
            for id in plan.order() {
                if self.subtasks.get(id) == Some(&SubtaskStatus::Ready)
                    && plan
                        .predecessors(id)
                        .any(|p| self.subtasks.get(p) != Some(&SubtaskStatus::Fulfilled))
                {
                    out.push(format!("subtask `{id}` is ready with unfulfilled predecessors"));
                }
            }
            if plan.len() != self.subtasks.len() {
                out.push("subtask status map does not match plan nodes".to_string());
            }
        } else if !self.subtasks.is_empty() {
            out.push("subtask statuses without a plan".to_string());
        }
        out
    }
}
