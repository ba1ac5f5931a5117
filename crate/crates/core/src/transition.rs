//! The controller step function and the trigger look-up table behind it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::evaluator::GateDecision;
use crate::planner::{carry_statuses, SubtaskDag};
use crate::rules::{check_rules, RuleConfig};
use crate::state::{
    digest_of, record_event, ControllerSituation, CounterEvent, ExecutionStatus, Fingerprint,
    GlobalState, SubtaskStatus, TaskStatus, TriggerCategory, TriggerCode,
};
use crate::worker::WorkerAction;

/// Source/trigger pairs legal beyond each category's own situation and the
/// global monitors. A planner can declare the task impossible.
pub const EXTRA_SOURCES: &[(ControllerSituation, TriggerCode)] =
    &[(ControllerSituation::Plan, TriggerCode::TaskImpossible)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableEntry {
    pub source: ControllerSituation,
    pub trigger: TriggerCode,
    pub target: ControllerSituation,
}

impl fmt::Display for TableEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}) -> {}", self.source, self.trigger, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransitionTable {
    entries: BTreeMap<(ControllerSituation, TriggerCode), ControllerSituation>,
}

impl TransitionTable {
    /// The reference table: every code from its category's situation, global
    /// monitors and error recovery from every active situation.
    pub fn canonical() -> Self {
        let mut entries = BTreeMap::new();
        for code in TriggerCode::ALL {
            for source in canonical_sources(code) {
                entries.insert((source, code), code.target());
            }
        }
        Self { entries }
    }

    pub fn from_entries(rows: impl IntoIterator<Item = TableEntry>) -> Self {
        Self {
            entries: rows
                .into_iter()
                .map(|e| ((e.source, e.trigger), e.target))
                .collect(),
        }
    }

    pub fn lookup(&self, source: ControllerSituation, trigger: TriggerCode) -> Option<ControllerSituation> {
        self.entries.get(&(source, trigger)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = TableEntry> + '_ {
        self.entries.iter().map(|(&(source, trigger), &target)| TableEntry {
            source,
            trigger,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entry: TableEntry) {
        self.entries.insert((entry.source, entry.trigger), entry.target);
    }

    pub fn remove(&mut self, source: ControllerSituation, trigger: TriggerCode) -> Option<ControllerSituation> {
        self.entries.remove(&(source, trigger))
    }

    /// One JSON record per entry.
    pub fn to_jsonl(&self) -> String {
        self.entries()
            .map(|e| serde_json::to_string(&e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TableParseError> {
        let mut table = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: TableEntry = serde_json::from_str(line).map_err(|e| TableParseError {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if table.lookup(entry.source, entry.trigger).is_some() {
                return Err(TableParseError {
                    line: idx + 1,
                    message: format!("duplicate row for ({}, {})", entry.source, entry.trigger),
                });
            }
            table.insert(entry);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("table line {line}: {message}")]
pub struct TableParseError {
    pub line: usize,
    pub message: String,
}

/// Situations a code may legally fire from.
pub fn canonical_sources(code: TriggerCode) -> Vec<ControllerSituation> {
    let mut out: Vec<ControllerSituation> = match code.category().source() {
        Some(source) => vec![source],
        None => ControllerSituation::ACTIVE.to_vec(),
    };
    out.extend(
        EXTRA_SOURCES
            .iter()
            .filter(|(_, c)| *c == code)
            .map(|(s, _)| *s),
    );
    out
}

fn canonical_table() -> &'static TransitionTable {
    static TABLE: OnceLock<TransitionTable> = OnceLock::new();
    TABLE.get_or_init(TransitionTable::canonical)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("no transition leaves DONE")]
    TerminalState,
    #[error("undefined transition from {from} on {trigger}")]
    UndefinedTransition {
        from: ControllerSituation,
        trigger: TriggerCode,
    },
    #[error("{trigger} cannot carry a {payload} payload")]
    PayloadMismatch {
        trigger: TriggerCode,
        payload: &'static str,
    },
}

pub fn next_situation(
    current: ControllerSituation,
    trigger: TriggerCode,
) -> Result<ControllerSituation, EngineError> {
    next_situation_in(canonical_table(), current, trigger)
}

pub fn next_situation_in(
    table: &TransitionTable,
    current: ControllerSituation,
    trigger: TriggerCode,
) -> Result<ControllerSituation, EngineError> {
    if current.is_terminal() {
        return Err(EngineError::TerminalState);
    }
    table
        .lookup(current, trigger)
        .ok_or(EngineError::UndefinedTransition { from: current, trigger })
}

/// Attachment carried by an event: the action taken, the observed outcome,
/// or whatever a component produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Payload {
    None,
    Action(WorkerAction),
    Executed {
        fingerprint: Option<Fingerprint>,
        status: ExecutionStatus,
    },
    Plan(SubtaskDag),
    Gate(GateDecision),
    Query(String),
    Text(String),
    /// Free-form diagnostic.
    Note(String),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Action(_) => "action",
            Self::Executed { .. } => "executed",
            Self::Plan(_) => "plan",
            Self::Gate(_) => "gate",
            Self::Query(_) => "query",
            Self::Text(_) => "text",
            Self::Note(_) => "note",
        }
    }

    pub fn digest(&self) -> Fingerprint {
        digest_of(self)
    }

    fn is_inert(&self) -> bool {
        matches!(self, Self::None | Self::Note(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub trigger: TriggerCode,
    pub payload: Payload,
}

impl Event {
    pub fn new(trigger: TriggerCode, payload: Payload) -> Self {
        Self { trigger, payload }
    }

    pub fn bare(trigger: TriggerCode) -> Self {
        Self::new(trigger, Payload::None)
    }

    pub fn note(trigger: TriggerCode, note: impl Into<String>) -> Self {
        Self::new(trigger, Payload::Note(note.into()))
    }
}

fn payload_fits(trigger: TriggerCode, payload: &Payload) -> bool {
    use TriggerCode as T;
    match trigger {
        T::WorkerGenerateAction | T::QualityCheckExecuteAction => matches!(payload, Payload::Action(_)),
        T::CommandCompleted | T::ExecutionError => {
            matches!(payload, Payload::Executed { fingerprint: Some(_), .. })
        }
        T::NoCommand => payload.is_inert() || matches!(payload, Payload::Executed { fingerprint: None, .. }),
        T::SubtaskReadyAfterPlan | T::FinalCheckPending => matches!(payload, Payload::Plan(_)),
        T::QualityCheckPassed | T::AllSubtasksCompleted | T::QualityCheckFailed => {
            payload.is_inert() || matches!(payload, Payload::Gate(_))
        }
        T::WorkerSupplement | T::QualityCheckSupplement => {
            payload.is_inert() || matches!(payload, Payload::Query(_))
        }
        T::SupplementCompleted => payload.is_inert() || matches!(payload, Payload::Text(_)),
        _ => payload.is_inert(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: GlobalState,
    /// The trigger actually applied; differs from the event's only on a
    /// downgrade.
    pub applied: TriggerCode,
    /// Rule triggers to apply before the next component event.
    pub follow_ups: Vec<TriggerCode>,
}

/// `S' = step(S, event)`: applies one trigger, updates statuses and counters,
/// then consults the rule engine.
pub fn step(
    state: &GlobalState,
    event: &Event,
    config: &RuleConfig,
    now: u64,
) -> Result<StepOutput, EngineError> {
    step_with(canonical_table(), state, event, config, now)
}

pub fn step_with(
    table: &TransitionTable,
    state: &GlobalState,
    event: &Event,
    config: &RuleConfig,
    now: u64,
) -> Result<StepOutput, EngineError> {
    use TriggerCode as T;

    if state.situation.is_terminal() {
        return Err(EngineError::TerminalState);
    }
    let mut trigger = event.trigger;
    // A remediation request without an action has nothing to execute.
    if trigger == T::QualityCheckExecuteAction && !matches!(event.payload, Payload::Action(_)) {
        trigger = T::QualityCheckError;
    }
    let payload = if trigger == event.trigger { &event.payload } else { &Payload::None };
    if !payload_fits(trigger, payload) {
        return Err(EngineError::PayloadMismatch {
            trigger,
            payload: payload.kind(),
        });
    }
    let target = next_situation_in(table, state.situation, trigger)?;

    let mut next = state.clone();
    next.counters = record_event(next.counters, CounterEvent::StateSwitched);
    let previous_current = next.current_subtask.clone();
    let mut after_action = false;

    match (trigger, payload) {
        (T::SubtaskReady, _) => {
            next.task = TaskStatus::Pending;
            next.current_subtask = next.init_candidate();
        }
        (T::SubtaskReadyAfterPlan | T::FinalCheckPending, Payload::Plan(dag)) => {
            next.subtasks = carry_statuses(next.plan.as_ref(), &next.subtasks, dag);
            next.plan = Some(dag.clone());
            next.task = TaskStatus::Pending;
            let keep = next
                .current_subtask
                .as_ref()
                .is_some_and(|id| next.subtasks.get(id) == Some(&SubtaskStatus::Ready));
            if !keep || trigger == T::FinalCheckPending {
                next.current_subtask = next.next_ready();
            }
        }
        (T::WorkerStaleProgress, _) => next.set_current_status(SubtaskStatus::Stale),
        (T::QualityCheckPassed, Payload::Gate(GateDecision::GateDone)) => {
            next.set_current_status(SubtaskStatus::Fulfilled);
            next.refresh_readiness();
            next.current_subtask = next.next_ready();
        }
        (T::AllSubtasksCompleted, _) => next.set_current_status(SubtaskStatus::Fulfilled),
        (T::QualityCheckFailed | T::WorkCannotExecute, _) => {
            next.set_current_status(SubtaskStatus::Rejected)
        }
        (T::CommandCompleted | T::ExecutionError | T::NoCommand, p) => {
            let (fingerprint, status) = match p {
                Payload::Executed { fingerprint, status } => (*fingerprint, *status),
                _ => (None, ExecutionStatus::Blocked),
            };
            next.execution = Some(status);
            if let Some(fp) = fingerprint {
                next.counters = record_event(next.counters, CounterEvent::ActionExecuted(fp));
                after_action = true;
            }
        }
        (T::SupplementCompleted | T::SupplementError, _) => next.task = TaskStatus::Pending,
        (T::FinalCheckPassed, _) => next.task = TaskStatus::Fulfilled,
        _ => {}
    }

    match target {
        ControllerSituation::Plan => {
            next.counters = record_event(next.counters, CounterEvent::PlanAttempted);
            next.counters.current_subtask_actions = 0;
        }
        ControllerSituation::QualityCheck => {
            next.counters = record_event(next.counters, CounterEvent::QualityCheckRan);
        }
        ControllerSituation::Supplement => next.task = TaskStatus::OnHold,
        ControllerSituation::Done if !next.task.is_terminal() => next.task = TaskStatus::Rejected,
        _ => {}
    }
    next.situation = target;
    next.refresh_readiness();
    if next
        .current_subtask
        .as_ref()
        .is_some_and(|id| !next.subtasks.contains_key(id))
    {
        next.current_subtask = None;
    }
    if next.current_subtask != previous_current {
        next.counters = record_event(next.counters, CounterEvent::SubtaskChanged);
    }

    let follow_ups = if target.is_terminal() {
        Vec::new()
    } else {
        check_rules(&next, now, config, after_action).into_iter().collect()
    };
    Ok(StepOutput {
        state: next,
        applied: trigger,
        follow_ups,
    })
}

impl GlobalState {
    fn set_current_status(&mut self, status: SubtaskStatus) {
        if let Some(id) = &self.current_subtask {
            if let Some(slot) = self.subtasks.get_mut(id) {
                *slot = status;
            }
        }
    }

    /// Subtask INIT would resume: the current one if still workable,
    /// otherwise the first ready one.
    pub fn init_candidate(&self) -> Option<crate::planner::SubtaskId> {
        self.current_subtask
            .as_ref()
            .filter(|id| {
                matches!(
                    self.subtasks.get(*id),
                    Some(SubtaskStatus::Ready | SubtaskStatus::Stale)
                )
            })
            .cloned()
            .or_else(|| self.next_ready())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Trigger codes whose every expected row is present with the right target.
    pub rows_verified: usize,
    pub missing: Vec<TableEntry>,
    pub wrong_target: Vec<(TableEntry, ControllerSituation)>,
    pub illegal: Vec<TableEntry>,
    pub unreachable: Vec<ControllerSituation>,
    pub done_reachable: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows_verified == TriggerCode::ALL.len()
            && self.missing.is_empty()
            && self.wrong_target.is_empty()
            && self.illegal.is_empty()
            && self.unreachable.is_empty()
            && self.done_reachable
    }

    pub fn findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.missing.iter().map(|e| format!("missing row {e}")));
        out.extend(
            self.wrong_target
                .iter()
                .map(|(e, want)| format!("wrong target {e}, expected {want}")),
        );
        out.extend(self.illegal.iter().map(|e| format!("illegal source {e}")));
        out.extend(self.unreachable.iter().map(|s| format!("{s} unreachable from INIT")));
        if !self.done_reachable {
            out.push("DONE unreachable".to_string());
        }
        out
    }
}

pub fn validate_table(table: &TransitionTable) -> ValidationReport {
    let reference = canonical_table();
    let mut report = ValidationReport::default();
    for code in TriggerCode::ALL {
        let mut row_ok = true;
        for source in canonical_sources(code) {
            let expected = TableEntry {
                source,
                trigger: code,
                target: code.target(),
            };
            match table.lookup(source, code) {
                None => {
                    report.missing.push(expected);
                    row_ok = false;
                }
                Some(t) if t != expected.target => {
                    report.wrong_target.push((
                        TableEntry {
                            target: t,
                            ..expected
                        },
                        expected.target,
                    ));
                    row_ok = false;
                }
                Some(_) => {}
            }
        }
        if row_ok {
            report.rows_verified += 1;
        }
    }
    report.illegal = table
        .entries()
        .filter(|e| reference.lookup(e.source, e.trigger).is_none())
        .collect();

    let reachable = reachable_from(table, ControllerSituation::Init);
    report.unreachable = ControllerSituation::ACTIVE
        .into_iter()
        .filter(|s| !reachable.contains(s))
        .collect();
    report.done_reachable = reachable.contains(&ControllerSituation::Done);
    report
}

/// Situations reachable from `start` following table edges (never leaving DONE).
pub fn reachable_from(table: &TransitionTable, start: ControllerSituation) -> BTreeSet<ControllerSituation> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        if s.is_terminal() {
            continue;
        }
        for e in table.entries().filter(|e| e.source == s) {
            if seen.insert(e.target) {
                queue.push_back(e.target);
            }
        }
    }
    seen
}

/// Categories are metadata only; this is used for reporting, never routing.
pub fn category_counts() -> BTreeMap<TriggerCategory, usize> {
    let mut out = BTreeMap::new();
    for code in TriggerCode::ALL {
        *out.entry(code.category()).or_default() += 1;
    }
    out
}
