//! The controller loop: one situation handler per state, every component
//! result turned into an [`Event`] and applied through [`step`].
//!
//! The loop is single-threaded. Rule follow-ups are drained before any
//! component is consulted again, so safety bounds cannot be starved.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::evaluator::{final_check, quality_check, CheckTrigger, GateThresholds, Judge};
use crate::planner::{
    carry_statuses, plan, replan, supplement, AdjustmentPolicy, FailureReport, KnowledgeSource,
    PlanProvider, Planned, SubtaskId,
};
use crate::rules::RuleConfig;
use crate::sim::trace::{Trace, TraceRecord};
use crate::state::{
    action_fingerprint, ControllerSituation, ExecutionStatus, GlobalState, SubtaskStatus, TriggerCode,
};
use crate::transition::{step, EngineError, Event, Payload};
use crate::worker::{next_decision, ArtifactStore, OperatorAction, WorkerAction, WorkerDecision, WorkerProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOutcome {
    Completed,
    ExecutionError,
    NoCommand,
    Timeout,
}

impl ExecOutcome {
    pub fn trigger(self) -> TriggerCode {
        match self {
            Self::Completed => TriggerCode::CommandCompleted,
            Self::ExecutionError | Self::Timeout => TriggerCode::ExecutionError,
            Self::NoCommand => TriggerCode::NoCommand,
        }
    }

    pub fn status(self) -> ExecutionStatus {
        match self {
            Self::Completed => ExecutionStatus::Executed,
            Self::ExecutionError => ExecutionStatus::Error,
            Self::Timeout => ExecutionStatus::Timeout,
            Self::NoCommand => ExecutionStatus::Blocked,
        }
    }
}

/// Carries actions out against the environment.
pub trait Executor {
    fn execute(&mut self, action: &WorkerAction, ordinal: u64) -> ExecOutcome;

    /// Opaque observation handed to workers.
    fn observe(&mut self) -> String {
        String::new()
    }
}

/// Inject `trigger` the `occurrence`-th time the controller sits in
/// `situation`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub situation: ControllerSituation,
    #[serde(default = "one")]
    pub occurrence: u32,
    pub trigger: TriggerCode,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub rules: RuleConfig,
    pub thresholds: GateThresholds,
    pub adjustment: AdjustmentPolicy,
    /// Logical seconds each executed action advances the clock.
    pub seconds_per_action: u64,
    pub injections: Vec<Injection>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            rules: RuleConfig::default(),
            thresholds: GateThresholds::default(),
            adjustment: AdjustmentPolicy::default(),
            seconds_per_action: 10,
            injections: Vec::new(),
        }
    }
}

pub struct Providers<'a> {
    pub planner: &'a mut dyn PlanProvider,
    pub worker: &'a mut dyn WorkerProvider,
    pub judge: &'a mut dyn Judge,
    pub executor: &'a mut dyn Executor,
    pub knowledge: &'a mut dyn KnowledgeSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcome {
    Fulfilled,
    Rejected,
    BoundedOut,
}

impl RunOutcome {
    pub fn classify(terminal: TriggerCode) -> Option<RunOutcome> {
        use TriggerCode as T;
        match terminal {
            T::FinalCheckPassed | T::RuleTaskCompleted => Some(Self::Fulfilled),
            T::TaskImpossible | T::FinalCheckError => Some(Self::Rejected),
            T::RuleTaskRuntimeExceeded
            | T::RuleMaxStateSwitchesReached
            | T::RuleStateSwitchCountExceeded
            | T::RulePlanNumberExceeded => Some(Self::BoundedOut),
            _ => None,
        }
    }
}

/// Process exit code for a terminal trigger.
pub fn exit_code(terminal: Option<TriggerCode>) -> i32 {
    use TriggerCode as T;
    match terminal {
        Some(T::FinalCheckPassed | T::RuleTaskCompleted) => 0,
        Some(T::TaskImpossible) => 2,
        Some(T::FinalCheckError) => 4,
        Some(t) if RunOutcome::classify(t) == Some(RunOutcome::BoundedOut) => 3,
        _ => 1,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckTally {
    pub periodic: u32,
    pub stale: u32,
    pub success: u32,
}

impl CheckTally {
    fn bump(&mut self, kind: CheckTrigger) {
        match kind {
            CheckTrigger::PeriodicCheck => self.periodic += 1,
            CheckTrigger::WorkerStale => self.stale += 1,
            CheckTrigger::WorkerSuccess => self.success += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub terminal_trigger: Option<TriggerCode>,
    pub total_switches: u32,
    pub actions_executed: u64,
    pub plan_attempts: u32,
    pub quality_checks: CheckTally,
    /// Logical seconds.
    pub logical_time: u64,
    pub outcome: Option<RunOutcome>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.terminal_trigger)
    }
}

pub struct RunOutput {
    pub trace: Trace,
    pub report: RunReport,
    pub state: GlobalState,
    pub artifacts: ArtifactStore,
    /// Actions that completed, in order.
    pub executed: Vec<WorkerAction>,
    /// Kernel-level anomalies: undefined transitions, invariant breaches.
    pub findings: Vec<String>,
}

const FAILURE_TRIGGERS: [TriggerCode; 7] = [
    TriggerCode::QualityCheckFailed,
    TriggerCode::WorkCannotExecute,
    TriggerCode::RuleReplanLongExecution,
    TriggerCode::NoWorkerDecision,
    TriggerCode::GetActionError,
    TriggerCode::QualityCheckError,
    TriggerCode::FinalCheckFailed,
];

/// Hard stop for a loop that somehow outlives every rule bound.
const ITERATION_CAP: usize = 1_000_000;

pub struct Controller<'a> {
    task: String,
    config: ControllerConfig,
    providers: Providers<'a>,
    state: GlobalState,
    artifacts: ArtifactStore,
    records: Vec<TraceRecord>,
    follow_ups: VecDeque<TriggerCode>,
    pending_action: Option<WorkerAction>,
    check_kind: Option<CheckTrigger>,
    supplement_query: Option<String>,
    context: Vec<String>,
    failures: BTreeMap<Option<SubtaskId>, u32>,
    last_failure: Option<FailureReport>,
    execution_attempts: u64,
    actions_executed: u64,
    quality_checks: u32,
    tally: CheckTally,
    final_checks: u32,
    entries: BTreeMap<ControllerSituation, u32>,
    fired: Vec<bool>,
    executed: Vec<WorkerAction>,
    findings: Vec<String>,
    started: Instant,
}

impl<'a> Controller<'a> {
    pub fn new(task: impl Into<String>, config: ControllerConfig, providers: Providers<'a>) -> Self {
        let fired = vec![false; config.injections.len()];
        Self {
            task: task.into(),
            config,
            providers,
            state: GlobalState::new(0),
            artifacts: ArtifactStore::new(),
            records: Vec::new(),
            follow_ups: VecDeque::new(),
            pending_action: None,
            check_kind: None,
            supplement_query: None,
            context: Vec::new(),
            failures: BTreeMap::new(),
            last_failure: None,
            execution_attempts: 0,
            actions_executed: 0,
            quality_checks: 0,
            tally: CheckTally::default(),
            final_checks: 0,
            entries: BTreeMap::from([(ControllerSituation::Init, 1)]),
            fired,
            executed: Vec::new(),
            findings: Vec::new(),
            started: Instant::now(),
        }
    }

    fn now(&self) -> u64 {
        self.state.counters.task_started_at + self.actions_executed * self.config.seconds_per_action
    }

    pub fn run(mut self) -> RunOutput {
        let mut iterations = 0;
        while !self.state.situation.is_terminal() {
            iterations += 1;
            if iterations > ITERATION_CAP {
                self.findings.push("iteration cap reached without DONE".into());
                break;
            }
            let event = if let Some(t) = self.follow_ups.pop_front() {
                Event::bare(t)
            } else if let Some(t) = self.due_injection() {
                Event::note(t, "injected")
            } else {
                self.handle()
            };
            self.apply(event);
        }
        let report = RunReport {
            terminal_trigger: self.records.last().map(|r| r.trigger),
            total_switches: self.state.counters.state_switches,
            actions_executed: self.actions_executed,
            plan_attempts: self.state.counters.plan_attempts,
            quality_checks: self.tally.clone(),
            logical_time: self.now(),
            outcome: self
                .records
                .last()
                .filter(|_| self.state.situation.is_terminal())
                .and_then(|r| RunOutcome::classify(r.trigger)),
        };
        RunOutput {
            trace: Trace::new(self.records),
            report,
            state: self.state,
            artifacts: self.artifacts,
            executed: self.executed,
            findings: self.findings,
        }
    }

    fn due_injection(&mut self) -> Option<TriggerCode> {
        let here = self.state.situation;
        let seen = self.entries.get(&here).copied().unwrap_or(0);
        let idx = self
            .config
            .injections
            .iter()
            .enumerate()
            .position(|(i, inj)| !self.fired[i] && inj.situation == here && inj.occurrence <= seen)?;
        self.fired[idx] = true;
        Some(self.config.injections[idx].trigger)
    }

    fn apply(&mut self, event: Event) {
        let before = self.state.situation;
        let now = self.now();
        match step(&self.state, &event, &self.config.rules, now) {
            Ok(out) => {
                self.records.push(TraceRecord {
                    ordinal: self.records.len() as u32 + 1,
                    before,
                    trigger: out.applied,
                    after: out.state.situation,
                    payload_digest: event.payload.digest(),
                    counters: out.state.counters.clone(),
                    logical_time: now,
                    wall_clock_us: Some(self.started.elapsed().as_micros() as u64),
                });
                self.state = out.state;
                for v in self.state.invariant_violations() {
                    self.findings.push(format!("after record {}: {v}", self.records.len()));
                }
                self.follow_ups.extend(out.follow_ups);
                self.after_switch(out.applied, event.payload);
            }
            Err(EngineError::TerminalState) => {
                self.findings.push("step attempted on DONE".into());
            }
            Err(err) => {
                self.findings.push(format!("{err} (record {})", self.records.len() + 1));
                self.apply(Event::note(TriggerCode::ErrorRecovery, err.to_string()));
            }
        }
    }

    fn after_switch(&mut self, applied: TriggerCode, payload: Payload) {
        let entered = self.state.situation;
        *self.entries.entry(entered).or_default() += 1;
        match entered {
            ControllerSituation::ExecuteAction => {
                self.pending_action = match payload {
                    Payload::Action(a) => Some(a),
                    _ => None,
                };
            }
            ControllerSituation::QualityCheck => self.check_kind = CheckTrigger::for_entry(applied),
            ControllerSituation::Supplement => {
                self.supplement_query = match payload {
                    Payload::Query(q) => Some(q),
                    _ => self.current_title(),
                };
            }
            ControllerSituation::Plan => {
                let subtask = self.state.current_subtask.clone();
                let count = self.failures.entry(subtask.clone()).or_default();
                if FAILURE_TRIGGERS.contains(&applied) {
                    *count += 1;
                }
                self.last_failure = Some(FailureReport {
                    subtask,
                    trigger: applied,
                    failures: *count,
                });
            }
            ControllerSituation::Init => self.pending_action = None,
            _ => {}
        }
    }

    fn current_title(&self) -> Option<String> {
        let id = self.state.current_subtask.as_ref()?;
        Some(self.state.plan.as_ref()?.node(id)?.title.clone())
    }

    fn handle(&mut self) -> Event {
        match self.state.situation {
            ControllerSituation::Init => self.handle_init(),
            ControllerSituation::Plan => self.handle_plan(),
            ControllerSituation::GetAction => self.handle_get_action(),
            ControllerSituation::ExecuteAction => self.handle_execute(),
            ControllerSituation::QualityCheck => {
                let kind = self.check_kind.take().unwrap_or(CheckTrigger::PeriodicCheck);
                self.quality_checks += 1;
                self.tally.bump(kind);
                quality_check(
                    kind,
                    self.quality_checks,
                    &self.state,
                    self.providers.judge,
                    &self.config.thresholds,
                )
            }
            ControllerSituation::Supplement => {
                let query = self.supplement_query.take().unwrap_or_default();
                match supplement(&query, self.providers.knowledge) {
                    Ok(text) => {
                        self.context.push(text.clone());
                        Event::new(TriggerCode::SupplementCompleted, Payload::Text(text))
                    }
                    Err(e) => Event::note(e.trigger(), e.to_string()),
                }
            }
            ControllerSituation::FinalCheck => {
                self.final_checks += 1;
                final_check(&self.task, self.final_checks, &self.state, self.providers.judge)
            }
            ControllerSituation::Done => unreachable!("loop stops at DONE"),
        }
    }

    fn handle_init(&mut self) -> Event {
        let violations = self.state.invariant_violations();
        if !violations.is_empty() {
            Event::note(TriggerCode::InitError, violations.join("; "))
        } else if self.state.init_candidate().is_some() {
            Event::bare(TriggerCode::SubtaskReady)
        } else {
            Event::bare(TriggerCode::NoSubtasks)
        }
    }

    fn handle_plan(&mut self) -> Event {
        let attempt = self.state.counters.plan_attempts;
        let result = match &self.state.plan {
            None => plan(&self.task, &self.context, attempt, self.providers.planner),
            Some(current) => {
                let failure = self.last_failure.take().unwrap_or(FailureReport {
                    subtask: self.state.current_subtask.clone(),
                    trigger: TriggerCode::NoSubtasks,
                    failures: 0,
                });
                let level = self.config.adjustment.select(failure.failures.max(1));
                replan(
                    &self.task,
                    &self.context,
                    current,
                    &self.state.subtasks,
                    &failure,
                    level,
                    attempt,
                    self.providers.planner,
                )
            }
        };
        match result {
            Ok(Planned::Dag(dag)) => {
                let statuses = carry_statuses(self.state.plan.as_ref(), &self.state.subtasks, &dag);
                if statuses.values().any(|s| *s == SubtaskStatus::Ready) {
                    Event::new(TriggerCode::SubtaskReadyAfterPlan, Payload::Plan(dag))
                } else {
                    Event::note(TriggerCode::PlanError, "plan leaves nothing to execute")
                }
            }
            Ok(Planned::Impossible) => Event::bare(TriggerCode::TaskImpossible),
            Err(e) => Event::note(TriggerCode::PlanError, e.to_string()),
        }
    }

    fn handle_get_action(&mut self) -> Event {
        let Some(id) = self.state.current_subtask.clone() else {
            return Event::bare(TriggerCode::NoCurrentSubtaskId);
        };
        let Some(node) = self.state.plan.as_ref().and_then(|p| p.node(&id)).cloned() else {
            return Event::bare(TriggerCode::SubtaskNotFound);
        };
        if self.state.status_of(&id).is_some_and(|s| s.is_terminal()) {
            return Event::bare(TriggerCode::NoCurrentSubtaskId);
        }
        let observation = self.providers.executor.observe();
        match next_decision(node.role, &node, &observation, &self.artifacts, self.providers.worker) {
            Err(e) => Event::note(e.trigger(), e.to_string()),
            Ok(None) => Event::bare(TriggerCode::NoWorkerDecision),
            Ok(Some(WorkerDecision::GenerateAction { action })) => {
                Event::new(TriggerCode::WorkerGenerateAction, Payload::Action(action))
            }
            Ok(Some(WorkerDecision::Supplement { query })) => {
                Event::new(TriggerCode::WorkerSupplement, Payload::Query(query))
            }
            Ok(Some(decision)) => Event::bare(decision.trigger()),
        }
    }

    fn handle_execute(&mut self) -> Event {
        let Some(action) = self.pending_action.take() else {
            return Event::new(
                TriggerCode::NoCommand,
                Payload::Executed {
                    fingerprint: None,
                    status: ExecutionStatus::Blocked,
                },
            );
        };
        let ordinal = self.execution_attempts;
        self.execution_attempts += 1;
        let outcome = self.providers.executor.execute(&action, ordinal);
        let fingerprint = Some(action_fingerprint(&action));
        let executed = |trigger, status| Event::new(trigger, Payload::Executed { fingerprint, status });
        match outcome {
            ExecOutcome::NoCommand => Event::new(
                TriggerCode::NoCommand,
                Payload::Executed {
                    fingerprint: None,
                    status: ExecutionStatus::Blocked,
                },
            ),
            ExecOutcome::ExecutionError => {
                self.actions_executed += 1;
                executed(TriggerCode::ExecutionError, ExecutionStatus::Error)
            }
            ExecOutcome::Timeout => {
                self.actions_executed += 1;
                executed(TriggerCode::ExecutionError, ExecutionStatus::Timeout)
            }
            ExecOutcome::Completed => {
                self.actions_executed += 1;
                if let WorkerAction::Operator(OperatorAction::Memorize { key, content }) = &action {
                    let author = self
                        .state
                        .current_subtask
                        .as_ref()
                        .and_then(|id| self.state.plan.as_ref()?.node(id))
                        .map_or(crate::worker::WorkerRole::Operator, |n| n.role);
                    if self.artifacts.write(key, content, author).is_err() {
                        return executed(TriggerCode::ExecutionError, ExecutionStatus::Error);
                    }
                }
                self.executed.push(action);
                executed(TriggerCode::CommandCompleted, ExecutionStatus::Executed)
            }
        }
    }
}
