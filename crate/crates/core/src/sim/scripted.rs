//! Providers that replay scenario fixtures.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{JudgeEntry, PlanFixture, ReplanFixture, SupplementFixture, WorkerStep};
use crate::controller::{ExecOutcome, Executor};
use crate::evaluator::{
    Assessment, CheckRequest, CheckTrigger, FinalRequest, FinalVerdict, Judge, JudgeSignals,
    JudgeUnavailable,
};
use crate::planner::{
    KnowledgeSource, PlanProposal, PlanProvider, PlanRequest, ProviderFailure, SubtaskId,
    SupplementError,
};
use crate::state::TriggerCode;
use crate::worker::{OperatorAction, WorkerAction, WorkerDecision, WorkerProvider, WorkerRequest};

pub struct ScriptedPlanner {
    initial: PlanFixture,
    replans: Vec<ReplanFixture>,
}

impl ScriptedPlanner {
    pub fn new(initial: PlanFixture, replans: Vec<ReplanFixture>) -> Self {
        Self { initial, replans }
    }

    fn pick(&self, attempt: u32, level: Option<crate::planner::AdjustmentLevel>) -> PlanFixture {
        let matches = |r: &&ReplanFixture, by_attempt: bool, by_level: bool| {
            (if by_attempt { r.attempt == Some(attempt) } else { r.attempt.is_none() })
                && (if by_level { r.level.is_some() && r.level == level } else { r.level.is_none() })
        };
        [(true, true), (true, false), (false, true), (false, false)]
            .into_iter()
            .find_map(|(a, l)| self.replans.iter().find(|r| matches(r, a, l)))
            .map_or_else(|| self.initial.clone(), ReplanFixture::plan)
    }
}

fn propose(fixture: PlanFixture) -> Result<PlanProposal, ProviderFailure> {
    if let Some(message) = fixture.fail {
        Err(ProviderFailure(message))
    } else if fixture.impossible {
        Ok(PlanProposal::Impossible)
    } else {
        Ok(PlanProposal::Plan {
            nodes: fixture.nodes,
            edges: fixture.edges,
        })
    }
}

impl PlanProvider for ScriptedPlanner {
    fn propose(&mut self, request: &PlanRequest<'_>) -> Result<PlanProposal, ProviderFailure> {
        if request.current.is_none() {
            return propose(self.initial.clone());
        }
        propose(self.pick(request.attempt, request.level))
    }
}

/// Replays one step list per subtask; an exhausted list reports done.
pub struct ScriptedWorker {
    scripts: BTreeMap<SubtaskId, Vec<WorkerStep>>,
    cursors: BTreeMap<SubtaskId, usize>,
}

impl ScriptedWorker {
    pub fn new(scripts: BTreeMap<SubtaskId, Vec<WorkerStep>>) -> Self {
        Self {
            scripts,
            cursors: BTreeMap::new(),
        }
    }
}

impl WorkerProvider for ScriptedWorker {
    fn decide(&mut self, request: &WorkerRequest<'_>) -> Option<WorkerDecision> {
        let id = &request.subtask.id;
        let cursor = self.cursors.entry(id.clone()).or_default();
        let step = self.scripts.get(id).and_then(|s| s.get(*cursor)).cloned();
        *cursor += 1;
        let Some(step) = step else {
            return Some(WorkerDecision::Done);
        };
        Some(match step {
            WorkerStep::Generate { action } => WorkerDecision::GenerateAction { action },
            WorkerStep::Done => WorkerDecision::Done,
            WorkerStep::Failed => WorkerDecision::Failed,
            WorkerStep::CannotExecute { reason } => WorkerDecision::CannotExecute { reason },
            WorkerStep::Supplement { query } => WorkerDecision::Supplement { query },
            WorkerStep::Stale { reason } => WorkerDecision::Stale { reason },
            WorkerStep::Silent => return None,
            WorkerStep::Relay { read, write, prefix } => match request.artifacts.read(&read, None) {
                Ok(content) => WorkerDecision::GenerateAction {
                    action: WorkerAction::Operator(OperatorAction::Memorize {
                        key: write.unwrap_or_else(|| format!("{read}.relay")),
                        content: format!("{prefix}{content}"),
                    }),
                },
                Err(e) => WorkerDecision::CannotExecute { reason: e.to_string() },
            },
        })
    }
}

/// Signals per check ordinal; unscripted checks approve a worker's own
/// success claim and otherwise say "keep going".
pub struct ScriptedJudge {
    timeline: BTreeMap<u32, JudgeEntry>,
    verdicts: Vec<FinalVerdict>,
}

impl ScriptedJudge {
    pub fn new(timeline: Vec<JudgeEntry>, verdicts: Vec<FinalVerdict>) -> Self {
        Self {
            timeline: timeline.into_iter().map(|e| (e.check, e)).collect(),
            verdicts,
        }
    }

    pub fn default_signals(kind: CheckTrigger) -> JudgeSignals {
        match kind {
            CheckTrigger::WorkerSuccess => JudgeSignals::new(1.0, 1.0, 0.0),
            CheckTrigger::PeriodicCheck | CheckTrigger::WorkerStale => JudgeSignals::new(0.5, 0.5, 0.0),
        }
    }
}

impl Judge for ScriptedJudge {
    fn assess(&mut self, request: &CheckRequest<'_>) -> Result<Assessment, JudgeUnavailable> {
        match self.timeline.get(&request.ordinal) {
            None => Ok(Assessment::signals(Self::default_signals(request.kind))),
            Some(e) if e.error => Err(JudgeUnavailable(format!("check {} scripted to fail", e.check))),
            Some(e) => Ok(Assessment {
                signals: JudgeSignals::new(e.similarity, e.progress, e.uncertainty),
                remediation: e.remediation.clone(),
                query: e.query.clone(),
            }),
        }
    }

    fn final_assess(&mut self, request: &FinalRequest<'_>) -> Result<FinalVerdict, JudgeUnavailable> {
        let idx = request.ordinal.saturating_sub(1) as usize;
        Ok(self.verdicts.get(idx).cloned().unwrap_or(FinalVerdict::Passed))
    }
}

/// Trigger the mock executor reports for attempt `ordinal` (0-based).
pub fn execute_mock(_action: &WorkerAction, schedule: &[ExecOutcome], ordinal: u64) -> TriggerCode {
    scheduled(schedule, ordinal).unwrap_or(ExecOutcome::Completed).trigger()
}

fn scheduled(schedule: &[ExecOutcome], ordinal: u64) -> Option<ExecOutcome> {
    usize::try_from(ordinal).ok().and_then(|i| schedule.get(i)).copied()
}

pub struct MockExecutor {
    schedule: Vec<ExecOutcome>,
    error_rate: f64,
    rng: ChaCha8Rng,
    observations: Vec<String>,
    observed: usize,
}

impl MockExecutor {
    pub fn new(schedule: Vec<ExecOutcome>, error_rate: f64, seed: u64, observations: Vec<String>) -> Self {
        Self {
            schedule,
            error_rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            observations,
            observed: 0,
        }
    }
}

impl Executor for MockExecutor {
    fn execute(&mut self, _action: &WorkerAction, ordinal: u64) -> ExecOutcome {
        if let Some(outcome) = scheduled(&self.schedule, ordinal) {
            return outcome;
        }
        if self.error_rate > 0.0 && self.rng.gen_bool(self.error_rate) {
            ExecOutcome::ExecutionError
        } else {
            ExecOutcome::Completed
        }
    }

    fn observe(&mut self) -> String {
        let i = self.observed;
        self.observed += 1;
        if self.observations.is_empty() {
            format!("screen-{i}")
        } else {
            self.observations[i % self.observations.len()].clone()
        }
    }
}

pub struct ScriptedKnowledge {
    fixture: SupplementFixture,
}

impl ScriptedKnowledge {
    pub fn new(fixture: SupplementFixture) -> Self {
        Self { fixture }
    }
}

impl KnowledgeSource for ScriptedKnowledge {
    fn fetch(&mut self, query: &str) -> Result<String, SupplementError> {
        if self.fixture.unavailable {
            return Err(SupplementError::SourceUnavailable("scripted outage".into()));
        }
        Ok(self
            .fixture
            .answers
            .get(query)
            .cloned()
            .unwrap_or_else(|| format!("notes on {query}")))
    }
}
