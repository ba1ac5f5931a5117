//! Seeded random scenarios and the liveness report over them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario::{JudgeEntry, PlanFixture, ReplanFixture, Scenario, SupplementFixture, WorkerStep, SCENARIO_FORMAT};
use super::trace::soundness_violations;
use crate::controller::{ExecOutcome, Injection, RunOutcome};
use crate::evaluator::{FinalVerdict, GateThresholds};
use crate::planner::{AdjustmentLevel, SubtaskId, SubtaskNode};
use crate::rules::RuleConfig;
use crate::state::{ControllerSituation, TriggerCategory, TriggerCode};
use crate::transition::TransitionTable;
use crate::worker::{OperatorAction, Point, TechnicianScript, WorkerAction, WorkerRole};

/// Share of generated scenarios biased toward pathological behaviour.
pub const PATHOLOGICAL_SHARE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("fuzz count must be at least 1")]
pub struct FuzzError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FuzzFinding {
    pub scenario: u32,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub count: u32,
    pub pathological: u32,
    pub reached_done: u32,
    pub outcomes: BTreeMap<RunOutcomeKey, u32>,
    pub terminal_triggers: BTreeMap<TriggerCode, u32>,
    pub total_switches: u64,
    pub longest_trace: usize,
    pub findings: Vec<FuzzFinding>,
}

/// Outcome key that also counts runs that never classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcomeKey {
    Fulfilled,
    Rejected,
    BoundedOut,
    Unclassified,
}

impl From<Option<RunOutcome>> for RunOutcomeKey {
    fn from(o: Option<RunOutcome>) -> Self {
        match o {
            Some(RunOutcome::Fulfilled) => Self::Fulfilled,
            Some(RunOutcome::Rejected) => Self::Rejected,
            Some(RunOutcome::BoundedOut) => Self::BoundedOut,
            None => Self::Unclassified,
        }
    }
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

const OPERATOR_KEYS: [&str; 3] = ["notes", "draft", "answers"];

fn random_action(rng: &mut ChaCha8Rng, role: WorkerRole) -> WorkerAction {
    match role {
        WorkerRole::Technician => WorkerAction::Script(TechnicianScript {
            body: format!("echo step-{}", rng.gen_range(0..4)),
            runtime: "bash".into(),
            limits: Default::default(),
        }),
        WorkerRole::Analyst => WorkerAction::Operator(OperatorAction::Memorize {
            key: OPERATOR_KEYS.choose(rng).unwrap().to_string(),
            content: format!("summary-{}", rng.gen_range(0..4)),
        }),
        WorkerRole::Operator => {
            // Small coordinate ranges make identical consecutive actions common.
            let p = Point {
                x: rng.gen_range(0..3),
                y: rng.gen_range(0..2),
            };
            WorkerAction::Operator(match rng.gen_range(0..6) {
                0 | 1 => OperatorAction::Click { at: p },
                2 => OperatorAction::TypeText {
                    text: format!("cell-{}", rng.gen_range(0..3)),
                },
                3 => OperatorAction::Hotkey {
                    keys: vec!["ctrl".into(), "s".into()],
                },
                4 => OperatorAction::Screenshot,
                _ => OperatorAction::Memorize {
                    key: OPERATOR_KEYS.choose(rng).unwrap().to_string(),
                    content: format!("value-{}", rng.gen_range(0..3)),
                },
            })
        }
    }
}

fn random_role(rng: &mut ChaCha8Rng) -> WorkerRole {
    *[WorkerRole::Operator, WorkerRole::Operator, WorkerRole::Technician, WorkerRole::Analyst]
        .choose(rng)
        .unwrap()
}

fn random_step(rng: &mut ChaCha8Rng, role: WorkerRole) -> WorkerStep {
    match rng.gen_range(0..100) {
        0..=59 => WorkerStep::Generate {
            action: random_action(rng, role),
        },
        60..=67 => WorkerStep::Done,
        68..=71 => WorkerStep::Failed,
        72..=75 => WorkerStep::CannotExecute { reason: "blocked".into() },
        76..=80 => WorkerStep::Supplement {
            query: format!("how to finish step {}", rng.gen_range(0..3)),
        },
        81..=86 => WorkerStep::Stale { reason: "no change".into() },
        87..=90 => WorkerStep::Silent,
        91..=94 => WorkerStep::Relay {
            read: OPERATOR_KEYS.choose(rng).unwrap().to_string(),
            write: Some(OPERATOR_KEYS.choose(rng).unwrap().to_string()),
            prefix: "re: ".into(),
        },
        // Wrong role for the subtask; the worker runtime must reject it.
        _ => WorkerStep::Generate {
            action: match role {
                WorkerRole::Operator => random_action(rng, WorkerRole::Technician),
                _ => WorkerAction::Operator(OperatorAction::Click { at: Point { x: 0, y: 0 } }),
            },
        },
    }
}

fn random_nodes(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Vec<SubtaskNode> {
    (0..n)
        .map(|i| SubtaskNode::new(format!("{prefix}{i}"), format!("step {i}"), random_role(rng)))
        .collect()
}

fn random_edges(rng: &mut ChaCha8Rng, nodes: &[SubtaskNode], density: f64) -> Vec<(SubtaskId, SubtaskId)> {
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if rng.gen_bool(density) {
                edges.push((nodes[i].id.clone(), nodes[j].id.clone()));
            }
        }
    }
    edges
}

fn signal(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0..=10) as f64 / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pathology {
    StaleWorkers,
    FailingJudge,
    CyclicPlanner,
    SilentWorkers,
    BrokenExecutor,
    Repetition,
}

const PATHOLOGIES: [Pathology; 6] = [
    Pathology::StaleWorkers,
    Pathology::FailingJudge,
    Pathology::CyclicPlanner,
    Pathology::SilentWorkers,
    Pathology::BrokenExecutor,
    Pathology::Repetition,
];

/// Builds one random scenario from `seed`.
pub fn random_scenario(seed: u64, pathological: bool) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let n = rng.gen_range(1..=6);
    let nodes = random_nodes(rng, "S", n);
    let edges = random_edges(rng, &nodes, 0.3);

    let mut workers = BTreeMap::new();
    for node in &nodes {
        let len = rng.gen_range(0..=8);
        let steps = (0..len).map(|_| random_step(rng, node.role)).collect();
        workers.insert(node.id.clone(), steps);
    }

    let mut replans = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let extra = rng.gen_range(0..=2);
        let mut fresh = nodes.clone();
        fresh.extend(random_nodes(rng, &format!("R{}", replans.len()), extra));
        let edges = random_edges(rng, &fresh, 0.2);
        replans.push(ReplanFixture {
            attempt: rng.gen_bool(0.5).then(|| rng.gen_range(2..=6)),
            level: [None, Some(AdjustmentLevel::Light), Some(AdjustmentLevel::Medium), Some(AdjustmentLevel::Heavy)]
                .choose(rng)
                .copied()
                .flatten(),
            nodes: fresh,
            edges,
            impossible: rng.gen_bool(0.05),
            fail: rng.gen_bool(0.1).then(|| "planner offline".to_string()),
        });
    }

    let mut judge = Vec::new();
    for check in 1..=rng.gen_range(0..=10) {
        if !rng.gen_bool(0.6) {
            continue;
        }
        judge.push(JudgeEntry {
            check,
            similarity: signal(rng),
            progress: signal(rng),
            uncertainty: signal(rng),
            remediation: rng
                .gen_bool(0.1)
                .then(|| random_action(rng, WorkerRole::Operator)),
            query: None,
            error: rng.gen_bool(0.05),
        });
    }

    let verdicts = (0..rng.gen_range(0..=3))
        .map(|i| match rng.gen_range(0..10) {
            0..=3 => FinalVerdict::Passed,
            4 | 5 => FinalVerdict::Failed,
            6 => FinalVerdict::Error,
            7 => FinalVerdict::Impossible,
            _ => FinalVerdict::Pending {
                node: SubtaskNode::new(format!("F{i}"), "follow-up", random_role(rng)),
                after: nodes
                    .choose(rng)
                    .map(|n| vec![n.id.clone()])
                    .unwrap_or_default(),
            },
        })
        .collect();

    let executor = (0..rng.gen_range(0..=12))
        .map(|_| match rng.gen_range(0..10) {
            0..=6 => ExecOutcome::Completed,
            7 => ExecOutcome::ExecutionError,
            8 => ExecOutcome::NoCommand,
            _ => ExecOutcome::Timeout,
        })
        .collect();

    let rules = RuleConfig {
        quality_check_every: rng.gen_range(2..=6),
        repeated_action_limit: rng.gen_range(1..=4),
        long_execution_limit: rng.gen_range(4..=16),
        max_state_switches: rng.gen_range(20..=100),
        max_plan_attempts: rng.gen_range(1..=10),
        max_runtime: rng.gen_range(60..=1800),
        task_switch_limit: rng.gen_bool(0.2).then(|| rng.gen_range(10..=60)),
    };

    let globals: Vec<TriggerCode> = TriggerCode::ALL
        .into_iter()
        .filter(|c| c.category().is_global() && c.category() != TriggerCategory::TaskStatusRules)
        .collect();
    let active = ControllerSituation::ACTIVE;
    let injections = (0..rng.gen_range(0..=2))
        .map(|_| Injection {
            situation: *active.choose(rng).unwrap(),
            occurrence: rng.gen_range(1..=3),
            trigger: *globals.choose(rng).unwrap(),
        })
        .collect();

    let mut scenario = Scenario {
        format: SCENARIO_FORMAT.into(),
        name: format!("fuzz-{seed:016x}"),
        task: "randomized task".into(),
        seed: Some(seed),
        seconds_per_action: rng.gen_range(1..=30),
        rules,
        thresholds: GateThresholds::default(),
        plan: PlanFixture {
            nodes,
            edges,
            impossible: rng.gen_bool(0.02),
            fail: rng.gen_bool(0.05).then(|| "planner offline".to_string()),
        },
        replans,
        workers,
        judge,
        verdicts,
        executor,
        error_rate: rng.gen_range(0..=3) as f64 / 10.0,
        observations: Vec::new(),
        supplement: SupplementFixture {
            answers: BTreeMap::new(),
            unavailable: rng.gen_bool(0.1),
        },
        injections,
    };
    if pathological {
        apply_pathology(rng, &mut scenario);
    }
    scenario
}

fn apply_pathology(rng: &mut ChaCha8Rng, s: &mut Scenario) {
    let ids: Vec<SubtaskId> = s.plan.nodes.iter().map(|n| n.id.clone()).collect();
    let forever = |step: WorkerStep| vec![step; 400];
    match *PATHOLOGIES.choose(rng).unwrap() {
        Pathology::StaleWorkers => {
            for id in ids {
                s.workers.insert(id, forever(WorkerStep::Stale { reason: "stuck".into() }));
            }
        }
        Pathology::FailingJudge => {
            s.judge = (1..=200)
                .map(|check| JudgeEntry {
                    check,
                    similarity: 0.0,
                    progress: 0.0,
                    uncertainty: 0.0,
                    remediation: None,
                    query: None,
                    error: false,
                })
                .collect();
            s.verdicts = vec![FinalVerdict::Failed; 50];
        }
        Pathology::CyclicPlanner => {
            let a = SubtaskNode::new("C0", "loop a", WorkerRole::Operator);
            let b = SubtaskNode::new("C1", "loop b", WorkerRole::Operator);
            s.plan.edges = vec![(a.id.clone(), b.id.clone()), (b.id.clone(), a.id.clone())];
            s.plan.nodes = vec![a, b];
            s.plan.fail = None;
            s.plan.impossible = false;
            s.workers.clear();
            s.replans.clear();
        }
        Pathology::SilentWorkers => {
            for id in ids {
                s.workers.insert(id, forever(WorkerStep::Silent));
            }
        }
        Pathology::BrokenExecutor => {
            s.executor = vec![ExecOutcome::ExecutionError; 300];
        }
        Pathology::Repetition => {
            let click = WorkerStep::Generate {
                action: WorkerAction::Operator(OperatorAction::Click { at: Point { x: 5, y: 5 } }),
            };
            for node in &s.plan.nodes {
                if node.role == WorkerRole::Operator {
                    s.workers.insert(node.id.clone(), forever(click.clone()));
                }
            }
        }
    }
}

/// The (scenario seed, pathological) pairs `fuzz(seed, count)` runs.
pub fn fuzz_cases(seed: u64, count: u32) -> Vec<(u64, bool)> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let sub_seed: u64 = master.gen();
            (sub_seed, master.gen_bool(PATHOLOGICAL_SHARE))
        })
        .collect()
}

/// Runs `count` random scenarios derived from `seed` and collects every
/// liveness or soundness problem.
pub fn fuzz(seed: u64, count: u32) -> Result<FuzzReport, FuzzError> {
    if count == 0 {
        return Err(FuzzError);
    }
    let table = TransitionTable::canonical();
    let mut report = FuzzReport {
        seed,
        count,
        pathological: 0,
        reached_done: 0,
        outcomes: BTreeMap::new(),
        terminal_triggers: BTreeMap::new(),
        total_switches: 0,
        longest_trace: 0,
        findings: Vec::new(),
    };
    for (index, (sub_seed, pathological)) in (0..).zip(fuzz_cases(seed, count)) {
        report.pathological += pathological as u32;
        let scenario = random_scenario(sub_seed, pathological);
        let mut finding = |message: String| {
            report.findings.push(FuzzFinding {
                scenario: index,
                seed: sub_seed,
                message,
            })
        };
        if let Err(e) = scenario.validate() {
            finding(format!("generated an invalid scenario: {e}"));
            continue;
        }
        let out = super::run(&scenario);
        for f in &out.findings {
            finding(f.clone());
        }
        for v in soundness_violations(&out.trace, &table) {
            finding(v);
        }
        if !out.state.situation.is_terminal() {
            finding("run did not reach DONE".into());
        }
        let bound = scenario
            .rules
            .task_switch_limit
            .map_or(scenario.rules.max_state_switches, |l| l.min(scenario.rules.max_state_switches));
        if out.trace.len() > bound as usize + 1 {
            finding(format!("{} records exceed the switch bound {bound}", out.trace.len()));
        }
        if out.report.outcome.is_none() {
            finding(format!("unexpected terminal trigger {:?}", out.report.terminal_trigger));
        }
        report.reached_done += out.state.situation.is_terminal() as u32;
        *report.outcomes.entry(out.report.outcome.into()).or_default() += 1;
        if let Some(t) = out.report.terminal_trigger {
            *report.terminal_triggers.entry(t).or_default() += 1;
        }
        report.total_switches += out.trace.len() as u64;
        report.longest_trace = report.longest_trace.max(out.trace.len());
    }
    Ok(report)
}
