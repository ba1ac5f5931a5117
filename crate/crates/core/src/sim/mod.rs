//! Scenario-driven simulation: scripted providers, a mock executor, traces
//! and the liveness fuzzer.

pub mod fuzz;
pub mod scenario;
pub mod scripted;
pub mod trace;

pub use fuzz::{fuzz, fuzz_cases, random_scenario, FuzzError, FuzzFinding, FuzzReport};
pub use scenario::{load_scenario, Scenario, ScenarioError, SCENARIO_FORMAT};
pub use scripted::{execute_mock, MockExecutor, ScriptedJudge, ScriptedKnowledge, ScriptedPlanner, ScriptedWorker};
pub use trace::{diff_traces, soundness_violations, Trace, TraceDiff, TraceHeader, TraceRecord, TRACE_FORMAT};

use crate::controller::{Controller, ControllerConfig, Providers, RunOutput};

pub fn controller_config(scenario: &Scenario) -> ControllerConfig {
    ControllerConfig {
        rules: scenario.rules.clone(),
        thresholds: scenario.thresholds,
        seconds_per_action: scenario.seconds_per_action,
        injections: scenario.injections.clone(),
        ..ControllerConfig::default()
    }
}

pub fn trace_header(scenario: &Scenario) -> TraceHeader {
    TraceHeader {
        format: TRACE_FORMAT.into(),
        scenario: scenario.name.clone(),
        scenario_digest: scenario.digest(),
        seed: scenario.seed(),
        rules: scenario.rules.clone(),
        thresholds: scenario.thresholds,
        seconds_per_action: scenario.seconds_per_action,
    }
}

/// Runs `scenario` to completion against its scripted providers.
pub fn run(scenario: &Scenario) -> RunOutput {
    let mut planner = ScriptedPlanner::new(scenario.plan.clone(), scenario.replans.clone());
    let mut worker = ScriptedWorker::new(scenario.workers.clone());
    let mut judge = ScriptedJudge::new(scenario.judge.clone(), scenario.verdicts.clone());
    let mut executor = MockExecutor::new(
        scenario.executor.clone(),
        scenario.error_rate,
        scenario.seed(),
        scenario.observations.clone(),
    );
    let mut knowledge = ScriptedKnowledge::new(scenario.supplement.clone());
    let providers = Providers {
        planner: &mut planner,
        worker: &mut worker,
        judge: &mut judge,
        executor: &mut executor,
        knowledge: &mut knowledge,
    };
    Controller::new(scenario.task.clone(), controller_config(scenario), providers).run()
}
