//! Deterministic orchestration kernel: a finite-state controller driven by
//! trigger codes, with a rule engine, DAG planner, worker runtime and
//! quality gate behind narrow provider traits.

pub mod controller;
pub mod evaluator;
pub mod planner;
pub mod rules;
pub mod sim;
pub mod state;
pub mod transition;
pub mod worker;

pub use controller::{Controller, ControllerConfig, ExecOutcome, Executor, Injection, Providers, RunOutcome, RunOutput, RunReport};
pub use evaluator::{gate_decide, gate_trigger, CheckTrigger, GateDecision, GateThresholds, JudgeSignals};
pub use planner::{build_dag, SubtaskDag, SubtaskId, SubtaskNode};
pub use rules::{check_rules, RuleConfig};
pub use state::{classify_trigger, ControllerSituation, GlobalState, TriggerCategory, TriggerCode};
pub use transition::{next_situation, step, validate_table, TransitionTable};
pub use worker::{OperatorAction, WorkerAction, WorkerDecision, WorkerRole};
