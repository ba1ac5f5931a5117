mod oracles;

use std::collections::BTreeMap;

use proptest::prelude::*;

use orchestra_core::evaluator::{gate_decide, GateDecision, GateThresholds, JudgeSignals};
use orchestra_core::planner::{
    build_dag, check_level_contract, ready_frontier, AdjustmentLevel, PlanError, SubtaskDag, SubtaskId,
    SubtaskNode,
};
use orchestra_core::rules::{check_step_rules, check_task_rules, RuleConfig};
use orchestra_core::state::{
    action_fingerprint, record_event, CounterEvent, Counters, GlobalState, SubtaskStatus, TriggerCode,
};
use orchestra_core::transition::{step, Event};
use orchestra_core::worker::{ArtifactStore, OperatorAction, Point, WorkerAction, WorkerRole};

use oracles::{gate_oracle, lex_min_order, replay, respects, ModelEvent};

fn click(x: u32, y: u32) -> WorkerAction {
    WorkerAction::Operator(OperatorAction::Click { at: Point { x, y } })
}

fn arb_action() -> impl Strategy<Value = WorkerAction> {
    prop_oneof![
        (0u32..50, 0u32..50).prop_map(|(x, y)| click(x, y)),
        (0u32..50, 0u32..50).prop_map(|(x, y)| WorkerAction::Operator(OperatorAction::DoubleClick { at: Point { x, y } })),
        "[a-z]{0,6}".prop_map(|text| WorkerAction::Operator(OperatorAction::TypeText { text })),
        (1u64..500).prop_map(|millis| WorkerAction::Operator(OperatorAction::Wait { millis })),
        ("[a-z]{1,4}", "[a-z]{0,4}").prop_map(|(key, content)| {
            WorkerAction::Operator(OperatorAction::Memorize { key, content })
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn fingerprints_separate_distinct_actions(a in arb_action(), b in arb_action()) {
        prop_assert_eq!(action_fingerprint(&a), action_fingerprint(&a.clone()));
        prop_assert_eq!(a == b, action_fingerprint(&a) == action_fingerprint(&b));
    }
}

fn arb_events() -> impl Strategy<Value = Vec<ModelEvent>> {
    prop::collection::vec(
        prop_oneof![
            4 => (0u64..3).prop_map(ModelEvent::Action),
            2 => Just(ModelEvent::Switch),
            1 => Just(ModelEvent::Plan),
            1 => Just(ModelEvent::Check),
            1 => Just(ModelEvent::NewSubtask),
        ],
        0..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn counters_match_replay_model(events in arb_events()) {
        let prints: Vec<_> = (0..3).map(|i| action_fingerprint(&click(i, i))).collect();
        let mut c = Counters::default();
        for e in &events {
            let ev = match *e {
                ModelEvent::Action(i) => CounterEvent::ActionExecuted(prints[i as usize]),
                ModelEvent::Switch => CounterEvent::StateSwitched,
                ModelEvent::Plan => CounterEvent::PlanAttempted,
                ModelEvent::Check => CounterEvent::QualityCheckRan,
                ModelEvent::NewSubtask => CounterEvent::SubtaskChanged,
            };
            c = record_event(c, ev);
            prop_assert!(c.is_well_formed());
        }
        let m = replay(&events);
        prop_assert_eq!(c.steps_since_quality_check, m.since_check);
        prop_assert_eq!(c.repeated_action_run, m.run);
        prop_assert_eq!(c.current_subtask_actions, m.subtask_actions);
        prop_assert_eq!(c.state_switches, m.switches);
        prop_assert_eq!(c.plan_attempts, m.plans);
        prop_assert_eq!(c.last_action_fingerprint, m.last.map(|i| prints[i as usize]));
    }

    #[test]
    fn step_rules_fire_exactly_at_bounds(
        every in 1u32..20, repeat in 1u32..20, long in 1u32..40,
        run in 0u32..45, actions in 0u32..45, since in 0u32..45,
    ) {
        let cfg = RuleConfig {
            quality_check_every: every,
            repeated_action_limit: repeat,
            long_execution_limit: long,
            ..RuleConfig::default()
        };
        let c = Counters {
            repeated_action_run: run,
            current_subtask_actions: actions,
            steps_since_quality_check: since,
            ..Counters::default()
        };
        let expected = if run > repeat {
            Some(TriggerCode::RuleQualityCheckRepeatedActions)
        } else if actions > long {
            Some(TriggerCode::RuleReplanLongExecution)
        } else if since >= every {
            Some(TriggerCode::RuleQualityCheckSteps)
        } else {
            None
        };
        prop_assert_eq!(check_step_rules(&c, &cfg), expected);
    }

    #[test]
    fn task_rules_fire_exactly_at_bounds(
        max_switches in 1u32..200, max_plans in 1u32..20, max_runtime in 1u64..5000,
        switches in 0u32..220, plans in 0u32..25, now in 0u64..6000,
    ) {
        let cfg = RuleConfig {
            max_state_switches: max_switches,
            max_plan_attempts: max_plans,
            max_runtime,
            ..RuleConfig::default()
        };
        let mut s = GlobalState::new(0);
        s.counters.state_switches = switches;
        s.counters.plan_attempts = plans;
        let expected = if now > max_runtime {
            Some(TriggerCode::RuleTaskRuntimeExceeded)
        } else if switches >= max_switches {
            Some(TriggerCode::RuleMaxStateSwitchesReached)
        } else if plans > max_plans {
            Some(TriggerCode::RulePlanNumberExceeded)
        } else {
            None
        };
        prop_assert_eq!(check_task_rules(&s, now, &cfg), expected);
    }

    #[test]
    fn step_rules_monotone_in_counters(run in 0u32..30, actions in 0u32..30, since in 0u32..30, bump in 0u32..3) {
        let cfg = RuleConfig::default();
        let c = Counters { repeated_action_run: run, current_subtask_actions: actions, steps_since_quality_check: since, ..Counters::default() };
        let mut bigger = c.clone();
        match bump {
            0 => bigger.repeated_action_run += 1,
            1 => bigger.current_subtask_actions += 1,
            _ => bigger.steps_since_quality_check += 1,
        }
        if check_step_rules(&c, &cfg).is_some() {
            prop_assert!(check_step_rules(&bigger, &cfg).is_some());
        }
    }
}

fn decision_name(d: GateDecision) -> &'static str {
    match d {
        GateDecision::GateDone => "gate_done",
        GateDecision::GateFail => "gate_fail",
        GateDecision::GateContinue => "gate_continue",
        GateDecision::GateSupplement => "gate_supplement",
        GateDecision::GateError => "gate_error",
    }
}

#[test]
fn gate_grid_matches_oracle() {
    let th = GateThresholds::default();
    for i in 0..=20 {
        for j in 0..=20 {
            for k in 0..=20 {
                let (s, p, u) = (i as f64 / 20.0, j as f64 / 20.0, k as f64 / 20.0);
                let got = gate_decide(&JudgeSignals::new(s, p, u), &th);
                assert_ne!(got, GateDecision::GateError);
                let want = gate_oracle(s, p, u, th.tau_done, th.tau_fail, th.tau_supplement).unwrap();
                assert_eq!(decision_name(got), want, "({s}, {p}, {u})");
            }
        }
    }
    // progress equal to the failure threshold is not a failure.
    assert_eq!(gate_decide(&JudgeSignals::new(0.5, 0.1, 0.0), &th), GateDecision::GateContinue);
}

fn arb_thresholds() -> impl Strategy<Value = GateThresholds> {
    (0.0f64..0.5, 0.5f64..1.0, 0.0f64..=1.0).prop_map(|(fail, done, supp)| GateThresholds {
        tau_done: done,
        tau_fail: fail,
        tau_supplement: supp,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn raising_done_threshold_never_creates_done(
        th in arb_thresholds(), raise in 0.0f64..0.5,
        s in 0.0f64..=1.0, p in 0.0f64..=1.0, u in 0.0f64..=1.0,
    ) {
        let sig = JudgeSignals::new(s, p, u);
        let higher = GateThresholds { tau_done: (th.tau_done + raise).min(1.0), ..th };
        if gate_decide(&sig, &th) != GateDecision::GateDone {
            prop_assert_ne!(gate_decide(&sig, &higher), GateDecision::GateDone);
        }
    }

    #[test]
    fn lowering_fail_threshold_never_creates_fail(
        th in arb_thresholds(), lower in 0.0f64..0.5,
        s in 0.0f64..=1.0, p in 0.0f64..=1.0, u in 0.0f64..=1.0,
    ) {
        let sig = JudgeSignals::new(s, p, u);
        let lower_th = GateThresholds { tau_fail: (th.tau_fail - lower).max(0.0), ..th };
        if gate_decide(&sig, &th) != GateDecision::GateFail {
            prop_assert_ne!(gate_decide(&sig, &lower_th), GateDecision::GateFail);
        }
    }

    #[test]
    fn gate_agrees_with_oracle_under_random_thresholds(
        th in arb_thresholds(), s in 0.0f64..=1.0, p in 0.0f64..=1.0, u in 0.0f64..=1.0,
    ) {
        let got = gate_decide(&JudgeSignals::new(s, p, u), &th);
        let want = gate_oracle(s, p, u, th.tau_done, th.tau_fail, th.tau_supplement).unwrap();
        prop_assert_eq!(decision_name(got), want);
    }
}

fn node(id: &str) -> SubtaskNode {
    SubtaskNode::new(id, format!("do {id}"), WorkerRole::Operator)
}

/// Random graph on up to 8 nodes; edges go forward in a shuffled ranking, so
/// the result is acyclic unless `back_edge` closes a loop.
fn arb_graph(acyclic: bool) -> impl Strategy<Value = (Vec<String>, Vec<(String, String)>)> {
    (1usize..=8)
        .prop_flat_map(|n| {
            (
                Just(n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                prop::collection::vec(any::<bool>(), n * n),
            )
        })
        .prop_map(move |(n, rank, coin)| {
            let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            let mut edges = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if rank[a] < rank[b] && coin[a * n + b] && coin[b * n + a] {
                        edges.push((ids[a].clone(), ids[b].clone()));
                    }
                }
            }
            if !acyclic {
                // Close a loop between the lowest- and highest-ranked nodes.
                let lo = (0..n).min_by_key(|i| rank[*i]).unwrap();
                let hi = (0..n).max_by_key(|i| rank[*i]).unwrap();
                edges.push((ids[lo].clone(), ids[hi].clone()));
                edges.push((ids[hi].clone(), ids[lo].clone()));
            }
            (ids, edges)
        })
}

fn dag_of(ids: &[String], edges: &[(String, String)]) -> Result<SubtaskDag, PlanError> {
    build_dag(
        ids.iter().map(|i| node(i)),
        edges.iter().map(|(a, b)| (SubtaskId::new(a.clone()), SubtaskId::new(b.clone()))),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn topological_order_is_lex_min((ids, edges) in arb_graph(true)) {
        let dag = dag_of(&ids, &edges).unwrap();
        let order: Vec<String> = dag.order().iter().map(|i| i.as_str().to_string()).collect();
        prop_assert!(respects(&order, &edges));
        prop_assert_eq!(Some(order), lex_min_order(&ids, &edges));
    }

    #[test]
    fn cycles_always_rejected((ids, edges) in arb_graph(false)) {
        prop_assume!(ids.len() >= 2);
        prop_assert!(lex_min_order(&ids, &edges).is_none());
        match dag_of(&ids, &edges) {
            Err(PlanError::CycleDetected(cycle)) => {
                prop_assert!(cycle.len() >= 2);
                for w in 0..cycle.len() {
                    let (a, b) = (&cycle[w], &cycle[(w + 1) % cycle.len()]);
                    prop_assert!(edges.contains(&(a.as_str().to_string(), b.as_str().to_string())));
                }
            }
            other => prop_assert!(false, "expected a cycle, got {:?}", other),
        }
    }

    #[test]
    fn frontier_is_sound_and_complete(
        (ids, edges) in arb_graph(true),
        picks in prop::collection::vec(0u8..5, 8),
    ) {
        let dag = dag_of(&ids, &edges).unwrap();
        let all = [SubtaskStatus::Pending, SubtaskStatus::Ready, SubtaskStatus::Fulfilled, SubtaskStatus::Rejected, SubtaskStatus::Stale];
        let statuses: BTreeMap<SubtaskId, SubtaskStatus> = ids
            .iter()
            .zip(&picks)
            .map(|(id, p)| (SubtaskId::new(id.clone()), all[*p as usize]))
            .collect();
        let frontier = ready_frontier(&dag, &statuses);
        for id in dag.order() {
            let preds_done = edges
                .iter()
                .filter(|(_, b)| b == id.as_str())
                .all(|(a, _)| statuses[&SubtaskId::new(a.clone())] == SubtaskStatus::Fulfilled);
            let terminal = matches!(statuses[id], SubtaskStatus::Fulfilled | SubtaskStatus::Rejected);
            prop_assert_eq!(frontier.contains(id), preds_done && !terminal, "{}", id);
        }
    }
}

/// A random variation of a plan: maybe new nodes, dropped nodes, rewired
/// edges, changed roles or titles.
#[derive(Debug, Clone)]
struct Mutation {
    add: bool,
    drop: Option<usize>,
    rewire: bool,
    retitle: Option<usize>,
    recast: Option<usize>,
}

fn arb_mutation() -> impl Strategy<Value = Mutation> {
    (any::<bool>(), prop::option::of(0usize..8), any::<bool>(), prop::option::of(0usize..8), prop::option::of(0usize..8))
        .prop_map(|(add, drop, rewire, retitle, recast)| Mutation { add, drop, rewire, retitle, recast })
}

fn apply(dag: &SubtaskDag, m: &Mutation) -> SubtaskDag {
    let mut nodes: Vec<SubtaskNode> = dag.nodes().cloned().collect();
    let mut edges: Vec<(SubtaskId, SubtaskId)> = dag.edges().iter().cloned().collect();
    if let Some(i) = m.retitle.filter(|i| *i < nodes.len()) {
        nodes[i].title.push_str(" (revised)");
    }
    if let Some(i) = m.recast.filter(|i| *i < nodes.len()) {
        nodes[i].role = WorkerRole::Technician;
    }
    if let Some(i) = m.drop.filter(|i| *i < nodes.len() && nodes.len() > 1) {
        let gone = nodes.remove(i).id;
        edges.retain(|(a, b)| *a != gone && *b != gone);
    }
    if m.rewire {
        edges.clear();
    }
    if m.add {
        nodes.push(node("extra"));
    }
    build_dag(nodes, edges).unwrap()
}

fn contract_oracle(
    current: &SubtaskDag,
    statuses: &BTreeMap<SubtaskId, SubtaskStatus>,
    next: &SubtaskDag,
    level: AdjustmentLevel,
) -> bool {
    match level {
        AdjustmentLevel::Light => {
            current.ids() == next.ids()
                && current.edges() == next.edges()
                && current.nodes().all(|n| next.node(&n.id).unwrap().role == n.role)
        }
        AdjustmentLevel::Medium => statuses
            .iter()
            .filter(|(_, s)| **s == SubtaskStatus::Fulfilled)
            .all(|(id, _)| next.node(id) == current.node(id)),
        AdjustmentLevel::Heavy => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn level_contracts_hold(
        (ids, edges) in arb_graph(true),
        fulfilled in prop::collection::vec(any::<bool>(), 8),
        m in arb_mutation(),
        level in prop_oneof![Just(AdjustmentLevel::Light), Just(AdjustmentLevel::Medium), Just(AdjustmentLevel::Heavy)],
    ) {
        let current = dag_of(&ids, &edges).unwrap();
        let statuses: BTreeMap<SubtaskId, SubtaskStatus> = ids
            .iter()
            .zip(&fulfilled)
            .map(|(id, f)| (SubtaskId::new(id.clone()), if *f { SubtaskStatus::Fulfilled } else { SubtaskStatus::Pending }))
            .collect();
        let next = apply(&current, &m);
        let verdict = check_level_contract(&current, &statuses, &next, level);
        if contract_oracle(&current, &statuses, &next, level) {
            prop_assert!(verdict.is_ok(), "{:?}", verdict);
        } else {
            let is_violation = matches!(verdict, Err(PlanError::LevelViolation { .. }));
            prop_assert!(is_violation, "{:?}", verdict);
        }
    }
}

#[derive(Debug, Clone)]
enum ArtifactOp {
    Write(usize, String, WorkerRole),
    Read(usize, Option<u32>),
}

fn arb_ops() -> impl Strategy<Value = Vec<ArtifactOp>> {
    let role = prop_oneof![Just(WorkerRole::Operator), Just(WorkerRole::Technician), Just(WorkerRole::Analyst)];
    prop::collection::vec(
        prop_oneof![
            (0usize..3, "[a-z]{0,5}", role).prop_map(|(k, c, r)| ArtifactOp::Write(k, c, r)),
            (0usize..3, prop::option::of(0u32..6)).prop_map(|(k, v)| ArtifactOp::Read(k, v)),
        ],
        0..80,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn artifact_versions_are_monotone_and_immutable(ops in arb_ops()) {
        let keys = ["questions", "answers", "notes"];
        let store = ArtifactStore::new();
        let mut model: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for op in &ops {
            match op {
                ArtifactOp::Write(k, content, role) => {
                    let v = store.write(keys[*k], content, *role).unwrap();
                    let history = model.entry(*k).or_default();
                    history.push(content.clone());
                    prop_assert_eq!(v as usize, history.len());
                }
                ArtifactOp::Read(k, version) => {
                    let want = model.get(k).and_then(|h| match version {
                        None => h.last().cloned(),
                        Some(0) => None,
                        Some(v) => h.get(*v as usize - 1).cloned(),
                    });
                    prop_assert_eq!(store.read(keys[*k], *version).ok(), want);
                }
            }
        }
        // Every historical version still reads back as written.
        for (k, history) in &model {
            for (i, content) in history.iter().enumerate() {
                prop_assert_eq!(&store.read(keys[*k], Some(i as u32 + 1)).unwrap(), content);
            }
        }
        let stamps: Vec<u64> = store.snapshot().iter().map(|r| r.timestamp).collect();
        let mut sorted = stamps.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), stamps.len());
    }
}

#[test]
fn concurrent_writers_get_distinct_versions() {
    let store = std::sync::Arc::new(ArtifactStore::new());
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let store = std::sync::Arc::clone(&store);
            std::thread::spawn(move || {
                (0..50)
                    .map(|i| store.write("shared", &format!("{t}-{i}"), WorkerRole::Analyst).unwrap())
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let mut versions: Vec<u32> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    versions.sort_unstable();
    assert_eq!(versions, (1..=200).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Any sequence of globally legal events keeps the state well formed and
    /// the switch count equal to the number of applied events.
    #[test]
    fn global_events_never_break_state(picks in prop::collection::vec(0usize..10, 1..40)) {
        let globals: Vec<TriggerCode> = TriggerCode::ALL
            .into_iter()
            .filter(|c| c.category().is_global())
            .collect();
        let cfg = RuleConfig::default();
        let mut state = GlobalState::new(0);
        for (applied, p) in (1u32..).zip(picks) {
            if state.situation.is_terminal() {
                break;
            }
            let out = step(&state, &Event::bare(globals[p]), &cfg, 0).unwrap();
            prop_assert!(out.state.invariant_violations().is_empty());
            prop_assert_eq!(out.state.counters.state_switches, applied);
            state = out.state;
        }
    }
}
