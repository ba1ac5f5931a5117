//! Brute-force reference implementations shared by the property suites and
//! the acceptance run. Nothing here calls the code under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

/// Reference rows: (category, code, target). Typed out by hand.
pub const REFERENCE_ROWS: [(&str, &str, &str); 40] = [
    ("Rule Validation", "rule_quality_check_steps", "QUALITY_CHECK"),
    ("Rule Validation", "rule_quality_check_repeated_actions", "QUALITY_CHECK"),
    ("Rule Validation", "rule_replan_long_execution", "PLAN"),
    ("Task Status Rules", "rule_max_state_switches_reached", "DONE"),
    ("Task Status Rules", "rule_plan_number_exceeded", "DONE"),
    ("Task Status Rules", "rule_state_switch_count_exceeded", "DONE"),
    ("Task Status Rules", "rule_task_completed", "DONE"),
    ("Task Status Rules", "rule_task_runtime_exceeded", "DONE"),
    ("INIT State", "subtask_ready", "GET_ACTION"),
    ("INIT State", "no_subtasks", "PLAN"),
    ("INIT State", "init_error", "PLAN"),
    ("GET_ACTION State", "no_current_subtask_id", "INIT"),
    ("GET_ACTION State", "subtask_not_found", "INIT"),
    ("GET_ACTION State", "worker_success", "QUALITY_CHECK"),
    ("GET_ACTION State", "work_cannot_execute", "PLAN"),
    ("GET_ACTION State", "worker_stale_progress", "QUALITY_CHECK"),
    ("GET_ACTION State", "worker_supplement", "SUPPLEMENT"),
    ("GET_ACTION State", "worker_generate_action", "EXECUTE_ACTION"),
    ("GET_ACTION State", "no_worker_decision", "PLAN"),
    ("GET_ACTION State", "get_action_error", "PLAN"),
    ("EXECUTE_ACTION", "execution_error", "GET_ACTION"),
    ("EXECUTE_ACTION", "command_completed", "GET_ACTION"),
    ("EXECUTE_ACTION", "no_command", "GET_ACTION"),
    ("QUALITY_CHECK", "all_subtasks_completed", "FINAL_CHECK"),
    ("QUALITY_CHECK", "quality_check_passed", "GET_ACTION"),
    ("QUALITY_CHECK", "quality_check_failed", "PLAN"),
    ("QUALITY_CHECK", "quality_check_supplement", "SUPPLEMENT"),
    ("QUALITY_CHECK", "quality_check_execute_action", "EXECUTE_ACTION"),
    ("QUALITY_CHECK", "quality_check_error", "PLAN"),
    ("PLAN State", "subtask_ready_after_plan", "GET_ACTION"),
    ("PLAN State", "plan_error", "INIT"),
    ("SUPPLEMENT", "supplement_completed", "PLAN"),
    ("SUPPLEMENT", "supplement_error", "PLAN"),
    ("FINAL_CHECK", "final_check_error", "DONE"),
    ("FINAL_CHECK", "final_check_pending", "GET_ACTION"),
    ("FINAL_CHECK", "final_check_passed", "DONE"),
    ("FINAL_CHECK", "final_check_failed", "PLAN"),
    ("FINAL_CHECK", "task_impossible", "DONE"),
    ("Error Recovery", "unknown_state", "INIT"),
    ("Error Recovery", "error_recovery", "INIT"),
];

pub const ACTIVE: [&str; 7] = [
    "INIT",
    "PLAN",
    "GET_ACTION",
    "EXECUTE_ACTION",
    "QUALITY_CHECK",
    "SUPPLEMENT",
    "FINAL_CHECK",
];

/// Situations a row's code may be raised from.
pub fn reference_sources(category: &str) -> Vec<&'static str> {
    match category {
        "Rule Validation" | "Task Status Rules" | "Error Recovery" => ACTIVE.to_vec(),
        "INIT State" => vec!["INIT"],
        "GET_ACTION State" => vec!["GET_ACTION"],
        "EXECUTE_ACTION" => vec!["EXECUTE_ACTION"],
        "QUALITY_CHECK" => vec!["QUALITY_CHECK"],
        "PLAN State" => vec!["PLAN"],
        "SUPPLEMENT" => vec!["SUPPLEMENT"],
        "FINAL_CHECK" => vec!["FINAL_CHECK"],
        other => panic!("unknown category {other}"),
    }
}

/// Gate verdict restated from the threshold rules: done, then fail, then
/// supplement, else continue. `None` for out-of-range signals.
pub fn gate_oracle(s: f64, p: f64, u: f64, done: f64, fail: f64, supp: f64) -> Option<&'static str> {
    let ok = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
    if !(ok(s) && ok(p) && ok(u)) {
        return None;
    }
    let is_done = s > done;
    let is_fail = p < fail;
    let is_supp = u > supp;
    Some(if is_done {
        "gate_done"
    } else if is_fail {
        "gate_fail"
    } else if is_supp {
        "gate_supplement"
    } else {
        "gate_continue"
    })
}

/// Next lexicographic permutation in place; false once the last one is passed.
fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

pub fn respects(order: &[String], edges: &[(String, String)]) -> bool {
    let pos: BTreeMap<&String, usize> = order.iter().enumerate().map(|(i, id)| (id, i)).collect();
    edges.iter().all(|(a, b)| match (pos.get(a), pos.get(b)) {
        (Some(x), Some(y)) => x < y,
        _ => false,
    })
}

/// Lexicographically smallest order satisfying every edge, by enumerating
/// permutations in lexicographic order. `None` when no order exists.
pub fn lex_min_order(ids: &[String], edges: &[(String, String)]) -> Option<Vec<String>> {
    let sorted: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let index = |id: &String| sorted.iter().position(|s| s == id).expect("edge endpoint is a node");
    let pairs: Vec<(usize, usize)> = edges.iter().map(|(a, b)| (index(a), index(b))).collect();
    let mut perm: Vec<usize> = (0..sorted.len()).collect();
    let mut pos = vec![0; sorted.len()];
    loop {
        for (i, p) in perm.iter().enumerate() {
            pos[*p] = i;
        }
        if pairs.iter().all(|(a, b)| pos[*a] < pos[*b]) {
            return Some(perm.iter().map(|i| sorted[*i].clone()).collect());
        }
        if !next_permutation(&mut perm) {
            return None;
        }
    }
}

/// Counter model: (steps since check, identical run, subtask actions,
/// switches, plan attempts, last fingerprint).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CounterModel {
    pub since_check: u32,
    pub run: u32,
    pub subtask_actions: u32,
    pub switches: u32,
    pub plans: u32,
    pub last: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
pub enum ModelEvent {
    Action(u64),
    Switch,
    Plan,
    Check,
    NewSubtask,
}

pub fn replay(events: &[ModelEvent]) -> CounterModel {
    let mut m = CounterModel::default();
    for e in events {
        match *e {
            ModelEvent::Action(fp) => {
                m.since_check += 1;
                m.subtask_actions += 1;
                m.run = if m.last == Some(fp) { m.run + 1 } else { 1 };
                m.last = Some(fp);
            }
            ModelEvent::Switch => m.switches += 1,
            ModelEvent::Plan => m.plans += 1,
            ModelEvent::Check => m.since_check = 0,
            ModelEvent::NewSubtask => {
                m.subtask_actions = 0;
                m.run = 0;
                m.last = None;
            }
        }
    }
    m
}
