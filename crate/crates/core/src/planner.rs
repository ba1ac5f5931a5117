//! Plan representation and the Manager's scheduling duties: DAG
//! construction, deterministic topological order, the ready frontier,
//! three-level replanning, and knowledge supplementation.
//!
//! Plan text itself comes from a [`PlanProvider`]; this module only accepts,
//! validates and schedules what the provider returns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::state::{SubtaskStatus, TriggerCode};
use crate::worker::WorkerRole;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubtaskId(pub String);

impl SubtaskId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubtaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubtaskId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskNode {
    pub id: SubtaskId,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub role: WorkerRole,
}

impl SubtaskNode {
    pub fn new(id: impl Into<String>, title: impl Into<String>, role: WorkerRole) -> Self {
        Self {
            id: SubtaskId::new(id),
            title: title.into(),
            description: String::new(),
            role,
        }
    }
}

pub type Edge = (SubtaskId, SubtaskId);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("dependency cycle: {}", display_cycle(.0))]
    CycleDetected(Vec<SubtaskId>),
    #[error("edge references unknown subtask `{0}`")]
    UnknownNode(SubtaskId),
    #[error("duplicate subtask id `{0}`")]
    DuplicateNode(SubtaskId),
    #[error("plan contains no subtasks")]
    EmptyPlan,
    #[error("plan provider failed: {0}")]
    ProviderFailure(String),
    #[error("{level} adjustment violated: {reason}")]
    LevelViolation {
        level: AdjustmentLevel,
        reason: String,
    },
}

fn display_cycle(ids: &[SubtaskId]) -> String {
    let mut parts: Vec<&str> = ids.iter().map(SubtaskId::as_str).collect();
    if let Some(first) = ids.first() {
        parts.push(first.as_str());
    }
    parts.join(" -> ")
}

/// Validated, acyclic subtask plan with a cached execution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDag", into = "RawDag")]
pub struct SubtaskDag {
    nodes: BTreeMap<SubtaskId, SubtaskNode>,
    edges: BTreeSet<Edge>,
    order: Vec<SubtaskId>,
}

#[derive(Serialize, Deserialize)]
struct RawDag {
    nodes: Vec<SubtaskNode>,
    #[serde(default)]
    edges: Vec<Edge>,
}

impl TryFrom<RawDag> for SubtaskDag {
    type Error = PlanError;

    fn try_from(raw: RawDag) -> Result<Self, Self::Error> {
        build_dag(raw.nodes, raw.edges)
    }
}

impl From<SubtaskDag> for RawDag {
    fn from(dag: SubtaskDag) -> Self {
        RawDag {
            nodes: dag.order.iter().map(|id| dag.nodes[id].clone()).collect(),
            edges: dag.edges.into_iter().collect(),
        }
    }
}

impl SubtaskDag {
    pub fn empty() -> Self {
        Self {
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
            order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &SubtaskId) -> Option<&SubtaskNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &SubtaskId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SubtaskNode> {
        self.nodes.values()
    }

    pub fn ids(&self) -> BTreeSet<SubtaskId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn order(&self) -> &[SubtaskId] {
        &self.order
    }

    pub fn predecessors<'a>(&'a self, id: &'a SubtaskId) -> impl Iterator<Item = &'a SubtaskId> {
        self.edges
            .iter()
            .filter(move |(_, to)| to == id)
            .map(|(from, _)| from)
    }

    /// Returns a new DAG with `node` appended, depending on `after`.
    pub fn with_node(&self, node: SubtaskNode, after: &[SubtaskId]) -> Result<SubtaskDag, PlanError> {
        let mut nodes: Vec<SubtaskNode> = self.nodes.values().cloned().collect();
        let mut edges: Vec<Edge> = self.edges.iter().cloned().collect();
        edges.extend(after.iter().map(|p| (p.clone(), node.id.clone())));
        nodes.push(node);
        build_dag(nodes, edges)
    }
}

/// Validates nodes and edges and computes the execution order.
pub fn build_dag(
    nodes: impl IntoIterator<Item = SubtaskNode>,
    edges: impl IntoIterator<Item = Edge>,
) -> Result<SubtaskDag, PlanError> {
    let mut by_id = BTreeMap::new();
    for node in nodes {
        if let Some(prev) = by_id.insert(node.id.clone(), node) {
            return Err(PlanError::DuplicateNode(prev.id));
        }
    }
    let mut edge_set = BTreeSet::new();
    for (from, to) in edges {
        for end in [&from, &to] {
            if !by_id.contains_key(end) {
                return Err(PlanError::UnknownNode(end.clone()));
            }
        }
        edge_set.insert((from, to));
    }
    let order = lexicographic_topo_sort(&by_id, &edge_set)?;
    Ok(SubtaskDag {
        nodes: by_id,
        edges: edge_set,
        order,
    })
}

/// Kahn's algorithm always taking the smallest available id, which yields the
/// lexicographically smallest admissible order.
fn lexicographic_topo_sort(
    nodes: &BTreeMap<SubtaskId, SubtaskNode>,
    edges: &BTreeSet<Edge>,
) -> Result<Vec<SubtaskId>, PlanError> {
    let mut indegree: BTreeMap<&SubtaskId, usize> = nodes.keys().map(|id| (id, 0)).collect();
    let mut successors: BTreeMap<&SubtaskId, Vec<&SubtaskId>> = BTreeMap::new();
    for (from, to) in edges {
        *indegree.get_mut(to).expect("endpoint checked") += 1;
        successors.entry(from).or_default().push(to);
    }
    let mut available: BTreeSet<&SubtaskId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(next) = available.pop_first() {
        order.push(next.clone());
        for succ in successors.get(next).into_iter().flatten() {
            let d = indegree.get_mut(*succ).expect("endpoint checked");
            *d -= 1;
            if *d == 0 {
                available.insert(succ);
            }
        }
    }
    if order.len() == nodes.len() {
        Ok(order)
    } else {
        let placed: BTreeSet<&SubtaskId> = order.iter().collect();
        Err(PlanError::CycleDetected(find_cycle(nodes, edges, &placed)))
    }
}

/// Every node left unplaced by Kahn's algorithm still has an unplaced
/// predecessor, so walking predecessors from any of them must revisit a node.
fn find_cycle(
    nodes: &BTreeMap<SubtaskId, SubtaskNode>,
    edges: &BTreeSet<Edge>,
    placed: &BTreeSet<&SubtaskId>,
) -> Vec<SubtaskId> {
    let Some(mut cur) = nodes.keys().find(|id| !placed.contains(id)) else {
        return Vec::new();
    };
    let mut path: Vec<&SubtaskId> = Vec::new();
    loop {
        if let Some(pos) = path.iter().position(|p| *p == cur) {
            let mut cycle: Vec<SubtaskId> = path[pos..].iter().map(|id| (*id).clone()).collect();
            cycle.reverse();
            return cycle;
        }
        path.push(cur);
        cur = edges
            .iter()
            .find(|(from, to)| to == cur && !placed.contains(from))
            .map(|(from, _)| from)
            .expect("unplaced node keeps an unplaced predecessor");
    }
}

pub fn topological_order(dag: &SubtaskDag) -> Vec<SubtaskId> {
    dag.order.clone()
}

/// Non-terminal subtasks whose predecessors are all fulfilled.
pub fn ready_frontier(
    dag: &SubtaskDag,
    statuses: &BTreeMap<SubtaskId, SubtaskStatus>,
) -> BTreeSet<SubtaskId> {
    let fulfilled = |id: &SubtaskId| statuses.get(id) == Some(&SubtaskStatus::Fulfilled);
    dag.order
        .iter()
        .filter(|id| !statuses.get(*id).is_some_and(|s| s.is_terminal()))
        .filter(|id| dag.predecessors(id).all(fulfilled))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentLevel {
    Light,
    Medium,
    Heavy,
}

impl fmt::Display for AdjustmentLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Light => "light",
            Self::Medium => "medium",
            Self::Heavy => "heavy",
        })
    }
}

/// Maps the failure count of a subtask onto an adjustment level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjustmentPolicy {
    pub medium_from: u32,
    pub heavy_from: u32,
}

impl Default for AdjustmentPolicy {
    fn default() -> Self {
        Self {
            medium_from: 2,
            heavy_from: 3,
        }
    }
}

impl AdjustmentPolicy {
    pub fn select(&self, failures: u32) -> AdjustmentLevel {
        if failures >= self.heavy_from {
            AdjustmentLevel::Heavy
        } else if failures >= self.medium_from {
            AdjustmentLevel::Medium
        } else {
            AdjustmentLevel::Light
        }
    }
}

/// Why a replan was requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub subtask: Option<SubtaskId>,
    pub trigger: TriggerCode,
    pub failures: u32,
}

pub struct PlanRequest<'a> {
    pub task: &'a str,
    pub context: &'a [String],
    pub failure: Option<&'a FailureReport>,
    pub level: Option<AdjustmentLevel>,
    /// 1-based planning attempt number.
    pub attempt: u32,
    pub current: Option<&'a SubtaskDag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanProposal {
    Plan {
        nodes: Vec<SubtaskNode>,
        edges: Vec<Edge>,
    },
    Impossible,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ProviderFailure(pub String);

pub trait PlanProvider {
    fn propose(&mut self, request: &PlanRequest<'_>) -> Result<PlanProposal, ProviderFailure>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Planned {
    Dag(SubtaskDag),
    Impossible,
}

impl Planned {
    /// The controller trigger this planning result leads to.
    pub fn trigger(result: &Result<Planned, PlanError>) -> TriggerCode {
        match result {
            Ok(Planned::Dag(_)) => TriggerCode::SubtaskReadyAfterPlan,
            Ok(Planned::Impossible) => TriggerCode::TaskImpossible,
            Err(_) => TriggerCode::PlanError,
        }
    }
}

fn accept(proposal: PlanProposal) -> Result<Planned, PlanError> {
    match proposal {
        PlanProposal::Impossible => Ok(Planned::Impossible),
        PlanProposal::Plan { nodes, edges } => {
            if nodes.is_empty() {
                return Err(PlanError::EmptyPlan);
            }
            build_dag(nodes, edges).map(Planned::Dag)
        }
    }
}

/// Initial planning.
pub fn plan(
    task: &str,
    context: &[String],
    attempt: u32,
    provider: &mut dyn PlanProvider,
) -> Result<Planned, PlanError> {
    let request = PlanRequest {
        task,
        context,
        failure: None,
        level: None,
        attempt,
        current: None,
    };
    let proposal = provider
        .propose(&request)
        .map_err(|e| PlanError::ProviderFailure(e.0))?;
    accept(proposal)
}

/// Adjusts `current` at the given level. The level's contract is enforced on
/// whatever the provider returns.
#[allow(clippy::too_many_arguments)]
pub fn replan(
    task: &str,
    context: &[String],
    current: &SubtaskDag,
    statuses: &BTreeMap<SubtaskId, SubtaskStatus>,
    failure: &FailureReport,
    level: AdjustmentLevel,
    attempt: u32,
    provider: &mut dyn PlanProvider,
) -> Result<Planned, PlanError> {
    let request = PlanRequest {
        task,
        context,
        failure: Some(failure),
        level: Some(level),
        attempt,
        current: Some(current),
    };
    let proposal = provider
        .propose(&request)
        .map_err(|e| PlanError::ProviderFailure(e.0))?;
    let planned = accept(proposal)?;
    if let Planned::Dag(next) = &planned {
        check_level_contract(current, statuses, next, level)?;
    }
    Ok(planned)
}

pub fn check_level_contract(
    current: &SubtaskDag,
    statuses: &BTreeMap<SubtaskId, SubtaskStatus>,
    proposed: &SubtaskDag,
    level: AdjustmentLevel,
) -> Result<(), PlanError> {
    let violation = |reason: String| Err(PlanError::LevelViolation { level, reason });
    match level {
        AdjustmentLevel::Light => {
            if current.ids() != proposed.ids() {
                return violation("node set changed".into());
            }
            if current.edges != proposed.edges {
                return violation("edges changed".into());
            }
            for node in current.nodes() {
                if proposed.nodes[&node.id].role != node.role {
                    return violation(format!("role of `{}` changed", node.id));
                }
            }
            Ok(())
        }
        AdjustmentLevel::Medium => {
            for (id, status) in statuses {
                if *status != SubtaskStatus::Fulfilled {
                    continue;
                }
                match (current.node(id), proposed.node(id)) {
                    (Some(old), Some(new)) if old == new => {}
                    (Some(_), Some(_)) => {
                        return violation(format!("fulfilled subtask `{id}` was modified"))
                    }
                    (Some(_), None) => {
                        return violation(format!("fulfilled subtask `{id}` was dropped"))
                    }
                    (None, _) => {}
                }
            }
            Ok(())
        }
        AdjustmentLevel::Heavy => Ok(()),
    }
}

/// Statuses for a freshly accepted plan. Fulfilled subtasks that survive
/// unchanged keep their status; everything else starts over.
pub fn carry_statuses(
    previous: Option<&SubtaskDag>,
    statuses: &BTreeMap<SubtaskId, SubtaskStatus>,
    next: &SubtaskDag,
) -> BTreeMap<SubtaskId, SubtaskStatus> {
    let mut out: BTreeMap<SubtaskId, SubtaskStatus> = next
        .order
        .iter()
        .map(|id| {
            let kept = previous
                .and_then(|p| p.node(id))
                .is_some_and(|old| Some(old) == next.node(id))
                && statuses.get(id) == Some(&SubtaskStatus::Fulfilled);
            let status = if kept {
                SubtaskStatus::Fulfilled
            } else {
                SubtaskStatus::Pending
            };
            (id.clone(), status)
        })
        .collect();
    let frontier = ready_frontier(next, &out);
    for id in frontier {
        out.insert(id, SubtaskStatus::Ready);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SupplementError {
    #[error("supplement query is empty")]
    EmptyQuery,
    #[error("knowledge source unavailable: {0}")]
    SourceUnavailable(String),
}

impl SupplementError {
    pub fn trigger(&self) -> TriggerCode {
        TriggerCode::SupplementError
    }
}

/// External knowledge (web search, retrieval) behind a narrow interface.
pub trait KnowledgeSource {
    fn fetch(&mut self, query: &str) -> Result<String, SupplementError>;
}

pub fn supplement(query: &str, source: &mut dyn KnowledgeSource) -> Result<String, SupplementError> {
    if query.trim().is_empty() {
        return Err(SupplementError::EmptyQuery);
    }
    source.fetch(query)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str) -> SubtaskNode {
        SubtaskNode::new(id, format!("do {id}"), WorkerRole::Operator)
    }

    fn edge(a: &str, b: &str) -> Edge {
        (SubtaskId::from(a), SubtaskId::from(b))
    }

    fn ids(v: &[&str]) -> Vec<SubtaskId> {
        v.iter().map(|s| SubtaskId::from(*s)).collect()
    }

    fn diamond() -> SubtaskDag {
        build_dag(
            ["A", "B", "C", "D"].map(node),
            [edge("A", "B"), edge("A", "C"), edge("B", "D"), edge("C", "D")],
        )
        .unwrap()
    }

    #[test]
    fn singleton_and_chain() {
        assert_eq!(build_dag([node("A")], []).unwrap().order(), ids(&["A"]));
        let chain = build_dag(["C", "B", "A"].map(node), [edge("A", "B"), edge("B", "C")]).unwrap();
        assert_eq!(chain.order(), ids(&["A", "B", "C"]));
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = build_dag(["A", "B"].map(node), [edge("A", "B"), edge("B", "A")]).unwrap_err();
        match err {
            PlanError::CycleDetected(cycle) => {
                assert_eq!(cycle.len(), 2);
                assert!(err_cycle_closes(&cycle, &[edge("A", "B"), edge("B", "A")]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn err_cycle_closes(cycle: &[SubtaskId], edges: &[Edge]) -> bool {
        (0..cycle.len()).all(|i| {
            let e = (cycle[i].clone(), cycle[(i + 1) % cycle.len()].clone());
            edges.contains(&e)
        })
    }

    #[test]
    fn cycle_behind_acyclic_prefix_is_named() {
        let edges = [edge("A", "B"), edge("B", "C"), edge("C", "D"), edge("D", "B")];
        let err = build_dag(["A", "B", "C", "D"].map(node), edges.clone()).unwrap_err();
        let PlanError::CycleDetected(cycle) = err else {
            panic!("expected cycle");
        };
        assert_eq!(cycle.len(), 3);
        assert!(err_cycle_closes(&cycle, &edges));
    }

    #[test]
    fn dangling_and_duplicate_rejected() {
        assert_eq!(
            build_dag([node("A")], [edge("A", "Z")]).unwrap_err(),
            PlanError::UnknownNode("Z".into())
        );
        assert_eq!(
            build_dag([node("A"), node("A")], []).unwrap_err(),
            PlanError::DuplicateNode("A".into())
        );
    }

    #[test]
    fn diamond_order_is_lexicographic_minimum() {
        assert_eq!(topological_order(&diamond()), ids(&["A", "B", "C", "D"]));
        assert!(topological_order(&SubtaskDag::empty()).is_empty());
    }

    #[test]
    fn frontier_examples() {
        let chain = build_dag(["A", "B"].map(node), [edge("A", "B")]).unwrap();
        let mut st = BTreeMap::from([
            ("A".into(), SubtaskStatus::Fulfilled),
            ("B".into(), SubtaskStatus::Pending),
        ]);
        assert_eq!(ready_frontier(&chain, &st), BTreeSet::from(["B".into()]));
        st.insert("A".into(), SubtaskStatus::Pending);
        assert_eq!(ready_frontier(&chain, &st), BTreeSet::from(["A".into()]));

        let d = diamond();
        let st = BTreeMap::from([
            ("A".into(), SubtaskStatus::Fulfilled),
            ("B".into(), SubtaskStatus::Pending),
            ("C".into(), SubtaskStatus::Pending),
            ("D".into(), SubtaskStatus::Pending),
        ]);
        assert_eq!(ready_frontier(&d, &st), BTreeSet::from(["B".into(), "C".into()]));
    }

    struct Fixed(Result<PlanProposal, ProviderFailure>);

    impl PlanProvider for Fixed {
        fn propose(&mut self, _: &PlanRequest<'_>) -> Result<PlanProposal, ProviderFailure> {
            self.0.clone()
        }
    }

    fn proposal(nodes: Vec<SubtaskNode>, edges: Vec<Edge>) -> Fixed {
        Fixed(Ok(PlanProposal::Plan { nodes, edges }))
    }

    #[test]
    fn plan_outcomes_map_to_triggers() {
        let mut ok = proposal(["A", "B", "C"].map(node).to_vec(), vec![edge("A", "C")]);
        let r = plan("t", &[], 1, &mut ok);
        assert_eq!(Planned::trigger(&r), TriggerCode::SubtaskReadyAfterPlan);
        let Ok(Planned::Dag(dag)) = r else { panic!() };
        assert_eq!(dag.order(), ids(&["A", "B", "C"]));

        let mut cyc = proposal(["A", "B"].map(node).to_vec(), vec![edge("A", "B"), edge("B", "A")]);
        assert_eq!(Planned::trigger(&plan("t", &[], 1, &mut cyc)), TriggerCode::PlanError);

        let mut imp = Fixed(Ok(PlanProposal::Impossible));
        assert_eq!(Planned::trigger(&plan("t", &[], 1, &mut imp)), TriggerCode::TaskImpossible);

        let mut down = Fixed(Err(ProviderFailure("offline".into())));
        assert_eq!(Planned::trigger(&plan("t", &[], 1, &mut down)), TriggerCode::PlanError);

        let mut empty = proposal(vec![], vec![]);
        assert_eq!(plan("t", &[], 1, &mut empty), Err(PlanError::EmptyPlan));
    }

    fn failure() -> FailureReport {
        FailureReport {
            subtask: Some("B".into()),
            trigger: TriggerCode::QualityCheckFailed,
            failures: 1,
        }
    }

    #[test]
    fn light_replan_accepts_description_change_only() {
        let cur = diamond();
        let st = BTreeMap::new();
        let mut nodes: Vec<SubtaskNode> = cur.nodes().cloned().collect();
        nodes[0].description = "try the menu instead".into();
        let edges: Vec<Edge> = cur.edges().iter().cloned().collect();
        let mut p = proposal(nodes.clone(), edges.clone());
        let r = replan("t", &[], &cur, &st, &failure(), AdjustmentLevel::Light, 2, &mut p).unwrap();
        let Planned::Dag(next) = r else { panic!() };
        assert_eq!(next.ids(), cur.ids());
        assert_eq!(next.node(&"A".into()).unwrap().description, "try the menu instead");

        let mut dropped = proposal(nodes[..3].to_vec(), vec![edge("A", "B"), edge("A", "C")]);
        assert!(matches!(
            replan("t", &[], &cur, &st, &failure(), AdjustmentLevel::Light, 2, &mut dropped),
            Err(PlanError::LevelViolation { .. })
        ));
    }

    #[test]
    fn medium_replan_may_rewire_but_keeps_fulfilled() {
        let cur = diamond();
        let st = BTreeMap::from([("A".into(), SubtaskStatus::Fulfilled)]);
        let nodes: Vec<SubtaskNode> = cur.nodes().cloned().collect();
        let rewired = vec![edge("A", "C"), edge("C", "B"), edge("B", "D")];
        let mut p = proposal(nodes.clone(), rewired);
        let r = replan("t", &[], &cur, &st, &failure(), AdjustmentLevel::Medium, 2, &mut p).unwrap();
        let Planned::Dag(next) = r else { panic!() };
        assert_eq!(next.order(), ids(&["A", "C", "B", "D"]));

        let mut without_a = proposal(nodes[1..].to_vec(), vec![edge("B", "D")]);
        assert!(matches!(
            replan("t", &[], &cur, &st, &failure(), AdjustmentLevel::Medium, 2, &mut without_a),
            Err(PlanError::LevelViolation { .. })
        ));
    }

    #[test]
    fn heavy_replan_accepts_anything_valid() {
        let cur = diamond();
        let st = BTreeMap::from([("A".into(), SubtaskStatus::Fulfilled)]);
        let mut p = proposal(vec![node("X"), node("Y")], vec![edge("Y", "X")]);
        let r = replan("t", &[], &cur, &st, &failure(), AdjustmentLevel::Heavy, 3, &mut p).unwrap();
        let Planned::Dag(next) = r else { panic!() };
        assert_eq!(next.order(), ids(&["Y", "X"]));
        let carried = carry_statuses(Some(&cur), &st, &next);
        assert_eq!(carried[&SubtaskId::from("Y")], SubtaskStatus::Ready);
        assert_eq!(carried[&SubtaskId::from("X")], SubtaskStatus::Pending);
    }

    #[test]
    fn carry_statuses_keeps_unchanged_fulfilled_nodes() {
        let cur = diamond();
        let st = BTreeMap::from([
            ("A".into(), SubtaskStatus::Fulfilled),
            ("B".into(), SubtaskStatus::Rejected),
        ]);
        let out = carry_statuses(Some(&cur), &st, &cur);
        assert_eq!(out[&SubtaskId::from("A")], SubtaskStatus::Fulfilled);
        assert_eq!(out[&SubtaskId::from("B")], SubtaskStatus::Ready);
        assert_eq!(out[&SubtaskId::from("C")], SubtaskStatus::Ready);
        assert_eq!(out[&SubtaskId::from("D")], SubtaskStatus::Pending);
    }

    #[test]
    fn adjustment_policy_defaults() {
        let p = AdjustmentPolicy::default();
        assert_eq!(p.select(1), AdjustmentLevel::Light);
        assert_eq!(p.select(2), AdjustmentLevel::Medium);
        assert_eq!(p.select(3), AdjustmentLevel::Heavy);
        assert_eq!(p.select(9), AdjustmentLevel::Heavy);
    }

    struct Echo(Option<String>);

    impl KnowledgeSource for Echo {
        fn fetch(&mut self, _query: &str) -> Result<String, SupplementError> {
            self.0
                .clone()
                .ok_or_else(|| SupplementError::SourceUnavailable("scripted failure".into()))
        }
    }

    #[test]
    fn supplement_examples() {
        assert_eq!(
            supplement("where is the export menu", &mut Echo(Some("File > Export".into()))),
            Ok("File > Export".to_string())
        );
        let err = supplement("q", &mut Echo(None)).unwrap_err();
        assert_eq!(err.trigger(), TriggerCode::SupplementError);
        assert_eq!(
            supplement("  ", &mut Echo(Some("x".into()))),
            Err(SupplementError::EmptyQuery)
        );
    }

    #[test]
    fn dag_serde_revalidates() {
        let json = serde_json::to_string(&diamond()).unwrap();
        let back: SubtaskDag = serde_json::from_str(&json).unwrap();
        assert_eq!(back, diamond());
        let bad = r#"{"nodes":[{"id":"A","title":"a","role":"operator"},{"id":"B","title":"b","role":"operator"}],"edges":[["A","B"],["B","A"]]}"#;
        assert!(serde_json::from_str::<SubtaskDag>(bad).is_err());
    }

    #[test]
    fn with_node_grows_dag() {
        let d = diamond();
        let grown = d.with_node(node("E"), &["D".into()]).unwrap();
        assert_eq!(grown.len(), 5);
        assert_eq!(grown.order().last(), Some(&SubtaskId::from("E")));
    }
}
