//! Reachable state spaces, optimal plan enumeration, and transition
//! extraction for grounded STRIPS problems.

mod render;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pddl::{AtomId, GroundedProblem};
pub use render::{render_action, render_state, TemplateSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("state cap of {cap} exceeded while exploring {problem}")]
    StateCapExceeded { problem: String, cap: usize },
    #[error("goal of {problem} is unreachable from the initial state")]
    GoalUnreachable { problem: String },
    #[error("state id collision: {id} maps to both `{first}` and `{second}`")]
    IdCollision {
        id: StateId,
        first: String,
        second: String,
    },
    #[error("no template for predicate `{predicate}`")]
    MissingTemplate { predicate: String },
    #[error("template for `{predicate}` is malformed: {reason}")]
    BadTemplate { predicate: String, reason: String },
}

/// 64-bit stable hash of a state's canonical serialization. Serialized as a
/// decimal string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub u64);

impl StateId {
    pub fn of(canonical: &str) -> Self {
        let digest = Sha256::digest(canonical.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        StateId(u64::from_le_bytes(b))
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for StateId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<u64>().map(StateId)
    }
}

impl Serialize for StateId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for StateId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Detects hash collisions between distinct canonical serializations.
#[derive(Debug, Default, Clone)]
pub struct StateRegistry {
    seen: HashMap<StateId, String>,
}

impl StateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, canonical: &str) -> Result<StateId, WorldError> {
        let id = StateId::of(canonical);
        match self.seen.get(&id) {
            Some(prev) if prev != canonical => Err(WorldError::IdCollision {
                id,
                first: prev.clone(),
                second: canonical.to_string(),
            }),
            Some(_) => Ok(id),
            None => {
                self.seen.insert(id, canonical.to_string());
                Ok(id)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// Index into `GroundedProblem::actions`.
    pub action: usize,
    pub target: usize,
}

/// Breadth-first closure of a problem's initial state. Node 0 is the initial
/// state; nodes are numbered in discovery order and edges follow action-id
/// order.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub states: Vec<Vec<AtomId>>,
    pub edges: Vec<Vec<Edge>>,
}

impl StateGraph {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Shortest number of actions from each node to any goal node; `None` for
    /// nodes that cannot reach the goal.
    pub fn distance_to_goal(&self, gp: &GroundedProblem) -> Vec<Option<u32>> {
        let n = self.len();
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, out) in self.edges.iter().enumerate() {
            for e in out {
                reverse[e.target].push(u);
            }
        }
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for (i, s) in self.states.iter().enumerate() {
            if gp.is_goal(s) {
                dist[i] = Some(0);
                queue.push_back(i);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &u in &reverse[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}

pub fn reachable_states(gp: &GroundedProblem, cap: usize) -> Result<StateGraph, WorldError> {
    let cap = cap.max(1);
    let mut states = vec![gp.init.clone()];
    let mut index: HashMap<Vec<AtomId>, usize> = HashMap::new();
    index.insert(gp.init.clone(), 0);
    let mut edges: Vec<Vec<Edge>> = vec![Vec::new()];
    let mut queue = VecDeque::from([0usize]);

    while let Some(u) = queue.pop_front() {
        let mut out = Vec::new();
        for (ai, action) in gp.actions.iter().enumerate() {
            if !action.is_applicable(&states[u]) {
                continue;
            }
            let next = action.apply(&states[u]);
            let target = match index.get(&next) {
                Some(&t) => t,
                None => {
                    if states.len() >= cap {
                        return Err(WorldError::StateCapExceeded {
                            problem: gp.problem.clone(),
                            cap,
                        });
                    }
                    let t = states.len();
                    index.insert(next.clone(), t);
                    states.push(next);
                    edges.push(Vec::new());
                    queue.push_back(t);
                    t
                }
            };
            out.push(Edge { action: ai, target });
        }
        edges[u] = out;
    }
    Ok(StateGraph { states, edges })
}

/// One optimal plan with its visited states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub domain: String,
    pub problem: String,
    pub plan_id: u32,
    pub states: Vec<StateId>,
    pub actions: Vec<String>,
    /// Graph node of each visited state.
    #[serde(skip)]
    pub nodes: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Enumerates up to `max_plans` optimal plans by depth-first search over
/// edges that decrease the distance-to-goal by exactly one. Children are
/// visited in action-id order, so the selection is deterministic.
pub fn optimal_plans(
    gp: &GroundedProblem,
    graph: &StateGraph,
    state_ids: &[StateId],
    max_plans: usize,
) -> Result<Vec<Trajectory>, WorldError> {
    let dist = graph.distance_to_goal(gp);
    if dist[0].is_none() {
        return Err(WorldError::GoalUnreachable {
            problem: gp.problem.clone(),
        });
    }
    let mut paths: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut nodes = vec![0usize];
    let mut actions = Vec::new();
    dfs(graph, &dist, &mut nodes, &mut actions, &mut paths, max_plans);

    Ok(paths
        .into_iter()
        .enumerate()
        .map(|(i, (nodes, acts))| Trajectory {
            domain: gp.domain.clone(),
            problem: gp.problem.clone(),
            plan_id: i as u32,
            states: nodes.iter().map(|&n| state_ids[n]).collect(),
            actions: acts.iter().map(|&a| gp.actions[a].id.clone()).collect(),
            nodes,
        })
        .collect())
}

fn dfs(
    graph: &StateGraph,
    dist: &[Option<u32>],
    nodes: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    out: &mut Vec<(Vec<usize>, Vec<usize>)>,
    max_plans: usize,
) {
    if out.len() >= max_plans {
        return;
    }
    let u = *nodes.last().unwrap();
    let d = dist[u].unwrap();
    if d == 0 {
        out.push((nodes.clone(), actions.clone()));
        return;
    }
    for e in &graph.edges[u] {
        if dist[e.target] == Some(d - 1) {
            nodes.push(e.target);
            actions.push(e.action);
            dfs(graph, dist, nodes, actions, out, max_plans);
            nodes.pop();
            actions.pop();
            if out.len() >= max_plans {
                return;
            }
        }
    }
}

/// A `(s, a, s')` triple with its text renderings and provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub domain: String,
    pub problem: String,
    pub plan_id: u32,
    pub step: u32,
    pub s: StateId,
    pub a: String,
    pub s_next: StateId,
    pub s_text: String,
    pub a_text: String,
    pub s_next_text: String,
}

/// One transition per plan step; steps shared between plans are kept.
pub fn extract_transitions(
    trajs: &[Trajectory],
    text_of: impl Fn(StateId) -> String,
) -> Vec<Transition> {
    let mut out = Vec::with_capacity(trajs.iter().map(Trajectory::len).sum());
    for t in trajs {
        for (step, a) in t.actions.iter().enumerate() {
            let s = t.states[step];
            let s_next = t.states[step + 1];
            out.push(Transition {
                domain: t.domain.clone(),
                problem: t.problem.clone(),
                plan_id: t.plan_id,
                step: step as u32,
                s,
                a: a.clone(),
                s_next,
                s_text: text_of(s),
                a_text: a.clone(),
                s_next_text: text_of(s_next),
            });
        }
    }
    out
}
