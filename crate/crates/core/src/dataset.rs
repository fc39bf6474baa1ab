//! Builds the transition corpus from `domains/<name>/` directories and reads
//! it back from its JSONL artifacts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_jsonl, write_jsonl, IoError};
use crate::pddl::{
    ground_with_cap, parse_domain, parse_problem, DomainDef, GroundedProblem, PddlError,
    DEFAULT_GROUNDING_CAP,
};
use crate::world::{
    extract_transitions, optimal_plans, reachable_states, render_state, StateGraph, StateId,
    StateRegistry, TemplateSet, Trajectory, Transition, WorldError,
};

pub const TRANSITIONS_FILE: &str = "transitions.jsonl";
pub const STATES_FILE: &str = "states.jsonl";
pub const ACTIONS_FILE: &str = "actions.jsonl";
pub const APPLICABLE_FILE: &str = "applicable.jsonl";
pub const COSTS_FILE: &str = "costs.jsonl";
pub const GOALS_FILE: &str = "goals.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("domain directory {0} does not exist")]
    MissingDomainDir(PathBuf),
    #[error("{0} contains no problem files")]
    NoProblems(PathBuf),
    #[error("{path}: {source}")]
    Pddl { path: PathBuf, source: PddlError },
    #[error("{context}: {source}")]
    World {
        context: String,
        source: WorldError,
    },
    #[error("{path}: invalid templates: {message}")]
    Templates { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenOptions {
    pub max_plans: usize,
    pub state_cap: usize,
    pub grounding_cap: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_plans: 100,
            state_cap: 100_000,
            grounding_cap: DEFAULT_GROUNDING_CAP,
        }
    }
}

/// Everything computed for one problem instance.
#[derive(Debug, Clone)]
pub struct ProblemWorld {
    pub grounded: GroundedProblem,
    pub graph: StateGraph,
    pub state_ids: Vec<StateId>,
    pub texts: Vec<String>,
    pub dist_to_goal: Vec<Option<u32>>,
    pub plans: Vec<Trajectory>,
    pub goal_text: String,
}

#[derive(Debug, Clone)]
pub struct DomainWorld {
    pub name: String,
    pub domain: DomainDef,
    pub templates: TemplateSet,
    pub problems: Vec<ProblemWorld>,
}

/// Problem files are every `*.pddl` other than `domain.pddl`, in file-name
/// order.
pub fn problem_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingDomainDir(dir.to_path_buf()));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| IoError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| IoError::io(dir, e))?.path();
        let is_pddl = path.extension().is_some_and(|e| e == "pddl");
        let is_domain = path.file_name().is_some_and(|n| n == "domain.pddl");
        if is_pddl && !is_domain {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(DatasetError::NoProblems(dir.to_path_buf()));
    }
    Ok(files)
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e).into())
}

pub fn load_domain_dir(
    dir: &Path,
    opts: &GenOptions,
    registry: &mut StateRegistry,
) -> Result<DomainWorld, DatasetError> {
    let problems = problem_files(dir)?;
    let domain_path = dir.join("domain.pddl");
    let domain = parse_domain(&read_text(&domain_path)?).map_err(|source| DatasetError::Pddl {
        path: domain_path.clone(),
        source,
    })?;
    let tpl_path = dir.join("templates.json");
    let templates = TemplateSet::from_json(&read_text(&tpl_path)?).map_err(|e| {
        DatasetError::Templates {
            path: tpl_path.clone(),
            message: e.to_string(),
        }
    })?;
    templates
        .validate(&domain)
        .map_err(|e| DatasetError::Templates {
            path: tpl_path.clone(),
            message: e.to_string(),
        })?;

    let mut out = Vec::with_capacity(problems.len());
    for path in problems {
        let pddl_err = |source| DatasetError::Pddl {
            path: path.clone(),
            source,
        };
        let prob = parse_problem(&read_text(&path)?, &domain).map_err(pddl_err)?;
        let gp = ground_with_cap(&domain, &prob, opts.grounding_cap).map_err(pddl_err)?;
        out.push(build_problem(gp, &templates, opts, registry)?);
    }
    Ok(DomainWorld {
        name: domain.name.clone(),
        domain,
        templates,
        problems: out,
    })
}

pub fn build_problem(
    gp: GroundedProblem,
    templates: &TemplateSet,
    opts: &GenOptions,
    registry: &mut StateRegistry,
) -> Result<ProblemWorld, DatasetError> {
    let ctx = format!("{}/{}", gp.domain, gp.problem);
    let world_err = |source| DatasetError::World {
        context: ctx.clone(),
        source,
    };
    let graph = reachable_states(&gp, opts.state_cap).map_err(world_err)?;
    let mut state_ids = Vec::with_capacity(graph.len());
    let mut texts = Vec::with_capacity(graph.len());
    for s in &graph.states {
        state_ids.push(registry.register(&gp.serialize_state(s)).map_err(world_err)?);
        texts.push(render_state(s.iter().map(|&a| gp.atom(a)), templates).map_err(world_err)?);
    }
    let dist_to_goal = graph.distance_to_goal(&gp);
    let plans = optimal_plans(&gp, &graph, &state_ids, opts.max_plans).map_err(world_err)?;
    let goal_text = render_state(gp.goal.iter().map(|&a| gp.atom(a)), templates).map_err(world_err)?;
    Ok(ProblemWorld {
        grounded: gp,
        graph,
        state_ids,
        texts,
        dist_to_goal,
        plans,
        goal_text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub domain: String,
    pub problem: String,
    pub id: StateId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub domain: String,
    pub problem: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicableRecord {
    pub domain: String,
    pub problem: String,
    pub state: StateId,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRecord {
    pub domain: String,
    pub problem: String,
    pub state: StateId,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub domain: String,
    pub problem: String,
    pub id: String,
    pub text: String,
}

pub fn goal_key(domain: &str, problem: &str) -> String {
    format!("goal:{domain}/{problem}")
}

/// Per-domain counts in the layout of a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainSummary {
    pub domain: String,
    pub problems: usize,
    pub states: usize,
    pub transitions: usize,
    pub actions: usize,
}

impl DomainSummary {
    pub fn header() -> String {
        format!(
            "{:<16} {:>8} {:>8} {:>11} {:>7}",
            "Domain", "Problems", "States", "Transitions", "Actions"
        )
    }

    pub fn row(&self) -> String {
        format!(
            "{:<16} {:>8} {:>8} {:>11} {:>7}",
            self.domain, self.problems, self.states, self.transitions, self.actions
        )
    }
}

/// The flat artifact view of the corpus. Transition ids are line indices
/// into `transitions`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub states: Vec<StateRecord>,
    pub actions: Vec<ActionRecord>,
    pub applicable: Vec<ApplicableRecord>,
    pub costs: Vec<CostRecord>,
    pub goals: Vec<GoalRecord>,
}

impl Dataset {
    pub fn from_worlds(worlds: &[DomainWorld]) -> Self {
        let mut ds = Dataset::default();
        for w in worlds {
            for p in &w.problems {
                let gp = &p.grounded;
                let text: HashMap<StateId, &str> = p
                    .state_ids
                    .iter()
                    .zip(&p.texts)
                    .map(|(&id, t)| (id, t.as_str()))
                    .collect();
                ds.transitions
                    .extend(extract_transitions(&p.plans, |id| text[&id].to_string()));
                for (i, (&id, t)) in p.state_ids.iter().zip(&p.texts).enumerate() {
                    ds.states.push(StateRecord {
                        domain: gp.domain.clone(),
                        problem: gp.problem.clone(),
                        id,
                        text: t.clone(),
                    });
                    ds.applicable.push(ApplicableRecord {
                        domain: gp.domain.clone(),
                        problem: gp.problem.clone(),
                        state: id,
                        actions: p.graph.edges[i]
                            .iter()
                            .map(|e| gp.actions[e.action].id.clone())
                            .collect(),
                    });
                    if let Some(cost) = p.dist_to_goal[i] {
                        ds.costs.push(CostRecord {
                            domain: gp.domain.clone(),
                            problem: gp.problem.clone(),
                            state: id,
                            cost,
                        });
                    }
                }
                for a in &gp.actions {
                    ds.actions.push(ActionRecord {
                        domain: gp.domain.clone(),
                        problem: gp.problem.clone(),
                        id: a.id.clone(),
                    });
                }
                ds.goals.push(GoalRecord {
                    domain: gp.domain.clone(),
                    problem: gp.problem.clone(),
                    id: goal_key(&gp.domain, &gp.problem),
                    text: p.goal_text.clone(),
                });
            }
        }
        ds
    }

    pub fn generate(dirs: &[PathBuf], opts: &GenOptions) -> Result<(Self, Vec<DomainSummary>), DatasetError> {
        let mut registry = StateRegistry::new();
        let mut worlds = Vec::with_capacity(dirs.len());
        for dir in dirs {
            worlds.push(load_domain_dir(dir, opts, &mut registry)?);
        }
        let ds = Self::from_worlds(&worlds);
        let summaries = worlds
            .iter()
            .map(|w| DomainSummary {
                domain: w.name.clone(),
                problems: w.problems.len(),
                states: w
                    .problems
                    .iter()
                    .flat_map(|p| p.state_ids.iter().copied())
                    .collect::<BTreeSet<_>>()
                    .len(),
                transitions: w.problems.iter().map(|p| p.plans.iter().map(Trajectory::len).sum::<usize>()).sum(),
                actions: w.domain.action_schemas.len(),
            })
            .collect();
        Ok((ds, summaries))
    }

    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        write_jsonl(&dir.join(TRANSITIONS_FILE), &self.transitions)?;
        write_jsonl(&dir.join(STATES_FILE), &self.states)?;
        write_jsonl(&dir.join(ACTIONS_FILE), &self.actions)?;
        write_jsonl(&dir.join(APPLICABLE_FILE), &self.applicable)?;
        write_jsonl(&dir.join(COSTS_FILE), &self.costs)?;
        write_jsonl(&dir.join(GOALS_FILE), &self.goals)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, IoError> {
        Ok(Dataset {
            transitions: read_jsonl(&dir.join(TRANSITIONS_FILE))?,
            states: read_jsonl(&dir.join(STATES_FILE))?,
            actions: read_jsonl(&dir.join(ACTIONS_FILE))?,
            applicable: read_jsonl(&dir.join(APPLICABLE_FILE))?,
            costs: read_jsonl(&dir.join(COSTS_FILE))?,
            goals: read_jsonl(&dir.join(GOALS_FILE))?,
        })
    }

    pub fn artifact_files() -> [&'static str; 6] {
        [
            TRANSITIONS_FILE,
            STATES_FILE,
            ACTIONS_FILE,
            APPLICABLE_FILE,
            COSTS_FILE,
            GOALS_FILE,
        ]
    }

    pub fn index(&self) -> DatasetIndex {
        DatasetIndex::new(self)
    }
}

pub type ProblemKey = (String, String);

/// Lookup tables derived from a [`Dataset`].
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    /// Reachable states of each problem, in discovery order.
    pub problem_states: HashMap<ProblemKey, Vec<StateId>>,
    /// Distinct states of each domain, sorted by id.
    pub domain_states: BTreeMap<String, Vec<StateId>>,
    /// Ground actions of each problem, sorted by id.
    pub problem_actions: HashMap<ProblemKey, Vec<String>>,
    pub applicable: HashMap<(String, String, StateId), Vec<String>>,
    pub state_text: HashMap<StateId, String>,
}

impl DatasetIndex {
    pub fn new(ds: &Dataset) -> Self {
        let mut idx = DatasetIndex::default();
        let mut per_domain: BTreeMap<String, BTreeSet<StateId>> = BTreeMap::new();
        for s in &ds.states {
            idx.problem_states
                .entry((s.domain.clone(), s.problem.clone()))
                .or_default()
                .push(s.id);
            per_domain.entry(s.domain.clone()).or_default().insert(s.id);
            idx.state_text.entry(s.id).or_insert_with(|| s.text.clone());
        }
        idx.domain_states = per_domain
            .into_iter()
            .map(|(d, set)| (d, set.into_iter().collect()))
            .collect();
        for a in &ds.actions {
            idx.problem_actions
                .entry((a.domain.clone(), a.problem.clone()))
                .or_default()
                .push(a.id.clone());
        }
        for a in &ds.applicable {
            idx.applicable.insert(
                (a.domain.clone(), a.problem.clone(), a.state),
                a.actions.clone(),
            );
        }
        idx
    }

    pub fn applicable_actions(&self, domain: &str, problem: &str, s: StateId) -> &[String] {
        self.applicable
            .get(&(domain.to_string(), problem.to_string(), s))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Groups transition ids into plans: `(domain, problem, plan_id)` → ids in
/// step order.
pub fn plans_of(transitions: &[Transition], ids: impl IntoIterator<Item = usize>) -> BTreeMap<(String, String, u32), Vec<usize>> {
    let mut out: BTreeMap<(String, String, u32), Vec<usize>> = BTreeMap::new();
    for id in ids {
        let t = &transitions[id];
        out.entry((t.domain.clone(), t.problem.clone(), t.plan_id))
            .or_default()
            .push(id);
    }
    for v in out.values_mut() {
        v.sort_by_key(|&i| transitions[i].step);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../domains")
            .join(name)
    }

    #[test]
    fn missing_domain_dir_names_the_path() {
        let err = problem_files(Path::new("/nonexistent/dom")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dom"));
    }

    #[test]
    fn blocksworld_fixture_counts() {
        let (ds, summary) = Dataset::generate(&[fixture("blocksworld")], &GenOptions::default()).unwrap();
        assert_eq!(summary[0].problems, 5);
        // 22 states for the two 3-block problems, 125 for the 4-block ones.
        assert_eq!(summary[0].states, 22 + 125);
        assert_eq!(summary[0].actions, 4);
        assert_eq!(summary[0].transitions, ds.transitions.len());
        let idx = ds.index();
        assert_eq!(idx.domain_states["blocksworld"].len(), 147);
        for t in &ds.transitions {
            assert_eq!(t.a, t.a_text);
            assert_eq!(idx.state_text[&t.s], t.s_text);
            assert!(idx
                .applicable_actions(&t.domain, &t.problem, t.s)
                .contains(&t.a));
        }
    }

    #[test]
    fn round_trips_through_jsonl() {
        let (ds, _) = Dataset::generate(&[fixture("ferry")], &GenOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(Dataset::read(dir.path()).unwrap(), ds);
    }

    #[test]
    fn plans_group_in_step_order() {
        let (ds, _) = Dataset::generate(&[fixture("blocksworld")], &GenOptions::default()).unwrap();
        let plans = plans_of(&ds.transitions, (0..ds.transitions.len()).rev());
        for ids in plans.values() {
            for (k, &i) in ids.iter().enumerate() {
                assert_eq!(ds.transitions[i].step as usize, k);
            }
            for w in ids.windows(2) {
                assert_eq!(ds.transitions[w[0]].s_next, ds.transitions[w[1]].s);
            }
        }
    }
}
