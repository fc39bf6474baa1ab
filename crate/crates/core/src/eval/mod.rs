//! Retrieval and action-disambiguation metrics, teacher-forced plan
//! execution, and the per-run metric report.

pub mod matrix;
pub mod probe;
pub mod stats;

use std::collections::{BTreeMap, HashMap};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{plans_of, Dataset, DatasetIndex};
use crate::embed::{action_key, EmbeddingTable};
use crate::model::mat::{dot, normalize_rows, Mat};
use crate::model::{ModelError, TransitionModel, Weights, HIDDEN};
use crate::protocols::PoolPolicy;
use crate::world::{StateId, Transition};

pub use matrix::CrossDomainMatrix;
pub use probe::{lda_probe, lda_samples, pca_2d, LdaResult, LdaSample, PcaRow};
pub use stats::{stats_compare, Comparison, StatsError};

/// Candidate pool size, ground truth included.
pub const POOL_SIZE: usize = 128;
pub const KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("no states recorded for {0}")]
    NoEligibleStates(String),
    #[error("no model for source `{0}`")]
    MissingModel(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rounds to six significant digits, the precision of every float written
/// to evaluation artifacts.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

pub(crate) fn ser_sig6<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(sig6(*x))
}

pub(crate) fn ser_sig6_opt<S: serde::Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&sig6(*v)),
        None => s.serialize_none(),
    }
}

fn ser_sig6_map<S: serde::Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut out = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        out.serialize_entry(k, &sig6(*v))?;
    }
    out.end()
}

/// Per-query RNG: one ChaCha stream per transition id, so results do not
/// depend on evaluation order.
pub fn query_rng(seed: u64, transition_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(transition_id as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query: usize,
    pub candidates: Vec<StateId>,
    pub truth: usize,
    pub policy: PoolPolicy,
}

impl CandidatePool {
    pub fn size(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_underfull(&self) -> bool {
        self.candidates.len() < POOL_SIZE
    }
}

/// States a distractor may be drawn from. The query's current state is
/// eligible.
pub fn eligible_states<'a>(idx: &'a DatasetIndex, t: &Transition, policy: PoolPolicy) -> &'a [StateId] {
    let list = match policy {
        PoolPolicy::UniformDomain => idx.domain_states.get(&t.domain),
        PoolPolicy::WithinProblem => idx.problem_states.get(&(t.domain.clone(), t.problem.clone())),
    };
    list.map(Vec::as_slice).unwrap_or(&[])
}

pub fn build_pool(
    query: usize,
    t: &Transition,
    eligible: &[StateId],
    policy: PoolPolicy,
    rng: &mut ChaCha8Rng,
) -> CandidatePool {
    let others: Vec<StateId> = eligible.iter().copied().filter(|&s| s != t.s_next).collect();
    let n = others.len().min(POOL_SIZE - 1);
    let mut candidates: Vec<StateId> = index::sample(rng, others.len(), n)
        .into_iter()
        .map(|i| others[i])
        .collect();
    candidates.push(t.s_next);
    candidates.shuffle(rng);
    if candidates.len() < POOL_SIZE {
        log::debug!(
            "pool for transition {query} underfull: {} candidates",
            candidates.len()
        );
    }
    let truth = candidates.iter().position(|&s| s == t.s_next).unwrap_or(0);
    CandidatePool {
        query,
        candidates,
        truth,
        policy,
    }
}

/// 1-based rank of `scores[truth]` under descending order. Ties are broken
/// by a uniform draw among the tied positions.
pub fn rank_with_ties(scores: &[f64], truth: usize, rng: &mut impl Rng) -> usize {
    let st = scores[truth];
    let greater = scores.iter().filter(|&&x| x > st).count();
    let ties = scores.iter().filter(|&&x| x == st).count() - 1;
    let offset = if ties > 0 { rng.random_range(0..=ties) } else { 0 };
    1 + greater + offset
}

fn cosine_scores(pred: &[f64], cands: &[&[f64]]) -> Vec<f64> {
    let pn = dot(pred, pred).sqrt().max(f64::MIN_POSITIVE);
    cands.iter().map(|c| dot(pred, c) / pn).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub id: usize,
    pub rank: usize,
    pub pool_size: usize,
    pub action_rank: usize,
    pub n_actions: usize,
}

impl QueryOutcome {
    pub fn hit(&self, k: usize) -> bool {
        self.rank <= k
    }

    pub fn action_hit(&self, k: usize) -> bool {
        self.action_rank <= k
    }
}

/// Projects every state and action once, then answers queries against the
/// cached projections. Holds the model and tables by shared reference only.
pub struct Evaluator<'a> {
    weights: Weights<'a>,
    ds: &'a Dataset,
    idx: &'a DatasetIndex,
    /// Projected states, unit-normalized.
    states: HashMap<StateId, Vec<f64>>,
    /// Projected states before normalization; transition inputs.
    states_raw: HashMap<StateId, Vec<f64>>,
    actions: HashMap<String, Vec<f64>>,
}

fn lookup(table: &EmbeddingTable, key: &str) -> Result<Vec<f64>, EvalError> {
    table
        .get(key)
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .ok_or_else(|| EvalError::MissingEmbedding(key.to_string()))
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a TransitionModel,
        table: &EmbeddingTable,
        ds: &'a Dataset,
        idx: &'a DatasetIndex,
    ) -> Result<Self, EvalError> {
        let weights = model.weights();
        let mut state_ids: Vec<StateId> = idx.state_text.keys().copied().collect();
        state_ids.sort_unstable();
        let rows = state_ids
            .iter()
            .map(|s| lookup(table, &s.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let hs = weights.project_state(&Mat::from_rows(&rows, table.dim()))?;
        let (hn, _) = normalize_rows(&hs);
        let states = state_ids
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, hn.row(i).to_vec()))
            .collect();
        let states_raw = state_ids
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, hs.row(i).to_vec()))
            .collect();

        let mut action_ids: Vec<&String> = ds.actions.iter().map(|a| &a.id).collect();
        action_ids.sort_unstable();
        action_ids.dedup();
        let rows = action_ids
            .iter()
            .map(|a| lookup(table, &action_key(a)))
            .collect::<Result<Vec<_>, _>>()?;
        let ha = weights.project_action(&Mat::from_rows(&rows, table.dim()))?;
        let actions = action_ids
            .iter()
            .enumerate()
            .map(|(i, a)| ((*a).clone(), ha.row(i).to_vec()))
            .collect();
        Ok(Evaluator {
            weights,
            ds,
            idx,
            states,
            states_raw,
            actions,
        })
    }

    fn state(&self, s: StateId) -> Result<&[f64], EvalError> {
        self.states
            .get(&s)
            .map(Vec::as_slice)
            .ok_or_else(|| EvalError::MissingEmbedding(s.to_string()))
    }

    fn action(&self, a: &str) -> Result<&[f64], EvalError> {
        self.actions
            .get(a)
            .map(Vec::as_slice)
            .ok_or_else(|| EvalError::MissingEmbedding(action_key(a)))
    }

    /// Predicted next-state latents for `s` under each action in `acts`.
    pub fn predict(&self, s: StateId, acts: &[&str]) -> Result<Mat, EvalError> {
        let hs = self
            .states_raw
            .get(&s)
            .ok_or_else(|| EvalError::MissingEmbedding(s.to_string()))?;
        let hs_rows: Vec<&[f64]> = vec![hs.as_slice(); acts.len()];
        let ha_rows = acts.iter().map(|a| self.action(a)).collect::<Result<Vec<_>, _>>()?;
        Ok(self.weights.transition(
            &Mat::from_rows(&hs_rows, HIDDEN),
            &Mat::from_rows(&ha_rows, HIDDEN),
        )?)
    }

    /// Projected latent of a state as used for scoring (unit norm).
    pub fn projected_state(&self, s: StateId) -> Result<&[f64], EvalError> {
        self.state(s)
    }

    pub fn query(&self, id: usize, policy: PoolPolicy, seed: u64) -> Result<QueryOutcome, EvalError> {
        let t = &self.ds.transitions[id];
        let mut rng = query_rng(seed, id);
        let eligible = eligible_states(self.idx, t, policy);
        if eligible.is_empty() {
            return Err(EvalError::NoEligibleStates(format!("{}/{}", t.domain, t.problem)));
        }
        let pool = build_pool(id, t, eligible, policy, &mut rng);

        let all_actions: Vec<&str> = self
            .idx
            .problem_actions
            .get(&(t.domain.clone(), t.problem.clone()))
            .map(|v| v.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let mut acts = vec![t.a.as_str()];
        acts.extend(all_actions.iter().copied().filter(|&a| a != t.a));
        let preds = self.predict(t.s, &acts)?;

        let cands = pool
            .candidates
            .iter()
            .map(|&s| self.state(s))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = cosine_scores(preds.row(0), &cands);
        let rank = rank_with_ties(&scores, pool.truth, &mut rng);

        let target = self.state(t.s_next)?;
        let action_scores: Vec<f64> = (0..preds.rows)
            .map(|r| cosine_scores(preds.row(r), &[target])[0])
            .collect();
        let action_rank = rank_with_ties(&action_scores, 0, &mut rng);
        Ok(QueryOutcome {
            id,
            rank,
            pool_size: pool.size(),
            action_rank,
            n_actions: acts.len(),
        })
    }

    /// Outcomes for `ids` in the given order; parallel over queries.
    pub fn run(&self, ids: &[usize], policy: PoolPolicy, seed: u64) -> Result<Vec<QueryOutcome>, EvalError> {
        ids.par_iter().map(|&id| self.query(id, policy, seed)).collect()
    }
}

/// Teacher-forced execution of one plan from per-step outcomes: the fraction
/// of steps hit at `k`, and whether every step was hit.
pub fn plan_execute(steps: &[QueryOutcome], k: usize) -> (f64, bool) {
    if steps.is_empty() {
        return (0.0, false);
    }
    let hits = steps.iter().filter(|q| q.hit(k)).count();
    (hits as f64 / steps.len() as f64, hits == steps.len())
}

/// Plans whose every transition is among `ids`, as lists of transition ids
/// in step order.
pub fn complete_plans(transitions: &[Transition], ids: &[usize]) -> Vec<Vec<usize>> {
    let full = plans_of(transitions, 0..transitions.len());
    plans_of(transitions, ids.iter().copied())
        .into_iter()
        .filter(|(key, steps)| full.get(key).is_some_and(|f| f.len() == steps.len()))
        .map(|(_, steps)| steps)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub domain: String,
    pub seeds: Vec<u64>,
    pub pool_policy: PoolPolicy,
    /// The query's current state may be drawn as a distractor.
    pub query_state_in_pool: bool,
    #[serde(serialize_with = "ser_sig6")]
    pub hit1: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub hit5: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub hit10: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub acc1: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub acc5: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub acc10: f64,
    #[serde(serialize_with = "ser_sig6_opt")]
    pub plan_mean5: Option<f64>,
    #[serde(serialize_with = "ser_sig6_opt")]
    pub plan_exact5: Option<f64>,
    pub n_queries: usize,
    pub n_plans: usize,
    pub min_pool_size: usize,
    /// Expected Hit@5 of a uniform ranking given the actual pool sizes.
    #[serde(serialize_with = "ser_sig6")]
    pub chance_hit5: f64,
    /// Standard error over seeds, per metric; empty for a single seed.
    #[serde(serialize_with = "ser_sig6_map")]
    pub stderr: BTreeMap<String, f64>,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

impl MetricReport {
    /// Builds a report from query outcomes (all metrics in percent).
    pub fn from_outcomes(
        protocol: &str,
        domain: &str,
        seed: u64,
        policy: PoolPolicy,
        outcomes: &[QueryOutcome],
        transitions: &[Transition],
    ) -> Self {
        let n = outcomes.len();
        let count = |f: &dyn Fn(&QueryOutcome) -> bool| outcomes.iter().filter(|q| f(q)).count();
        let by_id: HashMap<usize, QueryOutcome> = outcomes.iter().map(|q| (q.id, *q)).collect();
        let ids: Vec<usize> = outcomes.iter().map(|q| q.id).collect();
        let plans = complete_plans(transitions, &ids);
        let per_plan: Vec<(f64, bool)> = plans
            .iter()
            .map(|p| {
                let steps: Vec<QueryOutcome> = p.iter().map(|i| by_id[i]).collect();
                plan_execute(&steps, 5)
            })
            .collect();
        let (plan_mean5, plan_exact5) = if per_plan.is_empty() {
            (None, None)
        } else {
            let m = per_plan.iter().map(|p| p.0).sum::<f64>() / per_plan.len() as f64;
            let e = per_plan.iter().filter(|p| p.1).count();
            (Some(100.0 * m), Some(pct(e, per_plan.len())))
        };
        let chance = if n == 0 {
            0.0
        } else {
            100.0
                * outcomes
                    .iter()
                    .map(|q| (5.0 / q.pool_size as f64).min(1.0))
                    .sum::<f64>()
                / n as f64
        };
        MetricReport {
            protocol: protocol.to_string(),
            domain: domain.to_string(),
            seeds: vec![seed],
            pool_policy: policy,
            query_state_in_pool: true,
            hit1: pct(count(&|q| q.hit(1)), n),
            hit5: pct(count(&|q| q.hit(5)), n),
            hit10: pct(count(&|q| q.hit(10)), n),
            acc1: pct(count(&|q| q.action_hit(1)), n),
            acc5: pct(count(&|q| q.action_hit(5)), n),
            acc10: pct(count(&|q| q.action_hit(10)), n),
            plan_mean5,
            plan_exact5,
            n_queries: n,
            n_plans: per_plan.len(),
            min_pool_size: outcomes.iter().map(|q| q.pool_size).min().unwrap_or(0),
            chance_hit5: chance,
            stderr: BTreeMap::new(),
        }
    }

    fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("hit1", Some(self.hit1)),
            ("hit5", Some(self.hit5)),
            ("hit10", Some(self.hit10)),
            ("acc1", Some(self.acc1)),
            ("acc5", Some(self.acc5)),
            ("acc10", Some(self.acc10)),
            ("plan_mean5", self.plan_mean5),
            ("plan_exact5", self.plan_exact5),
        ]
    }

    /// Violated ordering invariants, if any.
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.hit1 <= self.hit5 && self.hit5 <= self.hit10) {
            v.push(format!("{}/{}: Hit@k not monotone", self.protocol, self.domain));
        }
        if !(self.acc1 <= self.acc5 && self.acc5 <= self.acc10) {
            v.push(format!("{}/{}: Acc@k not monotone", self.protocol, self.domain));
        }
        if let (Some(m), Some(e)) = (self.plan_mean5, self.plan_exact5) {
            if e > m {
                v.push(format!("{}/{}: plan exact above mean", self.protocol, self.domain));
            }
        }
        v
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over √n); 0 for
/// fewer than two values.
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Mean ± standard error over per-seed reports of the same protocol/domain.
pub fn aggregate_seeds(reports: &[MetricReport]) -> Option<MetricReport> {
    let first = reports.first()?;
    let mut out = first.clone();
    out.seeds = reports.iter().flat_map(|r| r.seeds.iter().copied()).collect();
    out.n_queries = reports.iter().map(|r| r.n_queries).sum();
    out.n_plans = reports.iter().map(|r| r.n_plans).sum();
    out.min_pool_size = reports.iter().map(|r| r.min_pool_size).min().unwrap_or(0);
    out.chance_hit5 = mean(&reports.iter().map(|r| r.chance_hit5).collect::<Vec<_>>());
    out.stderr.clear();
    let per: Vec<Vec<(&str, Option<f64>)>> = reports.iter().map(|r| r.metrics()).collect();
    for (j, (name, _)) in first.metrics().iter().enumerate() {
        let vals: Option<Vec<f64>> = per.iter().map(|m| m[j].1).collect();
        let agg = vals.map(|v| {
            out.stderr.insert(name.to_string(), stderr(&v));
            mean(&v)
        });
        match *name {
            "hit1" => out.hit1 = agg.unwrap_or(0.0),
            "hit5" => out.hit5 = agg.unwrap_or(0.0),
            "hit10" => out.hit10 = agg.unwrap_or(0.0),
            "acc1" => out.acc1 = agg.unwrap_or(0.0),
            "acc5" => out.acc5 = agg.unwrap_or(0.0),
            "acc10" => out.acc10 = agg.unwrap_or(0.0),
            "plan_mean5" => out.plan_mean5 = agg,
            _ => out.plan_exact5 = agg,
        }
    }
    Some(out)
}
