//! The six train/test split protocols. Transition ids are indices into the
//! corpus transition list.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::Transition;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("domain `{domain}` has {n} transitions; at least 5 are needed")]
    TooFewTransitions { domain: String, n: usize },
    #[error("domain `{domain}` has {n} problems; at least 2 are needed")]
    TooFewProblems { domain: String, n: usize },
    #[error("domain `{0}` has no problem with two or more optimal plans")]
    NoMultiPlanProblems(String),
    #[error("source and target are both `{0}`")]
    SameDomain(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Interpolation,
    PlanVariant,
    Extrapolation,
    MultiDomain,
    CrossDomain,
    Loo,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Interpolation,
        Protocol::PlanVariant,
        Protocol::Extrapolation,
        Protocol::MultiDomain,
        Protocol::CrossDomain,
        Protocol::Loo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Interpolation => "interpolation",
            Protocol::PlanVariant => "plan_variant",
            Protocol::Extrapolation => "extrapolation",
            Protocol::MultiDomain => "multi_domain",
            Protocol::CrossDomain => "cross_domain",
            Protocol::Loo => "loo",
        }
    }

    /// Protocols that train one model per domain.
    pub fn is_single_domain(self) -> bool {
        matches!(
            self,
            Protocol::Interpolation | Protocol::PlanVariant | Protocol::Extrapolation
        )
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolPolicy {
    /// Distractors drawn from every state of the query's domain.
    UniformDomain,
    /// Distractors drawn from the query's own problem.
    WithinProblem,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMetadata {
    pub source_domains: Vec<String>,
    pub target_domains: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out: Option<String>,
    /// `domain/problem` keys.
    pub train_problems: Vec<String>,
    pub test_problems: Vec<String>,
    pub excluded_problems: Vec<String>,
    /// `domain/problem` → plan ids.
    pub train_plans: BTreeMap<String, Vec<u32>>,
    pub test_plans: BTreeMap<String, Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub name: Protocol,
    pub seed: u64,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub pool_policy: PoolPolicy,
    pub metadata: SplitMetadata,
}

fn problem_key(t: &Transition) -> String {
    format!("{}/{}", t.domain, t.problem)
}

fn ids_in<'a>(ts: &'a [Transition], domain: &'a str) -> impl Iterator<Item = usize> + 'a {
    ts.iter()
        .enumerate()
        .filter(move |(_, t)| t.domain == domain)
        .map(|(i, _)| i)
}

fn known_domain(ts: &[Transition], domain: &str) -> Result<(), ProtocolError> {
    if ts.iter().any(|t| t.domain == domain) {
        Ok(())
    } else {
        Err(ProtocolError::UnknownDomain(domain.to_string()))
    }
}

fn problems_of(ts: &[Transition], ids: &[usize]) -> Vec<String> {
    ids.iter()
        .map(|&i| problem_key(&ts[i]))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn finish(
    name: Protocol,
    seed: u64,
    ts: &[Transition],
    mut train_ids: Vec<usize>,
    mut test_ids: Vec<usize>,
    pool_policy: PoolPolicy,
    mut metadata: SplitMetadata,
) -> SplitResult {
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    metadata.train_problems = problems_of(ts, &train_ids);
    metadata.test_problems = problems_of(ts, &test_ids);
    SplitResult {
        name,
        seed,
        train_ids,
        test_ids,
        pool_policy,
        metadata,
    }
}

/// Transition-level random split within one domain.
pub fn split_interpolation(
    ts: &[Transition],
    domain: &str,
    ratio: f64,
    seed: u64,
) -> Result<SplitResult, ProtocolError> {
    known_domain(ts, domain)?;
    let mut ids: Vec<usize> = ids_in(ts, domain).collect();
    if ids.len() < 5 {
        return Err(ProtocolError::TooFewTransitions {
            domain: domain.into(),
            n: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let test = ids.split_off(n_train);
    let meta = SplitMetadata {
        source_domains: vec![domain.into()],
        target_domains: vec![domain.into()],
        ..Default::default()
    };
    Ok(finish(
        Protocol::Interpolation,
        seed,
        ts,
        ids,
        test,
        PoolPolicy::UniformDomain,
        meta,
    ))
}

/// Per problem, `⌈k/2⌉` of its `k ≥ 2` plans train and the rest test.
/// Single-plan problems are excluded.
pub fn split_plan_variant(ts: &[Transition], domain: &str, seed: u64) -> Result<SplitResult, ProtocolError> {
    known_domain(ts, domain)?;
    let mut plans: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for i in ids_in(ts, domain) {
        plans.entry(problem_key(&ts[i])).or_default().insert(ts[i].plan_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meta = SplitMetadata {
        source_domains: vec![domain.into()],
        target_domains: vec![domain.into()],
        ..Default::default()
    };
    for (problem, ids) in &plans {
        if ids.len() < 2 {
            log::info!("plan_variant: excluding {problem} (single optimal plan)");
            meta.excluded_problems.push(problem.clone());
            continue;
        }
        let mut ids: Vec<u32> = ids.iter().copied().collect();
        ids.shuffle(&mut rng);
        let test = ids.split_off(ids.len().div_ceil(2));
        ids.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        meta.train_plans.insert(problem.clone(), ids);
        meta.test_plans.insert(problem.clone(), test);
    }
    if meta.train_plans.is_empty() {
        return Err(ProtocolError::NoMultiPlanProblems(domain.into()));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in ids_in(ts, domain) {
        let key = problem_key(&ts[i]);
        if meta.train_plans.get(&key).is_some_and(|p| p.contains(&ts[i].plan_id)) {
            train.push(i);
        } else if meta.test_plans.get(&key).is_some_and(|p| p.contains(&ts[i].plan_id)) {
            test.push(i);
        }
    }
    Ok(finish(
        Protocol::PlanVariant,
        seed,
        ts,
        train,
        test,
        PoolPolicy::WithinProblem,
        meta,
    ))
}

/// Problem-level split: `min(⌈ratio·n⌉, n−1)` problems train.
pub fn split_extrapolation(
    ts: &[Transition],
    domain: &str,
    ratio: f64,
    seed: u64,
) -> Result<SplitResult, ProtocolError> {
    known_domain(ts, domain)?;
    let all: Vec<usize> = ids_in(ts, domain).collect();
    let mut problems = problems_of(ts, &all);
    if problems.len() < 2 {
        return Err(ProtocolError::TooFewProblems {
            domain: domain.into(),
            n: problems.len(),
        });
    }
    problems.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = problems.len();
    let n_train = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
    let train_set: BTreeSet<&String> = problems[..n_train].iter().collect();
    let (train, test): (Vec<usize>, Vec<usize>) = all
        .into_iter()
        .partition(|&i| train_set.contains(&problem_key(&ts[i])));
    let meta = SplitMetadata {
        source_domains: vec![domain.into()],
        target_domains: vec![domain.into()],
        ..Default::default()
    };
    Ok(finish(
        Protocol::Extrapolation,
        seed,
        ts,
        train,
        test,
        PoolPolicy::WithinProblem,
        meta,
    ))
}

/// Union of per-domain extrapolation splits.
pub fn make_multi_domain(ts: &[Transition], domains: &[String], seed: u64) -> Result<SplitResult, ProtocolError> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for d in domains {
        let s = split_extrapolation(ts, d, 0.8, seed)?;
        train.extend(s.train_ids);
        test.extend(s.test_ids);
    }
    let meta = SplitMetadata {
        source_domains: domains.to_vec(),
        target_domains: domains.to_vec(),
        ..Default::default()
    };
    Ok(finish(
        Protocol::MultiDomain,
        seed,
        ts,
        train,
        test,
        PoolPolicy::WithinProblem,
        meta,
    ))
}

pub fn make_cross_domain(ts: &[Transition], src: &str, tgt: &str, seed: u64) -> Result<SplitResult, ProtocolError> {
    if src == tgt {
        return Err(ProtocolError::SameDomain(src.into()));
    }
    known_domain(ts, src)?;
    known_domain(ts, tgt)?;
    let meta = SplitMetadata {
        source_domains: vec![src.into()],
        target_domains: vec![tgt.into()],
        ..Default::default()
    };
    Ok(finish(
        Protocol::CrossDomain,
        seed,
        ts,
        ids_in(ts, src).collect(),
        ids_in(ts, tgt).collect(),
        PoolPolicy::WithinProblem,
        meta,
    ))
}

pub fn make_loo(ts: &[Transition], domains: &[String], held: &str, seed: u64) -> Result<SplitResult, ProtocolError> {
    if !domains.iter().any(|d| d == held) {
        return Err(ProtocolError::UnknownDomain(held.into()));
    }
    known_domain(ts, held)?;
    let others: Vec<String> = domains.iter().filter(|d| *d != held).cloned().collect();
    let train = others.iter().flat_map(|d| ids_in(ts, d)).collect();
    let meta = SplitMetadata {
        source_domains: others,
        target_domains: vec![held.into()],
        held_out: Some(held.into()),
        ..Default::default()
    };
    Ok(finish(
        Protocol::Loo,
        seed,
        ts,
        train,
        ids_in(ts, held).collect(),
        PoolPolicy::WithinProblem,
        meta,
    ))
}

/// Checks the disjointness guarantees of `split`; returns every violation.
pub fn check_split(split: &SplitResult, ts: &[Transition]) -> Vec<String> {
    let mut v = Vec::new();
    let train: BTreeSet<usize> = split.train_ids.iter().copied().collect();
    let test: BTreeSet<usize> = split.test_ids.iter().copied().collect();
    if train.len() != split.train_ids.len() || test.len() != split.test_ids.len() {
        v.push("duplicate ids".into());
    }
    if let Some(i) = train.intersection(&test).next() {
        v.push(format!("transition {i} in both train and test"));
    }
    if let Some(&i) = train.iter().chain(&test).find(|&&i| i >= ts.len()) {
        v.push(format!("transition {i} out of range"));
        return v;
    }
    let probs = |ids: &BTreeSet<usize>| -> BTreeSet<String> { ids.iter().map(|&i| problem_key(&ts[i])).collect() };
    let doms = |ids: &BTreeSet<usize>| -> BTreeSet<String> { ids.iter().map(|&i| ts[i].domain.clone()).collect() };
    match split.name {
        Protocol::Interpolation => {}
        Protocol::PlanVariant => {
            for &i in &test {
                let t = &ts[i];
                let key = problem_key(t);
                let clash = train
                    .iter()
                    .any(|&j| problem_key(&ts[j]) == key && ts[j].plan_id == t.plan_id);
                if clash {
                    v.push(format!("plan {} of {key} on both sides", t.plan_id));
                }
            }
            let (ptr, pte) = (probs(&train), probs(&test));
            if ptr != pte {
                v.push("plan_variant train and test problems differ".into());
            }
        }
        Protocol::Extrapolation | Protocol::MultiDomain => {
            if let Some(p) = probs(&train).intersection(&probs(&test)).next() {
                v.push(format!("problem {p} on both sides"));
            }
        }
        Protocol::CrossDomain | Protocol::Loo => {
            if let Some(d) = doms(&train).intersection(&doms(&test)).next() {
                v.push(format!("domain {d} on both sides"));
            }
            if split.name == Protocol::Loo {
                if let Some(h) = &split.metadata.held_out {
                    if doms(&train).contains(h) {
                        v.push(format!("held-out domain {h} in train"));
                    }
                }
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::StateId;

    fn t(domain: &str, problem: &str, plan_id: u32, step: u32) -> Transition {
        Transition {
            domain: domain.into(),
            problem: problem.into(),
            plan_id,
            step,
            s: StateId(step as u64),
            a: "(x)".into(),
            s_next: StateId(step as u64 + 1),
            s_text: String::new(),
            a_text: "(x)".into(),
            s_next_text: String::new(),
        }
    }

    fn corpus() -> Vec<Transition> {
        let mut ts = Vec::new();
        for d in ["a", "b"] {
            for p in ["p1", "p2", "p3", "p4", "p5"] {
                for plan in 0..4 {
                    for step in 0..5 {
                        ts.push(t(d, p, plan, step));
                    }
                }
            }
        }
        ts
    }

    #[test]
    fn interpolation_ratio() {
        let ts: Vec<Transition> = (0..100).map(|i| t("a", "p", 0, i)).collect();
        let s = split_interpolation(&ts, "a", 0.8, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.test_ids.len()), (80, 20));
        assert_eq!(s, split_interpolation(&ts, "a", 0.8, 1).unwrap());
        assert!(matches!(
            split_interpolation(&ts[..4], "a", 0.8, 1),
            Err(ProtocolError::TooFewTransitions { n: 4, .. })
        ));
    }

    #[test]
    fn plan_variant_smallest_case_and_exclusion() {
        let ts = vec![t("a", "p1", 0, 0), t("a", "p1", 1, 0), t("a", "p2", 0, 0)];
        let s = split_plan_variant(&ts, "a", 5).unwrap();
        assert_eq!(s.train_ids.len(), 1);
        assert_eq!(s.test_ids.len(), 1);
        assert_eq!(s.metadata.excluded_problems, vec!["a/p2".to_string()]);
        assert!(matches!(
            split_plan_variant(&ts[2..], "a", 5),
            Err(ProtocolError::NoMultiPlanProblems(_))
        ));
    }

    #[test]
    fn extrapolation_five_problems() {
        let ts = corpus();
        let s = split_extrapolation(&ts, "a", 0.8, 3).unwrap();
        assert_eq!(s.metadata.train_problems.len(), 4);
        assert_eq!(s.metadata.test_problems.len(), 1);
        assert!(check_split(&s, &ts).is_empty());
        assert!(matches!(
            split_extrapolation(&ts[..20], "a", 0.8, 3),
            Err(ProtocolError::TooFewProblems { n: 1, .. })
        ));
    }

    #[test]
    fn cross_and_loo_errors() {
        let ts = corpus();
        assert_eq!(
            make_cross_domain(&ts, "a", "a", 0),
            Err(ProtocolError::SameDomain("a".into()))
        );
        let ab = make_cross_domain(&ts, "a", "b", 0).unwrap();
        let ba = make_cross_domain(&ts, "b", "a", 0).unwrap();
        assert_eq!(ab.train_ids, ba.test_ids);
        assert_eq!(ab.test_ids, ba.train_ids);
        let domains = vec!["a".to_string(), "b".to_string()];
        assert_eq!(
            make_loo(&ts, &domains, "z", 0),
            Err(ProtocolError::UnknownDomain("z".into()))
        );
        let total: usize = domains
            .iter()
            .map(|d| make_loo(&ts, &domains, d, 0).unwrap().test_ids.len())
            .sum();
        assert_eq!(total, ts.len());
    }

    #[test]
    fn checker_flags_overlap() {
        let ts = corpus();
        let mut s = split_extrapolation(&ts, "a", 0.8, 3).unwrap();
        s.test_ids.push(s.train_ids[0]);
        assert!(!check_split(&s, &ts).is_empty());
    }

    #[test]
    fn split_json_shape() {
        let ts = corpus();
        let s = make_multi_domain(&ts, &["a".into(), "b".into()], 1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["name"], "multi_domain");
        assert_eq!(v["pool_policy"], "within_problem");
        for key in ["seed", "train_ids", "test_ids", "metadata"] {
            assert!(v.get(key).is_some());
        }
    }
}
