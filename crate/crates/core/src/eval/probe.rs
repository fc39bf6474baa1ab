//! Latent distance alignment probe and PCA export.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ser_sig6, ser_sig6_opt, sig6};
use crate::dataset::{goal_key, Dataset};
use crate::embed::EmbeddingTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("{0} is constant; correlation undefined")]
    ConstantInput(&'static str),
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
}

/// One (state, goal) pair: encoder-space cosine distance, optimal cost to
/// the goal, and state text length in words.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaSample {
    pub distance: f64,
    pub cost: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaResult {
    pub n: usize,
    #[serde(serialize_with = "ser_sig6")]
    pub pearson_r: f64,
    /// Correlation after partialling out text length; `None` when length
    /// is constant.
    #[serde(serialize_with = "ser_sig6_opt")]
    pub partial_r: Option<f64>,
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt()).max(f64::MIN_POSITIVE)
}

/// Samples for every state with a known cost. Goals are looked up in
/// `goals` under [`goal_key`].
pub fn lda_samples(
    ds: &Dataset,
    states: &EmbeddingTable,
    goals: &EmbeddingTable,
) -> Result<Vec<LdaSample>, ProbeError> {
    let text: std::collections::HashMap<_, _> = ds.states.iter().map(|s| (s.id, s.text.as_str())).collect();
    ds.costs
        .iter()
        .map(|c| {
            let sid = c.state.to_string();
            let s = states.get(&sid).ok_or_else(|| ProbeError::MissingEmbedding(sid.clone()))?;
            let gk = goal_key(&c.domain, &c.problem);
            let g = goals.get(&gk).ok_or(ProbeError::MissingEmbedding(gk))?;
            let length = text.get(&c.state).map_or(0, |t| t.split_whitespace().count());
            Ok(LdaSample {
                distance: cosine_distance(s, g),
                cost: f64::from(c.cost),
                length: length as f64,
            })
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

pub fn lda_probe(samples: &[LdaSample]) -> Result<LdaResult, ProbeError> {
    if samples.len() < 3 {
        return Err(ProbeError::TooFewSamples(samples.len()));
    }
    let d: Vec<f64> = samples.iter().map(|s| s.distance).collect();
    let c: Vec<f64> = samples.iter().map(|s| s.cost).collect();
    let l: Vec<f64> = samples.iter().map(|s| s.length).collect();
    if pearson(&c, &c).is_none() {
        return Err(ProbeError::ConstantInput("cost"));
    }
    let r = pearson(&d, &c).ok_or(ProbeError::ConstantInput("distance"))?;
    let partial = match (pearson(&d, &l), pearson(&c, &l)) {
        (Some(rdl), Some(rcl)) => {
            let denom = ((1.0 - rdl * rdl) * (1.0 - rcl * rcl)).sqrt();
            (denom > 0.0).then(|| (r - rdl * rcl) / denom)
        }
        _ => None,
    };
    Ok(LdaResult {
        n: samples.len(),
        pearson_r: r,
        partial_r: partial,
    })
}

/// Projects rows onto the top two principal directions of their covariance.
/// Each direction's sign is fixed so its largest-magnitude entry is
/// positive. Returns coordinates and the two eigenvalues.
pub fn pca_2d(rows: &[Vec<f64>]) -> (Vec<[f64; 2]>, [f64; 2]) {
    let n = rows.len();
    if n == 0 {
        return (Vec::new(), [0.0; 2]);
    }
    let d = rows[0].len();
    let mut x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    for j in 0..d {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut dirs = Vec::new();
    let mut vals = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        dirs.push(v);
        vals[slot] = eig.eigenvalues[k].max(0.0);
    }
    let coords = (0..n)
        .map(|i| {
            let row = x.row(i);
            let mut out = [0.0; 2];
            for (slot, v) in dirs.iter().enumerate() {
                out[slot] = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect();
    (coords, vals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub id: String,
    /// `s`, `s_pred` or `s_next`.
    pub kind: String,
    pub problem: String,
    pub pc1: f64,
    pub pc2: f64,
}

pub fn pca_csv(rows: &[PcaRow]) -> String {
    let mut out = String::from("id,kind,problem,pc1,pc2\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.kind,
            r.problem,
            sig6(r.pc1),
            sig6(r.pc2)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(distance: f64, cost: f64, length: f64) -> LdaSample {
        LdaSample { distance, cost, length }
    }

    #[test]
    fn constant_costs_rejected() {
        let xs = [s(0.1, 2.0, 3.0), s(0.2, 2.0, 4.0), s(0.3, 2.0, 5.0)];
        assert_eq!(lda_probe(&xs), Err(ProbeError::ConstantInput("cost")));
    }

    #[test]
    fn affine_distance_correlates_fully() {
        // Unit vectors at angle θ from the goal have cosine distance
        // 1 − cos θ; choose θ so that distance is affine in cost.
        let goal = [1.0f32, 0.0];
        let max_cost = 10.0;
        let samples: Vec<LdaSample> = (0..=10)
            .map(|c| {
                let target = 0.5 * c as f64 / max_cost;
                let theta = (1.0 - target).acos();
                let v = [theta.cos() as f32, theta.sin() as f32];
                s(cosine_distance(&v, &goal), c as f64, (c % 3) as f64)
            })
            .collect();
        let r = lda_probe(&samples).unwrap();
        assert!(r.pearson_r > 0.99, "{r:?}");
        assert!(r.partial_r.unwrap() > 0.99);
    }

    #[test]
    fn shuffled_costs_give_no_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut costs: Vec<f64> = (0..1000).map(|i| (i % 17) as f64).collect();
        let dists: Vec<f64> = costs.iter().map(|c| c / 17.0 + rng.random_range(0.0..0.05)).collect();
        costs.shuffle(&mut rng);
        let samples: Vec<LdaSample> = dists
            .iter()
            .zip(&costs)
            .map(|(&d, &c)| s(d, c, rng.random_range(5.0..30.0)))
            .collect();
        assert!(lda_probe(&samples).unwrap().pearson_r.abs() < 0.1);
    }

    #[test]
    fn identical_vectors_map_to_origin() {
        let (coords, _) = pca_2d(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]);
        for c in coords {
            assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
        }
    }

    #[test]
    fn first_component_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let a: f64 = rng.random_range(-3.0..3.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                vec![a + 0.1 * b, b, 0.2 * a, rng.random_range(-0.1..0.1)]
            })
            .collect();
        let (coords, vals) = pca_2d(&rows);
        let var = |k: usize| coords.iter().map(|c| c[k] * c[k]).sum::<f64>() / coords.len() as f64;
        assert!(var(0) >= var(1));
        assert!(vals[0] >= vals[1]);
        assert!((var(0) - vals[0]).abs() < 1e-9);
    }
}
