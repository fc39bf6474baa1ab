//! Central finite-difference check of the full training objective.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_objective, BatchItem};
use crate::model::mat::Mat;
use crate::model::{Arch, ModelError, TransitionModel, Weights};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub arch: Arch,
    /// Parameters compared per region: state head, action head, transition.
    pub sampled: [usize; 3],
    pub max_rel_err: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
}

impl GradCheck {
    pub fn total(&self) -> usize {
        self.sampled.iter().sum()
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// dominating.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic and numeric gradients of the λ-weighted objective on a
/// small random batch, sampling `per_region` parameters from each of the
/// two heads and the transition function.
pub fn check_gradients(arch: Arch, dim: usize, per_region: usize, h: f64, seed: u64) -> Result<GradCheck, ModelError> {
    let model = TransitionModel::init(arch, dim, dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c4e_c4ec);
    // Move biases and LayerNorm parameters off their initial values.
    let mut p: Vec<f64> = model
        .params
        .to_f64()
        .into_iter()
        .map(|x| x + rng.random_range(-0.05..0.05))
        .collect();
    let rand_mat = |rng: &mut ChaCha8Rng, rows: usize| {
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Mat { rows, cols: dim, data }
    };
    let zs = rand_mat(&mut rng, 6);
    let za = rand_mat(&mut rng, 5);
    let items = vec![
        BatchItem { s: 0, a: 0, s_next: 1, distractors: vec![1, 2] },
        BatchItem { s: 1, a: 1, s_next: 2, distractors: vec![0, 3, 4] },
        BatchItem { s: 2, a: 2, s_next: 3, distractors: vec![] },
        BatchItem { s: 4, a: 3, s_next: 5, distractors: vec![4] },
    ];
    let (tau, lambda) = (0.07, 2.0);
    let layout = &model.layout;
    let (_, grad) = batch_objective(&Weights::new(layout, p.clone()), &zs, &za, &items, tau, 1.0, lambda)?;

    let regions = [
        layout.state_head_range.clone(),
        layout.action_head_range.clone(),
        layout.trans_range.clone(),
    ];
    let mut out = GradCheck {
        arch,
        sampled: [0; 3],
        max_rel_err: 0.0,
        worst: 0,
    };
    for (r, range) in regions.iter().enumerate() {
        let n = per_region.min(range.len());
        for off in index::sample(&mut rng, range.len(), n) {
            let i = range.start + off;
            let orig = p[i];
            p[i] = orig + h;
            let up = batch_objective(&Weights::new(layout, p.clone()), &zs, &za, &items, tau, 1.0, lambda)?.0;
            p[i] = orig - h;
            let down = batch_objective(&Weights::new(layout, p.clone()), &zs, &za, &items, tau, 1.0, lambda)?.0;
            p[i] = orig;
            let numeric = (up.l_total - down.l_total) / (2.0 * h);
            let e = rel_err(grad[i], numeric);
            if e > out.max_rel_err {
                out.max_rel_err = e;
                out.worst = i;
            }
            out.sampled[r] += 1;
        }
    }
    Ok(out)
}
