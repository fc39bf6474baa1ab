//! Composite contrastive training: state InfoNCE plus action
//! disambiguation, optimized with AdamW under linear warmup and early
//! stopping on validation Hit@5.

mod adamw;
pub mod gradcheck;
mod loss;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{warmup_lr, AdamW};
pub use loss::{action_ce, batch_objective, infonce, BatchItem, LossBreakdown};

use crate::dataset::{Dataset, DatasetIndex};
use crate::embed::{action_key, EmbeddingTable};
use crate::model::{Arch, Mat, ModelError, TransitionModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptySplit,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("validation failed: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub lambda: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: u32,
    pub warmup_epochs: u32,
    pub patience: u32,
    pub k_actions: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Mlp,
            lambda: 2.0,
            tau: 0.07,
            batch_size: 128,
            lr: 4e-5,
            weight_decay: 1e-2,
            max_epochs: 400,
            warmup_epochs: 10,
            patience: 100,
            k_actions: 50,
            val_fraction: 0.1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.k_actions < 2 {
            return bad("k_actions must be at least 2");
        }
        if !(self.lambda >= 0.0) || !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lambda, lr and weight_decay must be non-negative (lr positive)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One transition resolved to rows of [`TrainData::zs`] / [`TrainData::za`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    /// Applicable actions of `s`, including `a`.
    pub applicable: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub zs: Mat,
    pub za: Mat,
    pub examples: Vec<Example>,
}

fn row_of(table: &EmbeddingTable, key: &str) -> Result<Vec<f64>, TrainError> {
    table
        .get(key)
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .ok_or_else(|| TrainError::MissingEmbedding(key.to_string()))
}

impl TrainData {
    pub fn build(
        ds: &Dataset,
        idx: &DatasetIndex,
        table: &EmbeddingTable,
        ids: &[usize],
    ) -> Result<Self, TrainError> {
        let mut state_rows: BTreeMap<String, usize> = BTreeMap::new();
        let mut action_rows: BTreeMap<String, usize> = BTreeMap::new();
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut za: Vec<Vec<f64>> = Vec::new();
        let mut state = |key: String| -> Result<usize, TrainError> {
            if let Some(&r) = state_rows.get(&key) {
                return Ok(r);
            }
            zs.push(row_of(table, &key)?);
            state_rows.insert(key, zs.len() - 1);
            Ok(zs.len() - 1)
        };
        let mut action = |id: &str| -> Result<usize, TrainError> {
            let key = action_key(id);
            if let Some(&r) = action_rows.get(&key) {
                return Ok(r);
            }
            za.push(row_of(table, &key)?);
            action_rows.insert(key, za.len() - 1);
            Ok(za.len() - 1)
        };
        let mut examples = Vec::with_capacity(ids.len());
        for &id in ids {
            let t = &ds.transitions[id];
            let s = state(t.s.to_string())?;
            let s_next = state(t.s_next.to_string())?;
            let a = action(&t.a)?;
            let mut applicable = Vec::new();
            for other in idx.applicable_actions(&t.domain, &t.problem, t.s) {
                applicable.push(action(other)?);
            }
            if !applicable.contains(&a) {
                applicable.push(a);
            }
            examples.push(Example {
                id,
                s,
                a,
                s_next,
                applicable,
            });
        }
        let d_s = table.dim();
        Ok(TrainData {
            zs: Mat::from_rows(&zs, d_s),
            za: Mat::from_rows(&za, d_s),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Builds the unique-row matrices and items for a batch of examples.
    pub fn batch(
        &self,
        picks: &[usize],
        k_actions: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Mat, Mat, Vec<BatchItem>) {
        let mut srow: BTreeMap<usize, usize> = BTreeMap::new();
        let mut arow: BTreeMap<usize, usize> = BTreeMap::new();
        let mut s_idx = Vec::new();
        let mut a_idx = Vec::new();
        let local = |map: &mut BTreeMap<usize, usize>, list: &mut Vec<usize>, g: usize| {
            *map.entry(g).or_insert_with(|| {
                list.push(g);
                list.len() - 1
            })
        };
        let mut rng = rng;
        let mut items = Vec::with_capacity(picks.len());
        for &p in picks {
            let ex = &self.examples[p];
            let others: Vec<usize> = ex.applicable.iter().copied().filter(|&x| x != ex.a).collect();
            let chosen: Vec<usize> = match rng.as_deref_mut() {
                Some(r) if !others.is_empty() => {
                    let n = others.len().min(k_actions - 1);
                    index::sample(r, others.len(), n)
                        .into_iter()
                        .map(|i| others[i])
                        .collect()
                }
                _ => others.into_iter().take(k_actions - 1).collect(),
            };
            items.push(BatchItem {
                s: local(&mut srow, &mut s_idx, ex.s),
                a: local(&mut arow, &mut a_idx, ex.a),
                s_next: local(&mut srow, &mut s_idx, ex.s_next),
                distractors: chosen
                    .into_iter()
                    .map(|d| local(&mut arow, &mut a_idx, d))
                    .collect(),
            });
        }
        (self.zs.gather(&s_idx), self.za.gather(&a_idx), items)
    }
}

/// Seeded split of training ids into (fit, validation). At least one id
/// stays on the fit side.
pub fn split_validation(ids: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da7e);
    shuffled.shuffle(&mut rng);
    let n_val = ((ids.len() as f64 * fraction).round() as usize).min(ids.len().saturating_sub(1));
    let mut val = shuffled[..n_val].to_vec();
    let mut fit = shuffled[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (fit, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub l_state: f64,
    pub l_action: f64,
    pub val_hit5: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub history: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub steps: u64,
    /// Transition ids read during fitting and validation.
    pub audit: BTreeSet<usize>,
    pub skipped_action_terms: usize,
}

/// Mean state loss over `data` in fixed batches; used to break Hit@5 ties.
pub fn state_loss(model: &TransitionModel, data: &TrainData, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let w = model.weights();
    let mut total = 0.0;
    let picks: Vec<usize> = (0..data.len()).collect();
    for chunk in picks.chunks(cfg.batch_size) {
        let (zs, za, items) = data.batch(chunk, 1 + 1, None);
        let (lb, _) = batch_objective(&w, &zs, &za, &items, cfg.tau, 1.0, 0.0)?;
        total += lb.l_state * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains `model` in place and leaves it at the best validation epoch.
/// `validate` returns validation Hit@5 in percent.
pub fn fit(
    model: &mut TransitionModel,
    train: &TrainData,
    val: &TrainData,
    cfg: &TrainConfig,
    validate: &mut dyn FnMut(&TransitionModel) -> Result<f64, TrainError>,
) -> Result<FitOutput, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut audit: BTreeSet<usize> = BTreeSet::new();
    audit.extend(val.examples.iter().map(|e| e.id));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = model.params.to_f64();
    let mut opt = AdamW::new(p.len());
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let warmup_steps = steps_per_epoch * u64::from(cfg.warmup_epochs);

    let mut history = Vec::new();
    let mut best: Option<(f64, f64, u32, Vec<f32>)> = None;
    let mut since_best = 0u32;
    let mut step = 0u64;
    let mut skipped = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs.max(1) {
        order.shuffle(&mut rng);
        let (mut ls, mut la, mut n) = (0.0, 0.0, 0usize);
        let mut lr = cfg.lr;
        for chunk in order.chunks(cfg.batch_size) {
            audit.extend(chunk.iter().map(|&i| train.examples[i].id));
            let (zs, za, items) = train.batch(chunk, cfg.k_actions, Some(&mut rng));
            let w = crate::model::Weights::new(&model.layout, p.clone());
            let (lb, grad) = batch_objective(&w, &zs, &za, &items, cfg.tau, 1.0, cfg.lambda)?;
            if !lb.l_total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            lr = warmup_lr(cfg.lr, step, warmup_steps);
            opt.step(&mut p, &grad, lr, cfg.weight_decay);
            // Keep the f64 working copy exactly representable in f32 storage.
            model.params.assign_f64(&p);
            p = model.params.to_f64();
            step += 1;
            ls += lb.l_state * chunk.len() as f64;
            la += lb.l_action * chunk.len() as f64;
            n += chunk.len();
            skipped += lb.skipped;
        }
        let val_hit5 = validate(model)?;
        let val_loss = state_loss(model, val, cfg)?;
        history.push(EpochRecord {
            epoch,
            l_state: ls / n as f64,
            l_action: la / n as f64,
            val_hit5,
            lr,
        });
        log::debug!(
            "epoch {epoch}: l_state {:.4} l_action {:.4} val_hit5 {val_hit5:.2}",
            ls / n as f64,
            la / n as f64
        );
        let improved = match &best {
            None => true,
            Some((h, l, _, _)) => val_hit5 > *h || (val_hit5 == *h && val_loss < *l),
        };
        if improved {
            best = Some((val_hit5, val_loss, epoch, model.params.data.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    let (_, _, best_epoch, best_params) = best.expect("at least one epoch ran");
    model.params.data = best_params;
    Ok(FitOutput {
        history,
        best_epoch,
        steps: step,
        audit,
        skipped_action_terms: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.k_actions, 50);
        assert!(c.validate().is_ok());
        let parsed: TrainConfig = serde_json::from_str(r#"{"lambda": 0.0, "seed": 7}"#).unwrap();
        assert_eq!(parsed.lambda, 0.0);
        assert_eq!(parsed.tau, 0.07);
        for bad in [
            TrainConfig { tau: 0.0, ..c.clone() },
            TrainConfig { batch_size: 1, ..c.clone() },
            TrainConfig { k_actions: 1, ..c.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn validation_split_is_seeded_and_disjoint() {
        let ids: Vec<usize> = (0..50).collect();
        let (f1, v1) = split_validation(&ids, 0.1, 3);
        let (f2, v2) = split_validation(&ids, 0.1, 3);
        assert_eq!((f1.clone(), v1.clone()), (f2, v2));
        assert_eq!(v1.len(), 5);
        assert!(v1.iter().all(|v| !f1.contains(v)));
        let (f, v) = split_validation(&[9], 0.5, 1);
        assert_eq!((f, v), (vec![9], vec![]));
    }
}
