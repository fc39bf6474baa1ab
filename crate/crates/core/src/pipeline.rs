//! Train-and-evaluate glue shared by the CLI and the test suites.

use thiserror::Error;

use crate::dataset::{Dataset, DatasetIndex};
use crate::embed::EmbeddingTable;
use crate::eval::{EvalError, Evaluator, MetricReport, QueryOutcome};
use crate::model::{ModelError, TransitionModel};
use crate::protocols::SplitResult;
use crate::train::{fit, split_validation, FitOutput, TrainConfig, TrainData, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fits a fresh model (initialized from `cfg.seed`) on the split's training
/// ids, holding out `cfg.val_fraction` of them for early stopping.
pub fn train_split(
    ds: &Dataset,
    idx: &DatasetIndex,
    table: &EmbeddingTable,
    split: &SplitResult,
    cfg: &TrainConfig,
) -> Result<(TransitionModel, FitOutput), PipelineError> {
    let (fit_ids, val_ids) = split_validation(&split.train_ids, cfg.val_fraction, cfg.seed);
    let train = TrainData::build(ds, idx, table, &fit_ids)?;
    let val = TrainData::build(ds, idx, table, &val_ids)?;
    let mut model = TransitionModel::init(cfg.arch, table.dim(), table.dim(), cfg.seed)?;
    let policy = split.pool_policy;
    let mut validate = |m: &TransitionModel| -> Result<f64, TrainError> {
        if val_ids.is_empty() {
            return Ok(0.0);
        }
        let ev = Evaluator::new(m, table, ds, idx).map_err(|e| TrainError::Validation(e.to_string()))?;
        let out = ev
            .run(&val_ids, policy, cfg.seed)
            .map_err(|e| TrainError::Validation(e.to_string()))?;
        Ok(100.0 * out.iter().filter(|q| q.hit(5)).count() as f64 / out.len() as f64)
    };
    let out = fit(&mut model, &train, &val, cfg, &mut validate)?;
    Ok((model, out))
}

/// Evaluates the split's test ids, one report per target domain.
pub fn evaluate_split(
    model: &TransitionModel,
    ds: &Dataset,
    idx: &DatasetIndex,
    table: &EmbeddingTable,
    split: &SplitResult,
    seed: u64,
) -> Result<(Vec<MetricReport>, Vec<QueryOutcome>), PipelineError> {
    let ev = Evaluator::new(model, table, ds, idx)?;
    let outcomes = ev.run(&split.test_ids, split.pool_policy, seed)?;
    let mut domains: Vec<&str> = split
        .test_ids
        .iter()
        .map(|&i| ds.transitions[i].domain.as_str())
        .collect();
    domains.sort_unstable();
    domains.dedup();
    let reports = domains
        .into_iter()
        .map(|d| {
            let mine: Vec<QueryOutcome> = outcomes
                .iter()
                .filter(|q| ds.transitions[q.id].domain == d)
                .copied()
                .collect();
            MetricReport::from_outcomes(
                split.name.name(),
                d,
                seed,
                split.pool_policy,
                &mine,
                &ds.transitions,
            )
        })
        .collect();
    Ok((reports, outcomes))
}
