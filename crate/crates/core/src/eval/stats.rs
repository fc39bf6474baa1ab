//! Paired and independent t-tests with effect sizes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use super::{ser_sig6, ser_sig6_opt};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired series differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 observations per series, got {0}")]
    TooFewSamples(usize),
    #[error("zero variance with a nonzero mean difference")]
    DegenerateVariance,
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub paired: bool,
    pub n: usize,
    pub df: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub mean_diff: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub t: f64,
    /// Two-sided.
    #[serde(serialize_with = "ser_sig6")]
    pub p: f64,
    /// Mean difference over the average of the two series' (population)
    /// standard deviations for paired input; over the pooled sample
    /// standard deviation otherwise.
    #[serde(serialize_with = "ser_sig6")]
    pub cohen_d: f64,
    /// Mean difference over the standard deviation of the differences
    /// (paired only).
    #[serde(serialize_with = "ser_sig6_opt")]
    pub cohen_dz: Option<f64>,
    pub ci95: [f64; 2],
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sum of squared deviations.
fn ss(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn t_dist(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("df > 0")
}

fn two_sided(t: f64, df: f64) -> f64 {
    (2.0 * (1.0 - t_dist(df).cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Compares `a` against `b` (differences are `a − b`).
pub fn stats_compare(a: &[f64], b: &[f64], paired: bool) -> Result<Comparison, StatsError> {
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if paired && a.len() != b.len() {
        return Err(StatsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len().min(b.len());
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    if paired {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let md = mean(&diffs);
        let df = (n - 1) as f64;
        let sd = (ss(&diffs) / df).sqrt();
        if sd == 0.0 {
            if md != 0.0 {
                return Err(StatsError::DegenerateVariance);
            }
            return Ok(Comparison {
                paired,
                n,
                df,
                mean_diff: 0.0,
                t: 0.0,
                p: 1.0,
                cohen_d: 0.0,
                cohen_dz: Some(0.0),
                ci95: [0.0, 0.0],
            });
        }
        let se = sd / (n as f64).sqrt();
        let t = md / se;
        let avg_sd = ((ss(a) / n as f64 + ss(b) / n as f64) / 2.0).sqrt();
        let cohen_d = if avg_sd == 0.0 { f64::INFINITY.copysign(md) } else { md / avg_sd };
        let q = t_dist(df).inverse_cdf(0.975);
        Ok(Comparison {
            paired,
            n,
            df,
            mean_diff: md,
            t,
            p: two_sided(t, df),
            cohen_d,
            cohen_dz: Some(md / sd),
            ci95: [md - q * se, md + q * se],
        })
    } else {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let df = na + nb - 2.0;
        let md = mean(a) - mean(b);
        let sp = ((ss(a) + ss(b)) / df).sqrt();
        if sp == 0.0 {
            if md != 0.0 {
                return Err(StatsError::DegenerateVariance);
            }
            return Ok(Comparison {
                paired,
                n,
                df,
                mean_diff: 0.0,
                t: 0.0,
                p: 1.0,
                cohen_d: 0.0,
                cohen_dz: None,
                ci95: [0.0, 0.0],
            });
        }
        let se = sp * (1.0 / na + 1.0 / nb).sqrt();
        let t = md / se;
        let q = t_dist(df).inverse_cdf(0.975);
        Ok(Comparison {
            paired,
            n,
            df,
            mean_diff: md,
            t,
            p: two_sided(t, df),
            cohen_d: md / sp,
            cohen_dz: None,
            ci95: [md - q * se, md + q * se],
        })
    }
}
