//! Accuracy metrics and the evaluation report schema.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{BoltError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Powers of two from 1 up to `min(1024, n)`.
pub fn recall_grid(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |r| Some(r * 2))
        .take_while(|&r| r <= 1024 && r <= n.max(1))
        .collect()
}

/// Fraction of queries whose true nearest neighbor is among the first `R`
/// entries of its approximate ranking, for each `R`.
pub fn recall_at_r(
    rankings: &[Vec<usize>],
    ground_truth: Option<&[usize]>,
    r_values: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let gt = ground_truth.ok_or(BoltError::MissingGroundTruth)?;
    if gt.len() != rankings.len() {
        return Err(BoltError::DimensionMismatch {
            expected: gt.len(),
            got: rankings.len(),
        });
    }
    if gt.is_empty() {
        return Err(BoltError::invalid("recall needs at least one query"));
    }
    // Position of the true neighbor in each ranking, if present.
    let positions: Vec<Option<usize>> = rankings
        .iter()
        .zip(gt)
        .map(|(rank, &nn)| rank.iter().position(|&i| i == nn))
        .collect();
    Ok(r_values
        .iter()
        .map(|&r| {
            let hits = positions
                .iter()
                .filter(|p| matches!(p, Some(i) if *i < r))
                .count();
            (r, hits as f64 / gt.len() as f64)
        })
        .collect())
}

/// Pearson correlation coefficient.
pub fn correlation(true_vals: &[f32], approx_vals: &[f32]) -> Result<f64> {
    if true_vals.len() != approx_vals.len() {
        return Err(BoltError::DimensionMismatch {
            expected: true_vals.len(),
            got: approx_vals.len(),
        });
    }
    if true_vals.len() < 2 {
        return Err(BoltError::invalid("correlation needs at least two values"));
    }
    let n = true_vals.len() as f64;
    let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mt, ma) = (mean(true_vals), mean(approx_vals));
    let (mut cov, mut vt, mut va) = (0.0, 0.0, 0.0);
    for (&t, &a) in true_vals.iter().zip(approx_vals) {
        let (dt, da) = (t as f64 - mt, a as f64 - ma);
        cov += dt * da;
        vt += dt * dt;
        va += da * da;
    }
    if vt == 0.0 || va == 0.0 {
        return Err(BoltError::ZeroVariance);
    }
    Ok((cov / (vt * va).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Throughputs {
    pub encode_vectors_per_sec: f64,
    pub query_encode_per_sec: f64,
    pub scan_vectors_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub method: String,
    pub metric: String,
    pub bytes_per_code: usize,
    pub num_codebooks: usize,
    pub code_bits: u8,
    pub alpha: Option<f32>,
    pub lut_scale: Option<f32>,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub n_train: usize,
    pub n_database: usize,
    pub n_queries: usize,
    pub dim: usize,
}

/// Versioned result of an `eval` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub recall_at_r: BTreeMap<usize, f64>,
    pub correlation: f64,
    pub throughputs: Throughputs,
    pub config: ConfigEcho,
}
