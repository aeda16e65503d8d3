//! Empirical checks of the reconstruction error bounds.
//!
//! The deterministic bounds (dot product and Euclidean distance against the
//! reconstruction) admit no violations. The tail bounds are distributional:
//! run with `strict = true` only on data built to satisfy their independence
//! assumptions; otherwise a miss is reported as [`Status::Advisory`].

use log::warn;
use ndarray::ArrayView2;
use serde::Serialize;

use crate::encode::encode_one;
use crate::error::{BoltError, Result};
use crate::lut::LutQuantParams;
use crate::model::QuantizerModel;

/// Absolute slack for the deterministic inequalities.
pub const BOUND_SLACK: f64 = 1e-6;

/// Number of points on the epsilon grid of the tail checks.
pub const EPS_GRID_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Bound missed, but the check was not strict.
    Advisory,
}

impl Status {
    fn from_outcome(satisfied: bool, strict: bool) -> Self {
        match (satisfied, strict) {
            (true, _) => Status::Pass,
            (false, true) => Status::Fail,
            (false, false) => Status::Advisory,
        }
    }
}

/// One evaluation of `lhs <= rhs + BOUND_SLACK`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs + BOUND_SLACK,
        }
    }
}

/// Per-subspace view of a vector, its reconstruction and a query, in f64.
struct Decomposed {
    x: Vec<f64>,
    xhat: Vec<f64>,
    q: Vec<f64>,
    ranges: Vec<std::ops::Range<usize>>,
}

impl Decomposed {
    fn new(q: &[f32], x: &[f32], model: &QuantizerModel) -> Result<Self> {
        let dim = model.input_dim();
        for v in [q, x] {
            if v.len() != dim {
                return Err(BoltError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        let codes = encode_one(x, model)?;
        let xhat = model.reconstruct(&codes)?;
        let split = model.split();
        // Padding dimensions are zero in both x and x-hat; drop them.
        let ranges = split
            .ranges()
            .map(|r| r.start.min(dim)..r.end.min(dim))
            .collect();
        Ok(Self {
            x: x.iter().map(|&v| v as f64).collect(),
            xhat: xhat.iter().map(|&v| v as f64).collect(),
            q: q.iter().map(|&v| v as f64).collect(),
            ranges,
        })
    }

    fn residual_norm_sq(&self, r: &std::ops::Range<usize>) -> f64 {
        r.clone().map(|j| (self.x[j] - self.xhat[j]).powi(2)).sum()
    }

    fn query_norm_sq(&self, r: &std::ops::Range<usize>) -> f64 {
        r.clone().map(|j| self.q[j].powi(2)).sum()
    }

    fn dot_error(&self) -> f64 {
        dot(&self.q, &self.x) - dot(&self.q, &self.xhat)
    }

    fn l2_sq_error(&self) -> f64 {
        sq_dist(&self.q, &self.x) - sq_dist(&self.q, &self.xhat)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `|q.x - q.x_hat| <= ||q|| * ||x - x_hat||`.
pub fn check_dot_bound(q: &[f32], x: &[f32], model: &QuantizerModel) -> Result<BoundCheck> {
    let d = Decomposed::new(q, x, model)?;
    let lhs = d.dot_error().abs();
    let rhs = dot(&d.q, &d.q).sqrt() * sq_dist(&d.x, &d.xhat).sqrt();
    Ok(BoundCheck::new(lhs, rhs))
}

/// `| ||q - x|| - ||q - x_hat|| | <= ||x - x_hat||`.
pub fn check_l2_bound(q: &[f32], x: &[f32], model: &QuantizerModel) -> Result<BoundCheck> {
    let d = Decomposed::new(q, x, model)?;
    let lhs = (sq_dist(&d.q, &d.x).sqrt() - sq_dist(&d.q, &d.xhat).sqrt()).abs();
    let rhs = sq_dist(&d.x, &d.xhat).sqrt();
    Ok(BoundCheck::new(lhs, rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicReport {
    pub bound: &'static str,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` seen; never above the slack when the bound holds.
    pub max_excess: f64,
    pub status: Status,
}

fn check_pairs(
    bound: &'static str,
    queries: ArrayView2<'_, f32>,
    xs: ArrayView2<'_, f32>,
    model: &QuantizerModel,
    check: fn(&[f32], &[f32], &QuantizerModel) -> Result<BoundCheck>,
) -> Result<DeterministicReport> {
    check_paired_shapes(queries, xs)?;
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for (q, x) in queries.rows().into_iter().zip(xs.rows()) {
        let c = check(&q.to_vec(), &x.to_vec(), model)?;
        violations += usize::from(!c.holds);
        max_excess = max_excess.max(c.lhs - c.rhs);
    }
    Ok(DeterministicReport {
        bound,
        pairs: queries.nrows(),
        violations,
        max_excess,
        status: if violations == 0 {
            Status::Pass
        } else {
            Status::Fail
        },
    })
}

/// [`check_dot_bound`] over row-paired `(q, x)` samples.
pub fn check_dot_bounds(
    queries: ArrayView2<'_, f32>,
    xs: ArrayView2<'_, f32>,
    model: &QuantizerModel,
) -> Result<DeterministicReport> {
    check_pairs("dot_product", queries, xs, model, check_dot_bound)
}

/// [`check_l2_bound`] over row-paired `(q, x)` samples.
pub fn check_l2_bounds(
    queries: ArrayView2<'_, f32>,
    xs: ArrayView2<'_, f32>,
    model: &QuantizerModel,
) -> Result<DeterministicReport> {
    check_pairs("euclidean", queries, xs, model, check_l2_bound)
}

fn check_paired_shapes(queries: ArrayView2<'_, f32>, xs: ArrayView2<'_, f32>) -> Result<()> {
    if queries.dim() != xs.dim() {
        return Err(BoltError::invalid(format!(
            "paired samples differ in shape: {:?} vs {:?}",
            queries.dim(),
            xs.dim()
        )));
    }
    if queries.nrows() == 0 {
        return Err(BoltError::invalid("no sample pairs"));
    }
    Ok(())
}

/// `2 exp(-eps^2 / (2 * sum_sq))`; zero when `sum_sq` is zero and `eps > 0`.
pub fn hoeffding_rhs(eps: f64, sum_sq: f64) -> f64 {
    if sum_sq <= 0.0 {
        return if eps > 0.0 { 0.0 } else { 2.0 };
    }
    2.0 * (-eps * eps / (2.0 * sum_sq)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub eps: f64,
    /// Empirical fraction of samples whose error exceeds `eps`.
    pub exceedance: f64,
    pub bound: f64,
    /// `bound - exceedance`; negative means the bound was missed.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub bound: &'static str,
    pub samples: usize,
    pub error_mean: f64,
    pub error_sd: f64,
    pub points: Vec<TailPoint>,
    pub satisfied: bool,
    pub status: Status,
}

impl TailReport {
    fn finish(
        bound: &'static str,
        samples: usize,
        errors: &[f64],
        points: Vec<TailPoint>,
        strict: bool,
    ) -> Self {
        let satisfied = points.iter().all(|p| p.margin >= 0.0);
        let status = Status::from_outcome(satisfied, strict);
        if status == Status::Advisory {
            warn!("{bound}: empirical exceedance above the bound (advisory)");
        }
        let (error_mean, error_sd) = mean_sd(errors);
        Self {
            bound,
            samples,
            error_mean,
            error_sd,
            points,
            satisfied,
            status,
        }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `EPS_GRID_POINTS` evenly spaced values over `[0.5 sd, 4 sd]`.
pub fn eps_grid(sd: f64) -> Vec<f64> {
    let (lo, hi) = (0.5 * sd, 4.0 * sd);
    (0..EPS_GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (EPS_GRID_POINTS - 1) as f64)
        .collect()
}

/// Errors and per-pair Hoeffding denominators, one entry per pair.
fn tail_samples(
    queries: ArrayView2<'_, f32>,
    xs: ArrayView2<'_, f32>,
    model: &QuantizerModel,
    per_pair: impl Fn(&Decomposed) -> (f64, f64),
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_paired_shapes(queries, xs)?;
    let mut errors = Vec::with_capacity(queries.nrows());
    let mut sums = Vec::with_capacity(queries.nrows());
    for (q, x) in queries.rows().into_iter().zip(xs.rows()) {
        let d = Decomposed::new(&q.to_vec(), &x.to_vec(), model)?;
        let (e, s) = per_pair(&d);
        errors.push(e);
        sums.push(s);
    }
    Ok((errors, sums))
}

/// Exceedance vs the mean over pairs of `min(1, per-pair bound)`.
fn tail_points(errors: &[f64], sums: &[f64], inclusive: bool) -> Vec<TailPoint> {
    let (_, sd) = mean_sd(errors);
    let n = errors.len() as f64;
    eps_grid(sd)
        .into_iter()
        .map(|eps| {
            let hits = errors
                .iter()
                .filter(|e| {
                    if inclusive {
                        e.abs() >= eps
                    } else {
                        e.abs() > eps
                    }
                })
                .count();
            let exceedance = hits as f64 / n;
            let bound = sums
                .iter()
                .map(|&s| hoeffding_rhs(eps, s).min(1.0))
                .sum::<f64>()
                / n;
            TailPoint {
                eps,
                exceedance,
                bound,
                margin: bound - exceedance,
            }
        })
        .collect()
}

/// Tail bound on the dot-product error with `sum_m (||q_m|| ||r_m||)^2`.
pub fn check_hoeffding_dot(
    queries: ArrayView2<'_, f32>,
    xs: ArrayView2<'_, f32>,
    model: &QuantizerModel,
    strict: bool,
) -> Result<TailReport> {
    let (errors, sums) = tail_samples(queries, xs, model, |d| {
        let s = d
            .ranges
            .iter()
            .map(|r| d.query_norm_sq(r) * d.residual_norm_sq(r))
            .sum();
        (d.dot_error(), s)
    })?;
    let points = tail_points(&errors, &sums, true);
    Ok(TailReport::finish(
        "hoeffding_dot",
        errors.len(),
        &errors,
        points,
        strict,
    ))
}

/// Tail bound on the squared-distance error with `sum_m ||r_m||^4`.
pub fn check_hoeffding_l2(
    queries: ArrayView2<'_, f32>,
    xs: ArrayView2<'_, f32>,
    model: &QuantizerModel,
    strict: bool,
) -> Result<TailReport> {
    let (errors, sums) = tail_samples(queries, xs, model, |d| {
        let s = d.ranges.iter().map(|r| d.residual_norm_sq(r).powi(2)).sum();
        (d.l2_sq_error(), s)
    })?;
    let points = tail_points(&errors, &sums, false);
    Ok(TailReport::finish(
        "hoeffding_l2",
        errors.len(),
        &errors,
        points,
        strict,
    ))
}

/// Tail bound on the error of one quantized LUT entry.
pub fn lut_tail_bound(mean: f64, sd: f64, b_min: f64, b_max: f64, eps: f64) -> f64 {
    ((-(b_max - mean) / sd).exp() + (-(mean - b_min) / sd).exp()) * (-eps / sd).exp() / sd
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LutTailReport {
    /// One report per table, using that table's mean and spread.
    pub per_table: Vec<TailReport>,
    /// Residuals `y - b_m` pooled over all tables.
    pub aggregated: TailReport,
    pub status: Status,
}

/// Checks the LUT-entry tail bound at `eps = k * step` for `k` in
/// `2..=2 + EPS_GRID_POINTS`, so every `eps` exceeds one quantization step.
pub fn check_lut_tail(
    tables: &[Vec<f32>],
    params: &LutQuantParams,
    strict: bool,
) -> Result<LutTailReport> {
    if tables.len() != params.num_tables() || tables.iter().any(|t| t.is_empty()) {
        return Err(BoltError::invalid("need one non-empty sample per table"));
    }
    let step = params.step();
    let span = 255.0 * step;
    let eps: Vec<f64> = (0..EPS_GRID_POINTS)
        .map(|i| (i + 2) as f64 * step)
        .collect();

    let report = |name: &'static str, ys: &[f64], errs: &[f64], lo: f64| {
        let (mean, sd) = mean_sd(ys);
        let n = errs.len() as f64;
        let points = eps
            .iter()
            .map(|&e| {
                let exceedance = errs.iter().filter(|&&v| v > e).count() as f64 / n;
                let bound = if sd > 0.0 {
                    lut_tail_bound(mean, sd, lo, lo + span, e)
                } else {
                    0.0
                };
                TailPoint {
                    eps: e,
                    exceedance,
                    bound,
                    margin: bound - exceedance,
                }
            })
            .collect();
        TailReport::finish(name, errs.len(), errs, points, strict)
    };

    let mut per_table = Vec::with_capacity(tables.len());
    let mut pooled_ys = Vec::new();
    let mut pooled_errs = Vec::new();
    for (m, table) in tables.iter().enumerate() {
        let b = params.offset(m) as f64;
        let ys: Vec<f64> = table.iter().map(|&y| y as f64).collect();
        let errs: Vec<f64> = table
            .iter()
            .map(|&y| (y as f64 - params.dequantize(params.quantize(y, m), m)).abs())
            .collect();
        per_table.push(report("lut_tail_table", &ys, &errs, b));
        pooled_ys.extend(ys.iter().map(|y| y - b));
        pooled_errs.extend(errs);
    }
    let aggregated = report("lut_tail_aggregated", &pooled_ys, &pooled_errs, 0.0);
    let all_ok = aggregated.satisfied && per_table.iter().all(|r| r.satisfied);
    Ok(LutTailReport {
        per_table,
        aggregated,
        status: Status::from_outcome(all_ok, strict),
    })
}
