//! Query lookup tables and their learned 8-bit quantization.
//!
//! Every table `m` gets its own offset `b_m` (its alpha-quantile) while a
//! single scale `a` is shared by all tables, so the quantized entries of
//! different tables stay commensurable and the offsets collapse into one
//! bias that is added back after the scan.

use log::{debug, warn};
use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{ensure_finite, BoltError, Result};
use crate::model::QuantizerModel;
use crate::reduction::Reduction;

/// Candidate quantile levels searched during calibration.
pub const ALPHA_GRID: [f32; 8] = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1];

/// Exact per-query table, `K` entries for each of `M` codebooks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactLut {
    k: usize,
    num_tables: usize,
    // table-major: entries[m * k + i]
    entries: Vec<f32>,
}

impl ExactLut {
    pub fn from_tables(k: usize, num_tables: usize, entries: Vec<f32>) -> Result<Self> {
        if entries.len() != k * num_tables {
            return Err(BoltError::DimensionMismatch {
                expected: k * num_tables,
                got: entries.len(),
            });
        }
        Ok(Self {
            k,
            num_tables,
            entries,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_tables(&self) -> usize {
        self.num_tables
    }

    /// Entry for centroid `i` of codebook `m`.
    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f32 {
        self.entries[m * self.k + i]
    }

    pub fn table(&self, m: usize) -> &[f32] {
        &self.entries[m * self.k..(m + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.entries
    }
}

/// Learned quantization constants: global scale `a`, per-table offsets
/// `b_m` (in distance units) and the winning quantile level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LutQuantParams {
    scale: f32,
    offsets: Vec<f32>,
    alpha: f32,
    offset_sum: f64,
}

impl LutQuantParams {
    pub fn new(scale: f32, offsets: Vec<f32>, alpha: f32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(BoltError::invalid(format!(
                "LUT scale must be positive, got {scale}"
            )));
        }
        if !(0.0..0.5).contains(&alpha) {
            return Err(BoltError::invalid(format!(
                "alpha must lie in [0, 0.5), got {alpha}"
            )));
        }
        if offsets.is_empty() {
            return Err(BoltError::invalid("LUT params need at least one table"));
        }
        ensure_finite(&offsets, "LUT offsets")?;
        let offset_sum = offsets.iter().map(|&b| b as f64).sum();
        Ok(Self {
            scale,
            offsets,
            alpha,
            offset_sum,
        })
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn offsets(&self) -> &[f32] {
        &self.offsets
    }

    pub fn offset(&self, m: usize) -> f32 {
        self.offsets[m]
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn offset_sum(&self) -> f64 {
        self.offset_sum
    }

    pub fn num_tables(&self) -> usize {
        self.offsets.len()
    }

    /// Quantization step in distance units.
    pub fn step(&self) -> f64 {
        1.0 / self.scale as f64
    }

    /// `clamp(floor(a * (y - b_m)), 0, 255)`.
    #[inline]
    pub fn quantize(&self, y: f32, m: usize) -> u8 {
        quantize_entry(y as f64, self.offsets[m] as f64, self.scale as f64)
    }

    /// `code / a + b_m`.
    #[inline]
    pub fn dequantize(&self, code: u8, m: usize) -> f64 {
        code as f64 / self.scale as f64 + self.offsets[m] as f64
    }

    /// Turns a sum of one quantized entry per table back into distance units.
    #[inline]
    pub fn reconstruct(&self, acc: u32) -> f32 {
        (acc as f64 / self.scale as f64 + self.offset_sum) as f32
    }
}

#[inline(always)]
fn quantize_entry(y: f64, offset: f64, scale: f64) -> u8 {
    (scale * (y - offset)).floor().clamp(0.0, 255.0) as u8
}

/// 8-bit table for one query.
///
/// Tables are stored table-major with an extra all-zero table when `M` is
/// odd, so kernels can always consume them in pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLut {
    k: usize,
    num_tables: usize,
    entries: Vec<u8>,
}

impl QuantizedLut {
    pub fn from_tables(k: usize, num_tables: usize, mut entries: Vec<u8>) -> Result<Self> {
        if entries.len() != k * num_tables {
            return Err(BoltError::DimensionMismatch {
                expected: k * num_tables,
                got: entries.len(),
            });
        }
        entries.resize(k * num_tables.next_multiple_of(2), 0);
        Ok(Self {
            k,
            num_tables,
            entries,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_tables(&self) -> usize {
        self.num_tables
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> u8 {
        self.entries[m * self.k + i]
    }

    pub fn table(&self, m: usize) -> &[u8] {
        &self.entries[m * self.k..(m + 1) * self.k]
    }

    /// All tables, including the zero table appended for odd `M`.
    pub fn padded_entries(&self) -> &[u8] {
        &self.entries
    }
}

/// Entry `(i, m)` is the partial reduction between query subvector `m` and
/// centroid `i` of codebook `m`.
pub fn build_exact_lut(q: &[f32], model: &QuantizerModel) -> Result<ExactLut> {
    let split = model.split();
    split.check_len(q.len())?;
    let k = model.k();
    let reduction = model.reduction();
    let mut sub = vec![0f32; split.subvector_len()];
    let mut entries = Vec::with_capacity(k * model.num_codebooks());
    for (m, cb) in model.codebooks().iter().enumerate() {
        split.extract_into(q, m, &mut sub);
        entries.extend((0..k).map(|i| reduction.partial(&sub, cb.centroid(i))));
    }
    ExactLut::from_tables(k, model.num_codebooks(), entries)
}

pub fn quantize_lut(exact: &ExactLut, params: &LutQuantParams) -> Result<QuantizedLut> {
    if exact.num_tables() != params.num_tables() {
        return Err(BoltError::DimensionMismatch {
            expected: params.num_tables(),
            got: exact.num_tables(),
        });
    }
    ensure_finite(exact.as_slice(), "lookup table")?;
    let k = exact.k();
    let scale = params.scale() as f64;
    let mut entries = Vec::with_capacity(exact.as_slice().len());
    for m in 0..exact.num_tables() {
        let b = params.offset(m) as f64;
        entries.extend(
            exact
                .table(m)
                .iter()
                .map(|&y| quantize_entry(y as f64, b, scale)),
        );
    }
    QuantizedLut::from_tables(k, exact.num_tables(), entries)
}

/// Estimate from an integer scan accumulator: `f(acc / a + sum_m b_m)`.
pub fn reconstruct_total(acc: u32, params: &LutQuantParams, reduction: Reduction) -> f32 {
    reduction.finalize(params.reconstruct(acc))
}

/// One row of the alpha grid search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaCandidate {
    pub alpha: f32,
    pub scale: f32,
    pub offsets: Vec<f32>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub params: LutQuantParams,
    pub candidates: Vec<AlphaCandidate>,
}

/// Nearest-rank quantile of a sorted sample.
pub fn nearest_rank(sorted: &[f32], p: f64) -> f32 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    sorted[nearest_rank_index(sorted.len(), p)]
}

fn nearest_rank_index(n: usize, p: f64) -> usize {
    ((p * n as f64).ceil() as usize)
        .saturating_sub(1)
        .min(n - 1)
}

/// Learns `(a, b_m, alpha)` from the exact tables of `sample_queries`.
pub fn calibrate(
    model: &QuantizerModel,
    sample_queries: ArrayView2<'_, f32>,
) -> Result<LutQuantParams> {
    calibrate_report(model, sample_queries).map(|c| c.params)
}

pub fn calibrate_report(
    model: &QuantizerModel,
    sample_queries: ArrayView2<'_, f32>,
) -> Result<Calibration> {
    if sample_queries.nrows() == 0 {
        return Err(BoltError::invalid(
            "calibration needs at least one sample query",
        ));
    }
    if sample_queries.nrows() < 100 {
        warn!(
            "calibrating LUT quantization on only {} queries",
            sample_queries.nrows()
        );
    }
    let m = model.num_codebooks();
    let mut tables: Vec<Vec<f32>> = vec![Vec::with_capacity(sample_queries.nrows() * model.k()); m];
    for q in sample_queries.rows() {
        let lut = build_exact_lut(&q.to_vec(), model)?;
        ensure_finite(lut.as_slice(), "calibration table")?;
        for (t, dst) in tables.iter_mut().enumerate() {
            dst.extend_from_slice(lut.table(t));
        }
    }
    calibrate_tables(&tables)
}

/// Grid search over [`ALPHA_GRID`] given the pooled samples of each table.
///
/// For each alpha, `b_m` is the alpha-quantile of table `m`, `a` maps the
/// (1 - alpha)-quantile of the pooled residuals `y - b_m` to 255, and the
/// candidate with the lowest mean squared reconstruction error wins (ties
/// go to the smaller alpha).
pub fn calibrate_tables(tables: &[Vec<f32>]) -> Result<Calibration> {
    if tables.is_empty() || tables.iter().any(|t| t.is_empty()) {
        return Err(BoltError::invalid("calibration needs non-empty tables"));
    }
    for t in tables {
        ensure_finite(t, "calibration table")?;
    }
    let sorted: Vec<Vec<f32>> = tables
        .iter()
        .map(|t| {
            let mut s = t.clone();
            s.sort_by(f32::total_cmp);
            s
        })
        .collect();
    let total: usize = tables.iter().map(Vec::len).sum();
    let mut pool = Vec::with_capacity(total);

    let mut candidates = Vec::with_capacity(ALPHA_GRID.len());
    for &alpha in &ALPHA_GRID {
        let offsets: Vec<f32> = sorted
            .iter()
            .map(|s| nearest_rank(s, alpha as f64))
            .collect();

        pool.clear();
        for (t, &b) in tables.iter().zip(&offsets) {
            pool.extend(t.iter().map(|&y| y - b));
        }
        let idx = nearest_rank_index(pool.len(), 1.0 - alpha as f64);
        let top = *pool.select_nth_unstable_by(idx, f32::total_cmp).1;
        let scale = if top > 0.0 {
            255.0 / top
        } else {
            let max = pool.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if max > 0.0 {
                warn!("alpha={alpha}: residual quantile {top} is not positive; scaling by the max residual");
                255.0 / max
            } else {
                warn!("alpha={alpha}: all residuals are zero; using unit scale");
                1.0
            }
        };

        let (a, mut sse) = (scale as f64, 0.0f64);
        for (t, &b) in tables.iter().zip(&offsets) {
            let b = b as f64;
            for &y in t {
                let y = y as f64;
                let rec = quantize_entry(y, b, a) as f64 / a + b;
                sse += (rec - y) * (rec - y);
            }
        }
        candidates.push(AlphaCandidate {
            alpha,
            scale,
            offsets,
            mse: sse / total as f64,
        });
    }

    let best = candidates.iter().enumerate().fold(0, |best, (i, c)| {
        if c.mse < candidates[best].mse {
            i
        } else {
            best
        }
    });
    let win = &candidates[best];
    debug!(
        "calibration picked alpha={} (a={}, mse={:e})",
        win.alpha, win.scale, win.mse
    );
    let params = LutQuantParams::new(win.scale, win.offsets.clone(), win.alpha)?;
    Ok(Calibration { params, candidates })
}
