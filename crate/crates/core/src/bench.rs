//! Throughput benchmarks and the recall / correlation evaluation driver.
//!
//! Timings follow a best-of-runs protocol: each trial keeps its fastest
//! run, and reported numbers average those per-trial bests.

use std::hint::black_box;
use std::time::Instant;

use log::info;
use ndarray::{s, Array2, ArrayView2};
use serde::Serialize;

use crate::dataset::{make_synthetic_with, Dataset, Structure, SyntheticSpec};
use crate::encode::{encode_batch, pack, FlatCodes, PackedCodes};
use crate::error::{BoltError, Result};
use crate::index::{fit_calibrated, BoltIndex, PqIndex, DEFAULT_CALIBRATION_FRACTION};
use crate::lut::{build_exact_lut, quantize_lut, ExactLut, QuantizedLut};
use crate::metrics::{
    correlation, recall_at_r, recall_grid, ConfigEcho, EvalReport, Throughputs,
    REPORT_SCHEMA_VERSION,
};
use crate::model::{FitConfig, QuantizerModel};
use crate::pq::{pq_encode, pq_scan};
use crate::reduction::Reduction;
use crate::scan::scan_vectorized;

pub const RUNS_PER_TRIAL: usize = 5;
pub const TRIALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Protocol {
    pub runs: usize,
    pub trials: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            runs: RUNS_PER_TRIAL,
            trials: TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    /// Fastest run of each trial, in seconds.
    pub trial_best_secs: Vec<f64>,
    pub mean_best_secs: f64,
}

/// Times `f` under `protocol` after one untimed warm-up call.
pub fn measure<T>(protocol: Protocol, mut f: impl FnMut() -> T) -> Timing {
    black_box(f());
    let trial_best_secs: Vec<f64> = (0..protocol.trials.max(1))
        .map(|_| {
            (0..protocol.runs.max(1))
                .map(|_| {
                    let start = Instant::now();
                    black_box(f());
                    start.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean_best_secs = trial_best_secs.iter().sum::<f64>() / trial_best_secs.len() as f64;
    Timing {
        trial_best_secs,
        mean_best_secs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Throughput {
    pub name: String,
    /// Items (vectors or queries) processed per timed call.
    pub items: usize,
    /// Bytes of input or codes touched per timed call.
    pub bytes: usize,
    pub timing: Timing,
    pub items_per_sec: f64,
    pub bytes_per_sec: f64,
}

impl Throughput {
    fn new(name: &str, items: usize, bytes: usize, timing: Timing) -> Self {
        let secs = timing.mean_best_secs.max(f64::MIN_POSITIVE);
        Self {
            name: name.to_string(),
            items,
            bytes,
            items_per_sec: items as f64 / secs,
            bytes_per_sec: bytes as f64 / secs,
            timing,
        }
    }
}

fn input_bytes(x: ArrayView2<'_, f32>) -> usize {
    x.len() * std::mem::size_of::<f32>()
}

/// Database encoding speed of a 4-bit or 8-bit model.
pub fn bench_encode(
    protocol: Protocol,
    model: &QuantizerModel,
    x: ArrayView2<'_, f32>,
) -> Result<Throughput> {
    encode_batch(x, model)?;
    let name = if model.code_bits() == crate::model::PQ_CODE_BITS {
        "pq_encode"
    } else {
        "bolt_encode"
    };
    let timing = measure(protocol, || {
        encode_batch(x, model).expect("validated above")
    });
    Ok(Throughput::new(name, x.nrows(), input_bytes(x), timing))
}

/// Query preparation: exact tables, plus quantization for Bolt models.
pub fn bench_query_encode(
    protocol: Protocol,
    model: &QuantizerModel,
    queries: ArrayView2<'_, f32>,
) -> Result<Throughput> {
    let qs: Vec<Vec<f32>> = queries.rows().into_iter().map(|r| r.to_vec()).collect();
    let params = model.lut_quant().cloned();
    let run = || -> Result<usize> {
        let mut sink = 0usize;
        for q in &qs {
            let lut = build_exact_lut(q, model)?;
            sink += match &params {
                Some(p) => quantize_lut(&lut, p)?.get(0, 0) as usize,
                None => lut.as_slice().len(),
            };
        }
        Ok(sink)
    };
    run()?;
    let timing = measure(protocol, || run().expect("validated above"));
    Ok(Throughput::new(
        "query_encode",
        qs.len(),
        input_bytes(queries),
        timing,
    ))
}

pub fn bench_scan_bolt(
    protocol: Protocol,
    packed: &PackedCodes,
    lut: &QuantizedLut,
) -> Result<Throughput> {
    scan_vectorized(packed, lut)?;
    let timing = measure(protocol, || {
        scan_vectorized(packed, lut).expect("validated above")
    });
    Ok(Throughput::new(
        "bolt_scan",
        packed.num_vectors(),
        packed.as_bytes().len(),
        timing,
    ))
}

pub fn bench_scan_pq(
    protocol: Protocol,
    codes: &FlatCodes,
    lut: &ExactLut,
    reduction: Reduction,
) -> Result<Throughput> {
    pq_scan(codes, lut, reduction)?;
    let timing = measure(protocol, || {
        pq_scan(codes, lut, reduction).expect("validated above")
    });
    Ok(Throughput::new(
        "pq_scan",
        codes.num_vectors(),
        codes.as_slice().len(),
        timing,
    ))
}

/// Reduction of `q` against every uncompressed row.
pub fn dense_scan(database: ArrayView2<'_, f32>, q: &[f32], reduction: Reduction) -> Vec<f32> {
    let db = database.as_standard_layout();
    let dim = database.ncols().max(1);
    db.as_slice()
        .expect("standard layout")
        .chunks_exact(dim)
        .map(|x| reduction.reduce(q, x))
        .collect()
}

pub fn bench_scan_dense(
    protocol: Protocol,
    database: ArrayView2<'_, f32>,
    q: &[f32],
    reduction: Reduction,
) -> Throughput {
    let db = database.as_standard_layout();
    let timing = measure(protocol, || dense_scan(db.view(), q, reduction));
    Throughput::new(
        "dense_scan",
        database.nrows(),
        input_bytes(database),
        timing,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub protocol: Protocol,
    pub bytes: usize,
    pub reduction: Reduction,
    pub seed: u64,
    /// Vectors fitted on for every model in the suite.
    pub n_train: usize,
    /// Encoding benchmark shape.
    pub encode_rows: usize,
    pub encode_dim: usize,
    /// Query-encoding benchmark size.
    pub n_queries: usize,
    /// Scan benchmark shape.
    pub scan_rows: usize,
    pub scan_dim: usize,
    /// Also time the 256-centroid baseline.
    pub with_pq: bool,
    pub kmeans_iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::default(),
            bytes: 8,
            reduction: Reduction::SquaredEuclidean,
            seed: 0,
            n_train: 5_000,
            encode_rows: 10_000,
            encode_dim: 128,
            n_queries: 1_000,
            scan_rows: 100_000,
            scan_dim: 256,
            with_pq: true,
            kmeans_iters: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: BenchConfig,
    pub results: Vec<Throughput>,
    /// `bolt_encode / pq_encode` throughput, when the baseline ran.
    pub encode_speedup_vs_pq: Option<f64>,
    pub scan_speedup_vs_dense: f64,
    pub scan_speedup_vs_pq: Option<f64>,
}

impl BenchReport {
    pub fn get(&self, name: &str) -> Option<&Throughput> {
        self.results.iter().find(|t| t.name == name)
    }
}

fn random_rows(n: usize, dim: usize, seed: u64) -> Array2<f32> {
    let spec = SyntheticSpec {
        n_train: n,
        n_database: 0,
        n_queries: 0,
        ..SyntheticSpec::new(n, dim, Structure::Iid, seed)
    };
    make_synthetic_with(&spec).train
}

/// Encoding, query-encoding and scan throughput on random Gaussian data.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let p = cfg.protocol;
    let mut results = Vec::new();

    let train = random_rows(cfg.n_train, cfg.encode_dim, cfg.seed);
    let data = random_rows(cfg.encode_rows, cfg.encode_dim, cfg.seed + 1);
    let queries = random_rows(cfg.n_queries, cfg.encode_dim, cfg.seed + 2);
    let bolt_cfg = FitConfig::bolt(cfg.bytes, cfg.reduction)
        .with_seed(cfg.seed)
        .with_iters(cfg.kmeans_iters);
    let bolt = fit_calibrated(train.view(), &bolt_cfg, DEFAULT_CALIBRATION_FRACTION)?;
    info!("bench: encode");
    results.push(bench_encode(p, &bolt, data.view())?);
    let mut encode_speedup = None;
    if cfg.with_pq {
        let pq_cfg = FitConfig::pq(cfg.bytes, cfg.reduction)
            .with_seed(cfg.seed)
            .with_iters(cfg.kmeans_iters);
        let pq = fit_calibrated(train.view(), &pq_cfg, 0.0)?;
        let t = bench_encode(p, &pq, data.view())?;
        encode_speedup = Some(results[0].items_per_sec / t.items_per_sec);
        results.push(t);
    }
    info!("bench: query encode");
    results.push(bench_query_encode(p, &bolt, queries.view())?);

    info!("bench: scan");
    let train = random_rows(cfg.n_train, cfg.scan_dim, cfg.seed + 3);
    let db = random_rows(cfg.scan_rows, cfg.scan_dim, cfg.seed + 4);
    let q = random_rows(1, cfg.scan_dim, cfg.seed + 5).row(0).to_vec();
    let bolt_cfg = FitConfig::bolt(cfg.bytes, cfg.reduction)
        .with_seed(cfg.seed)
        .with_iters(cfg.kmeans_iters);
    let bolt = fit_calibrated(train.view(), &bolt_cfg, DEFAULT_CALIBRATION_FRACTION)?;
    let packed = pack(&encode_batch(db.view(), &bolt)?)?;
    let lut = quantize_lut(
        &build_exact_lut(&q, &bolt)?,
        bolt.lut_quant().expect("calibrated"),
    )?;
    let bolt_scan = bench_scan_bolt(p, &packed, &lut)?;
    let dense = bench_scan_dense(p, db.view(), &q, cfg.reduction);
    let scan_speedup_vs_dense = bolt_scan.items_per_sec / dense.items_per_sec;
    let mut scan_speedup_vs_pq = None;
    let bolt_rate = bolt_scan.items_per_sec;
    results.push(bolt_scan);
    results.push(dense);
    if cfg.with_pq {
        let pq_cfg = FitConfig::pq(cfg.bytes, cfg.reduction)
            .with_seed(cfg.seed)
            .with_iters(cfg.kmeans_iters);
        let pq = fit_calibrated(train.view(), &pq_cfg, 0.0)?;
        let codes = pq_encode(db.view(), &pq)?;
        let t = bench_scan_pq(p, &codes, &build_exact_lut(&q, &pq)?, cfg.reduction)?;
        scan_speedup_vs_pq = Some(bolt_rate / t.items_per_sec);
        results.push(t);
    }

    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        results,
        encode_speedup_vs_pq: encode_speedup,
        scan_speedup_vs_dense,
        scan_speedup_vs_pq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bolt,
    Pq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub method: Method,
    pub bytes: usize,
    pub reduction: Reduction,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub calibration_fraction: f64,
    /// Queries whose estimates enter the correlation.
    pub correlation_queries: usize,
}

impl EvalConfig {
    pub fn new(method: Method, bytes: usize, reduction: Reduction) -> Self {
        Self {
            method,
            bytes,
            reduction,
            seed: 0,
            kmeans_iters: crate::kmeans::DEFAULT_ITERS,
            calibration_fraction: DEFAULT_CALIBRATION_FRACTION,
            correlation_queries: 256,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

enum AnyIndex {
    Bolt(BoltIndex),
    Pq(PqIndex),
}

impl AnyIndex {
    fn model(&self) -> &QuantizerModel {
        match self {
            AnyIndex::Bolt(i) => i.model(),
            AnyIndex::Pq(i) => i.model(),
        }
    }

    fn estimates(&self, q: &[f32]) -> Result<Vec<f32>> {
        match self {
            AnyIndex::Bolt(i) => i.estimates(q),
            AnyIndex::Pq(i) => i.estimates(q),
        }
    }

    fn ranking(&self, q: &[f32], r: usize) -> Result<Vec<usize>> {
        match self {
            AnyIndex::Bolt(i) => i.ranking(q, r),
            AnyIndex::Pq(i) => i.ranking(q, r),
        }
    }
}

/// Fits on `train`, encodes `database`, and scores the queries.
///
/// Recall compares approximate rankings with the Euclidean ground truth, so
/// it is only reported for the squared-Euclidean reduction.
pub fn evaluate(dataset: &mut Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let nq = dataset.queries.nrows();
    let n = dataset.database.nrows();
    if nq == 0 || n == 0 {
        return Err(BoltError::invalid(
            "evaluation needs queries and a database",
        ));
    }
    let fit_cfg = match cfg.method {
        Method::Bolt => FitConfig::bolt(cfg.bytes, cfg.reduction),
        Method::Pq => FitConfig::pq(cfg.bytes, cfg.reduction),
    }
    .with_seed(cfg.seed)
    .with_iters(cfg.kmeans_iters);
    let frac = if cfg.method == Method::Bolt {
        cfg.calibration_fraction
    } else {
        0.0
    };
    let model = fit_calibrated(dataset.train.view(), &fit_cfg, frac)?;

    let start = Instant::now();
    let index = match cfg.method {
        Method::Bolt => AnyIndex::Bolt(BoltIndex::build(model, dataset.database.view())?),
        Method::Pq => AnyIndex::Pq(PqIndex::build(model, dataset.database.view())?),
    };
    let encode_secs = start.elapsed().as_secs_f64();
    let model = index.model();

    let qs: Vec<Vec<f32>> = dataset
        .queries
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let start = Instant::now();
    for q in &qs {
        let lut = build_exact_lut(q, model)?;
        if let Some(p) = model.lut_quant() {
            black_box(quantize_lut(&lut, p)?);
        }
    }
    let query_encode_secs = start.elapsed().as_secs_f64();

    let mut recall = Default::default();
    let mut scan_secs = 0.0;
    if cfg.reduction == Reduction::SquaredEuclidean {
        let gt = dataset.ensure_ground_truth().to_vec();
        let grid = recall_grid(n);
        let depth = *grid.last().expect("non-empty grid");
        let start = Instant::now();
        let rankings = qs
            .iter()
            .map(|q| index.ranking(q, depth))
            .collect::<Result<Vec<_>>>()?;
        scan_secs = start.elapsed().as_secs_f64();
        recall = recall_at_r(&rankings, Some(&gt), &grid)?;
    }

    let corr_q = cfg.correlation_queries.clamp(1, nq);
    let mut truth = Vec::with_capacity(corr_q * n);
    let mut approx = Vec::with_capacity(corr_q * n);
    let db = dataset.database.slice(s![.., ..]);
    let start = Instant::now();
    for q in &qs[..corr_q] {
        approx.extend(index.estimates(q)?);
    }
    if scan_secs == 0.0 {
        scan_secs = start.elapsed().as_secs_f64() * nq as f64 / corr_q as f64;
    }
    for q in &qs[..corr_q] {
        truth.extend(dense_scan(db, q, cfg.reduction));
    }
    let correlation = correlation(&truth, &approx)?;

    let per_sec = |items: usize, secs: f64| items as f64 / secs.max(f64::MIN_POSITIVE);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        recall_at_r: recall,
        correlation,
        throughputs: Throughputs {
            encode_vectors_per_sec: per_sec(n, encode_secs),
            query_encode_per_sec: per_sec(nq, query_encode_secs),
            scan_vectors_per_sec: per_sec(n * nq, scan_secs),
        },
        config: ConfigEcho {
            method: match cfg.method {
                Method::Bolt => "bolt".into(),
                Method::Pq => "pq".into(),
            },
            metric: cfg.reduction.to_string(),
            bytes_per_code: cfg.bytes,
            num_codebooks: model.num_codebooks(),
            code_bits: model.code_bits(),
            alpha: model.lut_quant().map(|p| p.alpha()),
            lut_scale: model.lut_quant().map(|p| p.scale()),
            seed: cfg.seed,
            kmeans_iters: cfg.kmeans_iters,
            n_train: dataset.train.nrows(),
            n_database: n,
            n_queries: nq,
            dim: dataset.dim(),
        },
    })
}
