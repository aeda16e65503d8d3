use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bolt::bench::{evaluate, run_bench, BenchConfig, EvalConfig, Method, Protocol};
use bolt::dataset::{make_synthetic_with, Dataset, Structure, SyntheticSpec};
use bolt::guarantees::{
    check_dot_bounds, check_hoeffding_dot, check_hoeffding_l2, check_l2_bounds, check_lut_tail,
    DeterministicReport, LutTailReport, TailReport,
};
use bolt::index::{fit_calibrated, BoltIndex, PqIndex};
use bolt::io::{load_auto, read_ivecs, save_vecs, VecsKind};
use bolt::metrics::{correlation, EvalReport};
use bolt::pq::{load_pq_codes, pq_encode, save_pq_codes};
use bolt::scan::Neighbor;
use bolt::{
    build_exact_lut, encode_batch, pack, FitConfig, PackedCodes, QuantizerModel, Reduction,
};
use log::info;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::{report, Baseline, Cli, Command, DataArgs, Global, ReportFormat};

type SearchFn = dyn Fn(&[f32]) -> bolt::Result<Vec<Neighbor>>;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Fit { train, model } => fit(g, train, model),
        Command::Encode { model, data, codes } => encode(model, data, codes),
        Command::Query {
            model,
            codes,
            queries,
            k,
        } => query(g, model, codes, queries, *k),
        Command::Bench {
            runs,
            trials,
            scan_rows,
            scan_dim,
            encode_rows,
            encode_dim,
        } => bench(
            g,
            BenchConfig {
                protocol: Protocol {
                    runs: *runs,
                    trials: *trials,
                },
                bytes: g.bytes,
                reduction: g.metric,
                seed: g.seed,
                encode_rows: *encode_rows,
                encode_dim: *encode_dim,
                scan_rows: *scan_rows,
                scan_dim: *scan_dim,
                with_pq: g.baseline.is_some(),
                kmeans_iters: g.iters,
                ..BenchConfig::default()
            },
        ),
        Command::Eval { data } => eval(g, data),
        Command::Verify {
            data,
            pairs,
            strict,
        } => verify(g, data, *pairs, *strict),
        Command::Matmul {
            size,
            a,
            b,
            exclude_encoding,
            compare,
            product,
        } => matmul(
            g,
            *size,
            a.as_deref(),
            b.as_deref(),
            !exclude_encoding,
            *compare,
            product.as_deref(),
        ),
    }
}

fn load(path: &Path) -> Result<Array2<f32>> {
    load_auto(path).with_context(|| format!("reading {}", path.display()))
}

fn fit_config(g: &Global) -> FitConfig {
    let cfg = match g.baseline {
        Some(Baseline::Pq) => FitConfig::pq(g.bytes, g.metric),
        None => FitConfig::bolt(g.bytes, g.metric),
    };
    cfg.with_seed(g.seed).with_iters(g.iters)
}

fn fit(g: &Global, train: &Path, out: &Path) -> Result<()> {
    let x = load(train)?;
    let start = Instant::now();
    let model = fit_calibrated(x.view(), &fit_config(g), g.calibration_fraction)?;
    info!(
        "fitted {} codebooks of {} centroids on {} vectors in {:.2?}",
        model.num_codebooks(),
        model.k(),
        x.nrows(),
        start.elapsed()
    );
    model
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<QuantizerModel> {
    QuantizerModel::load(path).with_context(|| format!("reading model {}", path.display()))
}

fn encode(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let x = load(data)?;
    let written = if model.code_bits() == bolt::model::BOLT_CODE_BITS {
        pack(&encode_batch(x.view(), &model)?)?.save(out)
    } else {
        save_pq_codes(&pq_encode(x.view(), &model)?, out)
    };
    written.with_context(|| format!("writing {}", out.display()))?;
    info!("encoded {} vectors", x.nrows());
    Ok(())
}

#[derive(Serialize)]
struct QueryResult {
    query: usize,
    neighbors: Vec<NeighborOut>,
}

#[derive(Serialize)]
struct NeighborOut {
    index: usize,
    estimate: f32,
}

fn query(g: &Global, model: &Path, codes: &Path, queries: &Path, k: usize) -> Result<()> {
    let model = load_model(model)?;
    let qs = load(queries)?;
    let search: Box<SearchFn> = if model.code_bits() == bolt::model::BOLT_CODE_BITS {
        let packed = PackedCodes::load(codes)
            .with_context(|| format!("reading codes {}", codes.display()))?;
        let index = BoltIndex::from_parts(model, packed)?;
        Box::new(move |q| index.search(q, k.min(index.len())))
    } else {
        let flat =
            load_pq_codes(codes).with_context(|| format!("reading codes {}", codes.display()))?;
        let index = PqIndex::from_parts(model, flat)?;
        Box::new(move |q| index.search(q, k.min(index.codes().num_vectors())))
    };
    let mut results = Vec::with_capacity(qs.nrows());
    for (i, q) in qs.rows().into_iter().enumerate() {
        let hits = search(&q.to_vec())?;
        results.push(QueryResult {
            query: i,
            neighbors: hits
                .into_iter()
                .map(|n| NeighborOut {
                    index: n.index,
                    estimate: n.estimate,
                })
                .collect(),
        });
    }
    match g.report {
        ReportFormat::Json => report::json(&results, g.out.as_deref()),
        ReportFormat::Csv => {
            let rows: Vec<Vec<String>> = results
                .iter()
                .flat_map(|r| {
                    r.neighbors.iter().enumerate().map(move |(rank, n)| {
                        vec![
                            r.query.to_string(),
                            rank.to_string(),
                            n.index.to_string(),
                            n.estimate.to_string(),
                        ]
                    })
                })
                .collect();
            report::csv(
                &["query", "rank", "index", "estimate"],
                &rows,
                g.out.as_deref(),
            )
        }
    }
}

fn bench(g: &Global, cfg: BenchConfig) -> Result<()> {
    let r = run_bench(&cfg)?;
    match g.report {
        ReportFormat::Json => report::json(&r, g.out.as_deref()),
        ReportFormat::Csv => {
            let rows: Vec<Vec<String>> = r
                .results
                .iter()
                .map(|t| {
                    vec![
                        t.name.clone(),
                        t.items.to_string(),
                        t.bytes.to_string(),
                        t.timing.mean_best_secs.to_string(),
                        t.items_per_sec.to_string(),
                        t.bytes_per_sec.to_string(),
                    ]
                })
                .collect();
            report::csv(
                &[
                    "name",
                    "items",
                    "bytes",
                    "mean_best_secs",
                    "items_per_sec",
                    "bytes_per_sec",
                ],
                &rows,
                g.out.as_deref(),
            )
        }
    }
}

/// Returns the dataset and whether it was generated.
fn load_dataset(g: &Global, args: &DataArgs) -> Result<(Dataset, bool)> {
    if let Some(n) = args.synthetic {
        let spec =
            SyntheticSpec::new(n, args.dim, args.structure, g.seed).with_queries(args.num_queries);
        let mut d = make_synthetic_with(&spec);
        if args.db_equals_train {
            d.database = d.train.clone();
        }
        return Ok((d, true));
    }
    let need = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        p.clone()
            .with_context(|| format!("--{what} is required without --synthetic"))
    };
    let train = load(&need(&args.train, "train")?)?;
    let base = if args.db_equals_train {
        train.clone()
    } else {
        load(&need(&args.base, "base")?)?
    };
    let queries = load(&need(&args.queries, "queries")?)?;
    let mut d = Dataset::new(train, base, queries)?;
    if let Some(gt) = &args.ground_truth {
        let rows = read_ivecs(BufReader::new(
            File::open(gt).with_context(|| format!("reading {}", gt.display()))?,
        ))?;
        let first = rows
            .iter()
            .map(|r| {
                r.first()
                    .map(|&i| i as usize)
                    .context("empty ground-truth record")
            })
            .collect::<Result<Vec<_>>>()?;
        d = d.with_ground_truth(first)?;
    }
    Ok((d, false))
}

fn eval(g: &Global, args: &DataArgs) -> Result<()> {
    let (mut d, _) = load_dataset(g, args)?;
    if g.metric == Reduction::SquaredEuclidean {
        if let Some(dir) = &args.gt_cache {
            d.ensure_ground_truth_cached(dir)?;
        }
    }
    let mut methods = vec![Method::Bolt];
    if g.baseline.is_some() {
        methods.push(Method::Pq);
    }
    let reports = methods
        .into_iter()
        .map(|m| {
            let mut cfg = EvalConfig::new(m, g.bytes, g.metric).with_seed(g.seed);
            cfg.kmeans_iters = g.iters;
            cfg.calibration_fraction = g.calibration_fraction;
            evaluate(&mut d, &cfg)
        })
        .collect::<bolt::Result<Vec<EvalReport>>>()?;
    match g.report {
        ReportFormat::Json if reports.len() == 1 => report::json(&reports[0], g.out.as_deref()),
        ReportFormat::Json => report::json(&reports, g.out.as_deref()),
        ReportFormat::Csv => {
            let mut rows = Vec::new();
            for r in &reports {
                let c = &r.config;
                let mut row = |key: String, value: f64| {
                    rows.push(vec![
                        c.method.clone(),
                        c.bytes_per_code.to_string(),
                        c.metric.clone(),
                        key,
                        value.to_string(),
                    ])
                };
                for (k, v) in &r.recall_at_r {
                    row(format!("recall@{k}"), *v);
                }
                row("correlation".into(), r.correlation);
                row(
                    "encode_vectors_per_sec".into(),
                    r.throughputs.encode_vectors_per_sec,
                );
                row(
                    "query_encode_per_sec".into(),
                    r.throughputs.query_encode_per_sec,
                );
                row(
                    "scan_vectors_per_sec".into(),
                    r.throughputs.scan_vectors_per_sec,
                );
            }
            report::csv(
                &["method", "bytes", "metric", "key", "value"],
                &rows,
                g.out.as_deref(),
            )
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    pairs: usize,
    strict: bool,
    dot_bound: DeterministicReport,
    l2_bound: DeterministicReport,
    hoeffding_dot: TailReport,
    hoeffding_l2: TailReport,
    lut_tail: LutTailReport,
}

fn verify(g: &Global, args: &DataArgs, pairs: usize, strict_flag: bool) -> Result<()> {
    let (d, synthetic) = load_dataset(g, args)?;
    if pairs == 0 || d.queries.nrows() == 0 || d.database.nrows() == 0 {
        bail!("verify needs at least one query, one database vector and one pair");
    }
    // Distributional bounds are strict only on independent synthetic data.
    let strict = strict_flag || (synthetic && args.structure == Structure::Iid);
    let qi: Vec<usize> = (0..pairs).map(|i| i % d.queries.nrows()).collect();
    let xi: Vec<usize> = (0..pairs).map(|i| i % d.database.nrows()).collect();
    let qs = d.queries.select(Axis(0), &qi);
    let xs = d.database.select(Axis(0), &xi);

    let fit_for = |metric: Reduction| {
        let mut cfg = FitConfig::bolt(g.bytes, metric)
            .with_seed(g.seed)
            .with_iters(g.iters);
        cfg.reduction = metric;
        fit_calibrated(d.train.view(), &cfg, g.calibration_fraction)
    };
    let dot_model = fit_for(Reduction::DotProduct)?;
    let l2_model = fit_for(Reduction::SquaredEuclidean)?;
    let lut_model = if g.metric == Reduction::DotProduct {
        &dot_model
    } else {
        &l2_model
    };
    let params = lut_model.lut_quant().context("model is not calibrated")?;
    let mut tables = vec![Vec::new(); lut_model.num_codebooks()];
    for q in d.queries.rows() {
        let lut = build_exact_lut(&q.to_vec(), lut_model)?;
        for (m, t) in tables.iter_mut().enumerate() {
            t.extend_from_slice(lut.table(m));
        }
    }

    let r = VerifyReport {
        pairs,
        strict,
        dot_bound: check_dot_bounds(qs.view(), xs.view(), &dot_model)?,
        l2_bound: check_l2_bounds(qs.view(), xs.view(), &l2_model)?,
        hoeffding_dot: check_hoeffding_dot(qs.view(), xs.view(), &dot_model, strict)?,
        hoeffding_l2: check_hoeffding_l2(qs.view(), xs.view(), &l2_model, strict)?,
        lut_tail: check_lut_tail(&tables, params, strict)?,
    };
    match g.report {
        ReportFormat::Json => report::json(&r, g.out.as_deref()),
        ReportFormat::Csv => {
            let st = |s: bolt::guarantees::Status| {
                serde_json::to_value(s)
                    .unwrap()
                    .as_str()
                    .unwrap()
                    .to_string()
            };
            let rows = vec![
                vec![
                    "dot_bound".into(),
                    st(r.dot_bound.status),
                    format!("{} violations", r.dot_bound.violations),
                ],
                vec![
                    "l2_bound".into(),
                    st(r.l2_bound.status),
                    format!("{} violations", r.l2_bound.violations),
                ],
                vec![
                    "hoeffding_dot".into(),
                    st(r.hoeffding_dot.status),
                    worst_margin(&r.hoeffding_dot),
                ],
                vec![
                    "hoeffding_l2".into(),
                    st(r.hoeffding_l2.status),
                    worst_margin(&r.hoeffding_l2),
                ],
                vec![
                    "lut_tail".into(),
                    st(r.lut_tail.status),
                    worst_margin(&r.lut_tail.aggregated),
                ],
            ];
            report::csv(&["check", "status", "detail"], &rows, g.out.as_deref())
        }
    }
}

fn worst_margin(r: &TailReport) -> String {
    let m = r
        .points
        .iter()
        .map(|p| p.margin)
        .fold(f64::INFINITY, f64::min);
    format!("min margin {m:.4}")
}

#[derive(Serialize)]
struct MatmulReport {
    rows: usize,
    inner: usize,
    cols: usize,
    bytes: usize,
    include_encoding: bool,
    fit_encode_secs: f64,
    query_secs: f64,
    elapsed_secs: f64,
    naive_secs: Option<f64>,
    correlation: Option<f64>,
}

fn matmul(
    g: &Global,
    size: Option<usize>,
    a: Option<&Path>,
    b: Option<&Path>,
    include_encoding: bool,
    compare: bool,
    product: Option<&Path>,
) -> Result<()> {
    let (a, b) = match (size, a, b) {
        (Some(n), None, None) => {
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            let mut m =
                || Array2::<f32>::from_shape_simple_fn((n, n), || StandardNormal.sample(&mut rng));
            (m(), m())
        }
        (None, Some(a), Some(b)) => (load(a)?, load(b)?),
        _ => bail!("give either --size or both --a and --b"),
    };
    let out = bolt::amm::approx_matmul(a.view(), b.view(), g.bytes, include_encoding, g.seed)?;
    let (mut naive_secs, mut corr) = (None, None);
    if compare {
        let start = Instant::now();
        let exact = bolt::amm::naive_matmul(a.view(), b.view())?;
        naive_secs = Some(start.elapsed().as_secs_f64());
        corr = Some(correlation(
            exact.as_slice().expect("standard layout"),
            out.product.as_slice().expect("standard layout"),
        )?);
    }
    if let Some(p) = product {
        let kind =
            VecsKind::from_path(p).context("product path needs a .fvecs or .csv extension")?;
        save_vecs(out.product.view(), p, kind)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    let r = MatmulReport {
        rows: a.nrows(),
        inner: a.ncols(),
        cols: b.ncols(),
        bytes: g.bytes,
        include_encoding,
        fit_encode_secs: out.timing.fit_encode.as_secs_f64(),
        query_secs: out.timing.query.as_secs_f64(),
        elapsed_secs: out.elapsed().as_secs_f64(),
        naive_secs,
        correlation: corr,
    };
    match g.report {
        ReportFormat::Json => report::json(&r, g.out.as_deref()),
        ReportFormat::Csv => {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let row = vec![
                r.rows.to_string(),
                r.inner.to_string(),
                r.cols.to_string(),
                r.bytes.to_string(),
                r.include_encoding.to_string(),
                r.fit_encode_secs.to_string(),
                r.query_secs.to_string(),
                r.elapsed_secs.to_string(),
                opt(r.naive_secs),
                opt(r.correlation),
            ];
            report::csv(
                &[
                    "rows",
                    "inner",
                    "cols",
                    "bytes",
                    "include_encoding",
                    "fit_encode_secs",
                    "query_secs",
                    "elapsed_secs",
                    "naive_secs",
                    "correlation",
                ],
                &[row],
                g.out.as_deref(),
            )
        }
    }
}
