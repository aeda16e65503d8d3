//! Train / database / query splits, synthetic data and exact ground truth.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use log::info;
use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BoltError, Result};
use crate::io::{read_ivecs, write_ivecs};
use crate::kmeans::sq_dist;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Array2<f32>,
    pub database: Array2<f32>,
    pub queries: Array2<f32>,
    /// Index of the true Euclidean nearest neighbor of each query.
    pub ground_truth_nn: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(train: Array2<f32>, database: Array2<f32>, queries: Array2<f32>) -> Result<Self> {
        let dim = database.ncols();
        for (name, m) in [("train", &train), ("queries", &queries)] {
            if m.ncols() != dim && m.nrows() > 0 {
                return Err(BoltError::invalid(format!(
                    "{name} has dimension {}, database has {dim}",
                    m.ncols()
                )));
            }
        }
        Ok(Self {
            train,
            database,
            queries,
            ground_truth_nn: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.database.ncols()
    }

    pub fn with_ground_truth(mut self, gt: Vec<usize>) -> Result<Self> {
        if gt.len() != self.queries.nrows() {
            return Err(BoltError::DimensionMismatch {
                expected: self.queries.nrows(),
                got: gt.len(),
            });
        }
        if let Some(&bad) = gt.iter().find(|&&i| i >= self.database.nrows()) {
            return Err(BoltError::invalid(format!(
                "ground-truth index {bad} out of range"
            )));
        }
        self.ground_truth_nn = Some(gt);
        Ok(self)
    }

    /// Computes exact nearest neighbors if they are not already present.
    pub fn ensure_ground_truth(&mut self) -> &[usize] {
        if self.ground_truth_nn.is_none() {
            self.ground_truth_nn = Some(exact_nearest(self.database.view(), self.queries.view()));
        }
        self.ground_truth_nn.as_deref().unwrap()
    }

    /// Like [`Self::ensure_ground_truth`], but reuses a sidecar file in
    /// `cache_dir` keyed by a hash of the database and queries.
    pub fn ensure_ground_truth_cached(&mut self, cache_dir: &Path) -> Result<&[usize]> {
        if self.ground_truth_nn.is_none() {
            let path = ground_truth_path(cache_dir, self.database.view(), self.queries.view());
            let gt = if path.exists() {
                let rows = read_ivecs(BufReader::new(File::open(&path)?))?;
                rows.into_iter().map(|r| r[0] as usize).collect()
            } else {
                let gt = exact_nearest(self.database.view(), self.queries.view());
                fs::create_dir_all(cache_dir)?;
                let rows: Vec<Vec<i32>> = gt.iter().map(|&i| vec![i as i32]).collect();
                write_ivecs(&rows, BufWriter::new(File::create(&path)?))?;
                info!("cached ground truth at {}", path.display());
                gt
            };
            let gt_len = gt.len();
            if gt_len != self.queries.nrows() {
                return Err(BoltError::DimensionMismatch {
                    expected: self.queries.nrows(),
                    got: gt_len,
                });
            }
            self.ground_truth_nn = Some(gt);
        }
        Ok(self.ground_truth_nn.as_deref().unwrap())
    }
}

/// Hex SHA-256 over the shapes and raw bytes of the database and queries.
pub fn dataset_hash(database: ArrayView2<'_, f32>, queries: ArrayView2<'_, f32>) -> String {
    let mut h = Sha256::new();
    for m in [database, queries] {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn ground_truth_path(
    cache_dir: &Path,
    database: ArrayView2<'_, f32>,
    queries: ArrayView2<'_, f32>,
) -> PathBuf {
    let hash = dataset_hash(database, queries);
    cache_dir.join(format!("gt-{}.ivecs", &hash[..16]))
}

/// Brute-force Euclidean nearest neighbor of every query; ties go to the
/// lower index.
pub fn exact_nearest(database: ArrayView2<'_, f32>, queries: ArrayView2<'_, f32>) -> Vec<usize> {
    let db = database.as_standard_layout();
    let db = db.as_slice().expect("standard layout");
    let dim = database.ncols().max(1);
    queries
        .rows()
        .into_iter()
        .map(|q| {
            let q = q.to_vec();
            let mut best = (0usize, f32::INFINITY);
            for (i, x) in db.chunks_exact(dim).enumerate() {
                let d = sq_dist(&q, x);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Independent standard normal components.
    Iid,
    /// Blocks of adjacent dimensions sharing a latent factor.
    CorrelatedBlocks,
}

impl std::str::FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid" => Ok(Structure::Iid),
            "correlated_blocks" | "correlated" => Ok(Structure::CorrelatedBlocks),
            other => Err(format!("unknown structure '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_database: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub structure: Structure,
    pub seed: u64,
    /// Width of each correlated block.
    pub block: usize,
    /// Correlation between two dimensions of the same block.
    pub within_block_corr: f32,
}

impl SyntheticSpec {
    pub fn new(n: usize, dim: usize, structure: Structure, seed: u64) -> Self {
        Self {
            n_train: n,
            n_database: n,
            n_queries: (n / 20).clamp(1, 1000),
            dim,
            structure,
            seed,
            block: 8,
            within_block_corr: 0.75,
        }
    }

    pub fn with_queries(mut self, n_queries: usize) -> Self {
        self.n_queries = n_queries;
        self
    }
}

/// Gaussian train / database / query matrices, deterministic in the seed.
pub fn make_synthetic(n: usize, dim: usize, structure: Structure, seed: u64) -> Dataset {
    make_synthetic_with(&SyntheticSpec::new(n, dim, structure, seed))
}

pub fn make_synthetic_with(spec: &SyntheticSpec) -> Dataset {
    let total = spec.n_train + spec.n_database + spec.n_queries;
    let all = sample_rows(total, spec);
    let train = all.slice(s![..spec.n_train, ..]).to_owned();
    let database = all
        .slice(s![spec.n_train..spec.n_train + spec.n_database, ..])
        .to_owned();
    let queries = all
        .slice(s![spec.n_train + spec.n_database.., ..])
        .to_owned();
    Dataset {
        train,
        database,
        queries,
        ground_truth_nn: None,
    }
}

fn sample_rows(n: usize, spec: &SyntheticSpec) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    match spec.structure {
        Structure::Iid => {
            Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut rng))
        }
        Structure::CorrelatedBlocks => {
            // x_j = w * s_block + sqrt(1 - w^2) * z_j gives corr w^2 inside a block.
            let block = spec.block.max(1);
            let shared = spec.within_block_corr.clamp(0.0, 1.0).sqrt();
            let own = (1.0 - shared * shared).sqrt();
            let n_blocks = dim.div_ceil(block);
            let mut out = Array2::<f32>::zeros((n, dim));
            let mut latent = vec![0f32; n_blocks];
            for mut row in out.rows_mut() {
                for l in latent.iter_mut() {
                    *l = StandardNormal.sample(&mut rng);
                }
                for (j, v) in row.iter_mut().enumerate() {
                    let z: f32 = StandardNormal.sample(&mut rng);
                    *v = shared * latent[j / block] + own * z;
                }
            }
            out
        }
    }
}
