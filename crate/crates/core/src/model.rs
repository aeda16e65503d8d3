//! Trained quantizer state and its binary file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};

use crate::error::{ensure_finite, BoltError, Result};
use crate::format::{write_f32s, LeReader};
use crate::kmeans::{self, kmeans_fit};
use crate::lut::LutQuantParams;
use crate::reduction::Reduction;
use crate::split::SubspaceSplit;

pub const MODEL_MAGIC: &[u8; 4] = b"BOLT";
pub const MODEL_VERSION: u8 = 1;

/// Code widths understood by the library: 4-bit codes for Bolt, 8-bit for PQ.
pub const BOLT_CODE_BITS: u8 = 4;
pub const PQ_CODE_BITS: u8 = 8;

/// `K` centroids of one subspace, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if centroids.len() != k * dim {
            return Err(BoltError::DimensionMismatch {
                expected: k * dim,
                got: centroids.len(),
            });
        }
        ensure_finite(&centroids, "codebook")?;
        Ok(Self { k, dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.centroids
    }

    /// Index of the nearest centroid by squared distance, lowest index on ties.
    #[inline]
    pub fn nearest(&self, sub: &[f32]) -> usize {
        kmeans::nearest(&self.centroids, self.dim, sub).0
    }
}

/// A fitted multi-codebook quantizer.
///
/// Immutable once built, so it can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerModel {
    split: SubspaceSplit,
    codebooks: Vec<Codebook>,
    reduction: Reduction,
    code_bits: u8,
    lut_quant: Option<LutQuantParams>,
}

/// Training settings for [`fit`].
#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub num_codebooks: usize,
    pub code_bits: u8,
    pub reduction: Reduction,
    pub iters: usize,
    pub seed: u64,
}

impl FitConfig {
    /// Bolt settings for an encoding of `bytes` bytes per vector.
    pub fn bolt(bytes: usize, reduction: Reduction) -> Self {
        Self {
            num_codebooks: bytes * 2,
            code_bits: BOLT_CODE_BITS,
            reduction,
            iters: kmeans::DEFAULT_ITERS,
            seed: 0,
        }
    }

    /// PQ settings (256 centroids, one byte per code).
    pub fn pq(bytes: usize, reduction: Reduction) -> Self {
        Self {
            num_codebooks: bytes,
            code_bits: PQ_CODE_BITS,
            reduction,
            iters: kmeans::DEFAULT_ITERS,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }
}

/// Trains one codebook per subspace with k-means. LUT quantization is left
/// uncalibrated; see [`crate::lut::calibrate`].
pub fn fit(training: ArrayView2<'_, f32>, cfg: &FitConfig) -> Result<QuantizerModel> {
    if cfg.code_bits != BOLT_CODE_BITS && cfg.code_bits != PQ_CODE_BITS {
        return Err(BoltError::invalid(format!(
            "code_bits must be 4 or 8, got {}",
            cfg.code_bits
        )));
    }
    if cfg.num_codebooks == 0 {
        return Err(BoltError::invalid("need at least one codebook"));
    }
    let (n, dim) = training.dim();
    if n == 0 || dim == 0 {
        return Err(BoltError::invalid("training data is empty"));
    }
    let k = 1usize << cfg.code_bits;
    if n < k {
        warn!("fit: {n} training vectors for K={k} centroids; some centroids will be duplicates");
    }

    let split = SubspaceSplit::new(dim, cfg.num_codebooks);
    let sub_len = split.subvector_len();
    let mut codebooks = Vec::with_capacity(cfg.num_codebooks);
    let mut sub = Array2::<f32>::zeros((n, sub_len));
    for m in 0..cfg.num_codebooks {
        for (row, mut out) in training.rows().into_iter().zip(sub.rows_mut()) {
            let row = row
                .as_slice()
                .map(std::borrow::Cow::Borrowed)
                .unwrap_or_else(|| row.to_vec().into());
            split.extract_into(&row, m, out.as_slice_mut().expect("contiguous"));
        }
        let seed = cfg.seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let fitted = kmeans_fit(sub.view(), k, cfg.iters, seed)?;
        debug!(
            "codebook {m}: inertia {:.4} after {} steps",
            fitted.final_inertia(),
            fitted.inertia.len()
        );
        codebooks.push(fitted.codebook);
    }

    QuantizerModel::from_parts(split, codebooks, cfg.reduction, cfg.code_bits)
}

impl QuantizerModel {
    pub fn from_parts(
        split: SubspaceSplit,
        codebooks: Vec<Codebook>,
        reduction: Reduction,
        code_bits: u8,
    ) -> Result<Self> {
        if code_bits != BOLT_CODE_BITS && code_bits != PQ_CODE_BITS {
            return Err(BoltError::invalid(format!(
                "code_bits must be 4 or 8, got {code_bits}"
            )));
        }
        if codebooks.len() != split.num_codebooks() {
            return Err(BoltError::DimensionMismatch {
                expected: split.num_codebooks(),
                got: codebooks.len(),
            });
        }
        let k = 1usize << code_bits;
        for cb in &codebooks {
            if cb.k() != k || cb.dim() != split.subvector_len() {
                return Err(BoltError::invalid(format!(
                    "codebook shape {}x{} does not match {}x{}",
                    cb.k(),
                    cb.dim(),
                    k,
                    split.subvector_len()
                )));
            }
        }
        Ok(Self {
            split,
            codebooks,
            reduction,
            code_bits,
            lut_quant: None,
        })
    }

    pub fn split(&self) -> &SubspaceSplit {
        &self.split
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn codebook(&self, m: usize) -> &Codebook {
        &self.codebooks[m]
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn code_bits(&self) -> u8 {
        self.code_bits
    }

    pub fn k(&self) -> usize {
        1 << self.code_bits
    }

    pub fn num_codebooks(&self) -> usize {
        self.split.num_codebooks()
    }

    pub fn input_dim(&self) -> usize {
        self.split.input_dim()
    }

    pub fn lut_quant(&self) -> Option<&LutQuantParams> {
        self.lut_quant.as_ref()
    }

    pub fn set_lut_quant(&mut self, params: LutQuantParams) -> Result<()> {
        if params.num_tables() != self.num_codebooks() {
            return Err(BoltError::DimensionMismatch {
                expected: self.num_codebooks(),
                got: params.num_tables(),
            });
        }
        self.lut_quant = Some(params);
        Ok(())
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        if reduction != self.reduction {
            self.lut_quant = None;
        }
        self.reduction = reduction;
        self
    }

    /// Reconstruction of a code row: each subvector replaced by its centroid,
    /// padding dropped.
    pub fn reconstruct(&self, codes: &[u8]) -> Result<Vec<f32>> {
        if codes.len() != self.num_codebooks() {
            return Err(BoltError::DimensionMismatch {
                expected: self.num_codebooks(),
                got: codes.len(),
            });
        }
        let mut out = Vec::with_capacity(self.split.padded_dim());
        for (cb, &c) in self.codebooks.iter().zip(codes) {
            if c as usize >= cb.k() {
                return Err(BoltError::invalid(format!(
                    "code {c} out of range for K={}",
                    cb.k()
                )));
            }
            out.extend_from_slice(cb.centroid(c as usize));
        }
        out.truncate(self.input_dim());
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&[MODEL_VERSION, self.code_bits])?;
        w.write_all(&(self.num_codebooks() as u32).to_le_bytes())?;
        w.write_all(&(self.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.k() as u32).to_le_bytes())?;
        w.write_all(&[self.reduction.to_byte()])?;
        for cb in &self.codebooks {
            write_f32s(&mut w, cb.as_slice())?;
        }
        match &self.lut_quant {
            Some(p) => {
                write_f32s(&mut w, &[p.scale()])?;
                write_f32s(&mut w, p.offsets())?;
                write_f32s(&mut w, &[p.alpha()])?;
                w.write_all(&[1])?;
            }
            None => {
                write_f32s(&mut w, &vec![0.0; self.num_codebooks() + 2])?;
                w.write_all(&[0])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r);
        r.magic(MODEL_MAGIC)?;
        let version = r.u8("version")?;
        if version != MODEL_VERSION {
            return Err(BoltError::format(
                4,
                format!("unsupported model version {version}"),
            ));
        }
        let at = r.offset();
        let code_bits = r.u8("code_bits")?;
        if code_bits != BOLT_CODE_BITS && code_bits != PQ_CODE_BITS {
            return Err(BoltError::format(
                at,
                format!("invalid code_bits {code_bits}"),
            ));
        }
        let m = r.u32("M")? as usize;
        let j = r.u32("J")? as usize;
        let at = r.offset();
        let k = r.u32("K")? as usize;
        if k != 1 << code_bits {
            return Err(BoltError::format(
                at,
                format!("K={k} inconsistent with {code_bits}-bit codes"),
            ));
        }
        if m == 0 || j == 0 {
            return Err(BoltError::format(at, "M and J must be positive"));
        }
        let at = r.offset();
        let reduction = Reduction::from_byte(r.u8("reduction")?)
            .ok_or_else(|| BoltError::format(at, "unknown reduction kind"))?;
        let split = SubspaceSplit::new(j, m);
        let sub_len = split.subvector_len();
        let mut codebooks = Vec::with_capacity(m);
        for _ in 0..m {
            let at = r.offset();
            let cents = r.f32s(k * sub_len, "centroids")?;
            codebooks.push(
                Codebook::new(k, sub_len, cents)
                    .map_err(|e| BoltError::format(at, e.to_string()))?,
            );
        }
        let scale = r.f32("lut scale")?;
        let offsets = r.f32s(m, "lut offsets")?;
        let alpha = r.f32("lut alpha")?;
        let at = r.offset();
        let present = r.u8("lut flag")?;
        r.expect_end()?;

        let mut model = Self::from_parts(split, codebooks, reduction, code_bits)?;
        match present {
            0 => {}
            1 => {
                let params = LutQuantParams::new(scale, offsets, alpha)
                    .map_err(|e| BoltError::format(at, e.to_string()))?;
                model.lut_quant = Some(params);
            }
            other => {
                return Err(BoltError::format(
                    at,
                    format!("invalid presence flag {other}"),
                ))
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
