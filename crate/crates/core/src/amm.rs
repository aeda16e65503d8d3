//! Approximate matrix products: rows of `A` are queries against the encoded
//! columns of `B` under the dot product.

use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::encode::{encode_batch, pack, PackedCodes};
use crate::error::{BoltError, Result};
use crate::lut::{build_exact_lut, calibrate, quantize_lut};
use crate::model::{fit, FitConfig, QuantizerModel};
use crate::reduction::Reduction;
use crate::scan::scan_vectorized;

/// Encoding sizes accepted by [`approx_matmul`].
pub const AMM_BYTES: [usize; 3] = [8, 16, 32];

/// Most rows of `A` used to calibrate LUT quantization.
pub const MAX_CALIBRATION_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AmmTiming {
    /// Fitting, calibrating and encoding `B`.
    pub fit_encode: Duration,
    /// Building, quantizing and scanning one table per row of `A`.
    pub query: Duration,
}

#[derive(Debug, Clone)]
pub struct AmmOutput {
    pub product: Array2<f32>,
    pub timing: AmmTiming,
    pub include_encoding: bool,
}

impl AmmOutput {
    /// Wall time charged to the product: query only unless encoding counts.
    pub fn elapsed(&self) -> Duration {
        if self.include_encoding {
            self.timing.fit_encode + self.timing.query
        } else {
            self.timing.query
        }
    }
}

/// `B` encoded column-wise, with quantization parameters calibrated.
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    pub model: QuantizerModel,
    pub packed: PackedCodes,
}

impl EncodedMatrix {
    pub fn inner_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn cols(&self) -> usize {
        self.packed.num_vectors()
    }
}

fn check_bytes(bytes: usize) -> Result<()> {
    if AMM_BYTES.contains(&bytes) {
        Ok(())
    } else {
        Err(BoltError::invalid(format!(
            "bytes per code must be 8, 16 or 32, got {bytes}"
        )))
    }
}

/// Evenly strided rows of `a`, at most [`MAX_CALIBRATION_ROWS`].
pub fn calibration_rows(a: ArrayView2<'_, f32>) -> Array2<f32> {
    let r = a.nrows();
    let take = r.min(MAX_CALIBRATION_ROWS);
    let idx: Vec<usize> = (0..take).map(|i| i * r / take.max(1)).collect();
    a.select(Axis(0), &idx)
}

/// Fits a dot-product model on the columns of `b` and encodes them.
pub fn encode_matrix(
    b: ArrayView2<'_, f32>,
    bytes: usize,
    calibration: ArrayView2<'_, f32>,
    seed: u64,
) -> Result<EncodedMatrix> {
    check_bytes(bytes)?;
    let (d, c) = b.dim();
    let cfg = FitConfig::bolt(bytes, Reduction::DotProduct).with_seed(seed);
    if d < cfg.num_codebooks {
        return Err(BoltError::invalid(format!(
            "inner dimension {d} is smaller than the {} codebooks of a {bytes}B encoding",
            cfg.num_codebooks
        )));
    }
    if c == 0 {
        return Err(BoltError::invalid("B has no columns"));
    }
    if calibration.ncols() != d {
        return Err(BoltError::DimensionMismatch {
            expected: d,
            got: calibration.ncols(),
        });
    }
    let columns = b.t().as_standard_layout().into_owned();
    let mut model = fit(columns.view(), &cfg)?;
    model.set_lut_quant(calibrate(&model, calibration)?)?;
    let packed = pack(&encode_batch(columns.view(), &model)?)?;
    Ok(EncodedMatrix { model, packed })
}

/// Estimates `a * B` for an already encoded `B`.
pub fn multiply_encoded(a: ArrayView2<'_, f32>, encoded: &EncodedMatrix) -> Result<Array2<f32>> {
    if a.ncols() != encoded.inner_dim() {
        return Err(BoltError::DimensionMismatch {
            expected: encoded.inner_dim(),
            got: a.ncols(),
        });
    }
    let params = encoded.model.lut_quant().expect("encode_matrix calibrates");
    let mut out = Array2::<f32>::zeros((a.nrows(), encoded.cols()));
    let mut row_buf = vec![0f32; a.ncols()];
    for (row, mut dst) in a.rows().into_iter().zip(out.rows_mut()) {
        for (d, &v) in row_buf.iter_mut().zip(row.iter()) {
            *d = v;
        }
        let lut = quantize_lut(&build_exact_lut(&row_buf, &encoded.model)?, params)?;
        let scan = scan_vectorized(&encoded.packed, &lut)?;
        for (d, &acc) in dst.iter_mut().zip(scan.raw()) {
            *d = params.reconstruct(acc as u32);
        }
    }
    Ok(out)
}

/// Estimates `A * B` (R x D times D x C), training on `B`'s columns and
/// calibrating on a subsample of `A`'s rows.
pub fn approx_matmul(
    a: ArrayView2<'_, f32>,
    b: ArrayView2<'_, f32>,
    bytes: usize,
    include_encoding: bool,
    seed: u64,
) -> Result<AmmOutput> {
    if a.ncols() != b.nrows() {
        return Err(BoltError::DimensionMismatch {
            expected: b.nrows(),
            got: a.ncols(),
        });
    }
    let start = Instant::now();
    let calib = calibration_rows(a);
    let encoded = encode_matrix(b, bytes, calib.view(), seed)?;
    let fit_encode = start.elapsed();
    let start = Instant::now();
    let product = multiply_encoded(a, &encoded)?;
    let query = start.elapsed();
    Ok(AmmOutput {
        product,
        timing: AmmTiming { fit_encode, query },
        include_encoding,
    })
}

/// Textbook i-j-k triple loop.
pub fn naive_matmul(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    let (r, d) = a.dim();
    if d != b.nrows() {
        return Err(BoltError::DimensionMismatch {
            expected: b.nrows(),
            got: d,
        });
    }
    let c = b.ncols();
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut out = vec![0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut sum = 0f32;
            for k in 0..d {
                sum += a[i * d + k] * b[k * c + j];
            }
            out[i * c + j] = sum;
        }
    }
    Ok(Array2::from_shape_vec((r, c), out).expect("shape"))
}
