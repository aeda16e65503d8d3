//! Encoded databases ready to answer queries: Bolt and the PQ baseline.

use ndarray::{s, ArrayView2};

use crate::encode::FlatCodes;
use crate::encode::{encode_batch, pack, PackedCodes};
use crate::error::{BoltError, Result};
use crate::lut::{build_exact_lut, calibrate, quantize_lut, LutQuantParams, QuantizedLut};
use crate::model::{fit, FitConfig, QuantizerModel};
use crate::pq::{pq_encode, pq_scan};
use crate::scan::{scan_vectorized, top_indices, topk, Neighbor, ScanResult};

/// Default share of the training rows held out as calibration queries.
pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.1;

/// Fits on the leading rows of `train` and calibrates LUT quantization on
/// the trailing `calibration_fraction` of them.
///
/// With too few rows for a held-out slice, every row serves both purposes.
pub fn fit_calibrated(
    train: ArrayView2<'_, f32>,
    cfg: &FitConfig,
    calibration_fraction: f64,
) -> Result<QuantizerModel> {
    if !(0.0..1.0).contains(&calibration_fraction) {
        return Err(BoltError::invalid(format!(
            "calibration fraction must lie in [0, 1), got {calibration_fraction}"
        )));
    }
    let n = train.nrows();
    let k = 1usize << cfg.code_bits;
    let held = ((n as f64 * calibration_fraction).ceil() as usize).min(n);
    let (fit_rows, calib_rows) = if held == 0 || n - held < k {
        (train, train)
    } else {
        (
            train.slice(s![..n - held, ..]),
            train.slice(s![n - held.., ..]),
        )
    };
    let mut model = fit(fit_rows, cfg)?;
    if cfg.code_bits == crate::model::BOLT_CODE_BITS {
        let params = calibrate(&model, calib_rows)?;
        model.set_lut_quant(params)?;
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct BoltIndex {
    model: QuantizerModel,
    packed: PackedCodes,
}

impl BoltIndex {
    /// Encodes `database` with a calibrated 4-bit model.
    pub fn build(model: QuantizerModel, database: ArrayView2<'_, f32>) -> Result<Self> {
        let packed = pack(&encode_batch(database, &model)?)?;
        Self::from_parts(model, packed)
    }

    pub fn from_parts(model: QuantizerModel, packed: PackedCodes) -> Result<Self> {
        if model.lut_quant().is_none() {
            return Err(BoltError::invalid(
                "model has no LUT quantization parameters",
            ));
        }
        if model.code_bits() != crate::model::BOLT_CODE_BITS {
            return Err(BoltError::invalid("Bolt index needs a 4-bit model"));
        }
        if packed.num_codebooks() != model.num_codebooks() {
            return Err(BoltError::DimensionMismatch {
                expected: model.num_codebooks(),
                got: packed.num_codebooks(),
            });
        }
        Ok(Self { model, packed })
    }

    pub fn model(&self) -> &QuantizerModel {
        &self.model
    }

    pub fn packed(&self) -> &PackedCodes {
        &self.packed
    }

    pub fn len(&self) -> usize {
        self.packed.num_vectors()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn params(&self) -> &LutQuantParams {
        self.model.lut_quant().expect("checked at construction")
    }

    pub fn encode_query(&self, q: &[f32]) -> Result<QuantizedLut> {
        quantize_lut(&build_exact_lut(q, &self.model)?, self.params())
    }

    pub fn scan(&self, q: &[f32]) -> Result<ScanResult> {
        scan_vectorized(&self.packed, &self.encode_query(q)?)
    }

    /// Reconstructed reduction estimate for every database vector.
    pub fn estimates(&self, q: &[f32]) -> Result<Vec<f32>> {
        Ok(self
            .scan(q)?
            .reconstructed(self.params(), self.model.reduction()))
    }

    pub fn search(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        topk(&self.scan(q)?, k, self.params(), self.model.reduction())
    }

    /// Best `r` database indices, best first.
    pub fn ranking(&self, q: &[f32], r: usize) -> Result<Vec<usize>> {
        let scan = self.scan(q)?;
        top_indices(
            scan.raw(),
            r.min(scan.len()),
            self.model.reduction().smaller_is_better(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct PqIndex {
    model: QuantizerModel,
    codes: FlatCodes,
}

impl PqIndex {
    pub fn build(model: QuantizerModel, database: ArrayView2<'_, f32>) -> Result<Self> {
        let codes = pq_encode(database, &model)?;
        Ok(Self { model, codes })
    }

    pub fn from_parts(model: QuantizerModel, codes: FlatCodes) -> Result<Self> {
        if codes.num_codebooks() != model.num_codebooks() {
            return Err(BoltError::DimensionMismatch {
                expected: model.num_codebooks(),
                got: codes.num_codebooks(),
            });
        }
        Ok(Self { model, codes })
    }

    pub fn model(&self) -> &QuantizerModel {
        &self.model
    }

    pub fn codes(&self) -> &FlatCodes {
        &self.codes
    }

    pub fn estimates(&self, q: &[f32]) -> Result<Vec<f32>> {
        pq_scan(
            &self.codes,
            &build_exact_lut(q, &self.model)?,
            self.model.reduction(),
        )
    }

    pub fn search(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        let est = self.estimates(q)?;
        Ok(
            top_indices(&est, k, self.model.reduction().smaller_is_better())?
                .into_iter()
                .map(|index| Neighbor {
                    index,
                    estimate: est[index],
                })
                .collect(),
        )
    }

    pub fn ranking(&self, q: &[f32], r: usize) -> Result<Vec<usize>> {
        let est = self.estimates(q)?;
        top_indices(
            &est,
            r.min(est.len()),
            self.model.reduction().smaller_is_better(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, Structure};
    use crate::reduction::Reduction;

    #[test]
    fn held_out_calibration_and_search() {
        let d = make_synthetic(2000, 32, Structure::CorrelatedBlocks, 3);
        let model = fit_calibrated(
            d.train.view(),
            &FitConfig::bolt(8, Reduction::SquaredEuclidean),
            0.1,
        )
        .unwrap();
        assert!(model.lut_quant().is_some());
        let index = BoltIndex::build(model, d.database.view()).unwrap();
        let q = d.queries.row(0).to_vec();
        let hits = index.search(&q, 10).unwrap();
        assert_eq!(hits.len(), 10);
        assert!(hits.windows(2).all(|w| w[0].estimate <= w[1].estimate));
        assert_eq!(
            index.ranking(&q, 10).unwrap(),
            hits.iter().map(|h| h.index).collect::<Vec<_>>()
        );
        assert_eq!(index.ranking(&q, 5000).unwrap().len(), 2000);
    }

    #[test]
    fn rejects_bad_fraction_and_uncalibrated_model() {
        let d = make_synthetic(200, 8, Structure::Iid, 1);
        let cfg = FitConfig::bolt(2, Reduction::DotProduct);
        assert!(fit_calibrated(d.train.view(), &cfg, 1.0).is_err());
        let raw = fit(d.train.view(), &cfg).unwrap();
        assert!(BoltIndex::build(raw, d.database.view()).is_err());
    }

    #[test]
    fn pq_index_ranks_by_estimate() {
        let d = make_synthetic(1000, 16, Structure::Iid, 2);
        let model = fit_calibrated(
            d.train.view(),
            &FitConfig::pq(4, Reduction::DotProduct).with_iters(4),
            0.1,
        )
        .unwrap();
        let index = PqIndex::build(model, d.database.view()).unwrap();
        let q = d.queries.row(1).to_vec();
        let hits = index.search(&q, 5).unwrap();
        assert!(hits.windows(2).all(|w| w[0].estimate >= w[1].estimate));
    }
}
