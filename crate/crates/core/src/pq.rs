//! Classical product quantization with 256-centroid codebooks and float
//! lookup tables. Used as a baseline and as an oracle for Bolt.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayView2;

use crate::encode::{encode_batch, FlatCodes};
use crate::error::{BoltError, Result};
use crate::format::LeReader;
use crate::lut::ExactLut;
use crate::model::{QuantizerModel, PQ_CODE_BITS};
use crate::reduction::Reduction;

pub const PQ_CODES_MAGIC: &[u8; 4] = b"PQCD";
pub const PQ_CODES_VERSION: u8 = 1;

/// One byte per code, row-major.
pub fn pq_encode(x: ArrayView2<'_, f32>, model: &QuantizerModel) -> Result<FlatCodes> {
    if model.code_bits() != PQ_CODE_BITS {
        return Err(BoltError::invalid(format!(
            "PQ encoding needs an 8-bit model, got {}-bit",
            model.code_bits()
        )));
    }
    encode_batch(x, model)
}

/// `f(sum_m lut[code(n, m), m])` with float accumulation.
pub fn pq_scan(codes: &FlatCodes, lut: &ExactLut, reduction: Reduction) -> Result<Vec<f32>> {
    if codes.num_codebooks() != lut.num_tables() {
        return Err(BoltError::DimensionMismatch {
            expected: lut.num_tables(),
            got: codes.num_codebooks(),
        });
    }
    let k = lut.k();
    if codes.as_slice().iter().any(|&c| c as usize >= k) {
        return Err(BoltError::invalid(format!("code out of range for K={k}")));
    }
    let tables = lut.as_slice();
    Ok(codes
        .rows()
        .map(|row| {
            let mut sum = 0f32;
            for (m, &c) in row.iter().enumerate() {
                sum += tables[m * k + c as usize];
            }
            reduction.finalize(sum)
        })
        .collect())
}

pub fn write_pq_codes<W: Write>(codes: &FlatCodes, mut w: W) -> Result<()> {
    w.write_all(PQ_CODES_MAGIC)?;
    w.write_all(&[PQ_CODES_VERSION])?;
    w.write_all(&(codes.num_vectors() as u64).to_le_bytes())?;
    w.write_all(&(codes.num_codebooks() as u32).to_le_bytes())?;
    w.write_all(codes.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_pq_codes<R: Read>(r: R) -> Result<FlatCodes> {
    let mut r = LeReader::new(r);
    r.magic(PQ_CODES_MAGIC)?;
    let version = r.u8("version")?;
    if version != PQ_CODES_VERSION {
        return Err(BoltError::format(
            4,
            format!("unsupported PQ codes version {version}"),
        ));
    }
    let n = r.u64("N")? as usize;
    let m = r.u32("M")? as usize;
    let mut data = vec![0u8; n * m];
    r.exact(&mut data, "codes")?;
    r.expect_end()?;
    FlatCodes::new(n, m, data)
}

pub fn save_pq_codes(codes: &FlatCodes, path: impl AsRef<Path>) -> Result<()> {
    write_pq_codes(codes, BufWriter::new(File::create(path)?))
}

pub fn load_pq_codes(path: impl AsRef<Path>) -> Result<FlatCodes> {
    read_pq_codes(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::sq_dist;
    use crate::lut::build_exact_lut;
    use crate::model::{fit, FitConfig};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    fn pq_model(dim: usize, bytes: usize, reduction: Reduction) -> QuantizerModel {
        let x = gaussian(1500, dim, 4);
        fit(x.view(), &FitConfig::pq(bytes, reduction).with_iters(4)).unwrap()
    }

    #[test]
    fn centroid_200_everywhere() {
        let model = pq_model(16, 4, Reduction::SquaredEuclidean);
        let x: Vec<f32> = model
            .codebooks()
            .iter()
            .flat_map(|c| c.centroid(200).to_vec())
            .collect();
        let x = Array2::from_shape_vec((1, 16), x).unwrap();
        assert_eq!(pq_encode(x.view(), &model).unwrap().row(0), &[200; 4]);
    }

    #[test]
    fn encode_is_brute_force_argmin() {
        let model = pq_model(8, 2, Reduction::SquaredEuclidean);
        let x = gaussian(30, 8, 9);
        let codes = pq_encode(x.view(), &model).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            for m in 0..2 {
                let sub = &row.as_slice().unwrap()[m * 4..(m + 1) * 4];
                let d: Vec<f32> = (0..256)
                    .map(|c| sq_dist(model.codebook(m).centroid(c), sub))
                    .collect();
                let best = d.iter().cloned().fold(f32::INFINITY, f32::min);
                assert_eq!(
                    codes.row(i)[m] as usize,
                    d.iter().position(|&v| v == best).unwrap()
                );
            }
        }
    }

    #[test]
    fn sift_sized_pq_code_is_eight_bytes() {
        let model = pq_model(128, 8, Reduction::SquaredEuclidean);
        let codes = pq_encode(gaussian(3, 128, 1).view(), &model).unwrap();
        assert_eq!(codes.num_codebooks(), 8);
        assert_eq!(codes.as_slice().len(), 24);
    }

    #[test]
    fn rejects_bolt_model() {
        let x = gaussian(100, 8, 1);
        let model = fit(
            x.view(),
            &FitConfig::bolt(2, Reduction::DotProduct).with_iters(1),
        )
        .unwrap();
        assert!(pq_encode(x.view(), &model).is_err());
    }

    #[test]
    fn scan_small_cases() {
        let codes = FlatCodes::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let zero = ExactLut::from_tables(256, 2, vec![0.0; 512]).unwrap();
        assert_eq!(
            pq_scan(&codes, &zero, Reduction::SquaredEuclidean).unwrap(),
            vec![0.0; 3]
        );

        let mut t = vec![0.0f32; 512];
        t[7] = 1.25;
        t[256 + 9] = -0.5;
        let lut = ExactLut::from_tables(256, 2, t).unwrap();
        let one = FlatCodes::new(1, 2, vec![7, 9]).unwrap();
        assert_eq!(
            pq_scan(&one, &lut, Reduction::DotProduct).unwrap(),
            vec![0.75]
        );

        let bad = ExactLut::from_tables(256, 3, vec![0.0; 768]).unwrap();
        assert!(pq_scan(&one, &bad, Reduction::DotProduct).is_err());
    }

    #[test]
    fn scan_matches_dense_reduction_against_reconstruction() {
        for reduction in [Reduction::SquaredEuclidean, Reduction::DotProduct] {
            let model = pq_model(12, 3, reduction);
            let db = gaussian(200, 12, 2);
            let codes = pq_encode(db.view(), &model).unwrap();
            for q in gaussian(5, 12, 3).rows() {
                let q = q.to_vec();
                let est =
                    pq_scan(&codes, &build_exact_lut(&q, &model).unwrap(), reduction).unwrap();
                for (n, row) in codes.rows().enumerate() {
                    let xhat = model.reconstruct(row).unwrap();
                    let want = reduction.reduce(&q, &xhat);
                    assert!(
                        (est[n] - want).abs() <= 1e-4 * want.abs().max(1.0),
                        "{} vs {want}",
                        est[n]
                    );
                }
            }
        }
    }

    #[test]
    fn codes_file_roundtrip() {
        let codes = FlatCodes::new(5, 3, (0..15).map(|i| (i * 17) as u8).collect()).unwrap();
        let mut bytes = Vec::new();
        write_pq_codes(&codes, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"PQCD");
        assert_eq!(read_pq_codes(&bytes[..]).unwrap(), codes);
        assert!(read_pq_codes(&bytes[..bytes.len() - 2]).is_err());
    }
}
