//! Database-side encoding and the block-interleaved 4-bit code layout.
//!
//! Layout of [`PackedCodes`]: rows are grouped into blocks of 32. Within a
//! block, byte-column `c` (for `c` in `0..ceil(M/2)`) is a run of 32 bytes,
//! one per row; the low nibble holds the code of codebook `2c` and the high
//! nibble the code of codebook `2c + 1`. With odd `M` the final high nibble
//! is always zero. Rows past `N` in the last block are zero padding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{ensure_finite, BoltError, Result};
use crate::format::LeReader;
use crate::model::QuantizerModel;

pub const BLOCK_ROWS: usize = 32;
pub const CODES_MAGIC: &[u8; 4] = b"BCOD";
pub const CODES_VERSION: u8 = 1;

/// Unpacked codes: `N` rows of `M` centroid indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatCodes {
    num_vectors: usize,
    num_codebooks: usize,
    codes: Vec<u8>,
}

impl FlatCodes {
    pub fn new(num_vectors: usize, num_codebooks: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != num_vectors * num_codebooks {
            return Err(BoltError::DimensionMismatch {
                expected: num_vectors * num_codebooks,
                got: codes.len(),
            });
        }
        Ok(Self {
            num_vectors,
            num_codebooks,
            codes,
        })
    }

    pub fn empty(num_codebooks: usize) -> Self {
        Self {
            num_vectors: 0,
            num_codebooks,
            codes: Vec::new(),
        }
    }

    pub fn num_vectors(&self) -> usize {
        self.num_vectors
    }

    pub fn num_codebooks(&self) -> usize {
        self.num_codebooks
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.num_codebooks..(i + 1) * self.num_codebooks]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.codes
            .chunks_exact(self.num_codebooks.max(1))
            .take(self.num_vectors)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.codes
    }
}

/// Scan-ready packed 4-bit codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    num_vectors: usize,
    num_codebooks: usize,
    data: Vec<u8>,
}

/// Byte length of the packed buffer for `n` rows and `m` codebooks.
pub fn packed_len(n: usize, m: usize) -> usize {
    n.div_ceil(BLOCK_ROWS) * BLOCK_ROWS * m.div_ceil(2)
}

impl PackedCodes {
    pub fn from_raw(num_vectors: usize, num_codebooks: usize, data: Vec<u8>) -> Result<Self> {
        if num_codebooks == 0 {
            return Err(BoltError::invalid(
                "packed codes need at least one codebook",
            ));
        }
        let want = packed_len(num_vectors, num_codebooks);
        if data.len() != want {
            return Err(BoltError::invalid(format!(
                "packed buffer has {} bytes, expected {want} for N={num_vectors}, M={num_codebooks}",
                data.len()
            )));
        }
        Ok(Self {
            num_vectors,
            num_codebooks,
            data,
        })
    }

    pub fn num_vectors(&self) -> usize {
        self.num_vectors
    }

    pub fn num_codebooks(&self) -> usize {
        self.num_codebooks
    }

    /// Number of byte-columns per block, `ceil(M / 2)`.
    pub fn byte_columns(&self) -> usize {
        self.num_codebooks.div_ceil(2)
    }

    pub fn num_blocks(&self) -> usize {
        self.num_vectors.div_ceil(BLOCK_ROWS)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Bytes of block `t`: `byte_columns()` runs of 32 bytes.
    pub fn block(&self, t: usize) -> &[u8] {
        let len = BLOCK_ROWS * self.byte_columns();
        &self.data[t * len..(t + 1) * len]
    }

    /// Code of row `n` for codebook `m`.
    pub fn code(&self, n: usize, m: usize) -> u8 {
        let (t, r) = (n / BLOCK_ROWS, n % BLOCK_ROWS);
        let byte = self.block(t)[(m / 2) * BLOCK_ROWS + r];
        if m.is_multiple_of(2) {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_all(&[CODES_VERSION])?;
        w.write_all(&(self.num_vectors as u64).to_le_bytes())?;
        w.write_all(&(self.num_codebooks as u32).to_le_bytes())?;
        w.write_all(&(BLOCK_ROWS as u32).to_le_bytes())?;
        w.write_all(&self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r);
        r.magic(CODES_MAGIC)?;
        let version = r.u8("version")?;
        if version != CODES_VERSION {
            return Err(BoltError::format(
                4,
                format!("unsupported codes version {version}"),
            ));
        }
        let n = r.u64("N")? as usize;
        let at = r.offset();
        let m = r.u32("M")? as usize;
        if m == 0 {
            return Err(BoltError::format(at, "M must be positive"));
        }
        let at = r.offset();
        let b = r.u32("block rows")? as usize;
        if b != BLOCK_ROWS {
            return Err(BoltError::format(
                at,
                format!("block rows {b}, expected {BLOCK_ROWS}"),
            ));
        }
        let mut data = vec![0u8; packed_len(n, m)];
        r.exact(&mut data, "code buffer")?;
        r.expect_end()?;
        Self::from_raw(n, m, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Writes the codes of `x` into `out`, one per codebook.
///
/// Assignment is always by squared Euclidean distance to the centroids,
/// whatever the model's query-time reduction.
pub(crate) fn encode_into(model: &QuantizerModel, x: &[f32], scratch: &mut [f32], out: &mut [u8]) {
    let split = model.split();
    let len = split.subvector_len();
    let full = split.input_dim();
    for (m, (cb, code)) in model.codebooks().iter().zip(out.iter_mut()).enumerate() {
        let start = m * len;
        let sub = if start + len <= full {
            &x[start..start + len]
        } else {
            split.extract_into(x, m, scratch);
            &scratch[..]
        };
        *code = cb.nearest(sub) as u8;
    }
}

pub fn encode_one(x: &[f32], model: &QuantizerModel) -> Result<Vec<u8>> {
    model.split().check_len(x.len())?;
    ensure_finite(x, "vector to encode")?;
    let mut scratch = vec![0f32; model.split().subvector_len()];
    let mut out = vec![0u8; model.num_codebooks()];
    encode_into(model, x, &mut scratch, &mut out);
    Ok(out)
}

pub fn encode_batch(x: ArrayView2<'_, f32>, model: &QuantizerModel) -> Result<FlatCodes> {
    let m = model.num_codebooks();
    if x.nrows() == 0 {
        return Ok(FlatCodes::empty(m));
    }
    model.split().check_len(x.ncols())?;
    let mut scratch = vec![0f32; model.split().subvector_len()];
    let mut codes = vec![0u8; x.nrows() * m];
    for (row, out) in x.rows().into_iter().zip(codes.chunks_exact_mut(m)) {
        let owned;
        let row = match row.as_slice() {
            Some(s) => s,
            None => {
                owned = row.to_vec();
                &owned
            }
        };
        ensure_finite(row, "vector to encode")?;
        encode_into(model, row, &mut scratch, out);
    }
    FlatCodes::new(x.nrows(), m, codes)
}

pub fn pack(codes: &FlatCodes) -> Result<PackedCodes> {
    let m = codes.num_codebooks();
    if let Some(bad) = codes.as_slice().iter().find(|&&c| c > 15) {
        return Err(BoltError::invalid(format!(
            "code {bad} does not fit in 4 bits"
        )));
    }
    let n = codes.num_vectors();
    let cols = m.div_ceil(2);
    let mut data = vec![0u8; packed_len(n, m)];
    for (i, row) in codes.rows().enumerate() {
        let (t, r) = (i / BLOCK_ROWS, i % BLOCK_ROWS);
        let block = &mut data[t * BLOCK_ROWS * cols..(t + 1) * BLOCK_ROWS * cols];
        for c in 0..cols {
            let lo = row[2 * c];
            let hi = row.get(2 * c + 1).copied().unwrap_or(0);
            block[c * BLOCK_ROWS + r] = lo | (hi << 4);
        }
    }
    PackedCodes::from_raw(n, m, data)
}

pub fn unpack(packed: &PackedCodes) -> Result<FlatCodes> {
    let (n, m) = (packed.num_vectors(), packed.num_codebooks());
    let mut codes = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            codes.push(packed.code(i, j));
        }
    }
    FlatCodes::new(n, m, codes)
}

/// Validates and wraps a raw buffer, then unpacks it.
pub fn unpack_raw(num_vectors: usize, num_codebooks: usize, data: Vec<u8>) -> Result<FlatCodes> {
    unpack(&PackedCodes::from_raw(num_vectors, num_codebooks, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::sq_dist;
    use crate::model::{fit, FitConfig};
    use crate::reduction::Reduction;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    fn small_model(dim: usize, bytes: usize, seed: u64) -> QuantizerModel {
        let x = gaussian(512, dim, seed);
        fit(
            x.view(),
            &FitConfig::bolt(bytes, Reduction::SquaredEuclidean).with_iters(4),
        )
        .unwrap()
    }

    #[test]
    fn exact_centroid_encodes_to_its_index() {
        let model = small_model(16, 4, 1);
        let x: Vec<f32> = model
            .codebooks()
            .iter()
            .flat_map(|cb| cb.centroid(3).to_vec())
            .collect();
        assert_eq!(encode_one(&x, &model).unwrap(), vec![3u8; 8]);
    }

    #[test]
    fn matches_brute_force_argmin() {
        let model = small_model(6, 1, 2);
        let q = gaussian(50, 6, 99);
        for row in q.rows() {
            let row = row.to_vec();
            let codes = encode_one(&row, &model).unwrap();
            for (m, &c) in codes.iter().enumerate() {
                let sub = model.split().extract(&row, m).unwrap();
                let dists: Vec<f32> = (0..16)
                    .map(|i| sq_dist(model.codebook(m).centroid(i), &sub))
                    .collect();
                let best = dists.iter().cloned().fold(f32::INFINITY, f32::min);
                let first = dists.iter().position(|&d| d == best).unwrap();
                assert_eq!(c as usize, first);
            }
        }
    }

    #[test]
    fn sift_sized_vector_packs_to_eight_bytes() {
        let model = small_model(128, 8, 3);
        let x = gaussian(1, 128, 4);
        let packed = pack(&encode_batch(x.view(), &model).unwrap()).unwrap();
        assert_eq!(packed.byte_columns(), 8);
        assert_eq!(packed.as_bytes().len(), 32 * 8);
    }

    #[test]
    fn batch_edge_cases() {
        let model = small_model(8, 2, 5);
        let empty = Array2::<f32>::zeros((0, 8));
        assert_eq!(encode_batch(empty.view(), &model).unwrap().num_vectors(), 0);

        let one = gaussian(1, 8, 6);
        let rep = Array2::from_shape_fn((20, 8), |(_, j)| one[[0, j]]);
        let codes = encode_batch(rep.view(), &model).unwrap();
        assert!(codes.rows().all(|r| r == codes.row(0)));

        let x = gaussian(1000, 8, 7);
        let codes = encode_batch(x.view(), &model).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(codes.row(i), encode_one(&row.to_vec(), &model).unwrap());
        }
    }

    #[test]
    fn encode_errors() {
        let model = small_model(8, 2, 5);
        assert!(matches!(
            encode_one(&[0.0; 7], &model),
            Err(BoltError::DimensionMismatch { .. })
        ));
        let mut v = vec![0.0; 8];
        v[2] = f32::INFINITY;
        assert!(matches!(
            encode_one(&v, &model),
            Err(BoltError::NonFinite(_))
        ));
    }

    #[test]
    fn pack_layout_examples() {
        let codes = FlatCodes::new(32, 2, vec![5; 64]).unwrap();
        let packed = pack(&codes).unwrap();
        assert_eq!(packed.as_bytes(), &[0x55; 32][..]);

        let codes = FlatCodes::new(1, 2, vec![1, 2]).unwrap();
        let packed = pack(&codes).unwrap();
        assert_eq!(packed.as_bytes().len(), 32);
        assert_eq!(packed.as_bytes()[0], 0x21);
        assert!(packed.as_bytes()[1..].iter().all(|&b| b == 0));

        let bad = FlatCodes::new(1, 2, vec![16, 0]).unwrap();
        assert!(pack(&bad).is_err());
    }

    #[test]
    fn hand_built_buffer_unpacks() {
        // Two rows, M=4: byte column 0 at [0..32), column 1 at [32..64).
        let mut data = vec![0u8; 64];
        data[0] = 0x3a; // row 0: m0=0xa, m1=0x3
        data[1] = 0x0f; // row 1: m0=0xf, m1=0
        data[32] = 0x71; // row 0: m2=1, m3=7
        data[33] = 0xe2; // row 1: m2=2, m3=0xe
        let flat = unpack_raw(2, 4, data).unwrap();
        assert_eq!(flat.row(0), &[0xa, 0x3, 0x1, 0x7]);
        assert_eq!(flat.row(1), &[0xf, 0x0, 0x2, 0xe]);

        let zeros = unpack_raw(32, 16, vec![0; 32 * 8]).unwrap();
        assert!(zeros.as_slice().iter().all(|&c| c == 0));

        assert!(unpack_raw(2, 4, vec![0; 63]).is_err());
    }

    #[test]
    fn odd_codebook_count_packs_with_zero_high_nibble() {
        let codes = FlatCodes::new(3, 3, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let packed = pack(&codes).unwrap();
        assert_eq!(packed.byte_columns(), 2);
        assert_eq!(packed.block(0)[32], 3);
        assert_eq!(unpack(&packed).unwrap(), codes);
    }

    #[test]
    fn codes_file_roundtrip() {
        let codes = FlatCodes::new(40, 4, (0..160).map(|i| (i % 16) as u8).collect()).unwrap();
        let packed = pack(&codes).unwrap();
        let mut bytes = Vec::new();
        packed.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"BCOD");
        assert_eq!(bytes.len(), 4 + 1 + 8 + 4 + 4 + 64 * 2);
        assert_eq!(PackedCodes::read_from(&bytes[..]).unwrap(), packed);
        assert!(PackedCodes::read_from(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(
            (n, m, codes) in (0usize..150, 1usize..=64).prop_flat_map(|(n, m)| {
                (Just(n), Just(m), prop::collection::vec(0u8..16, n * m))
            })
        ) {
            let flat = FlatCodes::new(n, m, codes).unwrap();
            let packed = pack(&flat).unwrap();
            prop_assert_eq!(packed.as_bytes().len(), packed_len(n, m));
            prop_assert_eq!(unpack(&packed).unwrap(), flat);
        }
    }
}
