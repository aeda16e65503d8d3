use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{BoltError, Result};

/// Partition of `[0, padded_dim)` into `M` consecutive, equal-length ranges.
///
/// When the input dimension is not a multiple of `M`, zero padding is
/// appended at the end. Padding contributes exactly zero to both supported
/// reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSplit {
    input_dim: usize,
    num_codebooks: usize,
    padded_dim: usize,
}

impl SubspaceSplit {
    /// Panics if either argument is zero.
    pub fn new(input_dim: usize, num_codebooks: usize) -> Self {
        assert!(
            input_dim >= 1 && num_codebooks >= 1,
            "split requires J >= 1 and M >= 1"
        );
        let padded_dim = input_dim.div_ceil(num_codebooks) * num_codebooks;
        Self {
            input_dim,
            num_codebooks,
            padded_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_codebooks(&self) -> usize {
        self.num_codebooks
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn subvector_len(&self) -> usize {
        self.padded_dim / self.num_codebooks
    }

    /// Index range of subspace `m` in the padded coordinate space.
    pub fn range(&self, m: usize) -> Range<usize> {
        let len = self.subvector_len();
        m * len..(m + 1) * len
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_codebooks).map(|m| self.range(m))
    }

    /// Copies subvector `m` of `v` into `out`, zero-filling padding.
    #[inline]
    pub fn extract_into(&self, v: &[f32], m: usize, out: &mut [f32]) {
        let r = self.range(m);
        let end = r.end.min(self.input_dim);
        let start = r.start.min(end);
        let n = end - start;
        out[..n].copy_from_slice(&v[start..end]);
        out[n..].fill(0.0);
    }

    pub fn extract(&self, v: &[f32], m: usize) -> Result<Vec<f32>> {
        self.check_len(v.len())?;
        if m >= self.num_codebooks {
            return Err(BoltError::invalid(format!(
                "subspace index {m} out of range for {} codebooks",
                self.num_codebooks
            )));
        }
        let mut out = vec![0.0; self.subvector_len()];
        self.extract_into(v, m, &mut out);
        Ok(out)
    }

    /// Returns `v` zero-padded to `padded_dim`.
    pub fn pad(&self, v: &[f32]) -> Result<Vec<f32>> {
        self.check_len(v.len())?;
        let mut out = v.to_vec();
        out.resize(self.padded_dim, 0.0);
        Ok(out)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(BoltError::DimensionMismatch {
                expected: self.input_dim,
                got: len,
            });
        }
        Ok(())
    }
}
