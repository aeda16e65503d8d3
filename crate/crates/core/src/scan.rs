//! Scans of one quantized query table against packed database codes.
//!
//! [`scan_scalar`] defines the semantics. [`scan_vectorized`] computes the
//! same 16-bit sums with in-register byte shuffles (`vpshufb`): each 16-entry
//! table sits in a vector register and the 4-bit codes of 32 rows index it
//! at once.

use std::cmp::Ordering;

use crate::encode::{PackedCodes, BLOCK_ROWS};
use crate::error::{BoltError, Result};
use crate::lut::{reconstruct_total, ExactLut, LutQuantParams, QuantizedLut};
use crate::reduction::Reduction;

/// Largest codebook count whose worst-case sum `M * 255` fits in 16 bits
/// with room to spare.
pub const MAX_SCAN_CODEBOOKS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanResult {
    raw: Vec<u16>,
}

impl ScanResult {
    pub fn raw(&self) -> &[u16] {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn into_raw(self) -> Vec<u16> {
        self.raw
    }

    pub fn reconstructed(&self, params: &LutQuantParams, reduction: Reduction) -> Vec<f32> {
        self.raw
            .iter()
            .map(|&acc| reconstruct_total(acc as u32, params, reduction))
            .collect()
    }
}

fn check_shapes(packed: &PackedCodes, lut: &QuantizedLut) -> Result<()> {
    if lut.k() != 16 {
        return Err(BoltError::invalid(format!(
            "scan needs 16-entry tables, got K={}",
            lut.k()
        )));
    }
    if lut.num_tables() != packed.num_codebooks() {
        return Err(BoltError::DimensionMismatch {
            expected: packed.num_codebooks(),
            got: lut.num_tables(),
        });
    }
    if packed.num_codebooks() > MAX_SCAN_CODEBOOKS {
        return Err(BoltError::invalid(format!(
            "scan supports at most {MAX_SCAN_CODEBOOKS} codebooks, got {}",
            packed.num_codebooks()
        )));
    }
    Ok(())
}

/// Reference scan: `raw[n] = sum_m lut[code(n, m), m]`.
pub fn scan_scalar(packed: &PackedCodes, lut: &QuantizedLut) -> Result<ScanResult> {
    check_shapes(packed, lut)?;
    let tables = lut.padded_entries();
    let cols = packed.byte_columns();
    let mut raw = vec![0u16; packed.num_blocks() * BLOCK_ROWS];
    for (t, out) in raw.chunks_exact_mut(BLOCK_ROWS).enumerate() {
        let block = packed.block(t);
        for c in 0..cols {
            let even = &tables[(2 * c) * 16..(2 * c + 1) * 16];
            let odd = &tables[(2 * c + 1) * 16..(2 * c + 2) * 16];
            for (acc, &byte) in out
                .iter_mut()
                .zip(&block[c * BLOCK_ROWS..(c + 1) * BLOCK_ROWS])
            {
                *acc += even[(byte & 0x0f) as usize] as u16 + odd[(byte >> 4) as usize] as u16;
            }
        }
    }
    raw.truncate(packed.num_vectors());
    Ok(ScanResult { raw })
}

/// Which kernel [`scan_vectorized`] will dispatch to on this machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Avx2,
    Ssse3,
    Scalar,
}

pub fn detected_kernel() -> Kernel {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            return Kernel::Avx2;
        }
        if std::arch::is_x86_feature_detected!("ssse3") {
            return Kernel::Ssse3;
        }
    }
    Kernel::Scalar
}

/// Shuffle-based scan; bit-identical to [`scan_scalar`].
pub fn scan_vectorized(packed: &PackedCodes, lut: &QuantizedLut) -> Result<ScanResult> {
    scan_with(detected_kernel(), packed, lut)
}

/// Runs a specific kernel. Requesting one the CPU lacks falls back to scalar.
pub fn scan_with(kernel: Kernel, packed: &PackedCodes, lut: &QuantizedLut) -> Result<ScanResult> {
    check_shapes(packed, lut)?;
    #[cfg(target_arch = "x86_64")]
    {
        let mut raw = vec![0u16; packed.num_blocks() * BLOCK_ROWS];
        let done = match kernel {
            Kernel::Avx2 if std::arch::is_x86_feature_detected!("avx2") => {
                // SAFETY: AVX2 support was just checked.
                unsafe { x86::scan_avx2(packed, lut.padded_entries(), &mut raw) };
                true
            }
            Kernel::Ssse3 if std::arch::is_x86_feature_detected!("ssse3") => {
                // SAFETY: SSSE3 support was just checked.
                unsafe { x86::scan_ssse3(packed, lut.padded_entries(), &mut raw) };
                true
            }
            _ => false,
        };
        if done {
            raw.truncate(packed.num_vectors());
            return Ok(ScanResult { raw });
        }
    }
    let _ = kernel;
    scan_scalar(packed, lut)
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    use crate::encode::{PackedCodes, BLOCK_ROWS};

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn scan_avx2(packed: &PackedCodes, tables: &[u8], out: &mut [u16]) {
        let cols = packed.byte_columns();
        assert_eq!(tables.len(), cols * 32);
        assert_eq!(out.len(), packed.num_blocks() * BLOCK_ROWS);

        // Both 128-bit lanes hold the same table since vpshufb works per lane.
        let luts: Vec<__m256i> = tables
            .chunks_exact(16)
            .map(|t| unsafe { _mm256_broadcastsi128_si256(_mm_loadu_si128(t.as_ptr().cast())) })
            .collect();
        let mask = _mm256_set1_epi8(0x0f);
        let data = packed.as_bytes();

        for (t, dst) in out.chunks_exact_mut(BLOCK_ROWS).enumerate() {
            let block = &data[t * cols * BLOCK_ROWS..(t + 1) * cols * BLOCK_ROWS];
            // Word w of `pairs` accumulates byte 2w + 256 * byte 2w+1; `odd`
            // accumulates byte 2w+1 alone.
            let mut pairs = _mm256_setzero_si256();
            let mut odd = _mm256_setzero_si256();
            for c in 0..cols {
                let codes =
                    unsafe { _mm256_loadu_si256(block.as_ptr().add(c * BLOCK_ROWS).cast()) };
                let lo = _mm256_and_si256(codes, mask);
                let hi = _mm256_and_si256(_mm256_srli_epi16(codes, 4), mask);
                let v0 = _mm256_shuffle_epi8(luts[2 * c], lo);
                let v1 = _mm256_shuffle_epi8(luts[2 * c + 1], hi);
                pairs = _mm256_add_epi16(pairs, v0);
                odd = _mm256_add_epi16(odd, _mm256_srli_epi16(v0, 8));
                pairs = _mm256_add_epi16(pairs, v1);
                odd = _mm256_add_epi16(odd, _mm256_srli_epi16(v1, 8));
            }
            let even = _mm256_sub_epi16(pairs, _mm256_slli_epi16(odd, 8));
            // Lane 0 holds rows 0..16, lane 1 rows 16..32.
            let lo = _mm256_unpacklo_epi16(even, odd); // rows 0..8 | 16..24
            let hi = _mm256_unpackhi_epi16(even, odd); // rows 8..16 | 24..32
            let first = _mm256_permute2x128_si256(lo, hi, 0x20);
            let second = _mm256_permute2x128_si256(lo, hi, 0x31);
            unsafe {
                _mm256_storeu_si256(dst.as_mut_ptr().cast(), first);
                _mm256_storeu_si256(dst.as_mut_ptr().add(16).cast(), second);
            }
        }
    }

    /// 16-wide variant: each 32-row block is processed as two half-blocks.
    #[target_feature(enable = "ssse3")]
    pub(super) unsafe fn scan_ssse3(packed: &PackedCodes, tables: &[u8], out: &mut [u16]) {
        let cols = packed.byte_columns();
        assert_eq!(tables.len(), cols * 32);
        assert_eq!(out.len(), packed.num_blocks() * BLOCK_ROWS);

        let luts: Vec<__m128i> = tables
            .chunks_exact(16)
            .map(|t| unsafe { _mm_loadu_si128(t.as_ptr().cast()) })
            .collect();
        let mask = _mm_set1_epi8(0x0f);
        let data = packed.as_bytes();

        for (t, dst) in out.chunks_exact_mut(BLOCK_ROWS).enumerate() {
            let block = &data[t * cols * BLOCK_ROWS..(t + 1) * cols * BLOCK_ROWS];
            for half in 0..2 {
                let mut pairs = _mm_setzero_si128();
                let mut odd = _mm_setzero_si128();
                for c in 0..cols {
                    let ptr = unsafe { block.as_ptr().add(c * BLOCK_ROWS + half * 16) };
                    let codes = unsafe { _mm_loadu_si128(ptr.cast()) };
                    let lo = _mm_and_si128(codes, mask);
                    let hi = _mm_and_si128(_mm_srli_epi16(codes, 4), mask);
                    let v0 = _mm_shuffle_epi8(luts[2 * c], lo);
                    let v1 = _mm_shuffle_epi8(luts[2 * c + 1], hi);
                    pairs = _mm_add_epi16(pairs, v0);
                    odd = _mm_add_epi16(odd, _mm_srli_epi16(v0, 8));
                    pairs = _mm_add_epi16(pairs, v1);
                    odd = _mm_add_epi16(odd, _mm_srli_epi16(v1, 8));
                }
                let even = _mm_sub_epi16(pairs, _mm_slli_epi16(odd, 8));
                let dst = &mut dst[half * 16..half * 16 + 16];
                unsafe {
                    _mm_storeu_si128(dst.as_mut_ptr().cast(), _mm_unpacklo_epi16(even, odd));
                    _mm_storeu_si128(
                        dst.as_mut_ptr().add(8).cast(),
                        _mm_unpackhi_epi16(even, odd),
                    );
                }
            }
        }
    }
}

/// Float-table scan with float accumulation, no LUT quantization.
pub fn scan_unquantized(
    packed: &PackedCodes,
    exact: &ExactLut,
    reduction: Reduction,
) -> Result<Vec<f32>> {
    if exact.num_tables() != packed.num_codebooks() || exact.k() != 16 {
        return Err(BoltError::DimensionMismatch {
            expected: packed.num_codebooks(),
            got: exact.num_tables(),
        });
    }
    let m = packed.num_codebooks();
    Ok((0..packed.num_vectors())
        .map(|n| {
            let sum: f32 = (0..m)
                .map(|j| exact.get(packed.code(n, j) as usize, j))
                .sum();
            reduction.finalize(sum)
        })
        .collect())
}

/// A ranked candidate: database index and its reconstructed estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub estimate: f32,
}

/// Indices of the `k` best scores, best first; ties go to the lower index.
pub fn top_indices<T: PartialOrd + Copy>(
    scores: &[T],
    k: usize,
    smaller_is_better: bool,
) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(BoltError::invalid(format!(
            "k={k} exceeds the {} available results",
            scores.len()
        )));
    }
    let cmp = |&a: &usize, &b: &usize| -> Ordering {
        let ord = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        let ord = if smaller_is_better {
            ord
        } else {
            ord.reverse()
        };
        ord.then(a.cmp(&b))
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    Ok(idx)
}

/// Top-`k` by raw accumulator, reconstructing only the returned candidates.
pub fn topk(
    result: &ScanResult,
    k: usize,
    params: &LutQuantParams,
    reduction: Reduction,
) -> Result<Vec<Neighbor>> {
    let idx = top_indices(result.raw(), k, reduction.smaller_is_better())?;
    Ok(idx
        .into_iter()
        .map(|index| Neighbor {
            index,
            estimate: reconstruct_total(result.raw()[index] as u32, params, reduction),
        })
        .collect())
}
