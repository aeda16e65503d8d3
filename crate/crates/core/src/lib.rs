//! Bolt: fast multi-codebook vector quantization.
//!
//! Vectors are split into `M` subspaces and each subvector is replaced by the
//! index of its nearest centroid among 16 (4-bit codes). Queries are turned
//! into per-codebook lookup tables which are quantized to 8 bits, so a
//! byte-shuffle kernel can sum table entries for 32 database vectors at a
//! time. An 8-bit product quantizer is included as the classical baseline.
//!
//! The usual flow:
//!
//! 1. [`model::fit`] the codebooks on training data,
//! 2. [`lut::calibrate`] the table quantization on sample queries,
//! 3. [`encode::encode_batch`] and [`encode::pack`] the database,
//! 4. per query, [`lut::build_exact_lut`], [`lut::quantize_lut`] and
//!    [`scan::scan_vectorized`], then [`scan::topk`].

pub mod amm;
pub mod bench;
pub mod dataset;
pub mod encode;
pub mod error;
mod format;
pub mod guarantees;
pub mod index;
pub mod io;
pub mod kmeans;
pub mod lut;
pub mod metrics;
pub mod model;
pub mod pq;
pub mod reduction;
pub mod scan;
pub mod split;

pub use encode::{encode_batch, encode_one, pack, unpack, FlatCodes, PackedCodes};
pub use error::{BoltError, Result};
pub use lut::{build_exact_lut, calibrate, quantize_lut, ExactLut, LutQuantParams, QuantizedLut};
pub use model::{fit, Codebook, FitConfig, QuantizerModel};
pub use reduction::Reduction;
pub use scan::{scan_scalar, scan_vectorized, topk, ScanResult};
pub use split::SubspaceSplit;
