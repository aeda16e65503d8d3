//! Scalar reductions of the form `f(sum_j delta(q_j, x_j))`.

use serde::{Deserialize, Serialize};

/// The reductions supported by the quantizer.
///
/// Both kinds use the identity as the final map, so the library reports
/// squared Euclidean distances. Taking a square root is left to callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    SquaredEuclidean,
    DotProduct,
}

impl Reduction {
    /// Per-dimension term.
    #[inline(always)]
    pub fn delta(self, q: f32, x: f32) -> f32 {
        match self {
            Reduction::SquaredEuclidean => {
                let d = q - x;
                d * d
            }
            Reduction::DotProduct => q * x,
        }
    }

    /// Final scalar map applied to the accumulated sum.
    #[inline(always)]
    pub fn finalize(self, sum: f32) -> f32 {
        sum
    }

    /// Sum of `delta` over two equal-length slices, without the final map.
    #[inline]
    pub fn partial(self, q: &[f32], x: &[f32]) -> f32 {
        debug_assert_eq!(q.len(), x.len());
        match self {
            Reduction::SquaredEuclidean => q
                .iter()
                .zip(x)
                .map(|(a, b)| {
                    let d = a - b;
                    d * d
                })
                .sum(),
            Reduction::DotProduct => q.iter().zip(x).map(|(a, b)| a * b).sum(),
        }
    }

    /// Full reduction `f(sum_j delta(u_j, v_j))`.
    pub fn reduce(self, u: &[f32], v: &[f32]) -> f32 {
        self.finalize(self.partial(u, v))
    }

    /// Whether smaller values mean "closer" for ranking purposes.
    pub fn smaller_is_better(self) -> bool {
        matches!(self, Reduction::SquaredEuclidean)
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Reduction::SquaredEuclidean => 0,
            Reduction::DotProduct => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Reduction::SquaredEuclidean),
            1 => Some(Reduction::DotProduct),
            _ => None,
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" | "sq_euclidean" => Ok(Reduction::SquaredEuclidean),
            "dot" | "ip" | "dot_product" => Ok(Reduction::DotProduct),
            other => Err(format!("unknown metric '{other}', expected l2 or dot")),
        }
    }
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reduction::SquaredEuclidean => write!(f, "l2"),
            Reduction::DotProduct => write!(f, "dot"),
        }
    }
}
