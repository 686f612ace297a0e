//! Numeric precision modes, bfloat16 emulation, dense matmul, and the
//! neighbor-sum backends (matmul and direct stencil).

mod bf16;
mod matmul;
mod neighbor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bf16::{quantize_bf16, quantize_slice};
pub use matmul::{matmul_acc, matmul_acc_prec, MATMUL_BLOCK};
pub use neighbor::{
    compact_tile_nn, naive_tile_nn, neighbor_sum_compact, neighbor_sum_conv, neighbor_sum_conv_lattice,
    neighbor_sum_naive, neighbor_sum_naive_with_halos, NeighborField, NnScratch, SumMethod,
};

/// Arithmetic used for operands of the neighbor sums and the acceptance test.
///
/// `Bf16` rounds operands, acceptance ratios, and uniform draws to bfloat16
/// (round-to-nearest-even); accumulation stays in 32-bit floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    Bf16,
}

impl Precision {
    #[inline]
    pub fn round(self, x: f32) -> f32 {
        match self {
            Precision::F32 => x,
            Precision::Bf16 => quantize_bf16(x),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::Bf16 => "bf16",
        })
    }
}

impl FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float32" => Ok(Precision::F32),
            "bf16" | "bfloat16" => Ok(Precision::Bf16),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown precision '{other}' (expected f32 or bf16)"
            ))),
        }
    }
}
