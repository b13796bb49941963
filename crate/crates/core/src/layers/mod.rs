//! Network layers in reference (`f32`) and packed (bit) flavors.
//!
//! The packed pipeline keeps convolution, dense and pooling results as exact
//! `i32` accumulators, then batch-normalizes and binarizes them in one
//! threshold comparison. The reference pipeline runs the same arithmetic on
//! `{-1, +1}` floats.

mod batchnorm;
mod conv;
mod dense;
mod pool;
mod sign;

pub use batchnorm::{batchnorm_forward, fused_bn_sign, BatchNormLayer, BnParams, Threshold, DEFAULT_EPS};
pub use conv::{
    compute_correction, conv_forward, conv_forward_bytes, im2col_into, unroll, unroll_into, unroll_planes_into, ConvGeometry, ConvInput,
    ConvLayer, ConvWeights,
};
pub use dense::{dense_forward, input8_forward, DenseLayer, DenseWeights, Input8Layer};
pub use pool::{maxpool_forward, MaxPoolLayer};
pub use sign::{sign_pack, sign_pack_int, SignLayer};
pub(crate) use sign::sign_into;

/// Which arithmetic a layer runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    /// `f32` arithmetic over `{-1, +1}` values.
    Reference,
    /// Bit-packed XOR/popcount arithmetic.
    Packed,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Reference => "reference",
            Backend::Packed => "packed",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" | "ref" => Ok(Backend::Reference),
            "packed" => Ok(Backend::Packed),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}
