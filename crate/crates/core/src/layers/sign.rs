use super::Backend;
use crate::tensor::{binarize, FloatTensor, IntTensor, PackedTensor};

/// Sign activation; the packed flavor emits bits, the reference flavor `{-1, +1}` floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignLayer {
    pub backend: Backend,
}

/// Binarizes (`x >= 0` to +1) and packs.
pub fn sign_pack(x: &FloatTensor) -> PackedTensor {
    PackedTensor::pack(x)
}

pub fn sign_pack_int(x: &IntTensor) -> PackedTensor {
    PackedTensor::pack_with(x.dims(), x.data(), |v| v >= 0)
}

/// Float sign used by the reference flavor.
pub(crate) fn sign_into(src: &[f32], dst: &mut [f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = if binarize(s) { 1.0 } else { -1.0 };
    }
}
