//! Convolution through unrolling (im2col) and matrix multiplication.
//!
//! Each output position becomes one row holding its `kh x kw x C` receptive
//! field in raster order, channels innermost. Multiplying by the
//! `patch x filters` matrix yields a `positions x filters` result, which under
//! the interleaved-channel layout already is the `H_out x W_out x F` tensor.
//!
//! Binary inputs cannot represent the zero padding, so padded cells are
//! unrolled as clear bits (-1). The correction matrix, the convolution of the
//! filters with a tensor that is zero inside and +1 on the padding ring, is
//! added afterwards to turn those results into true zero-padded ones.

use std::borrow::Cow;

use super::Backend;
use crate::error::{mismatch, Dims, Result};
use crate::gemm::{
    bgemm, bgemm_into, bitplane_gemm_into, sgemm_scratch_len, sgemm_with_scratch, AccumMatrix,
    FloatMatrix, Lines, PackedMatrixA, PackedMatrixB,
};
use crate::tensor::{
    copy_bits, words_for, ByteTensor, IntTensor, PackAxis,
    PackedTensor, PackedView, BYTE_PLANES, WORD_BITS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub input: Dims,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(mismatch("convolution input is empty"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.filters == 0 {
            return Err(mismatch(
                "kernel, stride and filter count must be positive",
            ));
        }
        if self.kernel_h > self.input.rows + 2 * self.pad
            || self.kernel_w > self.input.cols + 2 * self.pad
        {
            return Err(mismatch(format!(
                "{}x{} kernel larger than padded {} input",
                self.kernel_h, self.kernel_w, self.input
            )));
        }
        Ok(())
    }

    pub fn output_dims(&self) -> Dims {
        Dims::new(
            (self.input.rows + 2 * self.pad - self.kernel_h) / self.stride + 1,
            (self.input.cols + 2 * self.pad - self.kernel_w) / self.stride + 1,
            self.filters,
        )
    }

    /// Elements per unrolled row.
    pub fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.input.channels
    }

    pub fn positions(&self) -> usize {
        let o = self.output_dims();
        o.rows * o.cols
    }

    /// Words of one unrolled packed matrix.
    pub fn unrolled_words(&self) -> usize {
        self.positions() * words_for(self.patch_len())
    }

    /// Input coordinate covered by kernel offset `k` at output coordinate `o`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.pad)
            .filter(|&i| i < extent)
    }
}

/// What a convolution consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvInput {
    /// `{-1, +1}` activations.
    Binary,
    /// Raw 8-bit values; the packed flavor processes them one bit plane at a time.
    Bytes,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvWeights {
    Packed {
        /// `patch x F`, column-packed over the patch.
        filters: PackedMatrixB,
        /// `positions x F`, added to the binary GEMM result.
        correction: AccumMatrix,
    },
    /// `patch x F`.
    Reference(FloatMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    geometry: ConvGeometry,
    input: ConvInput,
    weights: ConvWeights,
}

fn check_weight_shape(geometry: &ConvGeometry, inner: usize, cols: usize) -> Result<()> {
    if inner != geometry.patch_len() || cols != geometry.filters {
        return Err(mismatch(format!(
            "filter matrix {}x{} does not match patch {} and {} filters",
            inner,
            cols,
            geometry.patch_len(),
            geometry.filters
        )));
    }
    Ok(())
}

impl ConvLayer {
    /// Packed layer; the correction matrix is computed here, once.
    pub fn new(geometry: ConvGeometry, input: ConvInput, filters: PackedMatrixB) -> Result<Self> {
        geometry.validate()?;
        check_weight_shape(&geometry, filters.inner(), filters.cols())?;
        let correction = match input {
            ConvInput::Binary => compute_correction(&filters, &geometry)?,
            // zero bits are zero values in a bit plane, padding needs no repair
            ConvInput::Bytes => AccumMatrix::zeros(geometry.positions(), geometry.filters),
        };
        Ok(ConvLayer {
            geometry,
            input,
            weights: ConvWeights::Packed {
                filters,
                correction,
            },
        })
    }

    /// Reference layer over a `patch x F` float filter matrix.
    pub fn from_float(geometry: ConvGeometry, input: ConvInput, weights: FloatMatrix) -> Result<Self> {
        geometry.validate()?;
        check_weight_shape(&geometry, weights.rows(), weights.cols())?;
        Ok(ConvLayer {
            geometry,
            input,
            weights: ConvWeights::Reference(weights),
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn input_kind(&self) -> ConvInput {
        self.input
    }

    pub fn weights(&self) -> &ConvWeights {
        &self.weights
    }

    pub fn backend(&self) -> Backend {
        match self.weights {
            ConvWeights::Packed { .. } => Backend::Packed,
            ConvWeights::Reference(_) => Backend::Reference,
        }
    }

    pub fn output_dims(&self) -> Dims {
        self.geometry.output_dims()
    }

    pub fn filters(&self) -> Cow<'_, PackedMatrixB> {
        match &self.weights {
            ConvWeights::Packed { filters, .. } => Cow::Borrowed(filters),
            ConvWeights::Reference(w) => Cow::Owned(PackedMatrixB::from_float(w)),
        }
    }

    pub fn float_filters(&self) -> Cow<'_, FloatMatrix> {
        match &self.weights {
            ConvWeights::Packed { filters, .. } => Cow::Owned(filters.unpack()),
            ConvWeights::Reference(w) => Cow::Borrowed(w),
        }
    }

    pub fn correction(&self) -> Option<&AccumMatrix> {
        match &self.weights {
            ConvWeights::Packed { correction, .. } => Some(correction),
            ConvWeights::Reference(_) => None,
        }
    }

    pub fn to_backend(&self, backend: Backend) -> Self {
        match (backend, &self.weights) {
            (Backend::Packed, ConvWeights::Packed { .. })
            | (Backend::Reference, ConvWeights::Reference(_)) => self.clone(),
            (Backend::Packed, ConvWeights::Reference(w)) => {
                ConvLayer::new(self.geometry, self.input, PackedMatrixB::from_float(w))
                    .expect("geometry already validated")
            }
            (Backend::Reference, ConvWeights::Packed { filters, .. }) => {
                ConvLayer::from_float(self.geometry, self.input, filters.unpack())
                    .expect("geometry already validated")
            }
        }
    }

    /// Scratch words the packed flavor needs for unrolling.
    pub fn unroll_scratch_words(&self) -> usize {
        match self.input {
            ConvInput::Binary => self.geometry.unrolled_words(),
            ConvInput::Bytes => BYTE_PLANES * self.geometry.unrolled_words(),
        }
    }

    /// `(im2col floats, sgemm scratch floats)` the reference flavor needs.
    pub fn reference_scratch_len(&self) -> (usize, usize) {
        let g = &self.geometry;
        (
            g.positions() * g.patch_len(),
            sgemm_scratch_len(g.patch_len(), g.filters),
        )
    }

    fn packed_parts(&self) -> Result<(&PackedMatrixB, &AccumMatrix)> {
        match &self.weights {
            ConvWeights::Packed {
                filters,
                correction,
            } => Ok((filters, correction)),
            ConvWeights::Reference(_) => Err(mismatch("packed convolution on reference weights")),
        }
    }

    /// Packed convolution of a binary input into `out` (`H_out x W_out x F`).
    pub fn forward_packed_into(
        &self,
        x: &PackedView<'_>,
        unrolled: &mut [u64],
        out: &mut [i32],
    ) -> Result<()> {
        let (filters, correction) = self.packed_parts()?;
        let g = &self.geometry;
        let unrolled = &mut unrolled[..g.unrolled_words()];
        unroll_into(x, g, unrolled)?;
        bgemm_into(
            Lines::new(g.positions(), g.patch_len(), unrolled),
            filters.lines(),
            out,
        )?;
        for (o, c) in out.iter_mut().zip(correction.data()) {
            *o += c;
        }
        Ok(())
    }

    /// Packed convolution of a byte input through its bit planes.
    ///
    /// `unrolled` receives one unrolled matrix per plane; padding cells are
    /// zero bytes and need no correction.
    pub fn forward_bytes_packed_into(&self, x: &[u8], unrolled: &mut [u64], out: &mut [i32]) -> Result<()> {
        let (filters, _) = self.packed_parts()?;
        let g = &self.geometry;
        let per_plane = g.unrolled_words();
        let unrolled = &mut unrolled[..BYTE_PLANES * per_plane];
        unroll_planes_into(x, g, unrolled)?;
        let mut lines = [Lines::new(0, g.patch_len(), &[]); BYTE_PLANES];
        for (l, chunk) in lines.iter_mut().zip(unrolled.chunks_exact(per_plane)) {
            *l = Lines::new(g.positions(), g.patch_len(), chunk);
        }
        bitplane_gemm_into(&lines, filters.lines(), out)
    }

    /// Float convolution with zero padding.
    pub fn forward_reference_into(
        &self,
        x: &[f32],
        cols: &mut [f32],
        scratch: &mut [f32],
        out: &mut [f32],
    ) -> Result<()> {
        let w = match &self.weights {
            ConvWeights::Reference(w) => w,
            ConvWeights::Packed { .. } => {
                return Err(mismatch("float convolution on packed weights"))
            }
        };
        let g = &self.geometry;
        let cols = &mut cols[..g.positions() * g.patch_len()];
        im2col_into(x, g, cols)?;
        sgemm_with_scratch(
            g.positions(),
            g.patch_len(),
            g.filters,
            cols,
            w.data(),
            out,
            scratch,
        )
    }
}

/// Writes the unrolled packed rows of `x` into `out` (`positions x words_for(patch)`).
///
/// Out-of-bounds cells stay clear, i.e. read as -1.
pub fn unroll_into(x: &PackedView<'_>, g: &ConvGeometry, out: &mut [u64]) -> Result<()> {
    if x.layout.dims != g.input {
        return Err(mismatch(format!(
            "convolution expects a {} input, got {}",
            g.input, x.layout.dims
        )));
    }
    if out.len() != g.unrolled_words() {
        return Err(mismatch("unroll buffer has the wrong size"));
    }
    out.fill(0);
    let o = g.output_dims();
    let (h, w, c) = (g.input.rows, g.input.cols, g.input.channels);
    let row_words = words_for(g.patch_len());
    if row_words == 0 {
        return Ok(());
    }
    for (pos, row) in out.chunks_exact_mut(row_words).enumerate() {
        let (oy, ox) = (pos / o.cols, pos % o.cols);
        for ki in 0..g.kernel_h {
            let Some(iy) = g.source(oy, ki, h) else {
                continue;
            };
            match x.layout.axis {
                PackAxis::Channel => {
                    for kj in 0..g.kernel_w {
                        if let Some(ix) = g.source(ox, kj, w) {
                            let at = (ki * g.kernel_w + kj) * c;
                            if c % WORD_BITS == 0 {
                                let dst = &mut row[at / WORD_BITS..][..c / WORD_BITS];
                                dst.copy_from_slice(x.line(iy * w + ix));
                            } else {
                                copy_bits(x.line(iy * w + ix), 0, row, at, c);
                            }
                        }
                    }
                }
                PackAxis::Column => {
                    let first = (0..g.kernel_w).find(|&kj| g.source(ox, kj, w).is_some());
                    if let Some(kj0) = first {
                        let kj1 = (kj0..g.kernel_w)
                            .take_while(|&kj| g.source(ox, kj, w).is_some())
                            .last()
                            .unwrap()
                            + 1;
                        let ix0 = g.source(ox, kj0, w).unwrap();
                        copy_bits(x.line(iy), ix0, row, ki * g.kernel_w + kj0, kj1 - kj0);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Unrolls a byte tensor straight into bit planes: plane `i` of `out`
/// (`positions x words_for(patch)` words each) holds bit `i` of every unrolled byte.
pub fn unroll_planes_into(x: &[u8], g: &ConvGeometry, out: &mut [u64]) -> Result<()> {
    if x.len() != g.input.len() {
        return Err(mismatch(format!(
            "convolution expects {} input bytes, got {}",
            g.input.len(),
            x.len()
        )));
    }
    let per_plane = g.unrolled_words();
    if out.len() != BYTE_PLANES * per_plane {
        return Err(mismatch("unroll buffer has the wrong size"));
    }
    out.fill(0);
    let row_words = words_for(g.patch_len());
    if row_words == 0 {
        return Ok(());
    }
    let o = g.output_dims();
    let (h, w, c) = (g.input.rows, g.input.cols, g.input.channels);
    for pos in 0..g.positions() {
        let (oy, ox) = (pos / o.cols, pos % o.cols);
        let base = pos * row_words * WORD_BITS;
        let Some(kj0) = (0..g.kernel_w).find(|&kj| g.source(ox, kj, w).is_some()) else {
            continue;
        };
        let kj1 = (kj0..g.kernel_w)
            .take_while(|&kj| g.source(ox, kj, w).is_some())
            .last()
            .map_or(kj0, |kj| kj + 1);
        let ix0 = g.source(ox, kj0, w).expect("in bounds");
        for ki in 0..g.kernel_h {
            let Some(iy) = g.source(oy, ki, h) else {
                continue;
            };
            let run = &x[(iy * w + ix0) * c..][..(kj1 - kj0) * c];
            let mut bit = base + (ki * g.kernel_w + kj0) * c;
            for chunk in run.chunks(8) {
                let mut bytes = [0u8; 8];
                bytes[..chunk.len()].copy_from_slice(chunk);
                let v = u64::from_le_bytes(bytes);
                for (i, plane) in out.chunks_exact_mut(per_plane).enumerate() {
                    let bits = gather_plane(v, i);
                    if bits != 0 {
                        or_bits(plane, bit, bits, chunk.len());
                    }
                }
                bit += chunk.len();
            }
        }
    }
    Ok(())
}

/// Bit `i` of each of the 8 little-endian bytes of `v`, as an 8-bit value.
#[inline(always)]
fn gather_plane(v: u64, i: usize) -> u64 {
    ((v >> i) & 0x0101_0101_0101_0101).wrapping_mul(0x0102_0408_1020_4080) >> 56
}

/// ORs the low `len <= 8` bits of `bits` into `out` starting at bit offset `at`.
#[inline(always)]
fn or_bits(out: &mut [u64], at: usize, bits: u64, len: usize) {
    let (word, shift) = (at / WORD_BITS, at % WORD_BITS);
    out[word] |= bits << shift;
    if shift + len > WORD_BITS {
        out[word + 1] |= bits >> (WORD_BITS - shift);
    }
}

/// Unrolls a packed tensor into a `positions x patch` row-packed matrix.
pub fn unroll(a: &PackedTensor, g: &ConvGeometry) -> Result<PackedMatrixA> {
    g.validate()?;
    let mut words = vec![0u64; g.unrolled_words()];
    unroll_into(&a.view(), g, &mut words)?;
    PackedMatrixA::from_words(g.positions(), g.patch_len(), words)
}

/// Float unrolling with zero padding: `out` is `positions x patch`, row-major.
pub fn im2col_into(x: &[f32], g: &ConvGeometry, out: &mut [f32]) -> Result<()> {
    if x.len() != g.input.len() || out.len() != g.positions() * g.patch_len() {
        return Err(mismatch("im2col buffers do not match the geometry"));
    }
    let o = g.output_dims();
    let (h, w, c) = (g.input.rows, g.input.cols, g.input.channels);
    let patch = g.patch_len();
    if patch == 0 {
        return Ok(());
    }
    for (pos, row) in out.chunks_exact_mut(patch).enumerate() {
        let (oy, ox) = (pos / o.cols, pos % o.cols);
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut row[(ki * g.kernel_w + kj) * c..][..c];
                match (g.source(oy, ki, h), g.source(ox, kj, w)) {
                    (Some(iy), Some(ix)) => {
                        dst.copy_from_slice(&x[(iy * w + ix) * c..][..c]);
                    }
                    _ => dst.fill(0.0),
                }
            }
        }
    }
    Ok(())
}

/// Convolution of the filters with a tensor that is 0 inside and +1 on the
/// padding ring: `correction[pos][f]` sums filter `f` over the window cells
/// of `pos` that fall into the padding.
pub fn compute_correction(filters: &PackedMatrixB, g: &ConvGeometry) -> Result<AccumMatrix> {
    g.validate()?;
    check_weight_shape(g, filters.inner(), filters.cols())?;
    let c = g.input.channels;
    let sites = g.kernel_h * g.kernel_w;
    let mut site_sums = vec![0i32; sites * g.filters];
    for f in 0..g.filters {
        let line = filters.line(f);
        for s in 0..sites {
            let mut sum = 0;
            for ch in 0..c {
                let k = s * c + ch;
                sum += if line[k / WORD_BITS] >> (k % WORD_BITS) & 1 == 1 {
                    1
                } else {
                    -1
                };
            }
            site_sums[s * g.filters + f] = sum;
        }
    }
    let o = g.output_dims();
    let mut out = AccumMatrix::zeros(g.positions(), g.filters);
    if g.pad == 0 {
        return Ok(out);
    }
    let data = out.data_mut();
    for pos in 0..g.positions() {
        let (oy, ox) = (pos / o.cols, pos % o.cols);
        let dst = &mut data[pos * g.filters..(pos + 1) * g.filters];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let inside = g.source(oy, ki, g.input.rows).is_some()
                    && g.source(ox, kj, g.input.cols).is_some();
                if !inside {
                    let s = ki * g.kernel_w + kj;
                    for (d, v) in dst.iter_mut().zip(&site_sums[s * g.filters..]) {
                        *d += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact zero-padded convolution of a binary tensor, `H_out x W_out x F`.
pub fn conv_forward(layer: &ConvLayer, a: &PackedTensor) -> Result<IntTensor> {
    if layer.input_kind() != ConvInput::Binary {
        return Err(mismatch("binary input given to a byte-input convolution"));
    }
    let packed;
    let layer = match layer.backend() {
        Backend::Packed => layer,
        Backend::Reference => {
            packed = layer.to_backend(Backend::Packed);
            &packed
        }
    };
    let (filters, correction) = layer.packed_parts()?;
    let mut acc = bgemm(&unroll(a, layer.geometry())?, filters)?;
    for (o, c) in acc.data_mut().iter_mut().zip(correction.data()) {
        *o += c;
    }
    // lifting: the GEMM buffer already is the output tensor
    acc.into_tensor(layer.output_dims())
}

/// Exact zero-padded convolution of a byte tensor, `H_out x W_out x F`.
pub fn conv_forward_bytes(layer: &ConvLayer, x: &ByteTensor) -> Result<IntTensor> {
    let layer = layer.to_backend(Backend::Packed);
    let mut unrolled = vec![0; BYTE_PLANES * layer.geometry().unrolled_words()];
    let mut out = vec![0; layer.output_dims().len()];
    layer.forward_bytes_packed_into(x.data(), &mut unrolled, &mut out)?;
    IntTensor::new(layer.output_dims(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FloatTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(input: Dims, k: usize, stride: usize, pad: usize, filters: usize) -> ConvGeometry {
        ConvGeometry {
            input,
            kernel_h: k,
            kernel_w: k,
            stride,
            pad,
            filters,
        }
    }

    /// Direct zero-padded convolution, `w[(ki, kj, c)][f]` row-major in a `patch x F` matrix.
    fn direct_conv(x: &FloatTensor, w: &FloatMatrix, g: &ConvGeometry) -> FloatTensor {
        let o = g.output_dims();
        let d = x.dims();
        FloatTensor::from_fn(o, |oy, ox, f| {
            let mut sum = 0.0;
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                    if iy < 0 || ix < 0 || iy >= d.rows as isize || ix >= d.cols as isize {
                        continue;
                    }
                    for c in 0..d.channels {
                        let k = (ki * g.kernel_w + kj) * d.channels + c;
                        sum += x.get(iy as usize, ix as usize, c).unwrap() * w.get(k, f);
                    }
                }
            }
            sum
        })
    }

    fn random_pm(rng: &mut ChaCha8Rng) -> f32 {
        if rng.random() {
            1.0
        } else {
            -1.0
        }
    }

    #[test]
    fn identity_unroll() {
        let dims = Dims::new(3, 4, 70);
        let a = PackedTensor::from_fn(dims, |m, n, l| (m + 2 * n + l) % 3 == 0);
        let u = unroll(&a, &geom(dims, 1, 1, 0, 1)).unwrap();
        assert_eq!(u.words(), a.words());
    }

    #[test]
    fn single_window_unroll() {
        let dims = Dims::new(3, 3, 1);
        let a = PackedTensor::from_fn(dims, |m, n, _| (m * 3 + n) % 2 == 0);
        let u = unroll(&a, &geom(dims, 3, 1, 0, 1)).unwrap();
        assert_eq!(u.rows(), 1);
        assert_eq!(u.words(), &[0b1_0101_0101]);
    }

    #[test]
    fn unroll_matches_naive_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &c in &[1usize, 16, 64, 70] {
            let dims = Dims::new(8, 8, c);
            let x = FloatTensor::from_fn(dims, |_, _, _| random_pm(&mut rng));
            let g = geom(dims, 3, 1, 1, 1);
            let u = unroll(&PackedTensor::pack(&x), &g).unwrap().unpack();
            let mut naive = vec![0.0; g.positions() * g.patch_len()];
            im2col_into(x.data(), &g, &mut naive).unwrap();
            for (got, want) in u.data().iter().zip(&naive) {
                // padding unrolls as -1
                let want = if *want == 0.0 { -1.0 } else { *want };
                assert_eq!(*got, want);
            }
        }
    }

    #[test]
    fn unroll_rejects_oversized_kernel() {
        let dims = Dims::new(2, 2, 1);
        let a = PackedTensor::from_fn(dims, |_, _, _| true);
        assert!(unroll(&a, &geom(dims, 3, 1, 0, 1)).is_err());
        assert!(unroll(&a, &geom(dims, 3, 1, 1, 1)).is_ok());
    }

    #[test]
    fn correction_counts_padding_cells() {
        let dims = Dims::new(4, 4, 1);
        let g = geom(dims, 3, 1, 1, 1);
        let w = PackedMatrixB::from_fn(9, 1, |_, _| true);
        let corr = compute_correction(&w, &g).unwrap();
        let expect = [5, 3, 3, 5, 3, 0, 0, 3, 3, 0, 0, 3, 5, 3, 3, 5];
        assert_eq!(corr.data(), &expect);

        let g0 = geom(dims, 3, 1, 0, 1);
        assert!(compute_correction(&w, &g0).unwrap().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn all_ones_padded_conv() {
        let dims = Dims::new(4, 4, 1);
        let g = geom(dims, 3, 1, 1, 1);
        let layer = ConvLayer::new(g, ConvInput::Binary, PackedMatrixB::from_fn(9, 1, |_, _| true))
            .unwrap();
        let x = PackedTensor::from_fn(dims, |_, _, _| true);
        let out = conv_forward(&layer, &x).unwrap();
        let expect = [4, 6, 6, 4, 6, 9, 9, 6, 6, 9, 9, 6, 4, 6, 6, 4];
        assert_eq!(out.data(), &expect);
    }

    #[test]
    fn unpadded_conv_is_plain_gemm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dims = Dims::new(6, 5, 3);
        let g = geom(dims, 3, 1, 0, 4);
        let w = PackedMatrixB::from_fn(27, 4, |_, _| rng.random());
        let layer = ConvLayer::new(g, ConvInput::Binary, w.clone()).unwrap();
        let x = PackedTensor::from_fn(dims, |_, _, _| rng.random());
        let out = conv_forward(&layer, &x).unwrap();
        let plain = bgemm(&unroll(&x, &g).unwrap(), &w).unwrap();
        assert_eq!(out.data(), plain.data());
    }

    #[test]
    fn lifting_reuses_the_gemm_buffer() {
        let dims = Dims::new(5, 5, 8);
        let g = geom(dims, 3, 1, 1, 8);
        let w = PackedMatrixB::from_fn(72, 8, |k, f| (k + f) % 3 == 0);
        let x = PackedTensor::from_fn(dims, |m, n, l| (m * n + l) % 2 == 0);
        let acc = bgemm(&unroll(&x, &g).unwrap(), &w).unwrap();
        let ptr = acc.data().as_ptr();
        let t = acc.into_tensor(g.output_dims()).unwrap();
        assert_eq!(t.data().as_ptr(), ptr);
        assert_eq!(t.dims(), Dims::new(5, 5, 8));
    }

    #[test]
    fn random_shapes_match_direct_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            let c = [1, 3, 16][rng.random_range(0..3)];
            let f = [1, 8][rng.random_range(0..2)];
            let pad = rng.random_range(0..3);
            let k = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let dims = Dims::new(rng.random_range(k..9), rng.random_range(k..9), c);
            let g = geom(dims, k, stride, pad, f);
            let x = FloatTensor::from_fn(dims, |_, _, _| random_pm(&mut rng));
            let w = FloatMatrix::from_fn(g.patch_len(), f, |_, _| random_pm(&mut rng));
            let layer = ConvLayer::new(g, ConvInput::Binary, PackedMatrixB::from_float(&w)).unwrap();
            let got = conv_forward(&layer, &PackedTensor::pack(&x)).unwrap();
            let want = direct_conv(&x, &w, &g);
            assert_eq!(got.to_float(), want, "geometry {g:?}");

            // reference flavor agrees as well
            let r = layer.to_backend(Backend::Reference);
            let (cl, sl) = r.reference_scratch_len();
            let (mut cols, mut scratch) = (vec![0.0; cl], vec![0.0; sl]);
            let mut out = vec![0.0; g.output_dims().len()];
            r.forward_reference_into(x.data(), &mut cols, &mut scratch, &mut out)
                .unwrap();
            assert_eq!(out, want.data());
        }
    }

    #[test]
    fn byte_conv_matches_direct_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // 7 and 62 channels end rows just short of a word boundary
        for &(c, pad, stride) in &[(3usize, 1usize, 1usize), (1, 0, 1), (3, 2, 1), (7, 0, 1), (7, 1, 2), (62, 2, 2), (22, 1, 1)] {
            let dims = Dims::new(7, 6, c);
            let g = geom(dims, 3, stride, pad, 5);
            let bytes = ByteTensor::from_fn(dims, |_, _, _| rng.random());
            let w = FloatMatrix::from_fn(g.patch_len(), 5, |_, _| random_pm(&mut rng));
            let layer = ConvLayer::new(g, ConvInput::Bytes, PackedMatrixB::from_float(&w)).unwrap();
            let got = conv_forward_bytes(&layer, &bytes).unwrap();
            assert_eq!(got.to_float(), direct_conv(&bytes.to_float(), &w, &g));
        }
    }
}
