//! Dense and bit-packed tensors.
//!
//! Every tensor is stored row-major with interleaved channels: element
//! `(m, n, l)` of an `M x N x L` tensor lives at `(m*N + n)*L + l`.
//!
//! Packed tensors hold one bit per element, 64 elements per `u64` word,
//! least-significant bit first. A +1 is encoded as a set bit and -1 as a
//! clear bit. Packing runs along the channel axis when `L > 1` and along the
//! column axis when `L == 1`, so each packed line is a contiguous run of the
//! dense layout. Lines are padded independently to whole words and the
//! padding bits are always zero.

use crate::error::{mismatch, Dims, Error, Result};

pub const WORD_BITS: usize = 64;

/// Number of 64-bit words needed to hold `bits` bits.
#[inline]
pub const fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Mask of the valid bits in the last word of a line holding `bits` bits.
#[inline]
pub const fn tail_mask(bits: usize) -> u64 {
    match bits % WORD_BITS {
        0 => !0,
        r => (1u64 << r) - 1,
    }
}

/// Sign binarization: `x >= 0` maps to +1 (set bit), everything else to -1.
///
/// NaN maps to +1 so the activation path stays branch-free.
#[inline(always)]
pub fn binarize(x: f32) -> bool {
    x >= 0.0 || x.is_nan()
}

/// `binarize` as a float in `{-1.0, +1.0}`.
#[inline(always)]
pub fn sign(x: f32) -> f32 {
    if binarize(x) {
        1.0
    } else {
        -1.0
    }
}

#[inline(always)]
pub(crate) fn bit_to_f32(bit: bool) -> f32 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

/// Position of `(m, n, l)` in linear memory.
pub fn linear_offset(m: usize, n: usize, l: usize, dims: Dims) -> Result<usize> {
    if m >= dims.rows || n >= dims.cols || l >= dims.channels {
        return Err(Error::OutOfBounds { m, n, l, dims });
    }
    Ok((m * dims.cols + n) * dims.channels + l)
}

macro_rules! dense_tensor {
    ($(#[$meta:meta])* $name:ident, $elem:ty) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            dims: Dims,
            data: Vec<$elem>,
        }

        impl $name {
            pub fn new(dims: Dims, data: Vec<$elem>) -> Result<Self> {
                if data.len() != dims.len() {
                    return Err(mismatch(format!(
                        "{} elements supplied for a {} tensor",
                        data.len(),
                        dims
                    )));
                }
                Ok($name { dims, data })
            }

            pub fn zeros(dims: Dims) -> Self {
                $name {
                    dims,
                    data: vec![<$elem>::default(); dims.len()],
                }
            }

            pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> $elem) -> Self {
                let mut data = Vec::with_capacity(dims.len());
                for m in 0..dims.rows {
                    for n in 0..dims.cols {
                        for l in 0..dims.channels {
                            data.push(f(m, n, l));
                        }
                    }
                }
                $name { dims, data }
            }

            pub fn dims(&self) -> Dims {
                self.dims
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            pub fn get(&self, m: usize, n: usize, l: usize) -> Result<$elem> {
                Ok(self.data[linear_offset(m, n, l, self.dims)?])
            }

            pub fn set(&mut self, m: usize, n: usize, l: usize, value: $elem) -> Result<()> {
                let at = linear_offset(m, n, l, self.dims)?;
                self.data[at] = value;
                Ok(())
            }
        }
    };
}

dense_tensor!(
    /// Dense `f32` tensor.
    FloatTensor,
    f32
);
dense_tensor!(
    /// Dense `i32` tensor, the output domain of binary convolution and dense layers.
    IntTensor,
    i32
);
dense_tensor!(
    /// Dense unsigned byte tensor, e.g. an 8-bit image.
    ByteTensor,
    u8
);

impl IntTensor {
    pub fn to_float(&self) -> FloatTensor {
        FloatTensor {
            dims: self.dims,
            data: self.data.iter().map(|&x| x as f32).collect(),
        }
    }
}

impl ByteTensor {
    pub fn to_float(&self) -> FloatTensor {
        FloatTensor {
            dims: self.dims,
            data: self.data.iter().map(|&x| x as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PackAxis {
    Channel,
    Column,
}

impl PackAxis {
    pub fn for_dims(dims: Dims) -> Self {
        if dims.channels > 1 {
            PackAxis::Channel
        } else {
            PackAxis::Column
        }
    }
}

/// Line structure of a packed tensor with given logical dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PackedLayout {
    pub dims: Dims,
    pub axis: PackAxis,
    pub lines: usize,
    pub bits_per_line: usize,
    pub words_per_line: usize,
}

impl PackedLayout {
    pub fn for_dims(dims: Dims) -> Self {
        let axis = PackAxis::for_dims(dims);
        let (lines, bits_per_line) = match axis {
            PackAxis::Channel => (dims.rows * dims.cols, dims.channels),
            PackAxis::Column => (dims.rows, dims.cols),
        };
        PackedLayout {
            dims,
            axis,
            lines,
            bits_per_line,
            words_per_line: words_for(bits_per_line),
        }
    }

    pub fn word_len(&self) -> usize {
        self.lines * self.words_per_line
    }

    /// Line index and bit index within that line of element `(m, n, l)`.
    pub fn locate(&self, m: usize, n: usize, l: usize) -> Result<(usize, usize)> {
        let at = linear_offset(m, n, l, self.dims)?;
        Ok((at / self.bits_per_line, at % self.bits_per_line))
    }
}

/// Packs a dense buffer laid out in `layout.dims` order into `out`.
///
/// `out` must hold exactly `layout.word_len()` words; it is fully overwritten.
pub fn pack_into<T: Copy>(
    layout: &PackedLayout,
    src: &[T],
    mut bit: impl FnMut(T) -> bool,
    out: &mut [u64],
) {
    debug_assert_eq!(src.len(), layout.dims.len());
    debug_assert_eq!(out.len(), layout.word_len());
    if layout.bits_per_line == 0 {
        return;
    }
    for (line, dst) in src
        .chunks_exact(layout.bits_per_line)
        .zip(out.chunks_exact_mut(layout.words_per_line))
    {
        for (chunk, word) in line.chunks(WORD_BITS).zip(dst.iter_mut()) {
            let mut w = 0u64;
            for (j, &x) in chunk.iter().enumerate() {
                w |= (bit(x) as u64) << j;
            }
            *word = w;
        }
    }
}

/// Like [`pack_into`] but the predicate also receives each element's linear offset.
pub fn pack_indexed_into<T: Copy>(
    layout: &PackedLayout,
    src: &[T],
    mut bit: impl FnMut(usize, T) -> bool,
    out: &mut [u64],
) {
    debug_assert_eq!(src.len(), layout.dims.len());
    debug_assert_eq!(out.len(), layout.word_len());
    let bpl = layout.bits_per_line;
    if bpl == 0 {
        return;
    }
    for (i, (line, dst)) in src
        .chunks_exact(bpl)
        .zip(out.chunks_exact_mut(layout.words_per_line))
        .enumerate()
    {
        for (w, (chunk, word)) in line.chunks(WORD_BITS).zip(dst.iter_mut()).enumerate() {
            let base = i * bpl + w * WORD_BITS;
            let mut acc = 0u64;
            for (j, &x) in chunk.iter().enumerate() {
                acc |= (bit(base + j, x) as u64) << j;
            }
            *word = acc;
        }
    }
}

/// Reads `len <= 64` bits starting at bit `start` of a packed line.
#[inline]
pub fn read_bits(src: &[u64], start: usize, len: usize) -> u64 {
    debug_assert!(len <= WORD_BITS && len > 0);
    let (w, off) = (start / WORD_BITS, start % WORD_BITS);
    let mut v = src[w] >> off;
    if off != 0 && off + len > WORD_BITS {
        v |= src[w + 1] << (WORD_BITS - off);
    }
    if len < WORD_BITS {
        v &= (1u64 << len) - 1;
    }
    v
}

/// ORs `len` bits of `src` (from `src_start`) into `dst` at `dst_start`.
///
/// The destination range is expected to be clear.
pub fn copy_bits(src: &[u64], src_start: usize, dst: &mut [u64], dst_start: usize, len: usize) {
    let mut done = 0;
    while done < len {
        let n = (len - done).min(WORD_BITS);
        let v = read_bits(src, src_start + done, n);
        let at = dst_start + done;
        let (w, off) = (at / WORD_BITS, at % WORD_BITS);
        dst[w] |= v << off;
        if off != 0 && off + n > WORD_BITS {
            dst[w + 1] |= v >> (WORD_BITS - off);
        }
        done += n;
    }
}

/// Concatenates the lines of a packed tensor into one contiguous bit vector of
/// `dims.len()` elements (`words_for(dims.len())` words), in linear-offset order.
pub fn flatten_packed_into(view: &PackedView<'_>, out: &mut [u64]) {
    let layout = &view.layout;
    debug_assert_eq!(out.len(), words_for(layout.dims.len()));
    if layout.lines <= 1 || layout.bits_per_line.is_multiple_of(WORD_BITS) {
        out.copy_from_slice(view.words);
        return;
    }
    out.fill(0);
    for i in 0..layout.lines {
        copy_bits(view.line(i), 0, out, i * layout.bits_per_line, layout.bits_per_line);
    }
}

/// Expands packed lines back to a dense `{-1, +1}` buffer.
pub fn unpack_into(layout: &PackedLayout, words: &[u64], out: &mut [f32]) {
    debug_assert_eq!(out.len(), layout.dims.len());
    if layout.bits_per_line == 0 {
        return;
    }
    for (line, dst) in words
        .chunks_exact(layout.words_per_line)
        .zip(out.chunks_exact_mut(layout.bits_per_line))
    {
        for (chunk, &word) in dst.chunks_mut(WORD_BITS).zip(line) {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = bit_to_f32(word >> j & 1 == 1);
            }
        }
    }
}

/// True when every padding bit of every line is zero.
pub fn padding_is_clear(layout: &PackedLayout, words: &[u64]) -> bool {
    if layout.words_per_line == 0 {
        return true;
    }
    let mask = tail_mask(layout.bits_per_line);
    words
        .chunks_exact(layout.words_per_line)
        .all(|line| line[layout.words_per_line - 1] & !mask == 0)
}

/// Borrowed packed tensor.
#[derive(Debug, Clone, Copy)]
pub struct PackedView<'a> {
    pub layout: PackedLayout,
    pub words: &'a [u64],
}

impl<'a> PackedView<'a> {
    pub fn line(&self, i: usize) -> &'a [u64] {
        let w = self.layout.words_per_line;
        &self.words[i * w..(i + 1) * w]
    }
}

/// Bit-packed `{-1, +1}` tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    layout: PackedLayout,
    words: Vec<u64>,
}

impl PackedTensor {
    /// Binarizes with [`binarize`] and packs along the axis chosen by the channel count.
    pub fn pack(t: &FloatTensor) -> Self {
        Self::pack_with(t.dims(), t.data(), binarize)
    }

    pub fn pack_with<T: Copy>(dims: Dims, src: &[T], bit: impl FnMut(T) -> bool) -> Self {
        let layout = PackedLayout::for_dims(dims);
        let mut words = vec![0u64; layout.word_len()];
        pack_into(&layout, src, bit, &mut words);
        PackedTensor { layout, words }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for m in 0..dims.rows {
            for n in 0..dims.cols {
                for l in 0..dims.channels {
                    bits.push(f(m, n, l));
                }
            }
        }
        Self::pack_with(dims, &bits, |b| b)
    }

    /// Wraps raw words, rejecting a wrong length or any set padding bit.
    pub fn from_words(dims: Dims, words: Vec<u64>) -> Result<Self> {
        let layout = PackedLayout::for_dims(dims);
        if words.len() != layout.word_len() {
            return Err(mismatch(format!(
                "{} words supplied, {} needed for a packed {} tensor",
                words.len(),
                layout.word_len(),
                dims
            )));
        }
        if !padding_is_clear(&layout, &words) {
            return Err(mismatch("nonzero padding bits in packed tensor"));
        }
        Ok(PackedTensor { layout, words })
    }

    pub fn unpack(&self) -> FloatTensor {
        let mut data = vec![0.0; self.layout.dims.len()];
        unpack_into(&self.layout, &self.words, &mut data);
        FloatTensor::new(self.layout.dims, data).expect("length matches dims")
    }

    pub fn bit(&self, m: usize, n: usize, l: usize) -> Result<bool> {
        let (line, j) = self.layout.locate(m, n, l)?;
        let word = self.words[line * self.layout.words_per_line + j / WORD_BITS];
        Ok(word >> (j % WORD_BITS) & 1 == 1)
    }

    pub fn view(&self) -> PackedView<'_> {
        PackedView {
            layout: self.layout,
            words: &self.words,
        }
    }

    pub fn line(&self, i: usize) -> &[u64] {
        self.view().line(i)
    }

    pub fn layout(&self) -> &PackedLayout {
        &self.layout
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn axis(&self) -> PackAxis {
        self.layout.axis
    }

    pub fn lines(&self) -> usize {
        self.layout.lines
    }

    pub fn bits_per_line(&self) -> usize {
        self.layout.bits_per_line
    }

    pub fn words_per_line(&self) -> usize {
        self.layout.words_per_line
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn padding_is_clear(&self) -> bool {
        padding_is_clear(&self.layout, &self.words)
    }
}

pub const BYTE_PLANES: usize = 8;

/// Writes the 8 bit planes of `src` plane-major into `out`
/// (`BYTE_PLANES * layout.word_len()` words).
pub fn bitplanes_into(layout: &PackedLayout, src: &[u8], out: &mut [u64]) {
    let plane_len = layout.word_len();
    debug_assert_eq!(out.len(), BYTE_PLANES * plane_len);
    for (i, plane) in out.chunks_exact_mut(plane_len.max(1)).enumerate() {
        pack_into(layout, src, |b| b >> i & 1 == 1, plane);
    }
}

/// Bit-plane decomposition of an 8-bit tensor: plane `i` holds bit `i` of every element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    planes: Vec<PackedTensor>,
}

impl BitPlanes {
    pub fn planes(&self) -> &[PackedTensor] {
        &self.planes
    }

    pub fn plane(&self, i: usize) -> &PackedTensor {
        &self.planes[i]
    }

    /// Rebuilds the byte tensor as `sum_i 2^i * plane_i`.
    pub fn reconstruct(&self) -> ByteTensor {
        let dims = self.planes[0].dims();
        ByteTensor::from_fn(dims, |m, n, l| {
            self.planes.iter().enumerate().fold(0u8, |acc, (i, p)| {
                acc | ((p.bit(m, n, l).expect("in bounds") as u8) << i)
            })
        })
    }
}

pub fn bitplanes(bytes: &ByteTensor) -> BitPlanes {
    let planes = (0..BYTE_PLANES)
        .map(|i| PackedTensor::pack_with(bytes.dims(), bytes.data(), |b| b >> i & 1 == 1))
        .collect();
    BitPlanes { planes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn offset_origin_and_formula() {
        assert_eq!(linear_offset(0, 0, 0, Dims::new(2, 3, 4)).unwrap(), 0);
        assert_eq!(linear_offset(1, 2, 3, Dims::new(4, 4, 8)).unwrap(), 51);
    }

    #[test]
    fn offset_is_a_bijection() {
        let dims = Dims::new(3, 5, 7);
        let mut seen = vec![false; dims.len()];
        for m in 0..3 {
            for n in 0..5 {
                for l in 0..7 {
                    let at = linear_offset(m, n, l, dims).unwrap();
                    assert!(!seen[at]);
                    seen[at] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn offset_out_of_range() {
        let dims = Dims::new(2, 2, 2);
        assert!(matches!(
            linear_offset(2, 0, 0, dims),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(linear_offset(0, 0, 2, dims).is_err());
    }

    #[test]
    fn layout_invariant_on_write_read() {
        let dims = Dims::new(3, 4, 5);
        let t = FloatTensor::from_fn(dims, |m, n, l| (m * 100 + n * 10 + l) as f32);
        for m in 0..3 {
            for n in 0..4 {
                for l in 0..5 {
                    let at = linear_offset(m, n, l, dims).unwrap();
                    assert_eq!(t.data()[at], (m * 100 + n * 10 + l) as f32);
                }
            }
        }
    }

    #[test]
    fn tensor_length_checked() {
        assert!(FloatTensor::new(Dims::new(2, 2, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn pack_all_plus_one_columns() {
        let t = FloatTensor::new(Dims::new(1, 64, 1), vec![1.0; 64]).unwrap();
        let p = PackedTensor::pack(&t);
        assert_eq!(p.axis(), PackAxis::Column);
        assert_eq!(p.words(), &[u64::MAX]);
    }

    #[test]
    fn pack_all_minus_one_channels() {
        let t = FloatTensor::new(Dims::new(1, 1, 64), vec![-1.0; 64]).unwrap();
        let p = PackedTensor::pack(&t);
        assert_eq!(p.axis(), PackAxis::Channel);
        assert_eq!(p.words(), &[0]);
    }

    #[test]
    fn pack_ragged_alternating() {
        let data: Vec<f32> = (0..70).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = FloatTensor::new(Dims::new(1, 70, 1), data.clone()).unwrap();
        let p = PackedTensor::pack(&t);

        // bit-by-bit from the encoding rule
        let mut expected = [0u64; 2];
        for (i, &x) in data.iter().enumerate() {
            if x > 0.0 {
                expected[i / 64] |= 1 << (i % 64);
            }
        }
        assert_eq!(p.words(), &expected);
        assert_eq!(p.words()[1] >> 6, 0);
        assert_eq!(p.words()[1], 0b010101);
    }

    #[test]
    fn sign_of_zero_and_nan() {
        assert!(binarize(0.0));
        assert!(binarize(-0.0));
        assert!(binarize(f32::NAN));
        assert!(!binarize(-1e-30));
    }

    #[test]
    fn unpack_single_bit() {
        let p = PackedTensor::from_words(Dims::new(1, 64, 1), vec![1]).unwrap();
        let u = p.unpack();
        assert_eq!(u.data()[0], 1.0);
        assert!(u.data()[1..].iter().all(|&x| x == -1.0));
    }

    #[test]
    fn unpack_zero_words() {
        let p = PackedTensor::from_words(Dims::new(3, 2, 70), vec![0; 12]).unwrap();
        assert!(p.unpack().data().iter().all(|&x| x == -1.0));
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        assert!(PackedTensor::from_words(Dims::new(1, 63, 1), vec![1 << 63]).is_err());
        assert!(PackedTensor::from_words(Dims::new(1, 63, 1), vec![1 << 62]).is_ok());
        assert!(PackedTensor::from_words(Dims::new(1, 63, 1), vec![0, 0]).is_err());
    }

    #[test]
    fn lines_are_word_aligned_per_site() {
        let dims = Dims::new(2, 3, 65);
        let p = PackedTensor::from_fn(dims, |m, n, l| (m + n + l) % 3 == 0);
        assert_eq!(p.lines(), 6);
        assert_eq!(p.words_per_line(), 2);
        assert_eq!(p.words().len(), 12);
        for m in 0..2 {
            for n in 0..3 {
                for l in 0..65 {
                    assert_eq!(p.bit(m, n, l).unwrap(), (m + n + l) % 3 == 0);
                }
            }
        }
    }

    #[test]
    fn bitplanes_of_zero() {
        let b = ByteTensor::zeros(Dims::new(4, 4, 3));
        let planes = bitplanes(&b);
        assert_eq!(planes.planes().len(), 8);
        assert!(planes.planes().iter().all(|p| p.words().iter().all(|&w| w == 0)));
    }

    #[test]
    fn bitplanes_of_five() {
        let b = ByteTensor::new(Dims::new(1, 1, 1), vec![5]).unwrap();
        let planes = bitplanes(&b);
        for i in 0..8 {
            assert_eq!(planes.plane(i).words()[0], (i == 0 || i == 2) as u64);
        }
    }

    #[test]
    fn bitplanes_all_byte_values() {
        let b = ByteTensor::new(Dims::new(1, 256, 1), (0..=255).collect()).unwrap();
        let planes = bitplanes(&b);
        assert_eq!(planes.reconstruct(), b);
        for p in planes.planes() {
            assert!(p.padding_is_clear());
        }
    }

    #[test]
    fn bitplanes_into_matches_owned() {
        let dims = Dims::new(3, 3, 5);
        let b = ByteTensor::from_fn(dims, |m, n, l| (m * 37 + n * 11 + l * 101) as u8);
        let layout = PackedLayout::for_dims(dims);
        let mut flat = vec![0; 8 * layout.word_len()];
        bitplanes_into(&layout, b.data(), &mut flat);
        let planes = bitplanes(&b);
        for i in 0..8 {
            let n = layout.word_len();
            assert_eq!(&flat[i * n..(i + 1) * n], planes.plane(i).words());
        }
    }

    #[test]
    fn copy_bits_matches_bitwise() {
        let src = [0xdead_beef_0123_4567u64, 0x89ab_cdef_f0f0_0f0f, 0x5555_aaaa_3333_cccc];
        for &(s0, d0, len) in &[(0, 0, 192), (3, 61, 100), (64, 5, 64), (70, 0, 1), (1, 127, 65)] {
            let mut dst = [0u64; 4];
            copy_bits(&src, s0, &mut dst, d0, len);
            for i in 0..256 {
                let got = dst[i / 64] >> (i % 64) & 1;
                let want = if i >= d0 && i < d0 + len {
                    let j = s0 + i - d0;
                    src[j / 64] >> (j % 64) & 1
                } else {
                    0
                };
                assert_eq!(got, want, "bit {i} for ({s0}, {d0}, {len})");
            }
        }
    }

    #[test]
    fn flatten_concatenates_lines() {
        let dims = Dims::new(2, 3, 5);
        let p = PackedTensor::from_fn(dims, |m, n, l| (m * 7 + n * 3 + l) % 4 == 1);
        let mut flat = vec![0; 1];
        flatten_packed_into(&p.view(), &mut flat);
        for at in 0..30 {
            let (m, n, l) = (at / 15, at / 5 % 3, at % 5);
            assert_eq!(flat[0] >> at & 1 == 1, p.bit(m, n, l).unwrap());
        }
        assert_eq!(flat[0] >> 30, 0);
    }

    fn dims_strategy() -> impl Strategy<Value = Dims> {
        (1usize..6, 1usize..140, 1usize..140).prop_map(|(m, n, l)| {
            // keep sizes modest
            if l > 1 {
                Dims::new(m, n % 5 + 1, l)
            } else {
                Dims::new(m, n, 1)
            }
        })
    }

    fn pm_one_tensor() -> impl Strategy<Value = FloatTensor> {
        dims_strategy().prop_flat_map(|dims| {
            proptest::collection::vec(any::<bool>(), dims.len()).prop_map(move |bits| {
                FloatTensor::new(dims, bits.into_iter().map(bit_to_f32).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_pm_one(t in pm_one_tensor()) {
            let p = PackedTensor::pack(&t);
            prop_assert!(p.padding_is_clear());
            prop_assert_eq!(p.unpack(), t);
        }

        #[test]
        fn axis_rule(dims in dims_strategy()) {
            let p = PackedTensor::pack(&FloatTensor::zeros(dims));
            let expected = if dims.channels > 1 { PackAxis::Channel } else { PackAxis::Column };
            prop_assert_eq!(p.axis(), expected);
        }

        #[test]
        fn unpack_is_sign_of_input(
            dims in dims_strategy(),
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let t = FloatTensor::from_fn(dims, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) as f32 / (1u64 << 23) as f32) - 1.0
            });
            let u = PackedTensor::pack(&t).unpack();
            for (a, b) in t.data().iter().zip(u.data()) {
                prop_assert_eq!(sign(*a), *b);
            }
        }

        #[test]
        fn bitplanes_reconstruct(
            dims in dims_strategy(),
            bytes in proptest::collection::vec(any::<u8>(), 1..5000),
        ) {
            let data: Vec<u8> = bytes.iter().copied().cycle().take(dims.len()).collect();
            let b = ByteTensor::new(dims, data).unwrap();
            let planes = bitplanes(&b);
            for p in planes.planes() {
                prop_assert!(p.padding_is_clear());
            }
            prop_assert_eq!(planes.reconstruct(), b);
        }
    }
}
