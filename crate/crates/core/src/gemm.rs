//! Binary and floating-point matrix products.
//!
//! The packed kernels compute `±1` dot products as `K - 2 * popcount(a ^ b)`.
//! Because padding bits are zero in both operands they never differ, so a
//! ragged tail needs no masking. Bit-plane products use `popcount(plane & w)`
//! since plane bits are `{0, 1}` values rather than signs.

use rayon::prelude::*;

use crate::error::{mismatch, Dims, Result};
use crate::tensor::{
    bit_to_f32, binarize, padding_is_clear, words_for, IntTensor, PackedLayout,
    BYTE_PLANES, WORD_BITS,
};

/// Output rows per tile of the binary GEMM.
pub const TILE_M: usize = 64;
/// Output columns per tile of the binary GEMM.
pub const TILE_N: usize = 64;
/// K-words per tile of the binary GEMM.
pub const TILE_K_WORDS: usize = 256;

const MICRO_M: usize = 4;
const MICRO_N: usize = 4;

/// Largest supported dot-product length.
pub const MAX_DOT_LEN: usize = 1 << 24;

/// Largest dot-product length with 8-bit inputs, keeping `2 * 255 * K` within `i32`.
pub const MAX_BYTE_DOT_LEN: usize = i32::MAX as usize / 510;

/// Borrowed set of equal-length packed lines (rows of A or columns of B).
#[derive(Debug, Clone, Copy)]
pub struct Lines<'a> {
    pub count: usize,
    pub bits: usize,
    pub words_per_line: usize,
    pub words: &'a [u64],
}

impl<'a> Lines<'a> {
    pub fn new(count: usize, bits: usize, words: &'a [u64]) -> Self {
        let words_per_line = words_for(bits);
        debug_assert_eq!(words.len(), count * words_per_line);
        Lines {
            count,
            bits,
            words_per_line,
            words,
        }
    }

    #[inline]
    pub fn line(&self, i: usize) -> &'a [u64] {
        &self.words[i * self.words_per_line..(i + 1) * self.words_per_line]
    }
}

/// Owned packed lines of `bits` logical elements each.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PackedLines {
    count: usize,
    bits: usize,
    words: Vec<u64>,
}

impl PackedLines {
    fn from_words(count: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let wpl = words_for(bits);
        if words.len() != count * wpl {
            return Err(mismatch(format!(
                "{} words supplied for {} lines of {} bits",
                words.len(),
                count,
                bits
            )));
        }
        let layout = PackedLayout {
            dims: Dims::new(count, bits, 1),
            axis: crate::tensor::PackAxis::Column,
            lines: count,
            bits_per_line: bits,
            words_per_line: wpl,
        };
        if !padding_is_clear(&layout, &words) {
            return Err(mismatch("nonzero padding bits in packed matrix"));
        }
        Ok(PackedLines { count, bits, words })
    }

    fn from_fn(count: usize, bits: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let wpl = words_for(bits);
        let mut words = vec![0u64; count * wpl];
        for i in 0..count {
            let line = &mut words[i * wpl..(i + 1) * wpl];
            for j in 0..bits {
                line[j / WORD_BITS] |= (f(i, j) as u64) << (j % WORD_BITS);
            }
        }
        PackedLines { count, bits, words }
    }

    fn lines(&self) -> Lines<'_> {
        Lines::new(self.count, self.bits, &self.words)
    }
}

macro_rules! packed_matrix {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name(PackedLines);

        impl $name {
            /// Packed words, one line after another.
            pub fn words(&self) -> &[u64] {
                &self.0.words
            }

            /// Logical length of every line (the inner dimension K).
            pub fn inner(&self) -> usize {
                self.0.bits
            }

            pub fn words_per_line(&self) -> usize {
                words_for(self.0.bits)
            }

            pub fn line(&self, i: usize) -> &[u64] {
                self.0.lines().line(i)
            }

            pub fn lines(&self) -> Lines<'_> {
                self.0.lines()
            }

            /// Size of the packed payload in bytes.
            pub fn byte_len(&self) -> usize {
                self.0.words.len() * 8
            }
        }
    };
}

packed_matrix!(
    /// `M x K` binary matrix with each row packed over K.
    PackedMatrixA
);
packed_matrix!(
    /// `K x N` binary matrix with each column packed over K.
    PackedMatrixB
);

impl PackedMatrixA {
    pub fn from_words(rows: usize, inner: usize, words: Vec<u64>) -> Result<Self> {
        PackedLines::from_words(rows, inner, words).map(Self)
    }

    /// Row-packs a float matrix, binarizing each element.
    pub fn from_float(m: &FloatMatrix) -> Self {
        Self::from_fn(m.rows, m.cols, |r, k| binarize(m.get(r, k)))
    }

    pub fn from_fn(rows: usize, inner: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(PackedLines::from_fn(rows, inner, f))
    }

    pub fn rows(&self) -> usize {
        self.0.count
    }

    /// The `{-1, +1}` float matrix this packs.
    pub fn unpack(&self) -> FloatMatrix {
        let lines = self.lines();
        FloatMatrix::from_fn(self.rows(), self.inner(), |r, k| {
            bit_to_f32(lines.line(r)[k / WORD_BITS] >> (k % WORD_BITS) & 1 == 1)
        })
    }
}

impl PackedMatrixB {
    pub fn from_words(cols: usize, inner: usize, words: Vec<u64>) -> Result<Self> {
        PackedLines::from_words(cols, inner, words).map(Self)
    }

    /// Column-packs a `K x N` float matrix, binarizing each element.
    pub fn from_float(m: &FloatMatrix) -> Self {
        Self::from_fn(m.rows, m.cols, |k, c| binarize(m.get(k, c)))
    }

    /// `f(k, n)` gives element `(k, n)` of the logical `K x N` matrix.
    pub fn from_fn(inner: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(PackedLines::from_fn(cols, inner, |c, k| f(k, c)))
    }

    pub fn cols(&self) -> usize {
        self.0.count
    }

    /// The `K x N` `{-1, +1}` float matrix this packs.
    pub fn unpack(&self) -> FloatMatrix {
        let lines = self.lines();
        FloatMatrix::from_fn(self.inner(), self.cols(), |k, c| {
            bit_to_f32(lines.line(c)[k / WORD_BITS] >> (k % WORD_BITS) & 1 == 1)
        })
    }
}

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FloatMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "{} elements supplied for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(FloatMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FloatMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| (i == j) as u8 as f32)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        FloatMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// `M x N` matrix of binary dot products.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i32>,
}

impl AccumMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch("accumulator length does not match its shape"));
        }
        Ok(AccumMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        AccumMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    /// Reinterprets the buffer as a tensor without moving any element.
    pub fn into_tensor(self, dims: Dims) -> Result<IntTensor> {
        IntTensor::new(dims, self.data)
    }
}

#[inline(always)]
fn mismatches(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `±1` dot product of two packed lines of `k` logical elements.
///
/// Panics if either line is not `ceil(k / 64)` words long.
#[inline]
pub fn bdot(a: &[u64], b: &[u64], k: usize) -> i32 {
    let w = words_for(k);
    assert!(
        a.len() == w && b.len() == w,
        "bdot: lines of {} and {} words for K = {}",
        a.len(),
        b.len(),
        k
    );
    debug_assert!(k <= MAX_DOT_LEN);
    k as i32 - 2 * mismatches(a, b) as i32
}

fn check_inner(a: &Lines<'_>, b: &Lines<'_>) -> Result<()> {
    if a.bits != b.bits {
        return Err(mismatch(format!(
            "inner dimensions differ: {} vs {}",
            a.bits, b.bits
        )));
    }
    if a.bits > MAX_DOT_LEN {
        return Err(mismatch(format!("inner dimension {} too large", a.bits)));
    }
    Ok(())
}

/// Accumulates the mismatch counts of an `MICRO_M x MICRO_N` block over a k-range.
#[inline(always)]
fn micro_block(
    a: &Lines<'_>,
    b: &Lines<'_>,
    m0: usize,
    n0: usize,
    k0: usize,
    k1: usize,
) -> [[u32; MICRO_N]; MICRO_M] {
    let ar: [&[u64]; MICRO_M] = std::array::from_fn(|i| &a.line(m0 + i)[k0..k1]);
    let br: [&[u64]; MICRO_N] = std::array::from_fn(|j| &b.line(n0 + j)[k0..k1]);
    let mut acc = [[0u32; MICRO_N]; MICRO_M];
    for k in 0..k1 - k0 {
        let bw: [u64; MICRO_N] = std::array::from_fn(|j| br[j][k]);
        for i in 0..MICRO_M {
            let aw = ar[i][k];
            for j in 0..MICRO_N {
                acc[i][j] = acc[i][j].wrapping_add((aw ^ bw[j]).count_ones());
            }
        }
    }
    acc
}

/// Runs the tiled kernel for output rows `rows` into `out` (row-major, `rows.len() x b.count`).
fn bgemm_rows(a: &Lines<'_>, b: &Lines<'_>, rows: std::ops::Range<usize>, out: &mut [i32]) {
    let n = b.count;
    let kw = a.words_per_line;
    out.fill(0);
    for n_tile in (0..n).step_by(TILE_N) {
        let n_end = (n_tile + TILE_N).min(n);
        for k0 in (0..kw).step_by(TILE_K_WORDS) {
            let k1 = (k0 + TILE_K_WORDS).min(kw);
            for m_tile in (rows.start..rows.end).step_by(TILE_M) {
                let m_end = (m_tile + TILE_M).min(rows.end);
                let mut m = m_tile;
                while m + MICRO_M <= m_end {
                    let mut c = n_tile;
                    while c + MICRO_N <= n_end {
                        let acc = micro_block(a, b, m, c, k0, k1);
                        for (i, row) in acc.iter().enumerate() {
                            let o = &mut out[(m - rows.start + i) * n + c..][..MICRO_N];
                            for (dst, &v) in o.iter_mut().zip(row) {
                                *dst += v as i32;
                            }
                        }
                        c += MICRO_N;
                    }
                    for c in c..n_end {
                        for i in 0..MICRO_M {
                            out[(m - rows.start + i) * n + c] +=
                                mismatches(&a.line(m + i)[k0..k1], &b.line(c)[k0..k1]) as i32;
                        }
                    }
                    m += MICRO_M;
                }
                for m in m..m_end {
                    for c in n_tile..n_end {
                        out[(m - rows.start) * n + c] +=
                            mismatches(&a.line(m)[k0..k1], &b.line(c)[k0..k1]) as i32;
                    }
                }
            }
        }
    }
    let k = a.bits as i32;
    for v in out.iter_mut() {
        *v = k - 2 * *v;
    }
}

/// Binary GEMM into a caller-provided `M x N` row-major buffer.
pub fn bgemm_into(a: Lines<'_>, b: Lines<'_>, out: &mut [i32]) -> Result<()> {
    check_inner(&a, &b)?;
    if out.len() != a.count * b.count {
        return Err(mismatch("output buffer does not match M x N"));
    }
    bgemm_rows(&a, &b, 0..a.count, out);
    Ok(())
}

/// `C[m][n] = bdot(row m of A, column n of B)`.
pub fn bgemm(a: &PackedMatrixA, b: &PackedMatrixB) -> Result<AccumMatrix> {
    let mut out = AccumMatrix::zeros(a.rows(), b.cols());
    bgemm_into(a.lines(), b.lines(), &mut out.data)?;
    Ok(out)
}

/// Binary GEMM parallel over row tiles on the current rayon pool.
///
/// Every dot is computed by the same single-threaded kernel, so the result is
/// bit-identical to [`bgemm`].
pub fn bgemm_par(a: &PackedMatrixA, b: &PackedMatrixB) -> Result<AccumMatrix> {
    let (la, lb) = (a.lines(), b.lines());
    check_inner(&la, &lb)?;
    let mut out = AccumMatrix::zeros(a.rows(), b.cols());
    let n = b.cols();
    if n == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(TILE_M * n)
        .enumerate()
        .for_each(|(t, chunk)| {
            let start = t * TILE_M;
            bgemm_rows(&la, &lb, start..start + chunk.len() / n, chunk);
        });
    Ok(out)
}

/// Binary matrix-vector product into `out` (`a.count` entries).
pub fn bgemv_into(a: Lines<'_>, x: &[u64], out: &mut [i32]) -> Result<()> {
    if x.len() != a.words_per_line || out.len() != a.count {
        return Err(mismatch(format!(
            "matvec over {} rows x {} words given a {}-word vector",
            a.count,
            a.words_per_line,
            x.len()
        )));
    }
    let k = a.bits;
    for (m, y) in out.iter_mut().enumerate() {
        *y = k as i32 - 2 * mismatches(a.line(m), x) as i32;
    }
    Ok(())
}

/// `y[m] = bdot(row m of A, x)`; `x` packs `A.inner()` elements.
pub fn bgemv(a: &PackedMatrixA, x: &[u64]) -> Result<Vec<i32>> {
    let mut out = vec![0; a.rows()];
    bgemv_into(a.lines(), x, &mut out)?;
    Ok(out)
}

/// Dot product of an 8-bit vector, given as its bit planes, with a packed `±1` line.
///
/// Each plane contributes `2 * popcount(plane & w) - popcount(plane)`, the dot of
/// its `{0, 1}` bits with the signs, weighted by `2^i`.
pub fn bitplane_dot(planes: &[&[u64]], w: &[u64], k: usize) -> i32 {
    let wl = words_for(k);
    assert!(
        w.len() == wl && planes.iter().all(|p| p.len() == wl),
        "bitplane_dot: line lengths do not match K = {k}"
    );
    assert!(planes.len() <= BYTE_PLANES && k <= MAX_BYTE_DOT_LEN, "bitplane_dot: too many planes or K too large");
    planes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let on: u32 = p.iter().zip(w).map(|(x, y)| (x & y).count_ones()).sum();
            let set: u32 = p.iter().map(|x| x.count_ones()).sum();
            (2 * on as i32 - set as i32) << i
        })
        .sum()
}

/// `out[u] = bitplane_dot(planes, row u of A)` with the plane popcounts hoisted.
pub fn bitplane_gemv_into(planes: &[&[u64]], a: Lines<'_>, out: &mut [i32]) -> Result<()> {
    if planes.len() > BYTE_PLANES
        || a.bits > MAX_BYTE_DOT_LEN
        || planes.iter().any(|p| p.len() != a.words_per_line)
        || out.len() != a.count
    {
        return Err(mismatch("bit-plane matvec operands do not match"));
    }
    let mut set = [0i32; BYTE_PLANES];
    for (s, p) in set.iter_mut().zip(planes) {
        *s = p.iter().map(|x| x.count_ones() as i32).sum();
    }
    for (u, y) in out.iter_mut().enumerate() {
        let w = a.line(u);
        *y = planes
            .iter()
            .zip(&set)
            .enumerate()
            .map(|(i, (p, &s))| {
                let on: u32 = p.iter().zip(w).map(|(x, y)| (x & y).count_ones()).sum();
                (2 * on as i32 - s) << i
            })
            .sum();
    }
    Ok(())
}

/// `out[r][n] = sum_i 2^i * (2*popcount(P_i[r] & B[n]) - popcount(P_i[r]))`, i.e. the
/// product of an unsigned 8-bit matrix (as bit planes) with a binary matrix.
pub fn bitplane_gemm_into(planes: &[Lines<'_>], b: Lines<'_>, out: &mut [i32]) -> Result<()> {
    if planes.len() > BYTE_PLANES {
        return Err(mismatch("more than 8 bit planes"));
    }
    if b.bits > MAX_BYTE_DOT_LEN {
        return Err(mismatch(format!("inner dimension {} too large for byte inputs", b.bits)));
    }
    let rows = planes.first().map_or(0, |p| p.count);
    for p in planes {
        check_inner(p, &b)?;
        if p.count != rows {
            return Err(mismatch("bit planes differ in row count"));
        }
    }
    if out.len() != rows * b.count {
        return Err(mismatch("output buffer does not match M x N"));
    }
    let wpl = b.words_per_line;
    for r in 0..rows {
        let o = &mut out[r * b.count..(r + 1) * b.count];
        o.fill(0);
        let mut set = 0i32;
        for (i, p) in planes.iter().enumerate() {
            let line = p.line(r);
            set += line.iter().map(|x| x.count_ones() as i32).sum::<i32>() << i;
            for (j, &a) in line.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                // one word of this plane against word j of every column
                let shift = i as u32;
                if wpl == 1 {
                    for (v, &w) in o.iter_mut().zip(b.words) {
                        *v = v.wrapping_add(((a & w).count_ones() as i32).wrapping_shl(shift));
                    }
                } else {
                    for (v, col) in o.iter_mut().zip(b.words.chunks_exact(wpl)) {
                        *v = v.wrapping_add(((a & col[j]).count_ones() as i32).wrapping_shl(shift));
                    }
                }
            }
        }
        for v in o.iter_mut() {
            *v = 2 * *v - set;
        }
    }
    Ok(())
}

/// Reference GEMM block sizes: rows, inner, columns.
pub const SGEMM_MC: usize = 64;
pub const SGEMM_KC: usize = 256;
pub const SGEMM_NC: usize = 1024;

const MR: usize = 8;
const NR: usize = 16;

/// Scratch length (in `f32`) that [`sgemm_with_scratch`] needs for a `k x n` right operand.
pub fn sgemm_scratch_len(k: usize, n: usize) -> usize {
    k.min(SGEMM_KC) * n.min(SGEMM_NC).div_ceil(NR) * NR
}

/// Copies `B[pc..pc+kb, jc..jc+nb]` into `NR`-wide strips, each `kb x NR` contiguous.
fn pack_b_panel(b: &[f32], n: usize, pc: usize, kb: usize, jc: usize, nb: usize, out: &mut [f32]) {
    for (s, strip) in out[..nb.div_ceil(NR) * kb * NR]
        .chunks_exact_mut(kb * NR)
        .enumerate()
    {
        let j0 = jc + s * NR;
        let w = NR.min(jc + nb - j0);
        for (p, dst) in strip.chunks_exact_mut(NR).enumerate() {
            let src = &b[(pc + p) * n + j0..][..w];
            dst[..w].copy_from_slice(src);
            dst[w..].fill(0.0);
        }
    }
}

/// `A[MR x kb] * Bstrip[kb x NR]` with the output tile held in registers.
#[inline(always)]
fn micro_sgemm(a: [&[f32]; MR], strip: &[f32]) -> [[f32; NR]; MR] {
    let kb = a[0].len();
    let mut acc = [[0.0f32; NR]; MR];
    for (p, brow) in strip[..kb * NR].chunks_exact(NR).enumerate() {
        let brow: &[f32; NR] = brow.try_into().unwrap();
        for i in 0..MR {
            let av = a[i][p];
            for j in 0..NR {
                acc[i][j] += av * brow[j];
            }
        }
    }
    acc
}

fn sgemm_rows(
    m_range: std::ops::Range<usize>,
    k: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    scratch: &mut [f32],
) {
    c.fill(0.0);
    let m0 = m_range.start;
    if m_range.is_empty() {
        return;
    }
    let last = m_range.end - 1;
    for jc in (0..n).step_by(SGEMM_NC) {
        let nb = (n - jc).min(SGEMM_NC);
        for pc in (0..k).step_by(SGEMM_KC) {
            let kb = (k - pc).min(SGEMM_KC);
            pack_b_panel(b, n, pc, kb, jc, nb, scratch);
            for ic in m_range.clone().step_by(SGEMM_MC) {
                let m_end = (ic + SGEMM_MC).min(m_range.end);
                for i in (ic..m_end).step_by(MR) {
                    // rows past the end repeat the last row and are not written back
                    let ar: [&[f32]; MR] = std::array::from_fn(|r| {
                        let row = (i + r).min(last);
                        &a[row * k + pc..row * k + pc + kb]
                    });
                    let valid = MR.min(m_end - i);
                    for (s, strip) in scratch[..nb.div_ceil(NR) * kb * NR]
                        .chunks_exact(kb * NR)
                        .enumerate()
                    {
                        let j0 = jc + s * NR;
                        let w = NR.min(jc + nb - j0);
                        let tile = micro_sgemm(ar, strip);
                        for (r, vals) in tile.iter().enumerate().take(valid) {
                            let dst = &mut c[(i + r - m0) * n + j0..][..w];
                            for (d, v) in dst.iter_mut().zip(vals) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cache-blocked `C = A * B` over raw row-major slices (`m x k` times `k x n`),
/// packing panels of B into `scratch` (at least [`sgemm_scratch_len`] long).
pub fn sgemm_with_scratch(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    scratch: &mut [f32],
) -> Result<()> {
    if a.len() != m * k || b.len() != k * n || c.len() != m * n {
        return Err(mismatch(format!(
            "sgemm buffers do not match {m}x{k} * {k}x{n}"
        )));
    }
    if scratch.len() < sgemm_scratch_len(k, n) {
        return Err(mismatch("sgemm scratch buffer too small"));
    }
    sgemm_rows(0..m, k, n, a, b, c, scratch);
    Ok(())
}

/// Cache-blocked `C = A * B` over raw row-major slices (`m x k` times `k x n`).
pub fn sgemm_into(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) -> Result<()> {
    let mut scratch = vec![0.0; sgemm_scratch_len(k, n)];
    sgemm_with_scratch(m, k, n, a, b, c, &mut scratch)
}

pub fn sgemm_ref(a: &FloatMatrix, b: &FloatMatrix) -> Result<FloatMatrix> {
    if a.cols != b.rows {
        return Err(mismatch(format!(
            "inner dimensions differ: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = FloatMatrix::zeros(a.rows, b.cols);
    sgemm_into(a.rows, a.cols, b.cols, &a.data, &b.data, &mut c.data)?;
    Ok(c)
}

/// Reference matrix-vector product `y = A x`.
pub fn sgemv_into(a: &FloatMatrix, x: &[f32], y: &mut [f32]) -> Result<()> {
    if x.len() != a.cols || y.len() != a.rows {
        return Err(mismatch(format!(
            "matvec over {}x{} given {} inputs and {} outputs",
            a.rows,
            a.cols,
            x.len(),
            y.len()
        )));
    }
    if a.cols == 0 {
        y.fill(0.0);
        return Ok(());
    }
    for (row, out) in a.data.chunks_exact(a.cols).zip(y.iter_mut()) {
        *out = row.iter().zip(x).map(|(w, v)| w * v).sum();
    }
    Ok(())
}

/// [`sgemm_ref`] parallel over row blocks on the current rayon pool.
pub fn sgemm_ref_par(a: &FloatMatrix, b: &FloatMatrix) -> Result<FloatMatrix> {
    if a.cols != b.rows {
        return Err(mismatch("inner dimensions differ"));
    }
    let (k, n) = (a.cols, b.cols);
    let mut c = FloatMatrix::zeros(a.rows, n);
    if n == 0 {
        return Ok(c);
    }
    let rows_per_task = SGEMM_MC * 4;
    c.data
        .par_chunks_mut(rows_per_task * n)
        .enumerate()
        .for_each_init(
            || vec![0.0; sgemm_scratch_len(k, n)],
            |scratch, (t, chunk)| {
                let start = t * rows_per_task;
                sgemm_rows(start..start + chunk.len() / n, k, n, &a.data, &b.data, chunk, scratch);
            },
        );
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pm(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FloatMatrix {
        FloatMatrix::from_fn(rows, cols, |_, _| if rng.random() { 1.0 } else { -1.0 })
    }

    fn naive(a: &FloatMatrix, b: &FloatMatrix) -> FloatMatrix {
        FloatMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum()
        })
    }

    fn pack_vec(v: &[f32]) -> Vec<u64> {
        PackedMatrixA::from_float(&FloatMatrix::new(1, v.len(), v.to_vec()).unwrap())
            .words()
            .to_vec()
    }

    #[test]
    fn self_and_antipodal_dot() {
        let a = [0x0123_4567_89ab_cdefu64];
        assert_eq!(bdot(&a, &a, 64), 64);
        assert_eq!(bdot(&a, &[!a[0]], 64), -64);
    }

    #[test]
    #[should_panic]
    fn dot_length_mismatch_panics() {
        bdot(&[0, 0], &[0], 70);
    }

    #[test]
    fn random_dots_match_float() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = rng.random_range(1..=300);
            let a: Vec<f32> = (0..k).map(|_| if rng.random() { 1.0 } else { -1.0 }).collect();
            let b: Vec<f32> = (0..k).map(|_| if rng.random() { 1.0 } else { -1.0 }).collect();
            let expected: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert_eq!(bdot(&pack_vec(&a), &pack_vec(&b), k), expected as i32);
        }
    }

    #[test]
    fn identity_pattern_gemm() {
        let id = FloatMatrix::from_fn(64, 64, |i, j| if i == j { 1.0 } else { -1.0 });
        let c = bgemm(&PackedMatrixA::from_float(&id), &PackedMatrixB::from_float(&id)).unwrap();
        let oracle = naive(&id, &id);
        for i in 0..64 {
            assert_eq!(c.get(i, i), 64);
            for j in 0..64 {
                assert_eq!(c.get(i, j) as f32, oracle.get(i, j));
            }
        }
    }

    #[test]
    fn all_ones_gemm() {
        let a = FloatMatrix::from_fn(8, 128, |_, _| 1.0);
        let b = FloatMatrix::from_fn(128, 8, |_, _| 1.0);
        let c = bgemm(&PackedMatrixA::from_float(&a), &PackedMatrixB::from_float(&b)).unwrap();
        assert!(c.data().iter().all(|&v| v == 128));
    }

    #[test]
    fn gemm_dimension_mismatch() {
        let a = PackedMatrixA::from_fn(2, 10, |_, _| true);
        let b = PackedMatrixB::from_fn(11, 2, |_, _| true);
        assert!(bgemm(&a, &b).is_err());
    }

    #[test]
    fn random_gemm_matches_float_and_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let (m, k, n) = (
                rng.random_range(1..=130),
                rng.random_range(1..=300),
                rng.random_range(1..=130),
            );
            let a = random_pm(&mut rng, m, k);
            let b = random_pm(&mut rng, k, n);
            let (pa, pb) = (PackedMatrixA::from_float(&a), PackedMatrixB::from_float(&b));
            let c = bgemm(&pa, &pb).unwrap();
            let oracle = naive(&a, &b);
            for i in 0..m {
                for j in 0..n {
                    assert_eq!(c.get(i, j) as f32, oracle.get(i, j));
                    assert_eq!((c.get(i, j) - k as i32).rem_euclid(2), 0);
                }
            }
            assert_eq!(bgemm_par(&pa, &pb).unwrap(), c);
        }
    }

    #[test]
    fn gemv_cases() {
        let a = PackedMatrixA::from_fn(3, 64, |_, _| true);
        assert_eq!(bgemv(&a, &[u64::MAX]).unwrap(), vec![64, 64, 64]);
        assert!(bgemv(&a, &[0, 0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let am = random_pm(&mut rng, 37, 150);
        let x = random_pm(&mut rng, 150, 1);
        let pa = PackedMatrixA::from_float(&am);
        let pb = PackedMatrixB::from_float(&x);
        let y = bgemv(&pa, pb.line(0)).unwrap();
        let c = bgemm(&pa, &pb).unwrap();
        let oracle = naive(&am, &x);
        for (m, &v) in y.iter().enumerate() {
            assert_eq!(v, c.get(m, 0));
            assert_eq!(v as f32, oracle.get(m, 0));
        }
    }

    fn planes_of(u: &[u8]) -> Vec<Vec<u64>> {
        (0..8)
            .map(|i| {
                PackedMatrixA::from_fn(1, u.len(), |_, j| u[j] >> i & 1 == 1)
                    .words()
                    .to_vec()
            })
            .collect()
    }

    #[test]
    fn bitplane_dot_cases() {
        let p = planes_of(&[5]);
        let refs: Vec<&[u64]> = p.iter().map(|v| v.as_slice()).collect();
        assert_eq!(bitplane_dot(&refs, &[1], 1), 5);

        let p = planes_of(&[255; 64]);
        let refs: Vec<&[u64]> = p.iter().map(|v| v.as_slice()).collect();
        assert_eq!(bitplane_dot(&refs, &[0], 64), -16320);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u: Vec<u8> = (0..784).map(|_| rng.random()).collect();
            let w: Vec<bool> = (0..784).map(|_| rng.random()).collect();
            let expected: i32 = u
                .iter()
                .zip(&w)
                .map(|(&x, &s)| if s { x as i32 } else { -(x as i32) })
                .sum();
            let pw = PackedMatrixA::from_fn(1, 784, |_, j| w[j]);
            let p = planes_of(&u);
            let refs: Vec<&[u64]> = p.iter().map(|v| v.as_slice()).collect();
            assert_eq!(bitplane_dot(&refs, pw.words(), 784), expected);
        }
    }

    #[test]
    fn bitplane_gemm_matches_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rows, k, n) = (5, 77, 6);
        let u: Vec<Vec<u8>> = (0..rows)
            .map(|_| (0..k).map(|_| rng.random()).collect())
            .collect();
        let plane_mats: Vec<PackedMatrixA> = (0..8)
            .map(|i| PackedMatrixA::from_fn(rows, k, |r, j| u[r][j] >> i & 1 == 1))
            .collect();
        let b = PackedMatrixB::from_fn(k, n, |_, _| rng.random());
        let lines: Vec<Lines<'_>> = plane_mats.iter().map(|p| p.lines()).collect();
        let mut out = vec![0; rows * n];
        bitplane_gemm_into(&lines, b.lines(), &mut out).unwrap();
        for r in 0..rows {
            let planes: Vec<&[u64]> = plane_mats.iter().map(|p| p.line(r)).collect();
            for c in 0..n {
                assert_eq!(out[r * n + c], bitplane_dot(&planes, b.line(c), k));
            }
        }
    }

    #[test]
    fn sgemm_small_cases() {
        let a = FloatMatrix::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let b = FloatMatrix::new(2, 2, vec![5., 6., 7., 8.]).unwrap();
        assert_eq!(sgemm_ref(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FloatMatrix::from_fn(5, 9, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(sgemm_ref(&FloatMatrix::identity(5), &x).unwrap(), x);
        assert!(sgemm_ref(&x, &x).is_err());
    }

    #[test]
    fn sgemm_random_vs_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(m, k, n) in &[(64, 64, 64), (67, 300, 1030), (3, 5, 2)] {
            let a = FloatMatrix::from_fn(m, k, |_, _| rng.random_range(-1.0..1.0));
            let b = FloatMatrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
            let c = sgemm_ref(&a, &b).unwrap();
            let o = naive(&a, &b);
            let diff = c
                .data()
                .iter()
                .zip(o.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(diff < 1e-4, "max diff {diff}");
            assert_eq!(sgemm_ref_par(&a, &b).unwrap(), c);
        }
    }

    proptest! {
        #[test]
        fn dot_symmetry_self_and_parity(
            a in proptest::collection::vec(any::<bool>(), 1..400),
            seed in any::<u64>(),
        ) {
            let k = a.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pa = PackedMatrixA::from_fn(1, k, |_, j| a[j]);
            let pb = PackedMatrixA::from_fn(1, k, |_, _| rng.random());
            let (x, y) = (pa.words(), pb.words());
            prop_assert_eq!(bdot(x, x, k), k as i32);
            prop_assert_eq!(bdot(x, y, k), bdot(y, x, k));
            prop_assert_eq!((bdot(x, y, k) - k as i32).rem_euclid(2), 0);
            prop_assert!(bdot(x, y, k).unsigned_abs() as usize <= k);
        }
    }
}
