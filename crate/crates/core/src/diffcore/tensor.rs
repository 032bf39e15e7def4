//! Dense row-major `f64` arrays and the numeric kernels the tape is built on.

use std::fmt;

use super::DiffError;

/// Dense array of `f64` in row-major order.
///
/// A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, DiffError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::Size {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DiffError> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            let r = r.as_ref();
            if r.len() != m {
                return Err(DiffError::Size {
                    shape: vec![n, m],
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![n, m], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor, DiffError> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Tensor {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Tensor {
        let c = self.shape[1];
        let mut data = Vec::with_capacity(order.len() * c);
        for &r in order {
            data.extend_from_slice(self.row(r));
        }
        Tensor {
            shape: vec![order.len(), c],
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Sum whose result depends only on the multiset of terms, not their order.
///
/// Terms are scaled by a power of two chosen from the largest magnitude,
/// truncated to integers and added exactly, so the result carries an absolute
/// error below `len · max|t| · 2^-(62 - log2 len)`. Non-finite or extremely
/// small inputs fall back to a sorted float sum.
pub fn canonical_sum(terms: &[f64]) -> f64 {
    let n = terms.len();
    if n == 0 {
        return 0.0;
    }
    let m = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if !m.is_finite() || terms.iter().any(|t| t.is_nan()) || m < 1e-280 {
        let mut sorted = terms.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        return sorted.iter().sum();
    }
    let exp = ((m.to_bits() >> 52) & 0x7ff) as i32 - 1022;
    let headroom = usize::BITS as i32 - (n as u64).leading_zeros() as i32;
    let bits = 62 - headroom;
    let scale = 2f64.powi(bits - exp);
    let acc: i64 = terms.iter().map(|&t| (t * scale) as i64).sum();
    acc as f64 / scale
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, false, &b.data, false, &mut out);
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// `out += op(a) * op(b)` where `op` optionally transposes.
///
/// `a` is stored as `m×k` (or `k×m` if `ta`), `b` as `k×n` (or `n×k` if `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    out: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe matrices that lie entirely inside the given
    // slices, whose lengths are checked by the callers' shape rules.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product with every output entry reduced by [`canonical_sum`].
pub(crate) fn matmul_canonical(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let bt = b.transposed();
    let mut out = vec![0.0; m * n];
    let mut terms = Vec::with_capacity(k);
    let mut support = Vec::with_capacity(k);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        // zero weights contribute nothing; dropping them keeps sparse
        // aggregators cheap without affecting order independence
        support.clear();
        support.extend((0..k).filter(|&kk| arow[kk] != 0.0).map(|kk| (kk, arow[kk])));
        for j in 0..n {
            let bcol = &bt.data[j * k..(j + 1) * k];
            terms.clear();
            terms.extend(support.iter().map(|&(kk, w)| w * bcol[kk]));
            out[i * n + j] = canonical_sum(&terms);
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index of the source element it
/// reads under broadcasting from `src_shape`.
pub(crate) fn broadcast_index(src_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - src_shape.len();
    // source strides aligned to output rank; zero on broadcast axes
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src_shape.len()).rev() {
        if src_shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    if rank == 2 {
        for r in 0..out_shape[0] {
            out.extend((0..out_shape[1]).map(|c| r * strides[0] + c * strides[1]));
        }
        return out;
    }
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        out.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn broadcast_to(src: &Tensor, shape: &[usize]) -> Tensor {
    if src.shape == shape {
        return src.clone();
    }
    let map = broadcast_index(&src.shape, shape);
    Tensor {
        shape: shape.to_vec(),
        data: map.iter().map(|&i| src.data[i]).collect(),
    }
}

/// Sums `grad` (of broadcast shape) back down to `shape`.
pub(crate) fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let map = broadcast_index(shape, &grad.shape);
    let mut out = Tensor::zeros(shape.to_vec());
    for (g, &i) in grad.data.iter().zip(&map) {
        out.data[i] += g;
    }
    out
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
