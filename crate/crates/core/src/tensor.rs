//! Dense row-major tensors with trailing-aligned broadcasting.
//!
//! This is deliberately small: the differentiation tape only needs a fixed
//! set of kernels (elementwise with broadcast, matrix products, row-wise
//! Khatri-Rao products, full reductions). All reductions use a fixed
//! summation order so results are bit-reproducible regardless of thread
//! count.

use crate::error::{Error, Result};
use crate::scalar::Real;
use rayon::prelude::*;

/// Minimum element count before a kernel switches to the parallel path.
const PAR_THRESHOLD: usize = 1 << 15;
/// Fixed chunk length for parallel elementwise work and reductions.
/// Chunking by a constant keeps the combine order independent of the
/// number of worker threads.
const PAR_CHUNK: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|i| f(i)).collect() }
    }

    /// 1-D tensor from a slice.
    pub fn vector(v: &[T]) -> Self {
        Self { shape: vec![v.len()], data: v.to_vec() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single element of a scalar tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on non-singleton tensor");
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elems) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        let data = if self.data.len() >= PAR_THRESHOLD {
            let mut out = vec![T::zero(); self.data.len()];
            out.par_chunks_mut(PAR_CHUNK)
                .zip(self.data.par_chunks(PAR_CHUNK))
                .for_each(|(o, a)| {
                    for (oi, &ai) in o.iter_mut().zip(a) {
                        *oi = f(ai);
                    }
                });
            out
        } else {
            self.data.iter().map(|&v| f(v)).collect()
        };
        Self { shape: self.shape.clone(), data }
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T + Sync) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "zip: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = if self.data.len() >= PAR_THRESHOLD {
            let mut out = vec![T::zero(); self.data.len()];
            out.par_chunks_mut(PAR_CHUNK)
                .zip(self.data.par_chunks(PAR_CHUNK).zip(other.data.par_chunks(PAR_CHUNK)))
                .for_each(|(o, (a, b))| {
                    for ((oi, &ai), &bi) in o.iter_mut().zip(a).zip(b) {
                        *oi = f(ai, bi);
                    }
                });
            out
        } else {
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()
        };
        Ok(Self { shape: self.shape.clone(), data })
    }

    /// Elementwise combination with trailing-aligned broadcasting.
    pub fn zip_broadcast(&self, other: &Self, f: impl Fn(T, T) -> T + Sync) -> Result<Self> {
        if self.shape == other.shape {
            return self.zip(other, f);
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let out_len: usize = out_shape.iter().product();
        let mut data = vec![T::zero(); out_len];
        let nd = out_shape.len();
        let inner = out_shape[nd - 1];
        let outer = out_len / inner;
        let ia = sa[nd - 1];
        let ib = sb[nd - 1];

        let fill_rows = |rows: &mut [T], row0: usize| {
            for (r, row) in rows.chunks_mut(inner).enumerate() {
                // decode the outer index into operand base offsets
                let mut rem = row0 + r;
                let mut offa = 0usize;
                let mut offb = 0usize;
                for d in (0..nd - 1).rev() {
                    let c = rem % out_shape[d];
                    rem /= out_shape[d];
                    offa += c * sa[d];
                    offb += c * sb[d];
                }
                let mut pa = offa;
                let mut pb = offb;
                for o in row.iter_mut() {
                    *o = f(self.data[pa], other.data[pb]);
                    pa += ia;
                    pb += ib;
                }
            }
        };

        if out_len >= PAR_THRESHOLD && outer > 1 {
            let rows_per_chunk = (PAR_CHUNK / inner).max(1);
            data.par_chunks_mut(rows_per_chunk * inner)
                .enumerate()
                .for_each(|(ci, chunk)| fill_rows(chunk, ci * rows_per_chunk));
        } else {
            fill_rows(&mut data, 0);
        }
        Tensor::from_vec(&out_shape, data)
    }

    /// Materialize this tensor broadcast to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shape(&self.shape, shape)?;
        if check != shape {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {:?} to {:?}",
                self.shape, shape
            )));
        }
        let zero = Tensor::zeros(shape);
        self.zip_broadcast(&zero, |a, _| a)
    }

    /// Sum over axes that were broadcast, reducing back to `shape`.
    /// `shape` must be broadcast-compatible with (and no larger than) self.
    pub fn reduce_sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let nd = self.shape.len();
        // align the target to the right
        let mut aligned = vec![1usize; nd];
        let off = nd - shape.len();
        aligned[off..].copy_from_slice(shape);
        for d in 0..nd {
            if aligned[d] != self.shape[d] && aligned[d] != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "reduce_sum_to: {:?} -> {:?}",
                    self.shape, shape
                )));
            }
        }
        let mut out = vec![T::zero(); aligned.iter().product()];
        let tstr = broadcast_strides(&aligned, &self.shape);
        let inner = *self.shape.last().unwrap_or(&1);
        let it = *tstr.last().unwrap_or(&0);
        // fixed serial order: deterministic accumulation
        for (row_idx, row) in self.data.chunks(inner.max(1)).enumerate() {
            let mut rem = row_idx;
            let mut offt = 0usize;
            for d in (0..nd.saturating_sub(1)).rev() {
                let c = rem % self.shape[d];
                rem /= self.shape[d];
                offt += c * tstr[d];
            }
            let mut pt = offt;
            for &v in row {
                out[pt] += v;
                pt += it;
            }
        }
        Tensor::from_vec(shape, out)
    }

    /// Full sum in a fixed chunked order (bit-reproducible).
    pub fn sum(&self) -> T {
        if self.data.len() >= PAR_THRESHOLD {
            let partials: Vec<T> = self
                .data
                .par_chunks(PAR_CHUNK)
                .map(|c| {
                    let mut s = T::zero();
                    for &v in c {
                        s += v;
                    }
                    s
                })
                .collect();
            let mut s = T::zero();
            for v in partials {
                s += v;
            }
            s
        } else {
            let mut s = T::zero();
            for &v in &self.data {
                s += v;
            }
            s
        }
    }

    /// `A @ B` for 2-D tensors: `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, b: &Self) -> Result<Self> {
        let (m, k) = dims2(self)?;
        let (kb, n) = dims2(b)?;
        if k != kb {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                self.shape, b.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        let run = |rows: &mut [T], i0: usize| {
            for (ri, row) in rows.chunks_mut(n).enumerate() {
                let i = i0 + ri;
                for l in 0..k {
                    let a = self.data[i * k + l];
                    if a == T::zero() {
                        continue;
                    }
                    let brow = &b.data[l * n..(l + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += a * bv;
                    }
                }
            }
        };
        if m * n * k >= PAR_THRESHOLD && m > 1 {
            let rows_per = (PAR_CHUNK / n.max(1)).max(1);
            out.par_chunks_mut(rows_per * n)
                .enumerate()
                .for_each(|(ci, chunk)| run(chunk, ci * rows_per));
        } else {
            run(&mut out, 0);
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// `A @ B^T`: `[m,k] x [n,k] -> [m,n]`.
    pub fn matmul_nt(&self, b: &Self) -> Result<Self> {
        let (m, k) = dims2(self)?;
        let (n, kb) = dims2(b)?;
        if k != kb {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt: {:?} x {:?}",
                self.shape, b.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        let run = |rows: &mut [T], i0: usize| {
            for (ri, row) in rows.chunks_mut(n).enumerate() {
                let arow = &self.data[(i0 + ri) * k..(i0 + ri + 1) * k];
                for (j, o) in row.iter_mut().enumerate() {
                    let brow = &b.data[j * k..(j + 1) * k];
                    let mut s = T::zero();
                    for (&av, &bv) in arow.iter().zip(brow) {
                        s += av * bv;
                    }
                    *o = s;
                }
            }
        };
        if m * n * k >= PAR_THRESHOLD && m > 1 {
            let rows_per = (PAR_CHUNK / n.max(1)).max(1);
            out.par_chunks_mut(rows_per * n)
                .enumerate()
                .for_each(|(ci, chunk)| run(chunk, ci * rows_per));
        } else {
            run(&mut out, 0);
        }
        Tensor::from_vec(&[m, n], out)
    }

    /// `A^T @ B`: `[m,k] x [m,n] -> [k,n]`.
    pub fn matmul_tn(&self, b: &Self) -> Result<Self> {
        let (m, k) = dims2(self)?;
        let (mb, n) = dims2(b)?;
        if m != mb {
            return Err(Error::ShapeMismatch(format!(
                "matmul_tn: {:?} x {:?}",
                self.shape, b.shape
            )));
        }
        let mut out = vec![T::zero(); k * n];
        if k * n * m >= PAR_THRESHOLD && k > 1 {
            out.par_chunks_mut(n)
                .enumerate()
                .for_each(|(l, row)| {
                    for i in 0..m {
                        let a = self.data[i * k + l];
                        if a == T::zero() {
                            continue;
                        }
                        let brow = &b.data[i * n..(i + 1) * n];
                        for (o, &bv) in row.iter_mut().zip(brow) {
                            *o += a * bv;
                        }
                    }
                });
        } else {
            for i in 0..m {
                let brow = &b.data[i * n..(i + 1) * n];
                for l in 0..k {
                    let a = self.data[i * k + l];
                    if a == T::zero() {
                        continue;
                    }
                    let orow = &mut out[l * n..(l + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += a * bv;
                    }
                }
            }
        }
        Tensor::from_vec(&[k, n], out)
    }

    /// Row-wise Khatri-Rao product: `[na,R] x [nb,R] -> [na*nb,R]`,
    /// `out[(i*nb+j), r] = a[i,r] * b[j,r]`.
    pub fn khatri_rao(&self, b: &Self) -> Result<Self> {
        let (na, r) = dims2(self)?;
        let (nb, rb) = dims2(b)?;
        if r != rb {
            return Err(Error::RankMismatch(format!(
                "khatri_rao: {:?} vs {:?}",
                self.shape, b.shape
            )));
        }
        let mut out = vec![T::zero(); na * nb * r];
        let run = |chunk: &mut [T], row0: usize| {
            for (ri, orow) in chunk.chunks_mut(r).enumerate() {
                let idx = row0 + ri;
                let i = idx / nb;
                let j = idx % nb;
                let arow = &self.data[i * r..(i + 1) * r];
                let brow = &b.data[j * r..(j + 1) * r];
                for ((o, &av), &bv) in orow.iter_mut().zip(arow).zip(brow) {
                    *o = av * bv;
                }
            }
        };
        if na * nb * r >= PAR_THRESHOLD {
            let rows_per = (PAR_CHUNK / r.max(1)).max(1);
            out.par_chunks_mut(rows_per * r)
                .enumerate()
                .for_each(|(ci, chunk)| run(chunk, ci * rows_per));
        } else {
            run(&mut out, 0);
        }
        Tensor::from_vec(&[na * nb, r], out)
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (m, k) = dims2(self)?;
        if start + len > k {
            return Err(Error::ShapeMismatch(format!(
                "slice_cols: [{},{}) out of {} columns",
                start,
                start + len,
                k
            )));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.data[i * k + start..i * k + start + len]);
        }
        Tensor::from_vec(&[m, len], out)
    }
}

fn dims2<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected 2-D tensor, got {:?}",
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// Trailing-aligned broadcast shape of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for d in 0..nd {
        let da = if d >= nd - a.len() { a[d - (nd - a.len())] } else { 1 };
        let db = if d >= nd - b.len() { b[d - (nd - b.len())] } else { 1 };
        out[d] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {:?} with {:?}",
                a, b
            )));
        };
    }
    Ok(out)
}

/// Row-major strides of `shape` viewed in `out_shape`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let off = nd - shape.len();
    // native strides
    let mut native = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        native[d] = acc;
        acc *= shape[d];
    }
    let mut out = vec![0usize; nd];
    for d in 0..nd {
        if d >= off && shape[d - off] != 1 {
            out[d] = native[d - off];
        }
    }
    out
}

/// Dense CP contraction of factor matrices `[n_a, R]` into the full
/// `n_1 x ... x n_d` tensor: `out[i_1..i_d] = sum_r prod_a F_a[i_a, r]`.
///
/// Factors are merged by progressive Khatri-Rao products on two halves so
/// the final step is a single `[nL,R] x [nR,R]^T` product.
pub fn cp_dense<T: Real>(factors: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if factors.is_empty() {
        return Err(Error::RankMismatch("cp_dense: no factors".into()));
    }
    let r = factors[0].shape()[1];
    for f in factors {
        let (_, rf) = dims2(f)?;
        if rf != r {
            return Err(Error::RankMismatch(format!(
                "cp_dense: rank {} vs {}",
                r, rf
            )));
        }
    }
    let out_shape: Vec<usize> = factors.iter().map(|f| f.shape()[0]).collect();
    if factors.len() == 1 {
        // sum over rank
        let n = factors[0].shape()[0];
        let mut out = vec![T::zero(); n];
        for i in 0..n {
            let mut s = T::zero();
            for &v in &factors[0].data()[i * r..(i + 1) * r] {
                s += v;
            }
            out[i] = s;
        }
        return Tensor::from_vec(&out_shape, out);
    }
    let split = factors.len() / 2;
    let mut left = factors[0].clone();
    for f in &factors[1..split.max(1)] {
        left = left.khatri_rao(f)?;
    }
    let mut right = factors[split.max(1)].clone();
    for f in &factors[split.max(1) + 1..] {
        right = right.khatri_rao(f)?;
    }
    let flat = left.matmul_nt(&right)?;
    flat.reshape(&out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_add_trailing_aligned() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::vector(&[10.0, 20.0, 30.0]);
        let c = a.zip_broadcast(&b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn broadcast_middle_axes() {
        // [2,1,2] * [1,3,1] -> [2,3,2]
        let a = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1, 3, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let c = a.zip_broadcast(&b, |x, y| x * y).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(
            c.data(),
            &[1.0, 2.0, 10.0, 20.0, 100.0, 200.0, 3.0, 4.0, 30.0, 40.0, 300.0, 400.0]
        );
    }

    #[test]
    fn reduce_sum_matches_broadcast() {
        let big = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let red = big.reduce_sum_to(&[3]).unwrap();
        assert_eq!(red.data(), &[5.0, 7.0, 9.0]);
        let red2 = big.reduce_sum_to(&[2, 1]).unwrap();
        assert_eq!(red2.data(), &[6.0, 15.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        // A @ B == A @ (B^T)^T via matmul_nt with B^T
        let bt = Tensor::from_vec(&[2, 3], vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]).unwrap();
        assert_eq!(a.matmul_nt(&bt).unwrap().data(), c.data());
        // (A^T)^T @ B via matmul_tn with A^T
        let at = Tensor::from_vec(&[3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(at.matmul_tn(&b).unwrap().data(), c.data());
    }

    #[test]
    fn cp_dense_small_cases() {
        // R=1, d=2: [2] x [3] -> [[6]]
        let f1 = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let f2 = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let out = cp_dense(&[&f1, &f2]).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[6.0]);

        // R=2: [1,2] and [3,4] -> 1*3 + 2*4 = 11
        let f1 = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let f2 = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(cp_dense(&[&f1, &f2]).unwrap().data(), &[11.0]);
    }

    #[test]
    fn cp_dense_matches_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (n1, n2, n3, r) = (5usize, 6usize, 7usize, 4usize);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            Tensor::from_fn(&[n, r], |_| rng.gen_range(-1.0f64..1.0))
        };
        let f1 = mk(&mut rng, n1);
        let f2 = mk(&mut rng, n2);
        let f3 = mk(&mut rng, n3);
        let out = cp_dense(&[&f1, &f2, &f3]).unwrap();
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    let mut s = 0.0;
                    for rr in 0..r {
                        s += f1.data()[i * r + rr] * f2.data()[j * r + rr] * f3.data()[k * r + rr];
                    }
                    let got = out.data()[(i * n2 + j) * n3 + k];
                    assert!((s - got).abs() < 1e-12, "({i},{j},{k}): {s} vs {got}");
                }
            }
        }
    }

    #[test]
    fn slice_cols_extracts_block() {
        let a = Tensor::from_vec(&[2, 4], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let s = a.slice_cols(1, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 5.0, 6.0]);
    }
}
