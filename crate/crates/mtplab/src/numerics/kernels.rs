//! Hot compute kernels: matmul variants, row softmax, fused causal attention.
//!
//! Each kernel has a sequential implementation (always compiled) and a rayon
//! one behind the `parallel` feature; the unsuffixed name dispatches to
//! whichever is enabled. Parallelism only ever splits work across independent
//! output elements — for any single output element the floating-point
//! accumulation order is fixed — so both paths produce bitwise-identical
//! results and runs are reproducible either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::scalar::Scalar;

const LANES: usize = 8;

/// Dot product with eight independent accumulator lanes combined in a fixed
/// tree. The lanes let the compiler vectorize without reassociating, keeping
/// the result identical at every optimization level.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let off = c * LANES;
        for lane in 0..LANES {
            acc[lane] += a[off + lane] * b[off + lane];
        }
    }
    let mut tail = T::zero();
    for j in chunks * LANES..a.len() {
        tail += a[j] * b[j];
    }
    let s0 = acc[0] + acc[4];
    let s1 = acc[1] + acc[5];
    let s2 = acc[2] + acc[6];
    let s3 = acc[3] + acc[7];
    ((s0 + s2) + (s1 + s3)) + tail
}

/// `out[j] += s * x[j]`; the vectorizable primitive for accumulating rows.
#[inline]
fn axpy<T: Scalar>(out: &mut [T], s: T, x: &[T]) {
    debug_assert_eq!(out.len(), x.len());
    for j in 0..out.len() {
        out[j] += s * x[j];
    }
}

// ---------------------------------------------------------------------------
// matmul: C (n x m) = A (n x k) * B (k x m)
// ---------------------------------------------------------------------------

#[inline]
fn matmul_row<T: Scalar>(a_row: &[T], b: &[T], m: usize, c_row: &mut [T]) {
    for (kk, &av) in a_row.iter().enumerate() {
        axpy(c_row, av, &b[kk * m..(kk + 1) * m]);
    }
}

pub fn matmul_seq<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![T::zero(); n * m];
    for i in 0..n {
        matmul_row(&a[i * k..(i + 1) * k], b, m, &mut c[i * m..(i + 1) * m]);
    }
    c
}

#[cfg(feature = "parallel")]
pub fn matmul_par<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![T::zero(); n * m];
    c.par_chunks_mut(m).enumerate().for_each(|(i, c_row)| {
        matmul_row(&a[i * k..(i + 1) * k], b, m, c_row);
    });
    c
}

pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    #[cfg(feature = "parallel")]
    return matmul_par(a, b, n, k, m);
    #[cfg(not(feature = "parallel"))]
    matmul_seq(a, b, n, k, m)
}

// ---------------------------------------------------------------------------
// matmul_bt: C (n x k) = A (n x m) * B^T, where B is (k x m)
// ---------------------------------------------------------------------------

#[inline]
fn matmul_bt_row<T: Scalar>(a_row: &[T], b: &[T], m: usize, c_row: &mut [T]) {
    for (l, c_val) in c_row.iter_mut().enumerate() {
        *c_val = dot(a_row, &b[l * m..(l + 1) * m]);
    }
}

pub fn matmul_bt_seq<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![T::zero(); n * k];
    for i in 0..n {
        matmul_bt_row(&a[i * m..(i + 1) * m], b, m, &mut c[i * k..(i + 1) * k]);
    }
    c
}

#[cfg(feature = "parallel")]
pub fn matmul_bt_par<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![T::zero(); n * k];
    c.par_chunks_mut(k).enumerate().for_each(|(i, c_row)| {
        matmul_bt_row(&a[i * m..(i + 1) * m], b, m, c_row);
    });
    c
}

pub fn matmul_bt<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    #[cfg(feature = "parallel")]
    return matmul_bt_par(a, b, n, k, m);
    #[cfg(not(feature = "parallel"))]
    matmul_bt_seq(a, b, n, k, m)
}

// ---------------------------------------------------------------------------
// matmul_at: C (k x m) = A^T * B, where A is (n x k), B is (n x m)
// ---------------------------------------------------------------------------

#[inline]
fn matmul_at_row<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize, r: usize, c_row: &mut [T]) {
    // Accumulates over the shared n dimension in ascending order.
    for i in 0..n {
        axpy(c_row, a[i * k + r], &b[i * m..(i + 1) * m]);
    }
}

pub fn matmul_at_seq<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    let mut c = vec![T::zero(); k * m];
    for r in 0..k {
        matmul_at_row(a, b, n, k, m, r, &mut c[r * m..(r + 1) * m]);
    }
    c
}

#[cfg(feature = "parallel")]
pub fn matmul_at_par<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    let mut c = vec![T::zero(); k * m];
    c.par_chunks_mut(m).enumerate().for_each(|(r, c_row)| {
        matmul_at_row(a, b, n, k, m, r, c_row);
    });
    c
}

pub fn matmul_at<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    #[cfg(feature = "parallel")]
    return matmul_at_par(a, b, n, k, m);
    #[cfg(not(feature = "parallel"))]
    matmul_at_seq(a, b, n, k, m)
}

// ---------------------------------------------------------------------------
// softmax over independent rows
// ---------------------------------------------------------------------------

#[inline]
fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let mut max = x[0];
    for &v in &x[1..] {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

pub fn softmax_rows_seq<T: Scalar>(x: &[T], rows: usize, width: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * width);
    let mut out = vec![T::zero(); rows * width];
    for r in 0..rows {
        softmax_row(&x[r * width..(r + 1) * width], &mut out[r * width..(r + 1) * width]);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn softmax_rows_par<T: Scalar>(x: &[T], rows: usize, width: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * width);
    let mut out = vec![T::zero(); rows * width];
    out.par_chunks_mut(width).enumerate().for_each(|(r, o_row)| {
        softmax_row(&x[r * width..(r + 1) * width], o_row);
    });
    out
}

pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, width: usize) -> Vec<T> {
    #[cfg(feature = "parallel")]
    return softmax_rows_par(x, rows, width);
    #[cfg(not(feature = "parallel"))]
    softmax_rows_seq(x, rows, width)
}

// ---------------------------------------------------------------------------
// fused causal multi-head attention
//
// q, k, v are (batch, t, heads * hd) row-major; head h occupies the column
// block [h*hd, (h+1)*hd) of each row. Scores use scale 1/sqrt(hd) and a
// causal mask. The forward pass also returns the post-softmax probabilities
// (batch, heads, t, t) for reuse in the backward pass.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct AttnDims {
    pub batch: usize,
    pub heads: usize,
    pub t: usize,
    pub hd: usize,
}

impl AttnDims {
    fn d(&self) -> usize {
        self.heads * self.hd
    }

    fn scale<T: Scalar>(&self) -> T {
        T::from_f64(1.0 / (self.hd as f64).sqrt())
    }

    /// Contiguous head-row slice of a (batch, t, d) buffer.
    #[inline]
    fn head_row<'a, T>(&self, x: &'a [T], b: usize, h: usize, ti: usize) -> &'a [T] {
        let start = (b * self.t + ti) * self.d() + h * self.hd;
        &x[start..start + self.hd]
    }
}

/// One query row: scores against keys 0..=ti, masked softmax, weighted sum of
/// values. Writes the probability row (zeros beyond ti) and the output row.
#[inline]
fn attention_query_row<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    dims: AttnDims,
    b: usize,
    h: usize,
    ti: usize,
    p_row: &mut [T],
    o_row: &mut [T],
) {
    let scale = dims.scale::<T>();
    let q_row = dims.head_row(q, b, h, ti);
    let mut max = T::neg_infinity();
    for tj in 0..=ti {
        let s = dot(q_row, dims.head_row(k, b, h, tj)) * scale;
        p_row[tj] = s;
        if s > max {
            max = s;
        }
    }
    let mut sum = T::zero();
    for p in p_row[..=ti].iter_mut() {
        let e = (*p - max).exp();
        *p = e;
        sum += e;
    }
    for tj in 0..=ti {
        p_row[tj] = p_row[tj] / sum;
        axpy(o_row, p_row[tj], dims.head_row(v, b, h, tj));
    }
}

/// Returns `(out, probs)` where `out` is (batch, t, d) like `q` and `probs`
/// is (batch, heads, t, t).
pub fn attention_forward_seq<T: Scalar>(q: &[T], k: &[T], v: &[T], dims: AttnDims) -> (Vec<T>, Vec<T>) {
    let AttnDims { batch, heads, t, hd } = dims;
    let mut out_h = vec![T::zero(); batch * heads * t * hd];
    let mut probs = vec![T::zero(); batch * heads * t * t];
    for idx in 0..batch * heads * t {
        let (b, h, ti) = unflatten(idx, heads, t);
        attention_query_row(
            q,
            k,
            v,
            dims,
            b,
            h,
            ti,
            &mut probs[idx * t..(idx + 1) * t],
            &mut out_h[idx * hd..(idx + 1) * hd],
        );
    }
    (merge_heads(&out_h, dims), probs)
}

#[cfg(feature = "parallel")]
pub fn attention_forward_par<T: Scalar>(q: &[T], k: &[T], v: &[T], dims: AttnDims) -> (Vec<T>, Vec<T>) {
    let AttnDims { batch, heads, t, hd } = dims;
    let mut out_h = vec![T::zero(); batch * heads * t * hd];
    let mut probs = vec![T::zero(); batch * heads * t * t];
    out_h
        .par_chunks_mut(hd)
        .zip(probs.par_chunks_mut(t))
        .enumerate()
        .for_each(|(idx, (o_row, p_row))| {
            let (b, h, ti) = unflatten(idx, heads, t);
            attention_query_row(q, k, v, dims, b, h, ti, p_row, o_row);
        });
    (merge_heads(&out_h, dims), probs)
}

pub fn attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], dims: AttnDims) -> (Vec<T>, Vec<T>) {
    #[cfg(feature = "parallel")]
    return attention_forward_par(q, k, v, dims);
    #[cfg(not(feature = "parallel"))]
    attention_forward_seq(q, k, v, dims)
}

/// Gradient of the fused op w.r.t. q, k, v given saved probabilities and the
/// upstream gradient `d_out` (batch, t, d). Returns `(dq, dk, dv)`.
fn attention_backward_block<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out_h: &[T],
    dims: AttnDims,
    b: usize,
    h: usize,
    dq_b: &mut [T],
    dk_b: &mut [T],
    dv_b: &mut [T],
) {
    let AttnDims { t, hd, .. } = dims;
    let scale = dims.scale::<T>();
    let p_base = (b * dims.heads + h) * t * t;
    let o_base = (b * dims.heads + h) * t * hd;
    let mut dp = vec![T::zero(); t];
    for ti in 0..t {
        let p_row = &probs[p_base + ti * t..p_base + (ti + 1) * t];
        let do_row = &d_out_h[o_base + ti * hd..o_base + (ti + 1) * hd];
        // dV += P^T dOut and dP = dOut V^T, restricted to the causal prefix.
        for tj in 0..=ti {
            axpy(&mut dv_b[tj * hd..(tj + 1) * hd], p_row[tj], do_row);
            dp[tj] = dot(do_row, dims.head_row(v, b, h, tj));
        }
        // Softmax backward on the row, then chain into q and k.
        let mut inner = T::zero();
        for tj in 0..=ti {
            inner += dp[tj] * p_row[tj];
        }
        let dq_row = &mut dq_b[ti * hd..(ti + 1) * hd];
        for tj in 0..=ti {
            let ds = p_row[tj] * (dp[tj] - inner) * scale;
            axpy(dq_row, ds, dims.head_row(k, b, h, tj));
            axpy(&mut dk_b[tj * hd..(tj + 1) * hd], ds, dims.head_row(q, b, h, ti));
        }
    }
}

pub fn attention_backward_seq<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
    dims: AttnDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttnDims { batch, heads, t, hd } = dims;
    let d_out_h = split_heads(d_out, dims);
    let mut dq = vec![T::zero(); batch * heads * t * hd];
    let mut dk = vec![T::zero(); batch * heads * t * hd];
    let mut dv = vec![T::zero(); batch * heads * t * hd];
    let block = t * hd;
    for idx in 0..batch * heads {
        let (b, h) = (idx / heads, idx % heads);
        attention_backward_block(
            q,
            k,
            v,
            probs,
            &d_out_h,
            dims,
            b,
            h,
            &mut dq[idx * block..(idx + 1) * block],
            &mut dk[idx * block..(idx + 1) * block],
            &mut dv[idx * block..(idx + 1) * block],
        );
    }
    (merge_heads(&dq, dims), merge_heads(&dk, dims), merge_heads(&dv, dims))
}

#[cfg(feature = "parallel")]
pub fn attention_backward_par<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
    dims: AttnDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttnDims { batch, heads, t, hd } = dims;
    let d_out_h = split_heads(d_out, dims);
    let mut dq = vec![T::zero(); batch * heads * t * hd];
    let mut dk = vec![T::zero(); batch * heads * t * hd];
    let mut dv = vec![T::zero(); batch * heads * t * hd];
    let block = t * hd;
    dq.par_chunks_mut(block)
        .zip(dk.par_chunks_mut(block))
        .zip(dv.par_chunks_mut(block))
        .enumerate()
        .for_each(|(idx, ((dq_b, dk_b), dv_b))| {
            let (b, h) = (idx / heads, idx % heads);
            attention_backward_block(q, k, v, probs, &d_out_h, dims, b, h, dq_b, dk_b, dv_b);
        });
    (merge_heads(&dq, dims), merge_heads(&dk, dims), merge_heads(&dv, dims))
}

pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
    dims: AttnDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    #[cfg(feature = "parallel")]
    return attention_backward_par(q, k, v, probs, d_out, dims);
    #[cfg(not(feature = "parallel"))]
    attention_backward_seq(q, k, v, probs, d_out, dims)
}

#[inline]
fn unflatten(idx: usize, heads: usize, t: usize) -> (usize, usize, usize) {
    (idx / (heads * t), (idx / t) % heads, idx % t)
}

/// (batch, heads, t, hd) -> (batch, t, heads*hd)
fn merge_heads<T: Scalar>(src: &[T], dims: AttnDims) -> Vec<T> {
    let AttnDims { batch, heads, t, hd } = dims;
    let d = heads * hd;
    let mut dst = vec![T::zero(); batch * t * d];
    for b in 0..batch {
        for h in 0..heads {
            for ti in 0..t {
                let s = ((b * heads + h) * t + ti) * hd;
                let o = (b * t + ti) * d + h * hd;
                dst[o..o + hd].copy_from_slice(&src[s..s + hd]);
            }
        }
    }
    dst
}

/// (batch, t, heads*hd) -> (batch, heads, t, hd)
fn split_heads<T: Scalar>(src: &[T], dims: AttnDims) -> Vec<T> {
    let AttnDims { batch, heads, t, hd } = dims;
    let d = heads * hd;
    let mut dst = vec![T::zero(); batch * t * d];
    for b in 0..batch {
        for h in 0..heads {
            for ti in 0..t {
                let o = ((b * heads + h) * t + ti) * hd;
                let s = (b * t + ti) * d + h * hd;
                dst[o..o + hd].copy_from_slice(&src[s..s + hd]);
            }
        }
    }
    dst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
        rng.normal_vec(n, 0.0, 1.0)
    }

    fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for kk in 0..k {
                    c[i * m + j] += a[i * k + kk] * b[kk * m + j];
                }
            }
        }
        c
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0), "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn matmul_matches_naive_exactly() {
        let mut rng = Rng::new(1).derive("kernels");
        let (n, k, m) = (7, 13, 9);
        let a = randn(&mut rng, n * k);
        let b = randn(&mut rng, k * m);
        // Identical accumulation order, so bit-exact agreement.
        assert_eq!(matmul_seq(&a, &b, n, k, m), naive_matmul(&a, &b, n, k, m));
    }

    #[test]
    fn matmul_bt_matches_naive() {
        let mut rng = Rng::new(2).derive("kernels");
        let (n, k, m) = (5, 6, 19);
        let a = randn(&mut rng, n * m);
        let b = randn(&mut rng, k * m);
        let mut bt = vec![0.0; m * k];
        for r in 0..k {
            for c in 0..m {
                bt[c * k + r] = b[r * m + c];
            }
        }
        assert_close(&matmul_bt_seq(&a, &b, n, k, m), &naive_matmul(&a, &bt, n, m, k), 1e-13);
    }

    #[test]
    fn matmul_at_matches_naive() {
        let mut rng = Rng::new(3).derive("kernels");
        let (n, k, m) = (11, 4, 6);
        let a = randn(&mut rng, n * k);
        let b = randn(&mut rng, n * m);
        let mut at = vec![0.0; k * n];
        for i in 0..n {
            for r in 0..k {
                at[r * n + i] = a[i * k + r];
            }
        }
        assert_close(&matmul_at_seq(&a, &b, n, k, m), &naive_matmul(&at, &b, k, n, m), 1e-13);
    }

    #[test]
    fn softmax_rows_are_normalized() {
        let mut rng = Rng::new(4).derive("kernels");
        let x = randn(&mut rng, 6 * 10);
        let p = softmax_rows_seq(&x, 6, 10);
        for r in 0..6 {
            let s: f64 = p[r * 10..(r + 1) * 10].iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
            assert!(p[r * 10..(r + 1) * 10].iter().all(|&v| v > 0.0));
        }
    }

    /// Straightforward per-head reference (no lane tricks) for attention.
    fn naive_attention(q: &[f64], k: &[f64], v: &[f64], dims: AttnDims) -> Vec<f64> {
        let AttnDims { batch, heads, t, hd } = dims;
        let d = heads * hd;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = vec![0.0; batch * t * d];
        for b in 0..batch {
            for h in 0..heads {
                for ti in 0..t {
                    let mut scores = vec![f64::NEG_INFINITY; t];
                    for tj in 0..=ti {
                        let mut s = 0.0;
                        for x in 0..hd {
                            s += q[(b * t + ti) * d + h * hd + x] * k[(b * t + tj) * d + h * hd + x];
                        }
                        scores[tj] = s * scale;
                    }
                    let max = scores[..=ti].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores[..=ti].iter().map(|s| (s - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for tj in 0..=ti {
                        for x in 0..hd {
                            out[(b * t + ti) * d + h * hd + x] +=
                                exps[tj] / sum * v[(b * t + tj) * d + h * hd + x];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn attention_matches_naive_reference() {
        let dims = AttnDims { batch: 2, heads: 3, t: 5, hd: 4 };
        let n = dims.batch * dims.t * dims.d();
        let mut rng = Rng::new(5).derive("kernels");
        let q = randn(&mut rng, n);
        let k = randn(&mut rng, n);
        let v = randn(&mut rng, n);
        let (out, probs) = attention_forward_seq(&q, &k, &v, dims);
        assert_close(&out, &naive_attention(&q, &k, &v, dims), 1e-12);
        // Probability rows over the causal prefix sum to one; the rest is zero.
        for idx in 0..dims.batch * dims.heads * dims.t {
            let ti = idx % dims.t;
            let row = &probs[idx * dims.t..(idx + 1) * dims.t];
            let s: f64 = row[..=ti].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row[ti + 1..].iter().all(|&p| p == 0.0));
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_kernels_are_bitwise_equal_to_sequential() {
        let mut rng = Rng::new(6).derive("kernels");
        let (n, k, m) = (33, 47, 29);
        let a = randn(&mut rng, n * k);
        let b = randn(&mut rng, k * m);
        assert_eq!(matmul_seq(&a, &b, n, k, m), matmul_par(&a, &b, n, k, m));

        let a2 = randn(&mut rng, n * m);
        let b2 = randn(&mut rng, k * m);
        assert_eq!(matmul_bt_seq(&a2, &b2, n, k, m), matmul_bt_par(&a2, &b2, n, k, m));

        let a3 = randn(&mut rng, n * k);
        let b3 = randn(&mut rng, n * m);
        assert_eq!(matmul_at_seq(&a3, &b3, n, k, m), matmul_at_par(&a3, &b3, n, k, m));

        let x = randn(&mut rng, 17 * 31);
        assert_eq!(softmax_rows_seq(&x, 17, 31), softmax_rows_par(&x, 17, 31));

        let dims = AttnDims { batch: 2, heads: 4, t: 9, hd: 8 };
        let sz = dims.batch * dims.t * dims.d();
        let q = randn(&mut rng, sz);
        let kk = randn(&mut rng, sz);
        let v = randn(&mut rng, sz);
        let (out_s, probs_s) = attention_forward_seq(&q, &kk, &v, dims);
        let (out_p, probs_p) = attention_forward_par(&q, &kk, &v, dims);
        assert_eq!(out_s, out_p);
        assert_eq!(probs_s, probs_p);

        let d_out = randn(&mut rng, sz);
        let gs = attention_backward_seq(&q, &kk, &v, &probs_s, &d_out, dims);
        let gp = attention_backward_par(&q, &kk, &v, &probs_p, &d_out, dims);
        assert_eq!(gs, gp);
    }
}
