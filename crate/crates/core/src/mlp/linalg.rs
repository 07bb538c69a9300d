//! Batched kernels for the fully connected forward/backward passes.
//!
//! Weights are stored input-major: `wt[k * out_dim + o]` is the weight from
//! input `k` to output `o`. Every inner loop therefore runs over a
//! contiguous output row, which vectorizes without changing the order of
//! floating-point operations: each output element is produced by exactly one
//! task with a fixed accumulation order, so parallel and serial runs agree
//! bit for bit.

use num_traits::Float;
use rayon::prelude::*;

/// Below this many multiply-accumulates a kernel stays single-threaded.
const PAR_THRESHOLD: usize = 1 << 16;

#[inline]
fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dot product with eight fixed-order accumulators.
#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[r] = bias + x[r] · wt` for each of `rows` rows.
///
/// Zero inputs are skipped; ReLU activations and raw MNIST pixels are mostly
/// zeros, so the branch pays for itself.
pub fn forward_affine<T: Float + Send + Sync>(
    x: &[T],
    rows: usize,
    in_dim: usize,
    wt: &[T],
    bias: &[T],
    out_dim: usize,
    out: &mut [T],
) {
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(wt.len(), in_dim * out_dim);
    debug_assert_eq!(out.len(), rows * out_dim);
    let row = |x_row: &[T], out_row: &mut [T]| {
        out_row.copy_from_slice(bias);
        for (k, &xv) in x_row.iter().enumerate() {
            if xv != T::zero() {
                axpy(xv, &wt[k * out_dim..(k + 1) * out_dim], out_row);
            }
        }
    };
    if rows * in_dim * out_dim >= PAR_THRESHOLD {
        out.par_chunks_mut(out_dim)
            .zip(x.par_chunks(in_dim))
            .for_each(|(out_row, x_row)| row(x_row, out_row));
    } else {
        for (out_row, x_row) in out.chunks_mut(out_dim).zip(x.chunks(in_dim)) {
            row(x_row, out_row);
        }
    }
}

/// `dwt[k] = sum_r x[r,k] * delta[r]` (weight gradient, overwritten).
pub fn grad_weights<T: Float + Send + Sync>(
    x: &[T],
    delta: &[T],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    dwt: &mut [T],
) {
    debug_assert_eq!(dwt.len(), in_dim * out_dim);
    let col = |k: usize, dw_row: &mut [T]| {
        for v in dw_row.iter_mut() {
            *v = T::zero();
        }
        for r in 0..rows {
            let xv = x[r * in_dim + k];
            if xv != T::zero() {
                axpy(xv, &delta[r * out_dim..(r + 1) * out_dim], dw_row);
            }
        }
    };
    if rows * in_dim * out_dim >= PAR_THRESHOLD {
        dwt.par_chunks_mut(out_dim)
            .enumerate()
            .for_each(|(k, dw_row)| col(k, dw_row));
    } else {
        for (k, dw_row) in dwt.chunks_mut(out_dim).enumerate() {
            col(k, dw_row);
        }
    }
}

/// `db[o] = sum_r delta[r,o]`.
pub fn grad_bias<T: Float>(delta: &[T], rows: usize, out_dim: usize, db: &mut [T]) {
    for v in db.iter_mut() {
        *v = T::zero();
    }
    for r in 0..rows {
        axpy(T::one(), &delta[r * out_dim..(r + 1) * out_dim], db);
    }
}

/// `dprev[r,k] = delta[r] · wt[k]` (gradient through the affine map).
pub fn backprop_delta<T: Float + Send + Sync>(
    delta: &[T],
    rows: usize,
    out_dim: usize,
    wt: &[T],
    in_dim: usize,
    dprev: &mut [T],
) {
    debug_assert_eq!(dprev.len(), rows * in_dim);
    let row = |delta_row: &[T], dprev_row: &mut [T]| {
        for (k, dp) in dprev_row.iter_mut().enumerate() {
            *dp = dot(delta_row, &wt[k * out_dim..(k + 1) * out_dim]);
        }
    };
    if rows * in_dim * out_dim >= PAR_THRESHOLD {
        dprev
            .par_chunks_mut(in_dim)
            .zip(delta.par_chunks(out_dim))
            .for_each(|(dprev_row, delta_row)| row(delta_row, dprev_row));
    } else {
        for (dprev_row, delta_row) in dprev.chunks_mut(in_dim).zip(delta.chunks(out_dim)) {
            row(delta_row, dprev_row);
        }
    }
}

pub fn relu_inplace<T: Float>(z: &mut [T]) {
    for v in z.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient where the forward activation was clamped.
pub fn relu_backward<T: Float>(delta: &mut [T], activation: &[T]) {
    for (d, &a) in delta.iter_mut().zip(activation) {
        if a <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Softmax each row of `logits` in place; returns the summed cross-entropy
/// of the true labels (with the 1e-12 probability floor).
pub fn softmax_rows_ce<T: Float>(logits: &mut [T], rows: usize, classes: usize, labels: Option<&[u8]>) -> f64 {
    let floor = T::from(1e-12).unwrap();
    let mut loss = 0.0f64;
    for r in 0..rows {
        let row = &mut logits[r * classes..(r + 1) * classes];
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
        if let Some(labels) = labels {
            let p = row[labels[r] as usize];
            let p = if p < floor { floor } else { p };
            loss -= p.to_f64().unwrap().ln();
        }
    }
    loss
}

/// Plain SGD: `w -= lr * g`.
pub fn sgd_step<T: Float>(params: &mut [T], grads: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grads) {
        *p = *p - lr * g;
    }
}

/// Momentum SGD: `v = mu*v - lr*g; w += v`.
pub fn momentum_step<T: Float>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, mu: T) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v - lr * g;
        *p = *p + *v;
    }
}
