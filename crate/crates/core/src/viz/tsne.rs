//! Exact (O(n²)) t-SNE.
//!
//! Standard formulation: per-point Gaussian bandwidths found by bisection so
//! each conditional distribution hits the target perplexity (entropy
//! tolerance 1e-5), symmetrized joint P, Student-t similarities in the
//! embedding, and gradient descent with early exaggeration (×12 for the
//! first 250 iterations), per-parameter gains, and a momentum switch
//! 0.5 → 0.8 at iteration 250.
//!
//! Determinism: every reduction runs in index order, and each point's
//! initial coordinates are derived from a hash of its feature vector, so a
//! permutation of the input rows permutes the output rows and nothing else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::VizError;
use crate::fingerprint::fnv1a64;

/// t-SNE hyperparameters; defaults are the technique's canonical values.
#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch_iter: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 2024,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_switch_iter: 250,
        }
    }
}

/// A 2-D embedding with per-point class labels and the KL trace.
#[derive(Debug, Clone)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    /// KL divergence against the unexaggerated P, one value per iteration.
    pub kl_trace: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 50;
const P_FLOOR: f64 = 1e-12;
const GRAD_CLIP: f64 = 1e4;

/// Embeds `n × dim` row-major `data` into 2-D.
///
/// Requires `n ≥ 3 × perplexity` (the conditional distributions need enough
/// neighbors to hit the target entropy).
pub fn tsne(
    data: &[f32],
    n: usize,
    dim: usize,
    labels: &[u8],
    cfg: &TsneConfig,
) -> Result<Embedding2D, VizError> {
    if n * dim != data.len() {
        return Err(VizError::BadInput(format!(
            "data length {} does not match n={n} × dim={dim}",
            data.len()
        )));
    }
    if labels.len() != n {
        return Err(VizError::BadInput(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    if cfg.perplexity < 1.0 || (n as f64) < 3.0 * cfg.perplexity {
        return Err(VizError::Parameter(format!(
            "perplexity {} infeasible for n={n} (need n ≥ 3·perplexity)",
            cfg.perplexity
        )));
    }

    let p = joint_probabilities(data, n, dim, cfg.perplexity);

    // content-derived init: a row hash picks the ChaCha stream, so row order
    // does not matter
    let mut points = vec![[0.0f64; 2]; n];
    for (i, point) in points.iter_mut().enumerate() {
        let row = &data[i * dim..(i + 1) * dim];
        let mut bytes = Vec::with_capacity(dim * 4);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a64(&bytes));
        // Box-Muller, std 1e-4
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt() * 1e-4;
        let theta = 2.0 * std::f64::consts::PI * u2;
        point[0] = r * theta.cos();
        point[1] = r * theta.sin();
    }

    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            0.5
        } else {
            0.8
        };

        let kl = gradient(&p, &points, n, exaggeration, &mut grad);
        kl_trace.push(kl);

        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d].clamp(-GRAD_CLIP, GRAD_CLIP);
                // standard gains: grow when gradient opposes velocity
                gains[i][d] = if g.signum() != velocity[i][d].signum() {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                velocity[i][d] = momentum * velocity[i][d] - cfg.learning_rate * gains[i][d] * g;
                points[i][d] += velocity[i][d];
            }
        }
        // re-center
        let mut mean = [0.0f64; 2];
        for point in &points {
            mean[0] += point[0];
            mean[1] += point[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for point in points.iter_mut() {
            point[0] -= mean[0];
            point[1] -= mean[1];
        }
    }

    Ok(Embedding2D {
        points,
        labels: labels.to_vec(),
        perplexity: cfg.perplexity,
        iterations: cfg.iterations,
        seed: cfg.seed,
        kl_trace,
    })
}

/// Symmetrized joint probabilities with perplexity-matched bandwidths.
fn joint_probabilities(data: &[f32], n: usize, dim: usize, perplexity: f64) -> Vec<f64> {
    // squared distances, parallel over rows
    let mut d2 = vec![0.0f64; n * n];
    d2.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = &data[i * dim..(i + 1) * dim];
        for (j, slot) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let xj = &data[j * dim..(j + 1) * dim];
            let mut s = 0.0f64;
            for (&a, &b) in xi.iter().zip(xj) {
                let diff = f64::from(a) - f64::from(b);
                s += diff * diff;
            }
            *slot = s;
        }
    });

    // conditional p_{j|i} via bisection on the precision beta
    let target = perplexity.ln();
    let mut cond = vec![0.0f64; n * n];
    cond.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let drow = &d2[i * n..(i + 1) * n];
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        // shift by the smallest off-diagonal distance for stable exponentials
        let dmin = drow
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        for _ in 0..BISECTION_STEPS {
            let mut sum = 0.0f64;
            let mut weighted = 0.0f64;
            for (j, &d) in drow.iter().enumerate() {
                if j == i {
                    continue;
                }
                let e = (-beta * (d - dmin)).exp();
                sum += e;
                weighted += (d - dmin) * e;
            }
            // entropy of the normalized kernel (shift cancels)
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
        }
        let mut sum = 0.0f64;
        for (j, &d) in drow.iter().enumerate() {
            if j != i {
                row[j] = (-beta * (d - dmin)).exp();
                sum += row[j];
            }
        }
        for (j, v) in row.iter_mut().enumerate() {
            if j != i {
                *v /= sum;
            }
        }
    });
    drop(d2);

    // symmetrize: p_ij = (p_{j|i} + p_{i|j}) / 2n
    let mut p = vec![0.0f64; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / norm).max(P_FLOOR);
            }
        }
    }
    p
}

/// KL gradient in the embedding; returns the KL divergence against the
/// unexaggerated P. Two passes over all pairs, both reduced in index order.
fn gradient(
    p: &[f64],
    points: &[[f64; 2]],
    n: usize,
    exaggeration: f64,
    grad: &mut [[f64; 2]],
) -> f64 {
    // pass 1: Student-t normalizer
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = points[i];
            let mut s = 0.0f64;
            for (j, yj) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dx = yi[0] - yj[0];
                let dy = yi[1] - yj[1];
                s += 1.0 / (1.0 + dx * dx + dy * dy);
            }
            s
        })
        .collect();
    let sum_num: f64 = row_sums.iter().sum();

    // pass 2: gradient and KL, parallel over rows
    let kl_rows: Vec<f64> = grad
        .par_iter_mut()
        .enumerate()
        .map(|(i, g)| {
            let yi = points[i];
            let mut gx = 0.0f64;
            let mut gy = 0.0f64;
            let mut kl = 0.0f64;
            for (j, yj) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dx = yi[0] - yj[0];
                let dy = yi[1] - yj[1];
                let num = 1.0 / (1.0 + dx * dx + dy * dy);
                let q = (num / sum_num).max(P_FLOOR);
                let pij = p[i * n + j];
                let f = 4.0 * (exaggeration * pij - q) * num;
                gx += f * dx;
                gy += f * dy;
                kl += pij * (pij / q).ln();
            }
            g[0] = gx;
            g[1] = gy;
            kl
        })
        .collect();

    kl_rows.iter().sum()
}

/// Mean intra-class pairwise distance over mean inter-class pairwise
/// distance in the embedding. Lower means tighter class clusters; a value
/// near 1 means no class structure.
pub fn cluster_distance_ratio(e: &Embedding2D) -> f64 {
    let n = e.points.len();
    let mut intra = 0.0f64;
    let mut intra_n = 0usize;
    let mut inter = 0.0f64;
    let mut inter_n = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = e.points[i][0] - e.points[j][0];
            let dy = e.points[i][1] - e.points[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            if e.labels[i] == e.labels[j] {
                intra += d;
                intra_n += 1;
            } else {
                inter += d;
                inter_n += 1;
            }
        }
    }
    (intra / intra_n.max(1) as f64) / (inter / inter_n.max(1) as f64)
}
