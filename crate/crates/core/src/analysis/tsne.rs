//! Exact (O(N²)) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Entropy tolerance of the bandwidth search, in nats.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 200;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 100.0,
            early_exaggeration: 4.0,
            exaggeration_iterations: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `N × 2` coordinates, one row per input point.
    pub y: Matrix<f64>,
    /// KL(P‖Q) of the initial layout and after every iteration, measured with
    /// the unexaggerated P.
    pub kl_trace: Vec<f64>,
    /// Perplexity actually used after capping.
    pub perplexity: f64,
    /// Gaussian precision `1/(2σ²)` of each point.
    pub betas: Vec<f64>,
    pub config: TsneConfig,
}

/// Squared Euclidean distances between the rows of `x`.
pub fn squared_distances<T: Scalar>(x: &Matrix<T>) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| {
                    let t = a.as_f64() - b.as_f64();
                    t * t
                })
                .sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional distribution `P(·|i)` for precision `beta` and its entropy in nats.
pub fn conditional_row(dist: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { (-(d - min) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut h = sum.ln();
    for (j, v) in p.iter_mut().enumerate() {
        *v /= sum;
        if j != i {
            h += beta * (dist[j] - min) * *v;
        }
    }
    (p, h)
}

/// Symmetrized joint affinities `P = (P(j|i) + P(i|j)) / 2N` (row-major
/// `N × N`) and the calibrated per-point precisions.
pub fn joint_probabilities(dist: &[f64], n: usize, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if dist.len() != n * n {
        return Err(Error::dim(format!("{} distances for {n} points", dist.len())));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut betas = vec![1.0; n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let (mut p, mut h) = conditional_row(row, i, beta);
        for _ in 0..MAX_BISECTION_STEPS {
            if (h - target).abs() <= ENTROPY_TOLERANCE {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (p, h) = conditional_row(row, i, beta);
        }
        if (h - target).abs() > ENTROPY_TOLERANCE {
            log::warn!("bandwidth search for point {i} stopped at entropy {h:.6}, target {target:.6}");
        }
        betas[i] = beta;
        cond[i * n..(i + 1) * n].copy_from_slice(&p);
    }
    let mut joint = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
        }
    }
    Ok((joint, betas))
}

/// Caps the perplexity at `(N − 1) / 3`.
pub fn effective_perplexity(n: usize, requested: f64) -> f64 {
    let cap = (n as f64 - 1.0) / 3.0;
    if requested > cap {
        log::warn!("perplexity {requested} too large for {n} points; using {cap:.3}");
        cap
    } else {
        requested
    }
}

fn kl_divergence(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qn)| {
            let q = (qn / q_sum).max(P_FLOOR);
            pv * (pv.max(P_FLOOR) / q).ln()
        })
        .sum()
}

/// Fills `num` with `1 / (1 + |y_i − y_j|²)` (zero diagonal) and returns its sum.
fn student_affinities(y: &[f64], num: &mut [f64]) -> f64 {
    let n = y.len() / 2;
    let mut q_sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            q_sum += 2.0 * v;
        }
    }
    q_sum
}

pub fn tsne<T: Scalar>(x: &Matrix<T>, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.rows();
    if n < 4 {
        return Err(Error::DegenerateInput(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !x.is_finite() {
        return Err(Error::Numerical("t-SNE input is not finite".into()));
    }
    if !(cfg.perplexity > 0.0 && cfg.learning_rate > 0.0) {
        return Err(Error::Config("perplexity and learning rate must be positive".into()));
    }
    let perplexity = effective_perplexity(n, cfg.perplexity);
    let dist = squared_distances(x);
    let (p, betas) = joint_probabilities(&dist, n, perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..n * 2).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; n * 2];
    let mut gains = vec![1.0f64; n * 2];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * 2];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let q_sum = student_affinities(&y, &mut num);
        kl_trace.push(kl_divergence(&p, &num, q_sum));
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / q_sum).max(P_FLOOR);
                let m = (exaggeration * p[i * n + j] - q) * num[i * n + j];
                grad[2 * i] += 4.0 * m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += 4.0 * m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..n * 2 {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("t-SNE diverged at iteration {}", iter + 1)));
        }
    }
    let q_sum = student_affinities(&y, &mut num);
    kl_trace.push(kl_divergence(&p, &num, q_sum));
    Ok(TsneResult {
        y: Matrix::from_vec(n, 2, y)?,
        kl_trace,
        perplexity,
        betas,
        config: *cfg,
    })
}

/// Mean silhouette coefficient of `points` under `labels` (Euclidean).
pub fn silhouette_score<L: PartialEq>(points: &Matrix<f64>, labels: &[L]) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::dim(format!("{n} points, {} labels", labels.len())));
    }
    let dist = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let cluster: Vec<usize> = (0..n)
        .map(|i| (0..=i).find(|&k| labels[k] == labels[i]).expect("i matches itself"))
        .collect();
    let mut total = 0.0;
    let mut sums = vec![(0.0, 0usize); n];
    for i in 0..n {
        sums.fill((0.0, 0));
        for j in (0..n).filter(|&j| j != i) {
            let s = &mut sums[cluster[j]];
            s.0 += dist(i, j);
            s.1 += 1;
        }
        let own = sums[cluster[i]];
        let b = (0..n)
            .filter(|&c| c != cluster[i] && sums[c].1 > 0)
            .map(|c| sums[c].0 / sums[c].1 as f64)
            .fold(f64::INFINITY, f64::min);
        if own.1 == 0 || !b.is_finite() {
            continue;
        }
        let a = own.0 / own.1 as f64;
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn clusters(seed: u64) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..10 {
                for k in 0..10 {
                    let center = if k == c { 10.0 } else { 0.0 };
                    data.push(center + noise.sample(&mut rng));
                }
                labels.push(c);
            }
        }
        (Matrix::from_vec(30, 10, data).unwrap(), labels)
    }

    #[test]
    fn joint_probabilities_are_symmetric_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::<f64>::from_vec(20, 5, (0..100).map(|_| rng.random::<f64>()).collect()).unwrap();
        let d = squared_distances(&x);
        let (p, betas) = joint_probabilities(&d, 20, 5.0).unwrap();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for i in 0..20 {
            assert_eq!(p[i * 20 + i], 0.0);
            for j in 0..20 {
                assert!(p[i * 20 + j] >= 0.0);
                assert!((p[i * 20 + j] - p[j * 20 + i]).abs() < 1e-15);
            }
            let (_, h) = conditional_row(&d[i * 20..(i + 1) * 20], i, betas[i]);
            assert!((h - 5f64.ln()).abs() <= 1e-5, "point {i}: {h}");
        }
    }

    #[test]
    fn duplicate_points_are_handled() {
        let x = Matrix::<f64>::from_vec(6, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 5.0]).unwrap();
        let d = squared_distances(&x);
        let (p, _) = joint_probabilities(&d, 6, 1.5).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn separates_clusters_and_lowers_kl() {
        let (x, labels) = clusters(1);
        let cfg = TsneConfig {
            perplexity: 5.0,
            seed: 7,
            ..TsneConfig::default()
        };
        let r = tsne(&x, &cfg).unwrap();
        assert!(r.kl_trace.last().unwrap() < &r.kl_trace[0]);
        assert!(silhouette_score(&r.y, &labels).unwrap() > 0.3);
        assert_eq!(tsne(&x, &cfg).unwrap().y, r.y);
    }

    #[test]
    fn perplexity_is_capped() {
        let (x, _) = clusters(2);
        let cfg = TsneConfig {
            iterations: 10,
            ..TsneConfig::default()
        };
        let r = tsne(&x, &cfg).unwrap();
        assert!((r.perplexity - 29.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let x = Matrix::<f64>::zeros(3, 2);
        assert!(matches!(tsne(&x, &TsneConfig::default()), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn silhouette_of_perfect_clusters_is_near_one() {
        let y = Matrix::from_vec(4, 2, vec![0.0, 0.0, 0.0, 0.1, 10.0, 0.0, 10.0, 0.1]).unwrap();
        assert!(silhouette_score(&y, &[0, 0, 1, 1]).unwrap() > 0.98);
    }
}
