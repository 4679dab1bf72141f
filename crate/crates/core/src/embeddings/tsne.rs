use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches and exaggeration ends.
    pub switch_iteration: usize,
    pub exaggeration: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            switch_iteration: 250,
            exaggeration: 12.0,
            seed: 0,
        }
    }
}

/// Symmetrised affinities `p_ij = (p_j|i + p_i|j) / 2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProbabilities {
    pub n: usize,
    /// Row-major `N x N`, zero diagonal.
    pub p: Vec<f64>,
    /// Shannon entropy in bits of each conditional row `p_.|i`.
    pub row_entropy_bits: Vec<f64>,
}

const MAX_HALVINGS: usize = 200;
const ENTROPY_TOL_BITS: f64 = 1e-7;
const MIN_GAIN: f64 = 0.01;

fn sq_distances(data: &Tensor) -> Vec<f64> {
    let n = data.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Gaussian conditional row for precision `beta`; returns its entropy in
/// bits. Distances are shifted by the row minimum to avoid underflow.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - min)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// Per-point bandwidths by bisection on the precision so every conditional
/// row has entropy `log2(perplexity)`.
pub fn joint_probabilities(data: &Tensor, perplexity: f64) -> Result<JointProbabilities> {
    let n = data.rows();
    let target = perplexity.log2();
    let dist = sq_distances(data);
    let mut cond = vec![0.0; n * n];
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let row_d = &dist[i * n..(i + 1) * n];
        let out = &mut cond[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = conditional_row(row_d, i, beta, out);
        let mut tries = 0;
        while (h - target).abs() > ENTROPY_TOL_BITS {
            if tries == MAX_HALVINGS {
                return Err(Error::Numeric(format!(
                    "perplexity search did not converge for point {i} (entropy {h} bits, target {target})"
                )));
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = conditional_row(row_d, i, beta, out);
            tries += 1;
        }
        entropies.push(h);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2 * n) as f64;
        }
    }
    Ok(JointProbabilities {
        n,
        p,
        row_entropy_bits: entropies,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `N x 2`
    pub coords: Tensor,
    /// KL(P || Q) after each iteration, against the unexaggerated P.
    pub kl: Vec<f64>,
}

/// Student-t affinities: returns the unnormalised kernel `1/(1+d^2)` and
/// its off-diagonal sum.
fn student_t(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &[f64], num: &[f64], sum: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &k)| pij * (pij / (k / sum).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Exact t-SNE by gradient descent with momentum, per-coordinate adaptive
/// gains and early exaggeration.
/// Rows that duplicate an earlier row get seeded jitter of scale 1e-10.
pub fn tsne_project(data: &Tensor, config: &TsneConfig) -> Result<TsneResult> {
    let n = data.rows();
    if n < 4 {
        return Err(Error::Domain(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(config.perplexity >= 1.0 && config.perplexity < (n - 1) as f64 / 3.0) {
        return Err(Error::Config(format!(
            "perplexity {} must lie in [1, (N-1)/3) = [1, {:.3}) for N = {n}",
            config.perplexity,
            (n - 1) as f64 / 3.0
        )));
    }
    if !(config.learning_rate > 0.0) || config.iterations == 0 {
        return Err(Error::Config("t-SNE needs a positive learning rate and iterations".into()));
    }
    let rng = Rng::new(config.seed);
    let mut jitter = rng.derive("duplicates");
    let mut x = data.clone();
    for i in 1..n {
        if (0..i).any(|j| data.row(j) == data.row(i)) {
            for v in x.row_mut(i) {
                *v += 1e-10 * jitter.normal();
            }
        }
    }
    let jp = joint_probabilities(&x, config.perplexity)?;
    let p = jp.p;

    let mut init = rng.derive("init");
    let mut y: Vec<f64> = (0..2 * n).map(|_| 1e-4 * init.normal()).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (exag, momentum) = if it < config.switch_iteration {
            (config.exaggeration, config.initial_momentum)
        } else {
            (1.0, config.final_momentum)
        };
        let (num, sum) = student_t(&y, n);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = num[i * n + j];
                let w = (exag * p[i * n + j] - k / sum) * k;
                gx += w * (y[2 * i] - y[2 * j]);
                gy += w * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            // delta-bar-delta gains: grow while the step keeps flipping sign
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            velocity[k] = momentum * velocity[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("t-SNE diverged at iteration {}", it + 1)));
        }
        let (num, sum) = student_t(&y, n);
        kl.push(kl_divergence(&p, &num, sum));
    }
    Ok(TsneResult {
        coords: Tensor::matrix(n, 2, y)?,
        kl,
    })
}
