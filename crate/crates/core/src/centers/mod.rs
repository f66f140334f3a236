//! Class centers on the unit sphere and their allocation to classes.
//!
//! Centers are computed once, offline, by minimizing the log-sum-exp
//! uniformity loss
//!
//! ```text
//! L(ψ) = Σ_c log Σ_c' exp(ψ_c · ψ_c' / τ)
//! ```
//!
//! with projected gradient descent on the sphere. During fine-tuning a
//! moving-average mean feature is kept per class, and each class is matched
//! to the center minimizing the total Euclidean distance to those means.

pub mod assignment;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, norm, softmax_into, RngStream, ZERO_NORM};

/// Largest class count the allocation supports.
pub const MAX_CLASSES: usize = 64;

/// Up to this many classes the allocation enumerates all permutations.
pub const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformityConfig {
    pub tau: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the Frobenius norm of the tangent-space gradient falls below this.
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        Self { tau: 1.0, learning_rate: 0.1, max_iters: 20_000, grad_tol: 1e-7, seed: 0 }
    }
}

impl UniformityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("uniformity tau must be positive, got {}", self.tau)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "uniformity learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("uniformity max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `K` unit-norm centers in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    k: usize,
    dim: usize,
    rows: Vec<f64>,
    pub tau: f64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

impl ClassCenters {
    /// Wraps externally supplied rows; every row must have unit norm to 1e-9.
    pub fn from_rows(k: usize, dim: usize, rows: Vec<f64>, tau: f64) -> Result<Self> {
        if k == 0 || dim == 0 || rows.len() != k * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot form {k} centers of dimension {dim}",
                rows.len()
            )));
        }
        for (c, row) in rows.chunks(dim).enumerate() {
            let n = norm(row);
            if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("center {c} has norm {n}, expected 1")));
            }
        }
        let (final_loss, grad) = uniformity_loss_and_grad(&rows, dim, tau);
        let final_grad_norm = norm(&tangent_projection(&rows, &grad, dim));
        Ok(Self { k, dim, rows, tau, final_loss, final_grad_norm, iterations: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.rows[c * self.dim..(c + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn max_pairwise_inner_product(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.k {
            for b in a + 1..self.k {
                best = best.max(dot(self.row(a), self.row(b)));
            }
        }
        best
    }

    pub fn pairwise_inner_products(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in 0..self.k {
            for b in a + 1..self.k {
                out.push(dot(self.row(a), self.row(b)));
            }
        }
        out
    }
}

/// Uniformity loss and its Euclidean gradient for `K` rows of length `dim`.
///
/// The inner sum keeps the `c' = c` self term, which contributes a constant
/// `1/τ` per row on the sphere and leaves the minimizer unchanged.
pub fn uniformity_loss_and_grad(rows: &[f64], dim: usize, tau: f64) -> (f64, Vec<f64>) {
    assert!(dim > 0 && rows.len() % dim == 0, "rows must be a K×d matrix");
    let k = rows.len() / dim;
    let row = |c: usize| &rows[c * dim..(c + 1) * dim];

    let mut logits = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let g = dot(row(a), row(b)) / tau;
            logits[a * k + b] = g;
            logits[b * k + a] = g;
        }
    }

    let mut loss = 0.0;
    let mut probs = vec![0.0; k * k];
    for a in 0..k {
        let l = &logits[a * k..(a + 1) * k];
        loss += log_sum_exp(l);
        softmax_into(l, &mut probs[a * k..(a + 1) * k]);
    }

    // ∂L/∂ψ_a = (Σ_b P_ab ψ_b + Σ_b P_ba ψ_b) / τ
    let mut grad = vec![0.0; rows.len()];
    for a in 0..k {
        let g = &mut grad[a * dim..(a + 1) * dim];
        for b in 0..k {
            let w = (probs[a * k + b] + probs[b * k + a]) / tau;
            for (gi, &x) in g.iter_mut().zip(row(b)) {
                *gi += w * x;
            }
        }
    }
    (loss, grad)
}

fn tangent_projection(rows: &[f64], grad: &[f64], dim: usize) -> Vec<f64> {
    let mut out = grad.to_vec();
    for (g, psi) in out.chunks_mut(dim).zip(rows.chunks(dim)) {
        let radial = dot(g, psi);
        for (gi, &p) in g.iter_mut().zip(psi) {
            *gi -= radial * p;
        }
    }
    out
}

/// Minimizes the uniformity loss over `K` points on `S^{d-1}`.
///
/// Fixed-step descent along the tangent-space gradient, followed by
/// per-row renormalization as the retraction.
pub fn precompute_centers(k: usize, dim: usize, config: &UniformityConfig) -> Result<ClassCenters> {
    config.validate()?;
    if k < 2 || k > MAX_CLASSES {
        return Err(Error::Config(format!("class count must be in 2..={MAX_CLASSES}, got {k}")));
    }
    if dim == 0 {
        return Err(Error::Config("latent dimension must be positive".into()));
    }
    if dim + 1 < k {
        log::warn!("latent dimension {dim} < K-1 = {}; a regular simplex does not fit", k - 1);
    }

    let mut rng = RngStream::new(config.seed);
    let mut rows = vec![0.0; k * dim];
    for row in rows.chunks_mut(dim) {
        loop {
            row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            let n = norm(row);
            if n > ZERO_NORM {
                row.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
    }

    let mut grad_norm = f64::INFINITY;
    let mut loss = 0.0;
    for iter in 0..config.max_iters {
        let (l, grad) = uniformity_loss_and_grad(&rows, dim, config.tau);
        let riem = tangent_projection(&rows, &grad, dim);
        loss = l;
        grad_norm = norm(&riem);
        if grad_norm <= config.grad_tol {
            return Ok(ClassCenters {
                k,
                dim,
                rows,
                tau: config.tau,
                final_loss: loss,
                final_grad_norm: grad_norm,
                iterations: iter,
            });
        }
        for (row, g) in rows.chunks_mut(dim).zip(riem.chunks(dim)) {
            for (x, gi) in row.iter_mut().zip(g) {
                *x -= config.learning_rate * gi;
            }
            let n = norm(row);
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    log::debug!("uniformity loss {loss} with gradient norm {grad_norm:e} after max_iters");
    Err(Error::NotConverged { grad_norm, iterations: config.max_iters })
}

/// Moving-average, unit-normalized mean feature per class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeans {
    k: usize,
    dim: usize,
    eta: f64,
    means: Vec<f64>,
    initialized: Vec<bool>,
}

impl EmpiricalMeans {
    pub fn new(k: usize, dim: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!("moving-average rate must be in (0, 1], got {eta}")));
        }
        if k == 0 || dim == 0 {
            return Err(Error::Config("empirical means need K >= 1 and d >= 1".into()));
        }
        Ok(Self { k, dim, eta, means: vec![0.0; k * dim], initialized: vec![false; k] })
    }

    /// Restores saved state; initialized rows must be unit-norm.
    pub fn from_parts(k: usize, dim: usize, eta: f64, means: Vec<f64>, initialized: Vec<bool>) -> Result<Self> {
        let mut out = Self::new(k, dim, eta)?;
        if means.len() != k * dim || initialized.len() != k {
            return Err(Error::ShapeMismatch("empirical means state has wrong size".into()));
        }
        out.means = means;
        out.initialized = initialized;
        Ok(out)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn is_initialized(&self, c: usize) -> bool {
        self.initialized[c]
    }

    pub fn initialized_flags(&self) -> &[bool] {
        &self.initialized
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.k).filter(|&c| !self.initialized[c]).collect()
    }

    pub fn all_initialized(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    /// Folds one batch of unit features (`n × d`, row-major) into the means.
    ///
    /// Classes absent from the batch are untouched. A class seen for the
    /// first time takes its batch mean directly. On error nothing is modified.
    pub fn update(&mut self, features: &[f64], labels: &[usize]) -> Result<()> {
        let d = self.dim;
        if features.len() != labels.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} labels of dimension {d}",
                features.len(),
                labels.len()
            )));
        }
        let mut sums = vec![0.0; self.k * d];
        let mut present = vec![false; self.k];
        for (phi, &y) in features.chunks(d).zip(labels) {
            if y >= self.k {
                return Err(Error::Data(format!("label {y} outside 0..{}", self.k)));
            }
            present[y] = true;
            for (s, x) in sums[y * d..(y + 1) * d].iter_mut().zip(phi) {
                *s += x;
            }
        }
        for c in (0..self.k).filter(|&c| present[c]) {
            let s = &sums[c * d..(c + 1) * d];
            let n = norm(s);
            if !(n >= ZERO_NORM) {
                return Err(Error::DegenerateBatchMean { class: c, norm: n });
            }
        }
        for c in (0..self.k).filter(|&c| present[c]) {
            let batch = &sums[c * d..(c + 1) * d];
            let n = norm(batch);
            let mean = &mut self.means[c * d..(c + 1) * d];
            if self.initialized[c] {
                for (m, b) in mean.iter_mut().zip(batch) {
                    *m = (1.0 - self.eta) * *m + self.eta * (b / n);
                }
                let mn = norm(mean);
                if !(mn >= ZERO_NORM) {
                    return Err(Error::DegenerateBatchMean { class: c, norm: mn });
                }
                mean.iter_mut().for_each(|m| *m /= mn);
            } else {
                for (m, b) in mean.iter_mut().zip(batch) {
                    *m = b / n;
                }
                self.initialized[c] = true;
            }
        }
        Ok(())
    }
}

/// A bijection from classes to center indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pi: Vec<usize>,
}

impl Assignment {
    pub fn new(pi: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; pi.len()];
        for &j in &pi {
            if j >= pi.len() || seen[j] {
                return Err(Error::Data(format!("{pi:?} is not a permutation")));
            }
            seen[j] = true;
        }
        Ok(Self { pi })
    }

    pub fn identity(k: usize) -> Self {
        Self { pi: (0..k).collect() }
    }

    pub fn center_of(&self, class: usize) -> usize {
        self.pi[class]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.pi
    }

    /// FNV-1a hash of the permutation, for compact logging.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &j in &self.pi {
            for b in (j as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// `costs[c][j] = ‖ψ_j − φ̄_c‖₂`.
pub fn allocation_costs(centers: &ClassCenters, means: &EmpiricalMeans) -> Vec<Vec<f64>> {
    (0..means.k())
        .map(|c| {
            (0..centers.k())
                .map(|j| {
                    centers
                        .row(j)
                        .iter()
                        .zip(means.mean(c))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Permutation minimizing `Σ_c ‖ψ_{π(c)} − φ̄_c‖₂`.
///
/// Enumerates every permutation for `K <= 8` (ties go to the
/// lexicographically smallest); uses the Hungarian method above that.
pub fn allocate_centers(centers: &ClassCenters, means: &EmpiricalMeans) -> Result<Assignment> {
    if centers.k() != means.k() || centers.dim() != means.dim() {
        return Err(Error::ShapeMismatch(format!(
            "centers {}×{} vs means {}×{}",
            centers.k(),
            centers.dim(),
            means.k(),
            means.dim()
        )));
    }
    let missing = means.missing();
    if !missing.is_empty() {
        return Err(Error::UninitializedMeans { missing });
    }
    let costs = allocation_costs(centers, means);
    let pi = if centers.k() <= EXHAUSTIVE_LIMIT {
        assignment::exhaustive(&costs)
    } else {
        assignment::hungarian(&costs)
    };
    Assignment::new(pi)
}
