//! Supervised contrast with an extra pull toward each pixel's assigned class center.
//!
//! For anchor `i` with sampled positives `P_i` and assigned center `ν_i`:
//!
//! ```text
//! ℓ_i = −Σ_{p∈P_i} log(e^{φ_i·φ_p/τ} / D_i) − λ log(e^{φ_i·ν_i/τ} / D_i)
//! D_i = Σ_{j≠i} e^{φ_i·φ_j/τ}
//! ```
//!
//! and the loss is `Σ_i ℓ_i / n`. Centers are not part of `D_i`.

use std::collections::HashSet;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, norm, softmax_into, RngStream, Tensor};

use super::LossValue;

#[derive(Debug, Clone, PartialEq)]
pub struct AacoBatch {
    pub dim: usize,
    /// Globally unique pixel identifiers; they key the positive sampling.
    pub pixel_ids: Vec<u64>,
    /// `n × dim` unit features.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// `n × dim` assigned centers `ν_i`.
    pub centers: Vec<f64>,
    pub lambda_a: f64,
    pub tau: f64,
    pub positives_per_anchor: usize,
}

impl AacoBatch {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        pixel_ids: Vec<u64>,
        features: Vec<f64>,
        labels: Vec<usize>,
        centers: Vec<f64>,
        lambda_a: f64,
        tau: f64,
        positives_per_anchor: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || pixel_ids.len() != n || features.len() != n * dim || centers.len() != n * dim {
            return Err(Error::ShapeMismatch(format!("inconsistent sizes for a batch of {n} pixels")));
        }
        for (i, phi) in features.chunks(dim).enumerate() {
            if (norm(phi) - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("feature {i} is not unit norm")));
            }
        }
        let unique: HashSet<u64> = pixel_ids.iter().copied().collect();
        if unique.len() != n {
            return Err(Error::Data("pixel ids must be unique within a batch".into()));
        }
        if !(tau > 0.0) || !(lambda_a >= 0.0) {
            return Err(Error::Config(format!("invalid tau {tau} or lambda_a {lambda_a}")));
        }
        Ok(Self { dim, pixel_ids, features, labels, centers, lambda_a, tau, positives_per_anchor })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Keys the per-anchor positive-sampling streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositiveSampling {
    pub seed: u64,
    pub iteration: u64,
}

impl PositiveSampling {
    /// Positives for anchor `i`, drawn from a stream keyed by its pixel id,
    /// so the result does not depend on batch order.
    fn positives(&self, batch: &AacoBatch, i: usize) -> Vec<usize> {
        let mut candidates: Vec<usize> = (0..batch.len())
            .filter(|&j| j != i && batch.labels[j] == batch.labels[i])
            .collect();
        candidates.sort_unstable_by_key(|&j| batch.pixel_ids[j]);
        if candidates.len() <= batch.positives_per_anchor {
            return candidates;
        }
        let mut rng = RngStream::derive(self.seed, &[self.iteration, batch.pixel_ids[i]]);
        let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), batch.positives_per_anchor)
            .into_iter()
            .collect();
        picked.sort_unstable();
        picked.into_iter().map(|k| candidates[k]).collect()
    }
}

/// Loss value and gradient with respect to every feature (key `"features"`,
/// shape `n × dim`). Centers are constants.
pub fn aaco_loss(batch: &AacoBatch, sampling: PositiveSampling) -> Result<LossValue> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { n });
    }
    let d = batch.dim;
    let tau = batch.tau;
    let lambda = batch.lambda_a;
    let phi = |i: usize| &batch.features[i * d..(i + 1) * d];
    let inv_n = 1.0 / n as f64;

    let mut gram = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let g = dot(phi(a), phi(b)) / tau;
            gram[a * n + b] = g;
            gram[b * n + a] = g;
        }
    }

    let mut value = 0.0;
    let mut grad = vec![0.0; n * d];
    let mut logits = Vec::with_capacity(n - 1);
    let mut weights = vec![0.0; n - 1];
    for i in 0..n {
        let positives = sampling.positives(batch, i);
        let nu = &batch.centers[i * d..(i + 1) * d];
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        logits.clear();
        logits.extend(others.iter().map(|&j| gram[i * n + j]));
        let lse = log_sum_exp(&logits);
        softmax_into(&logits, &mut weights);
        let denom_weight = positives.len() as f64 + lambda;

        let positive_sum: f64 = positives.iter().map(|&p| gram[i * n + p]).sum();
        value += -positive_sum - lambda * dot(phi(i), nu) / tau + denom_weight * lse;

        let scale = inv_n / tau;
        // Anchor role.
        {
            let gi = &mut grad[i * d..(i + 1) * d];
            for &p in &positives {
                for (g, x) in gi.iter_mut().zip(&batch.features[p * d..(p + 1) * d]) {
                    *g -= scale * x;
                }
            }
            for (g, x) in gi.iter_mut().zip(nu) {
                *g -= scale * lambda * x;
            }
            for (&j, &w) in others.iter().zip(&weights) {
                let c = scale * denom_weight * w;
                for (g, x) in gi.iter_mut().zip(&batch.features[j * d..(j + 1) * d]) {
                    *g += c * x;
                }
            }
        }
        // Positive and denominator roles of the other features.
        let anchor = phi(i).to_vec();
        for &p in &positives {
            for (g, x) in grad[p * d..(p + 1) * d].iter_mut().zip(&anchor) {
                *g -= scale * x;
            }
        }
        for (&j, &w) in others.iter().zip(&weights) {
            let c = scale * denom_weight * w;
            for (g, x) in grad[j * d..(j + 1) * d].iter_mut().zip(&anchor) {
                *g += c * x;
            }
        }
    }
    Ok(LossValue::new(value * inv_n).with_grad("features", Tensor::new(vec![n, d], grad)?))
}
