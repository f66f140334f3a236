//! Anatomical contrast over per-class query and key sets.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, norm, softmax_into, RngStream, Tensor, ZERO_NORM};

use super::LossValue;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassQueryKeys {
    pub class: usize,
    /// Positions of the queries in the input representation array.
    pub query_indices: Vec<usize>,
    /// `m × d` query features.
    pub queries: Vec<f64>,
    /// Features of every pixel whose label differs from `class`.
    pub negative_keys: Vec<f64>,
    /// Unit-normalized mean over all class pixels (not just the sampled queries).
    pub positive_key: Vec<f64>,
}

impl ClassQueryKeys {
    pub fn num_queries(&self, dim: usize) -> usize {
        self.queries.len() / dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryKeySets {
    pub dim: usize,
    /// One entry per class present in the batch, ascending class id.
    pub classes: Vec<ClassQueryKeys>,
}

impl QueryKeySets {
    pub fn total_queries(&self) -> usize {
        self.classes.iter().map(|c| c.num_queries(self.dim)).sum()
    }
}

/// Builds the per-class query and key sets from unit pixel features
/// (`n × dim`) and their labels. Queries are subsampled uniformly to at most
/// `queries_per_class`; classes absent from the batch are omitted.
pub fn select_query_key_sets(
    reps: &[f64],
    labels: &[usize],
    dim: usize,
    queries_per_class: usize,
    rng: &mut RngStream,
) -> Result<QueryKeySets> {
    if dim == 0 || reps.len() != labels.len() * dim {
        return Err(Error::ShapeMismatch(format!(
            "{} representation values for {} labels of dimension {dim}",
            reps.len(),
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut classes = Vec::new();
    for c in 0..num_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut positive_key = vec![0.0; dim];
        for &i in &members {
            for (p, x) in positive_key.iter_mut().zip(&reps[i * dim..(i + 1) * dim]) {
                *p += x;
            }
        }
        let n = norm(&positive_key);
        if !(n >= ZERO_NORM) {
            return Err(Error::ZeroVector { norm: n });
        }
        positive_key.iter_mut().for_each(|p| *p /= n);

        let query_indices = if members.len() > queries_per_class {
            let mut picked: Vec<usize> = index::sample(rng, members.len(), queries_per_class)
                .into_iter()
                .map(|j| members[j])
                .collect();
            picked.sort_unstable();
            picked
        } else {
            members
        };
        let queries = query_indices
            .iter()
            .flat_map(|&i| reps[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        let negative_keys = (0..labels.len())
            .filter(|&i| labels[i] != c)
            .flat_map(|i| reps[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        classes.push(ClassQueryKeys { class: c, query_indices, queries, negative_keys, positive_key });
    }
    Ok(QueryKeySets { dim, classes })
}

/// Sum over classes and queries of
/// `−log(exp(q·r⁺/τ) / (exp(q·r⁺/τ) + Σ_k exp(q·r⁻_k/τ)))`.
///
/// Keys are constants. The gradient (key `"queries"`, shape
/// `total_queries × dim`) lists queries class by class, in set order.
pub fn anco_loss(sets: &QueryKeySets, tau: f64) -> Result<LossValue> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let d = sets.dim;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(sets.total_queries() * d);
    for class in &sets.classes {
        let negatives: Vec<&[f64]> = class.negative_keys.chunks(d).collect();
        let mut logits = vec![0.0; negatives.len() + 1];
        let mut probs = vec![0.0; logits.len()];
        for q in class.queries.chunks(d) {
            logits[0] = dot(q, &class.positive_key) / tau;
            for (l, k) in logits[1..].iter_mut().zip(&negatives) {
                *l = dot(q, k) / tau;
            }
            value += log_sum_exp(&logits) - logits[0];
            softmax_into(&logits, &mut probs);
            // ∂/∂q = (Σ_j p_j key_j − r⁺) / τ
            let start = grad.len();
            grad.extend(class.positive_key.iter().map(|r| (probs[0] - 1.0) * r / tau));
            let g = &mut grad[start..];
            for (p, k) in probs[1..].iter().zip(&negatives) {
                for (gi, ki) in g.iter_mut().zip(*k) {
                    *gi += p * ki / tau;
                }
            }
        }
    }
    let total = sets.total_queries();
    let lv = LossValue::new(value);
    if total == 0 {
        return Ok(lv);
    }
    Ok(lv.with_grad("queries", Tensor::new(vec![total, d], grad)?))
}
