//! Training objectives with hand-derived gradients.
//!
//! Every loss returns a [`LossValue`]: the scalar plus the partial derivative
//! with respect to each differentiable input, keyed by input name. Teacher
//! quantities are constants and never receive gradients.

mod aaco;
mod anco;
mod instance;
mod segmentation;

use std::collections::BTreeMap;

use crate::numerics::Tensor;

pub use aaco::{aaco_loss, AacoBatch, PositiveSampling};
pub use anco::{anco_loss, select_query_key_sets, ClassQueryKeys, QueryKeySets};
pub use instance::{
    instance_discrimination_loss, relational_distribution, relational_query_grad, SimilarityDistribution,
};
pub use segmentation::{dice_ce_loss, pseudo_label_ce_loss, pseudo_labels, DICE_SMOOTHING};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: BTreeMap<&'static str, Tensor>,
}

impl LossValue {
    pub fn new(value: f64) -> Self {
        Self { value, grads: BTreeMap::new() }
    }

    pub fn with_grad(mut self, name: &'static str, grad: Tensor) -> Self {
        self.grads.insert(name, grad);
        self
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grads.values().all(Tensor::is_finite)
    }
}
