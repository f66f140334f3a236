use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Panics on a missing name; only used with names the network defined.
    pub(crate) fn data(&self, name: &str) -> &[f64] {
        self.tensors[name].data()
    }

    /// `(layer.weight, layer.bias)` data, mutably.
    pub(crate) fn weight_bias_mut(&mut self, layer: &str) -> (&mut [f64], &mut [f64]) {
        let (wname, bname) = (format!("{layer}.weight"), format!("{layer}.bias"));
        let (mut w, mut b) = (None, None);
        for (k, v) in self.tensors.range_mut(bname.clone()..=wname.clone()) {
            if *k == wname {
                w = Some(v.data_mut());
            } else if *k == bname {
                b = Some(v.data_mut());
            }
        }
        (w.expect("weight exists"), b.expect("bias exists"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect(),
        }
    }

    /// Same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.tensors.iter().zip(&other.tensors) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::ShapeMismatch(format!("parameter {a} {:?} vs {b} {:?}", ta.shape(), tb.shape())));
            }
        }
        Ok(())
    }

    /// All parameters concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_scalars() {
            return Err(Error::ShapeMismatch(format!("{} values for {} scalars", values.len(), self.num_scalars())));
        }
        let mut off = 0;
        for t in self.tensors.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamStore) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn l2_distance(&self, other: &ParamStore) -> Result<f64> {
        self.check_compatible(other)?;
        let mut s = 0.0;
        for (a, b) in self.tensors.values().zip(other.tensors.values()) {
            s += a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(s.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, momentum: 0.9, weight_decay: 1e-4 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Momentum SGD: `v ← μv + (g + wd·p)`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    pub velocities: ParamStore,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &ParamStore) -> Self {
        Self { config, velocities: params.zeros_like() }
    }

    /// Leaves everything untouched when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&self.velocities)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { name: name.to_string() });
        }
        let SgdConfig { learning_rate: lr, momentum: mu, weight_decay: wd } = self.config;
        for ((p, v), g) in params
            .tensors
            .values_mut()
            .zip(self.velocities.tensors.values_mut())
            .zip(grads.tensors.values())
        {
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = mu * *vi + (gi + wd * *pi);
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// `teacher ← m·teacher + (1 − m)·student` for every parameter.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::Config(format!("EMA decay must be in [0, 1], got {decay}")));
    }
    teacher.check_compatible(student)?;
    if decay == 1.0 {
        return Ok(());
    }
    for (t, s) in teacher.tensors.values_mut().zip(student.tensors.values()) {
        if decay == 0.0 {
            t.data_mut().copy_from_slice(s.data());
        } else {
            t.data_mut().iter_mut().zip(s.data()).for_each(|(a, b)| *a = decay * *a + (1.0 - decay) * b);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::new(vec![2], vec![v, v]).unwrap());
        s.insert("b", Tensor::new(vec![1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut p = store(1.5);
        let before = p.clone();
        let mut opt = Sgd::new(SgdConfig { learning_rate: 0.0, ..SgdConfig::default() }, &p);
        opt.step(&mut p, &store(3.0)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn vanilla_step() {
        let mut p = store(1.0);
        let mut opt = Sgd::new(SgdConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.0 }, &p);
        opt.step(&mut p, &store(2.0)).unwrap();
        assert!(p.flatten().iter().all(|&x| x == 1.0 - 0.1 * 2.0));
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = store(0.0);
        let mut opt = Sgd::new(SgdConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 0.0 }, &p);
        let g = store(3.0);
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        for x in p.flatten() {
            assert!((x - (-0.01 * 3.0 * 2.9)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = store(1.0);
        let mut g = store(1.0);
        g.get_mut("b").unwrap().data_mut()[0] = f64::NAN;
        let mut opt = Sgd::new(SgdConfig::default(), &p);
        assert!(matches!(opt.step(&mut p, &g), Err(Error::NonFiniteGradient { name }) if name == "b"));
        assert_eq!(p, store(1.0));
    }

    #[test]
    fn ema_endpoints_and_midpoint() {
        let s = store(2.0);
        let mut t = store(0.0);
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, store(0.0));
        ema_update(&mut t, &s, 0.5).unwrap();
        assert_eq!(t, store(1.0));
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn ema_contracts() {
        let s = store(2.0);
        let mut t = store(-1.0);
        let mut last = t.l2_distance(&s).unwrap();
        for _ in 0..50 {
            ema_update(&mut t, &s, 0.9).unwrap();
            let d = t.l2_distance(&s).unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn ema_shape_mismatch() {
        let mut t = store(0.0);
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(vec![3]));
        assert!(matches!(ema_update(&mut t, &s, 0.5), Err(Error::ShapeMismatch(_))));
    }
}
