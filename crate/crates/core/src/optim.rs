//! Named parameter storage, Adam and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor<T>) -> usize {
        t.requires_grad = true;
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn attach(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Collects the gradients of attached parameters after a backward pass.
    /// Parameters that did not take part in the loss get zero gradients.
    pub fn collect_grads(&self, tape: &Tape<T>, vars: &[Var]) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .zip(vars)
            .map(|(t, v)| match tape.grad(*v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); t.data().len()],
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Adam moments for a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, base_lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.data().len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One Adam update at learning rate `lr`.
    pub fn adam_step(&mut self, params: &mut ParamSet<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        self.step += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bias1 = one - T::lit(self.beta1.powi(self.step as i32));
        let bias2 = one - T::lit(self.beta2.powi(self.step as i32));
        let lr = T::lit(lr);
        let eps = T::lit(self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if g.len() != p.data().len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient of length {} for {} values", g.len(), p.data().len()),
                ));
            }
            for (((x, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bias1;
                let vhat = *vv / bias2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing: `0.5·base·(1 + cos(π·epoch/total))`.
pub fn cosine_lr(epoch: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs at least one epoch".into()));
    }
    Ok(0.5 * base * (1.0 + (PI * epoch as f64 / total as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(0, 100, 0.001).unwrap() - 0.001).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.001).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.001).unwrap() - 0.0005).abs() < 1e-15);
        assert!(matches!(cosine_lr(0, 0, 0.001), Err(Error::Config(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::new(1, 2, vec![1.0, -1.0]).unwrap());
        let mut opt = OptimizerState::new(&params, 0.1);
        opt.adam_step(&mut params, &[vec![3.0, -0.5]], 0.1).unwrap();
        // with bias correction the first step is lr·sign(g)
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::new(1, 1, vec![5.0]).unwrap());
        let mut opt = OptimizerState::new(&params, 0.1);
        for _ in 0..500 {
            let w = params.get("w").unwrap().data()[0];
            opt.adam_step(&mut params, &[vec![2.0 * (w - 2.0)]], 0.1).unwrap();
        }
        assert!((params.get("w").unwrap().data()[0] - 2.0).abs() < 1e-2);
    }
}
