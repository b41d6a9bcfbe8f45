use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::numerics::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW with decoupled weight decay and a constant learning rate.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Tensors with `frozen[i]` set are never updated.
    frozen: Vec<bool>,
}

impl AdamW {
    pub fn new(params: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let m: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            learning_rate,
            weight_decay,
            step: 0,
            v: m.clone(),
            m,
            frozen: vec![false; params.len()],
        }
    }

    /// Freezes tensors `range` (e.g. a classifier trunk).
    pub fn freeze(&mut self, range: std::ops::Range<usize>) {
        for i in range {
            self.frozen[i] = true;
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidInput(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        if self.learning_rate == 0.0 {
            return Ok(());
        }
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (lr, wd) = (self.learning_rate, self.weight_decay);
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            if self.frozen[i] {
                continue;
            }
            if p.shape() != g.shape() {
                return Err(Error::InvalidInput(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                *w -= lr * (update + wd * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("w", Tensor::vector(values.to_vec()));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(&[1.0, -2.0]);
        let mut opt = AdamW::new(&p, 0.1, 0.0);
        opt.step(&mut p, &[Tensor::vector(vec![3.0, -0.5])])
            .unwrap();
        let d = p.get(0).data();
        assert!((d[0] - 0.9).abs() < 1e-7);
        assert!((d[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = store(&[2.0]);
        let mut opt = AdamW::new(&p, 0.5, 0.01);
        opt.step(&mut p, &[Tensor::vector(vec![0.0])]).unwrap();
        assert!((p.get(0).data()[0] - (2.0 - 0.5 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_and_frozen_are_no_ops() {
        let mut p = store(&[0.3]);
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.0, 0.01);
        opt.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
        assert!(p.bitwise_eq(&before));
        let mut opt = AdamW::new(&p, 0.1, 0.01);
        opt.freeze(0..1);
        opt.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
        assert!(p.bitwise_eq(&before));
    }
}
