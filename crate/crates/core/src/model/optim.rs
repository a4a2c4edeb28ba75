//! AdamW with cosine learning-rate decay.

use std::f64::consts::PI;

use super::params::{ParamKind, ParamStore};
use crate::tensor::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps over which the rate decays to `min_lr`; zero keeps it constant.
    pub total_steps: usize,
    pub min_lr: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, total_steps: 0, min_lr: 0.0 }
    }
}

impl AdamWConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr;
        }
        let t = (step.min(self.total_steps)) as f64 / self.total_steps as f64;
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (PI * t).cos())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || params.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update of every trainable parameter that received a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        let c = self.config;
        let lr = c.lr_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let entry = params.entry(id);
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.get(&entry.value) else { continue };
            let decay = match entry.kind {
                ParamKind::Bias | ParamKind::Norm | ParamKind::Scalar => 0.0,
                _ => c.weight_decay,
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut w = entry.value.data().to_vec();
            for (j, (wj, &gj)) in w.iter_mut().zip(g.data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *wj -= lr * (mhat / (vhat.sqrt() + c.eps) + decay * *wj);
            }
            params.set_data(id, w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Tensor};

    #[test]
    fn cosine_endpoints() {
        let c = AdamWConfig { lr: 1.0, total_steps: 10, ..Default::default() };
        assert_eq!(c.lr_at(0), 1.0);
        assert!((c.lr_at(5) - 0.5).abs() < 1e-12);
        assert!(c.lr_at(10).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", ParamKind::Bias, Tensor::from_slice(&[3.0, -2.0]));
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, ..Default::default() }, &ps);
        for _ in 0..300 {
            let loss = ps.get(id).mul(ps.get(id)).unwrap().sum();
            let g = backward(&loss).unwrap();
            opt.step(&mut ps, &g);
        }
        assert!(ps.get(id).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", ParamKind::ChannelAffine, Tensor::from_slice(&[1.0]));
        let mut opt = AdamW::new(AdamWConfig { lr: 0.0, ..Default::default() }, &ps);
        let g = backward(&ps.get(id).mul(ps.get(id)).unwrap().sum()).unwrap();
        opt.step(&mut ps, &g);
        assert_eq!(ps.get(id).data(), &[1.0]);
    }
}
