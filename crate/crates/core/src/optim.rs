//! Adam, global-norm clipping and learning-rate schedules.

use crate::config::{LrSchedule, TrainConfig};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads` is aligned with the store's
    /// parameter order.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match parameter count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in store.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in
                p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Learning rate for a zero-based `epoch`.
pub fn learning_rate(tc: &TrainConfig, epoch: usize) -> f64 {
    let base = tc.learning_rate;
    match tc.lr_schedule {
        LrSchedule::Constant => base,
        LrSchedule::StepDecay => base * tc.step_gamma.powi((epoch / tc.step_size.max(1)) as i32),
        LrSchedule::WarmupLinearDecay => {
            let warm = tc.warmup_epochs;
            if epoch < warm {
                base * (epoch + 1) as f64 / warm as f64
            } else {
                let rest = tc.epochs.saturating_sub(warm).max(1) as f64;
                base * (1.0 - (epoch - warm) as f64 / rest).max(0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let mut adam = Adam::new(&store);
        let g = Tensor::new(&[3], vec![0.3, -4.0, 0.0]).unwrap();
        adam.update(&mut store, &[g], 0.1);
        let w = store.iter().next().unwrap().value.data().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::new(&[2], vec![3.0, -1.5]).unwrap()).unwrap();
        let mut adam = Adam::new(&store);
        for _ in 0..2000 {
            let x = store.iter().next().unwrap().value.clone();
            let g = x.map(|v| 2.0 * (v - 0.5));
            adam.update(&mut store, &[g], 0.01);
        }
        for v in store.iter().next().unwrap().value.data() {
            assert!((v - 0.5).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::full(&[4], 0.25)).unwrap();
        let before = store.clone();
        let mut adam = Adam::new(&store);
        adam.update(&mut store, &[Tensor::full(&[4], 1.0)], 0.0);
        assert_eq!(store, before);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schedules() {
        let mut tc = TrainConfig { learning_rate: 1.0, epochs: 10, ..TrainConfig::default() };
        assert_eq!(learning_rate(&tc, 7), 1.0);
        tc.lr_schedule = LrSchedule::StepDecay;
        tc.step_size = 3;
        tc.step_gamma = 0.5;
        assert_eq!(learning_rate(&tc, 2), 1.0);
        assert_eq!(learning_rate(&tc, 3), 0.5);
        assert_eq!(learning_rate(&tc, 6), 0.25);
        tc.lr_schedule = LrSchedule::WarmupLinearDecay;
        tc.warmup_epochs = 2;
        assert_eq!(learning_rate(&tc, 0), 0.5);
        assert_eq!(learning_rate(&tc, 1), 1.0);
        assert_eq!(learning_rate(&tc, 2), 1.0);
        assert_eq!(learning_rate(&tc, 6), 0.5);
    }
}
