//! Adam with an inverse-square-root learning-rate schedule.

use super::{Float, ParamStore};
use crate::error::{bail, Result};

/// Inverse-sqrt decay with linear warmup. Equals `base_lr` at
/// `step == warmup`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseSqrtSchedule {
    pub base_lr: f64,
    pub warmup: u64,
}

impl InverseSqrtSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.base_lr * (s.powf(-0.5)).min(s * w.powf(-1.5)) * w.sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: InverseSqrtSchedule,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(store: &ParamStore<T>, schedule: InverseSqrtSchedule) -> Self {
        let zeros: Vec<Vec<T>> =
            store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            schedule,
            clip_norm: None,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[T] {
        &self.second[index]
    }

    /// Applies one update from the accumulated gradients and returns the
    /// learning rate used. Gradients are left in place; callers reset them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<f64> {
        if store.len() != self.first.len() {
            bail!(Contract, "optimizer built for {} parameters, store has {}", self.first.len(), store.len());
        }
        let mut sq_norm = 0.0f64;
        for (_, p) in store.iter() {
            if p.grad.len() != p.value.len() {
                bail!(Contract, "gradient shape mismatch for '{}'", p.name);
            }
            for &g in &p.grad {
                if !g.is_finite() {
                    bail!(Training, "non-finite gradient in parameter '{}'", p.name);
                }
                sq_norm += g.as_f64() * g.as_f64();
            }
        }
        let clip = match self.clip_norm {
            Some(max) if sq_norm.sqrt() > max => max / sq_norm.sqrt(),
            _ => 1.0,
        };
        self.step += 1;
        let lr = self.schedule.lr(self.step);
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(self.eps);
        let clip = T::of(clip);
        for (i, p) in store.iter_mut().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let w = p.value.data_mut();
            for j in 0..w.len() {
                let g = p.grad[j] * clip;
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                w[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_peaks_at_warmup() {
        let s = InverseSqrtSchedule { base_lr: 1e-3, warmup: 100 };
        assert!((s.lr(100) - 1e-3).abs() < 1e-15);
        assert!((s.lr(50) - 0.5e-3).abs() < 1e-15);
        assert!((s.lr(400) - 0.5e-3).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()).unwrap();
        store.get_mut(id).grad = vec![3.0, -0.5];
        let mut adam = AdamState::new(&store, InverseSqrtSchedule { base_lr: 0.1, warmup: 1 });
        let lr = adam.step(&mut store).unwrap();
        assert_eq!(lr, 0.1);
        let w = store.get(id).value.data();
        assert!((w[0] - 0.9).abs() < 1e-7 && (w[1] - 1.1).abs() < 1e-7);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_stops_training() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::zeros(&[1])).unwrap();
        store.get_mut(id).grad = vec![f32::NAN];
        let mut adam = AdamState::new(&store, InverseSqrtSchedule { base_lr: 0.1, warmup: 1 });
        assert!(matches!(adam.step(&mut store), Err(crate::Error::Training(_))));
    }
}
