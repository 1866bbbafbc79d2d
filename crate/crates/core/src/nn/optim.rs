//! SGD with momentum and L2 weight decay, plus the step learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.005,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Momentum buffers for every parameter of one store.
///
/// The update is `v <- m*v + (g + wd*p); p <- p - lr*v`, with weight decay
/// folded into the gradient before the momentum average.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(cfg: SgdConfig, store: &ParamStore<T>) -> Self {
        OptimizerState {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: store.iter().map(|(_, p)| vec![T::zero(); p.tensor.shape().numel()]).collect(),
        }
    }

    pub fn velocity(&self, id: ParamId) -> &[T] {
        &self.velocity[id.index()]
    }

    /// Updates every parameter in the store.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<ParamId> = store.ids().collect();
        self.step_params(store, &ids)
    }

    /// Updates only `ids`; each must carry a gradient.
    pub fn step_params(&mut self, store: &mut ParamStore<T>, ids: &[ParamId]) -> Result<()> {
        if self.velocity.len() != store.len() {
            return Err(Error::usage(format!(
                "optimizer tracks {} parameters, store has {}",
                self.velocity.len(),
                store.len()
            )));
        }
        for &id in ids {
            if store.get(id).grad().is_none() {
                return Err(Error::usage(format!("parameter {} has no gradient", store.name(id))));
            }
        }
        let lr = T::from_f64_lossy(self.learning_rate);
        let m = T::from_f64_lossy(self.momentum);
        let wd = T::from_f64_lossy(self.weight_decay);
        for &id in ids {
            let vel = &mut self.velocity[id.index()];
            let (data, grad) = store.get_mut(id).parts_mut();
            let grad = grad.expect("checked above");
            for ((p, &g), v) in data.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *v = m * *v + (g + wd * *p);
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// `base_lr / factor^(number of milestones <= epoch)`.
pub fn lr_schedule(epoch: usize, base_lr: f64, milestones: &[usize], factor: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch >= m).count();
    base_lr / factor.powi(passed as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn one_param(p: f64, g: Option<f64>) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new(0);
        let id = store.add("p", Tensor::full(Shape::new(1, 1, 1, 1).unwrap(), p));
        if let Some(g) = g {
            store.get_mut(id).set_grad(vec![g]).unwrap();
        }
        (store, id)
    }

    fn cfg(lr: f64, m: f64, wd: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum: m,
            weight_decay: wd,
        }
    }

    #[test]
    fn plain_step() {
        let (mut store, id) = one_param(1.0, Some(1.0));
        let mut opt = OptimizerState::new(cfg(0.1, 0.0, 0.0), &store);
        opt.step(&mut store).unwrap();
        assert!((store.get(id).data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut store, id) = one_param(0.3, Some(0.0));
        let mut opt = OptimizerState::new(cfg(0.5, 0.9, 0.0), &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).data()[0], 0.3);
    }

    #[test]
    fn momentum_two_steps() {
        let (mut store, id) = one_param(0.0, Some(1.0));
        let mut opt = OptimizerState::new(cfg(1.0, 0.5, 0.0), &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).data()[0], -1.0);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(id).data()[0], -2.5);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let (mut store, id) = one_param(2.0, Some(0.0));
        let mut opt = OptimizerState::new(cfg(0.1, 0.9, 0.5), &store);
        opt.step(&mut store).unwrap();
        assert!((opt.velocity(id)[0] - 1.0).abs() < 1e-15);
        assert!((store.get(id).data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut store, id) = one_param(0.7, Some(3.0));
        let mut opt = OptimizerState::new(cfg(0.0, 0.9, 0.0005), &store);
        for _ in 0..5 {
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).data()[0], 0.7);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let (mut store, _) = one_param(0.7, None);
        let mut opt = OptimizerState::new(SgdConfig::default(), &store);
        assert!(matches!(opt.step(&mut store), Err(Error::Usage(_))));
    }

    #[test]
    fn schedule_divides_at_milestones() {
        let ms = [90, 150];
        assert_eq!(lr_schedule(0, 0.005, &ms, 10.0), 0.005);
        assert_eq!(lr_schedule(89, 0.005, &ms, 10.0), 0.005);
        assert!((lr_schedule(90, 0.005, &ms, 10.0) - 0.0005).abs() < 1e-18);
        assert!((lr_schedule(150, 0.005, &ms, 10.0) - 0.00005).abs() < 1e-18);
        assert!((lr_schedule(199, 0.005, &ms, 10.0) - 0.00005).abs() < 1e-18);
    }
}
