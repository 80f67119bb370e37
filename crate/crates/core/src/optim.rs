//! Stochastic gradient descent with momentum and L2 weight decay.
//!
//! Update rule, per parameter element:
//!
//! ```text
//! v     <- momentum * v - lr * (g + weight_decay * theta)
//! theta <- theta + v
//! ```

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `lr0 * gamma^floor(step / every)`.
    StepDecay { gamma: f64, every: u64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::StepDecay {
            gamma: 0.5,
            every: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::default(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if let LrSchedule::StepDecay { gamma, every } = self.schedule {
            if !(gamma > 0.0 && gamma.is_finite()) || every == 0 {
                return Err(Error::Config("step decay needs gamma > 0 and every >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Learning rate in effect at `step` (0-based).
pub fn lr_at(lr0: f64, step: u64, schedule: LrSchedule) -> f64 {
    match schedule {
        LrSchedule::Constant => lr0,
        LrSchedule::StepDecay { gamma, every } => lr0 * gamma.powi((step / every) as i32),
    }
}

/// Optimizer configuration plus per-parameter velocity and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    /// One buffer per parameter, in store order.
    pub velocities: Vec<Tensor<f32>>,
    pub step: u64,
}

impl SgdState {
    pub fn new<E: Element>(config: SgdConfig, params: &ParamStore<E>) -> Result<Self> {
        config.validate()?;
        let velocities = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SgdState {
            config,
            velocities,
            step: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.config.lr, self.step, self.config.schedule)
    }

    /// One update using the gradients currently in `params`' grad slots.
    /// Gradients are left in place; callers reset them.
    pub fn step<E: Element>(&mut self, params: &mut ParamStore<E>) -> Result<()> {
        if self.velocities.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.velocities.len(),
                params.len()
            )));
        }
        let lr = self.lr();
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        for p in params.iter().filter(|p| p.learnable) {
            if p.value.grad().is_none() {
                return Err(Error::contract(format!("parameter {} has no gradient", p.name)));
            }
        }
        for (p, v) in params.iter_mut().zip(self.velocities.iter_mut()) {
            if !p.learnable {
                continue;
            }
            if v.shape() != p.value.shape() {
                return Err(Error::contract(format!(
                    "velocity shape {} for parameter {} of shape {}",
                    v.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            let grad: Vec<f64> = p.value.grad().expect("checked above").iter().map(|g| g.to_f64()).collect();
            for ((theta, vel), g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(grad) {
                let t = theta.to_f64();
                let nv = mu * (*vel as f64) - lr * (g + wd * t);
                *vel = nv as f32;
                *theta = E::from_f64(t + *vel as f64);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(theta: f32, grad: f64) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::scalar(theta)).unwrap();
        s.get_mut(id).value.accumulate_grad(&[grad]).unwrap();
        s
    }

    fn cfg(lr: f64, momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum,
            weight_decay,
            schedule: LrSchedule::Constant,
        }
    }

    #[test]
    fn vanilla_step() {
        let mut s = one_param(1.0, 2.0);
        let mut opt = SgdState::new(cfg(0.1, 0.0, 0.0), &s).unwrap();
        opt.step(&mut s).unwrap();
        assert!((s.value(crate::ParamId(0)).data()[0] - 0.8).abs() < 1e-7);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut s = one_param(0.37, 0.0);
        let mut opt = SgdState::new(cfg(0.1, 0.9, 0.0), &s).unwrap();
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.value(crate::ParamId(0)).data()[0], 0.37);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut s = ParamStore::<f32>::new();
        s.add("enc1.conv1.weight", Tensor::scalar(1.0)).unwrap();
        let mut opt = SgdState::new(SgdConfig::default(), &s).unwrap();
        let err = opt.step(&mut s).unwrap_err();
        assert!(err.to_string().contains("enc1.conv1.weight"));
    }

    #[test]
    fn schedule_values() {
        let sd = LrSchedule::StepDecay { gamma: 0.5, every: 2000 };
        assert_eq!(lr_at(0.001, 0, sd), 0.001);
        assert_eq!(lr_at(0.001, 1999, sd), 0.001);
        assert_eq!(lr_at(0.001, 4000, sd), 0.00025);
        assert_eq!(lr_at(0.001, 123_456, LrSchedule::Constant), 0.001);
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(0.0, 0.9, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 0.5, -1.0).validate().is_err());
    }
}
