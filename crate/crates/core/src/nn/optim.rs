use std::f64::consts::PI;
use std::str::FromStr;

use super::model::Params;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &Params) -> Self {
        let velocity = params.tensors.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self { config, velocity }
    }

    pub fn with_velocity(config: SgdConfig, velocity: Vec<Vec<f64>>) -> Self {
        Self { config, velocity }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// `v <- m v + g + wd p; p <- p - lr v`. Leaves everything untouched if any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut Params, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.tensors.len() || self.velocity.len() != grads.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("{} gradients for {} parameters", grads.len(), params.tensors.len()),
            ));
        }
        for (p, g) in params.tensors.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at index {i} is {}", p.name, g.data()[i])));
            }
        }
        let SgdConfig { momentum, weight_decay } = self.config;
        for ((p, g), v) in params.tensors.iter_mut().zip(grads).zip(&mut self.velocity) {
            let mut next = p.value.to_vec();
            for ((w, &gi), vi) in next.iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = momentum * *vi + gi + weight_decay * *w;
                *w -= lr * *vi;
            }
            p.value = Tensor::new(p.value.shape().to_vec(), next)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Step,
    Cosine,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Schedule::Step),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(Error::Config(format!("unknown schedule {other:?} (expected step or cosine)"))),
        }
    }
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Step => "step",
            Schedule::Cosine => "cosine",
        }
    }
}

/// Learning rate for `epoch` (0-based). Step decays by 10x at each milestone
/// reached; cosine is a single annealing cycle over `total_epochs`.
pub fn lr_schedule(kind: Schedule, epoch: usize, total_epochs: usize, base_lr: f64, milestones: &[usize]) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Config(format!("epoch {epoch} outside schedule of {total_epochs} epochs")));
    }
    Ok(match kind {
        Schedule::Step => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            base_lr * 0.1f64.powi(passed as i32)
        }
        Schedule::Cosine => base_lr * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos()) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Param, Params};
    use crate::nn::ModelConfig;

    fn single(value: f64) -> Params {
        Params {
            config: ModelConfig::default(),
            tensors: vec![Param {
                name: "w".into(),
                value: Tensor::scalar(value),
            }],
        }
    }

    fn run(p0: f64, grad: f64, lr: f64, momentum: f64, weight_decay: f64, steps: usize) -> Vec<f64> {
        let mut p = single(p0);
        let mut opt = Sgd::new(SgdConfig { momentum, weight_decay }, &p);
        (0..steps)
            .map(|_| {
                opt.step(&mut p, &[Tensor::scalar(grad)], lr).unwrap();
                p.tensors[0].value.item()
            })
            .collect()
    }

    #[test]
    fn plain_step() {
        assert!((run(1.0, 1.0, 0.1, 0.0, 0.0, 1)[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let out = run(0.0, 1.0, 1.0, 0.9, 0.0, 2);
        assert!((out[0] + 1.0).abs() < 1e-15);
        assert!((out[1] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn decay_only() {
        assert!((run(1.0, 0.0, 1.0, 0.0, 0.1, 1)[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = single(1.0);
        let mut opt = Sgd::new(SgdConfig::default(), &p);
        let err = opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.tensors[0].value.item(), 1.0);
        assert_eq!(opt.velocity()[0][0], 0.0);
    }

    #[test]
    fn step_schedule_divides_at_milestones() {
        let lr = lr_schedule(Schedule::Step, 100, 164, 0.1, &[81, 122]).unwrap();
        assert!((lr - 0.01).abs() < 1e-15);
        assert_eq!(lr_schedule(Schedule::Step, 80, 164, 0.1, &[81, 122]).unwrap(), 0.1);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(lr_schedule(Schedule::Cosine, 0, 10, 0.2, &[]).unwrap(), 0.2);
        assert!((lr_schedule(Schedule::Cosine, 5, 10, 0.2, &[]).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn schedule_errors() {
        assert!("linear".parse::<Schedule>().is_err());
        assert!(lr_schedule(Schedule::Cosine, 10, 10, 0.1, &[]).is_err());
    }
}
