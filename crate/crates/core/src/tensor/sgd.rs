use super::dense::Tensor;
use crate::error::{Error, Result};

/// Optimizer hyper-parameters. `schedule` lists `(epoch, learning_rate)`
/// drop points; before the first one `learning_rate` applies.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Vec<(usize, f64)>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: vec![(15, 0.01), (25, 0.001)],
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("schedule epochs must be strictly increasing".into()));
        }
        if self.schedule.iter().any(|&(_, lr)| !(lr >= 0.0 && lr.is_finite())) {
            return Err(Error::Config("schedule learning rates must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .take_while(|&&(e, _)| e <= epoch)
            .last()
            .map_or(self.learning_rate, |&(_, lr)| lr)
    }
}

/// SGD with momentum and L2 weight decay:
/// `v ← g + wd·p + μ·v`, `p ← p − lr(epoch)·v`.
///
/// Velocity is kept per parameter slot, so callers must pass parameters in
/// the same order on every step.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Updates every parameter from its grad slot. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], epoch: usize) -> Result<()> {
        let decay = vec![true; params.len()];
        self.step_with_decay(params, &decay, epoch)
    }

    /// Like [`Sgd::step`], applying weight decay only where `decay[i]` is set.
    pub fn step_with_decay(&mut self, params: &mut [&mut Tensor], decay: &[bool], epoch: usize) -> Result<()> {
        let scale = vec![1.0; params.len()];
        self.step_groups(params, decay, &scale, epoch)
    }

    /// Per-parameter decay switch and learning-rate multiplier.
    pub fn step_groups(
        &mut self,
        params: &mut [&mut Tensor],
        decay: &[bool],
        lr_scale: &[f64],
        epoch: usize,
    ) -> Result<()> {
        if decay.len() != params.len() || lr_scale.len() != params.len() {
            return Err(Error::Shape("per-parameter settings differ in length from the parameter list".into()));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = self.config.lr_at(epoch);
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        for (((p, v), &decays), &scale) in params.iter_mut().zip(&mut self.velocity).zip(decay).zip(lr_scale) {
            let lr = lr * scale;
            if v.len() != p.numel() {
                return Err(Error::Shape("parameter changed size between steps".into()));
            }
            let wd = if decays { wd } else { 0.0 };
            let grad = p.grad().map(<[f64]>::to_vec);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                v[i] = g + wd * data[i] + mu * v[i];
                data[i] -= lr * v[i];
            }
        }
        Ok(())
    }
}
