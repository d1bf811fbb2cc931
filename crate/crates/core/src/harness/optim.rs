//! SGD with Nesterov momentum and weight decay, plus the plateau schedule.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::network::Model;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Steps without improvement before the learning rate decays.
    pub decay_patience: usize,
    pub max_decays: usize,
    /// Smallest drop in the smoothed loss that counts as improvement.
    pub min_improvement: f64,
    /// Step losses averaged into the loss the schedule tracks.
    pub loss_window: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 10.0,
            decay_patience: 50,
            max_decays: 3,
            min_improvement: 1e-4,
            loss_window: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(finite_nonneg(self.momentum) && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !finite_nonneg(self.weight_decay) || !finite_nonneg(self.min_improvement) {
            return Err(Error::Config(
                "weight_decay and min_improvement must be non-negative".into(),
            ));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must exceed 1, got {}",
                self.lr_decay_factor
            )));
        }
        if self.decay_patience == 0 || self.loss_window == 0 {
            return Err(Error::Config(
                "decay_patience and loss_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug)]
pub struct SgdState {
    velocity: Model,
}

impl SgdState {
    pub fn new(params: &Model) -> Self {
        SgdState {
            velocity: params.zeros_like(),
        }
    }
}

/// One Nesterov step: `g' = g + wd·p`, `v ← βv + g'`, `p ← p − lr·(g' + βv)`.
///
/// A non-finite gradient leaves `params` and `state` untouched.
pub fn sgd_step(
    params: &mut Model,
    grads: &Model,
    state: &mut SgdState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let names = params.names();
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != names.len() {
        return Err(Error::shape("gradient has a different parameter layout"));
    }
    for ((name, p), g) in names.iter().zip(params.tensors()).zip(&grad_tensors) {
        if !p.same_shape(g) {
            return Err(Error::shape(format!(
                "gradient for {name} has the wrong shape"
            )));
        }
        if !g.is_finite() {
            return Err(Error::non_finite(format!(
                "gradient for {name} is not finite"
            )));
        }
    }
    let (beta, wd) = (cfg.momentum, cfg.weight_decay);
    for ((p, v), g) in params
        .tensors_mut()
        .into_iter()
        .zip(state.velocity.tensors_mut())
        .zip(grad_tensors)
    {
        for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            let gd = g + wd * *p;
            *v = beta * *v + gd;
            *p -= lr * (gd + beta * *v);
        }
    }
    Ok(())
}

/// Divides the learning rate when the smoothed training loss stops
/// improving, and raises a stop flag once the decay budget is spent.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    lr: f64,
    best: f64,
    since_best: usize,
    decays: usize,
    stopped: bool,
    window: VecDeque<f64>,
}

/// What the schedule did after observing a loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleEvent {
    None,
    Decayed,
    Stopped,
}

impl LrSchedule {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        LrSchedule {
            lr: cfg.lr,
            best: f64::INFINITY,
            since_best: 0,
            decays: 0,
            stopped: false,
            window: VecDeque::with_capacity(cfg.loss_window),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    pub fn observe(&mut self, loss: f64, cfg: &OptimizerConfig) -> ScheduleEvent {
        if self.stopped {
            return ScheduleEvent::Stopped;
        }
        if self.window.len() == cfg.loss_window {
            self.window.pop_front();
        }
        self.window.push_back(loss);
        let smoothed = self.window.iter().sum::<f64>() / self.window.len() as f64;
        if smoothed < self.best - cfg.min_improvement {
            self.best = smoothed;
            self.since_best = 0;
            return ScheduleEvent::None;
        }
        self.since_best += 1;
        if self.since_best < cfg.decay_patience {
            return ScheduleEvent::None;
        }
        self.since_best = 0;
        if self.decays == cfg.max_decays {
            self.stopped = true;
            return ScheduleEvent::Stopped;
        }
        self.decays += 1;
        self.lr /= cfg.lr_decay_factor;
        self.best = smoothed;
        ScheduleEvent::Decayed
    }
}
