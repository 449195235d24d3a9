use std::fmt;
use std::str::FromStr;

use super::backward::GradientSet;
use crate::error::{Error, Result};
use crate::network::NetworkParams;

/// Classical momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<NetworkParams>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    /// Returns the updated parameters; `grads` is left untouched. Refuses
    /// non-finite gradients without changing optimizer state.
    pub fn step(&mut self, params: &NetworkParams, grads: &GradientSet) -> Result<NetworkParams> {
        if let Some(name) = grads.non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let mut next = params.clone();
        for ((p, v), (_, g)) in next
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grads.tensors())
        {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g;
                *p -= self.learning_rate * *v;
            }
        }
        Ok(next)
    }
}

/// Adam with bias correction:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `p ← p − lr·m̂ / (√v̂ + ε)`.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: i32,
    moments: Option<(NetworkParams, NetworkParams)>,
}

impl Adam {
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(learning_rate: f64, beta1: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&beta1) {
            return Err(Error::Config(format!("beta1 must be in [0, 1), got {beta1}")));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
            steps: 0,
            moments: None,
        })
    }

    pub fn step(&mut self, params: &NetworkParams, grads: &GradientSet) -> Result<NetworkParams> {
        if let Some(name) = grads.non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        self.steps = self.steps.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (m, v) = self
            .moments
            .get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
        let mut next = params.clone();
        for (((p, m), v), (_, g)) in next
            .tensors_mut()
            .into_iter()
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
            .zip(grads.tensors())
        {
            for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            }
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Either optimizer behind one interface. `momentum` is Adam's β1.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(learning_rate, momentum)?),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate, momentum)?),
        })
    }

    pub fn step(&mut self, params: &NetworkParams, grads: &GradientSet) -> Result<NetworkParams> {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}

/// One stateless step (no velocity history).
pub fn sgd_step(params: &NetworkParams, grads: &GradientSet, learning_rate: f64, momentum: f64) -> Result<NetworkParams> {
    Sgd::new(learning_rate, momentum)?.step(params, grads)
}
