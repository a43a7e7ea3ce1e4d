use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Matrix, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|(_, _, m)| Matrix::zeros(m.rows, m.cols))
            .collect();
        Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update; `lr_scale[i]` multiplies the rate of
    /// parameter `i`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64, lr_scale: &[f64]) {
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, p) in params.values_mut().enumerate() {
            let rate = lr * lr_scale[i];
            let g = &grads.grads[i].data;
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for k in 0..p.data.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.data[k] -= rate * mh / (vh.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    /// Evaluations without improvement tolerated before a reduction.
    pub patience: usize,
    pub factor: f64,
    /// Relative improvement needed to reset patience.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 5,
            factor: 0.5,
            threshold: 1e-4,
            min_lr: 1e-8,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau factor {} must lie in (0, 1)",
                self.factor
            )));
        }
        if !(self.min_lr > 0.0) || self.threshold < 0.0 {
            return Err(Error::Config(
                "plateau min_lr must be > 0 and threshold >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a metric that should increase.
#[derive(Debug, Clone)]
pub struct Plateau {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig, lr: f64) -> Self {
        Plateau {
            cfg,
            lr,
            best: f64::NEG_INFINITY,
            bad: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one evaluation; returns true when the rate was reduced.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric > self.best * (1.0 + self.cfg.threshold) || self.best == f64::NEG_INFINITY {
            self.best = metric;
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad > self.cfg.patience {
            self.bad = 0;
            let next = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
            let reduced = next < self.lr;
            self.lr = next;
            return reduced;
        }
        false
    }
}
