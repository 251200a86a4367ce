use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::EstimatorError;

/// Which exposure input the outcome heads see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Feature embeddings plus the multi-channel weighted exposure.
    Full,
    /// Feature embeddings plus the plain fraction of treated neighbours.
    Homogeneous,
    /// Own-attribute embedding only.
    NoInterference,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "ide-net",
            Variant::Homogeneous => "homogeneous",
            Variant::NoInterference => "no-interference",
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub maxiter: usize,
    /// Fraction of nodes held out for model selection.
    pub val: f64,
    /// Encoder learning rate.
    pub lr: f64,
    /// Learning rate of the outcome heads.
    pub lrest: f64,
    pub lrstep: usize,
    pub lrgamma: f64,
    /// Stop after this many epochs without a better validation error.
    pub max_patience: usize,
    /// Elementwise gradient clip.
    pub clip: f64,
    pub weight_decay: f64,
    pub fdim: usize,
    pub edim: usize,
    pub inlayers: usize,
    pub dropout: f64,
    /// Representation balancing weight; only 0 is supported.
    pub alpha: f64,
    /// Smoothing regularisation on the variance of estimated effects.
    pub reg: bool,
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    /// Fraction of epochs trained before the smoothing term switches on.
    pub reg_warmup: f64,
    /// Aggregation depth of the feature embedding.
    pub hops: usize,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            maxiter: 300,
            val: 0.2,
            lr: 0.02,
            lrest: 0.2,
            lrstep: 50,
            lrgamma: 0.5,
            max_patience: 300,
            clip: 3.0,
            weight_decay: 1e-5,
            fdim: 32,
            edim: 4,
            inlayers: 2,
            dropout: 0.0,
            alpha: 0.0,
            reg: true,
            gamma: 3.0,
            lambdas: vec![0.1, 1.0],
            reg_warmup: 0.5,
            hops: 1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the semi-synthetic setting, which uses wider node embeddings.
    pub fn semi_synthetic() -> Self {
        Self { fdim: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |reason: String| Err(EstimatorError::InvalidConfig { reason });
        if !(self.val > 0.0 && self.val < 1.0) {
            return bad(format!("val = {} outside (0, 1)", self.val));
        }
        if self.maxiter == 0 || self.lrstep == 0 {
            return bad(String::from("maxiter and lrstep must be positive"));
        }
        if self.fdim == 0 || self.edim == 0 || self.inlayers == 0 || self.hops == 0 {
            return bad(String::from("fdim, edim, inlayers and hops must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if self.alpha != 0.0 {
            return bad(String::from("representation balancing (alpha != 0) is not supported"));
        }
        if self.reg && self.lambdas.is_empty() {
            return bad(String::from("lambdas must not be empty when reg is enabled"));
        }
        let rates = [self.lr, self.lrest, self.lrgamma, self.clip, self.gamma, self.bn_eps];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad(String::from("lr, lrest, lrgamma, clip, gamma and bn_eps must be positive"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 || !(0.0..=1.0).contains(&self.reg_warmup) {
            return bad(String::from("weight_decay must be >= 0 and reg_warmup in [0, 1]"));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad(String::from("lambdas must be finite and non-negative"));
        }
        Ok(())
    }

    /// Smoothing weights to train, one model each.
    pub fn lambda_candidates(&self) -> Vec<f64> {
        if self.reg {
            self.lambdas.clone()
        } else {
            vec![0.0]
        }
    }

    /// Learning-rate multiplier at `epoch`.
    pub fn decay(&self, epoch: usize) -> f64 {
        libm::pow(self.lrgamma, (epoch / self.lrstep) as f64)
    }

    /// First epoch with the smoothing term active.
    pub fn reg_start(&self) -> usize {
        libm::ceil(self.reg_warmup * self.maxiter as f64) as usize
    }
}
