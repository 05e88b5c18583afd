use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AdamParams;
use crate::error::{Error, Result};
use crate::losses::{ConsistencyMetric, InverseGradient, LossOptions, LossWeights};

/// Optimization settings for both registration stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub affine_iters: usize,
    pub field_iters: usize,
    pub affine_step: f64,
    pub field_step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Downsample factors, coarse to fine, ending at 1.
    pub pyramid_levels: Vec<usize>,
    pub weights: LossWeights,
    pub bins: usize,
    pub kernel_sigma: f64,
    pub consistency: ConsistencyMetric,
    pub inverse_gradient: InverseGradient,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            affine_iters: 200,
            field_iters: 500,
            affine_step: 0.01,
            field_step: 0.25,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            pyramid_levels: vec![4, 2, 1],
            weights: LossWeights::default(),
            bins: 32,
            kernel_sigma: 1.0 / 32.0,
            consistency: ConsistencyMetric::Mse,
            inverse_gradient: InverseGradient::Full,
            seed: 0,
        }
    }
}

/// Keys accepted by [`OptimConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "affine_iters",
    "field_iters",
    "affine_step",
    "field_step",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "pyramid_levels",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "alpha",
    "beta",
    "gamma",
    "bins",
    "kernel_sigma",
    "consistency",
    "inverse_gradient",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.affine_step > 0.0 && self.affine_step.is_finite()) {
            return bad(format!("affine_step must be > 0, got {}", self.affine_step));
        }
        if !(self.field_step > 0.0 && self.field_step.is_finite()) {
            return bad(format!("field_step must be > 0, got {}", self.field_step));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        let lv = &self.pyramid_levels;
        if lv.is_empty() || *lv.last().unwrap() != 1 || lv.contains(&0) || lv.windows(2).any(|p| p[0] <= p[1]) {
            return bad(format!(
                "pyramid_levels must be strictly descending and end at 1, got {lv:?}"
            ));
        }
        if lv.iter().any(|f| !f.is_power_of_two()) {
            return bad(format!("pyramid_levels must be powers of two, got {lv:?}"));
        }
        if self.bins < 2 {
            return bad(format!("bins must be >= 2, got {}", self.bins));
        }
        if !(self.kernel_sigma >= 0.0 && self.kernel_sigma.is_finite()) {
            return bad(format!("kernel_sigma must be >= 0, got {}", self.kernel_sigma));
        }
        self.weights.validate()
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            bins: self.bins,
            kernel_sigma: self.kernel_sigma,
            consistency: self.consistency,
            inverse_gradient: self.inverse_gradient,
        }
    }

    pub fn affine_adam(&self) -> AdamParams {
        AdamParams {
            step_size: self.affine_step,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn field_adam(&self) -> AdamParams {
        AdamParams {
            step_size: self.field_step,
            ..self.affine_adam()
        }
    }

    /// Sets one key. `alpha` and `beta` alias `lambda2` and `lambda3`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "affine_iters" => self.affine_iters = parse(key, value)?,
            "field_iters" => self.field_iters = parse(key, value)?,
            "affine_step" => self.affine_step = parse(key, value)?,
            "field_step" => self.field_step = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "pyramid_levels" => {
                self.pyramid_levels = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "lambda1" => self.weights.lambda1 = parse(key, value)?,
            "lambda2" | "alpha" => self.weights.lambda2 = parse(key, value)?,
            "lambda3" | "beta" => self.weights.lambda3 = parse(key, value)?,
            "lambda4" => self.weights.lambda4 = parse(key, value)?,
            "gamma" => self.weights.gamma = parse(key, value)?,
            "bins" => self.bins = parse(key, value)?,
            "kernel_sigma" => self.kernel_sigma = parse(key, value)?,
            "consistency" => self.consistency = parse(key, value)?,
            "inverse_gradient" => self.inverse_gradient = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not of the form key=value")))?;
        self.set(k, v)
    }

    /// Applies every `key = value` line of a config text. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Defaults, then the optional file, then overrides; validated at the end.
    pub fn layered(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes every key as `key = value` lines that [`Self::from_text`]
    /// reads back.
    pub fn to_text(&self) -> String {
        let levels: Vec<String> = self.pyramid_levels.iter().map(|l| l.to_string()).collect();
        let consistency = match self.consistency {
            ConsistencyMetric::Mse => "mse",
            ConsistencyMetric::Ncc => "ncc",
        };
        let inverse = match self.inverse_gradient {
            InverseGradient::Full => "full",
            InverseGradient::Frozen => "frozen",
        };
        let w = &self.weights;
        format!(
            "affine_iters = {}\nfield_iters = {}\naffine_step = {:?}\nfield_step = {:?}\n\
             adam_beta1 = {:?}\nadam_beta2 = {:?}\nadam_eps = {:?}\npyramid_levels = {}\n\
             lambda1 = {:?}\nlambda2 = {:?}\nlambda3 = {:?}\nlambda4 = {:?}\ngamma = {:?}\n\
             bins = {}\nkernel_sigma = {:?}\nconsistency = {consistency}\ninverse_gradient = {inverse}\nseed = {}\n",
            self.affine_iters,
            self.field_iters,
            self.affine_step,
            self.field_step,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            levels.join(","),
            w.lambda1,
            w.lambda2,
            w.lambda3,
            w.lambda4,
            w.gamma,
            self.bins,
            self.kernel_sigma,
            self.seed,
        )
    }
}
