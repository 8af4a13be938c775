use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backward::{LOG_SCALES, MEAN, OPACITY, PARAMS_PER_GAUSSIAN, ROTATION, SH_DC, SH_REST};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, ScheduleState};

/// Adam step sizes per parameter group. Position rates are multiplied by
/// the scene extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate reached at the last iteration (log-linear decay).
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        let all = [self.position, self.position_final, self.rotation, self.scale, self.opacity, self.sh_dc, self.sh_rest];
        if all.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config("learning rates must be positive and finite"));
        }
        Ok(())
    }

    /// Position rate at `it` of `total` iterations.
    pub fn position_at(&self, it: usize, total: usize) -> f64 {
        let t = if total <= 1 { 0.0 } else { (it as f64 / (total - 1) as f64).clamp(0.0, 1.0) };
        (self.position.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }

    /// Per-slot rates over the flat parameter layout.
    pub fn flat(&self, position: f64) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut out = [0.0; PARAMS_PER_GAUSSIAN];
        for (range, lr) in [
            (MEAN, position),
            (ROTATION, self.rotation),
            (LOG_SCALES, self.scale),
            (OPACITY, self.opacity),
            (SH_DC, self.sh_dc),
            (SH_REST, self.sh_rest),
        ] {
            out[range].fill(lr);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub sh_degree: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    /// Threshold on the mean latitude-weighted projected-mean gradient.
    pub densify_grad_threshold: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub size_threshold: f64,
    pub prune_opacity: f64,
    /// Densification stops adding primitives beyond this count.
    pub max_gaussians: usize,
    /// Jump losses ramp linearly from 0 to full weight over `[start, end)`.
    pub jump_ramp: [usize; 2],
    pub dn_from: usize,
    pub kappa: f64,
    pub tile_size: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_interval: usize,
    pub lr: LearningRates,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 8000,
            seed: 0,
            sh_degree: 0,
            densify_from: 500,
            densify_until: 4000,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            size_threshold: 0.01,
            prune_opacity: 0.005,
            max_gaussians: 1_000_000,
            jump_ramp: [1000, 4000],
            dn_from: 5000,
            kappa: 0.5,
            tile_size: 16,
            checkpoint_interval: 0,
            lr: LearningRates::default(),
            loss: LossWeights::default(),
        }
    }
}

/// Smallest densification interval a compressed schedule uses.
pub const MIN_SCALED_INTERVAL: usize = 10;

impl TrainConfig {
    /// Default schedule compressed proportionally to `iterations`.
    pub fn scaled(iterations: usize) -> Self {
        let d = Self::default();
        let s = |x: usize| x * iterations / d.iterations;
        // statistics need a few views per densification event
        let interval = s(d.densify_interval).max(MIN_SCALED_INTERVAL);
        Self {
            iterations,
            densify_from: s(d.densify_from).max(interval),
            densify_until: s(d.densify_until),
            densify_interval: interval,
            jump_ramp: [s(d.jump_ramp[0]), s(d.jump_ramp[1])],
            dn_from: s(d.dn_from),
            ..d
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.densify_until > self.iterations {
            return Err(Error::config(format!(
                "densify_until ({}) exceeds iterations ({})",
                self.densify_until, self.iterations
            )));
        }
        if self.densify_interval == 0 || self.tile_size == 0 {
            return Err(Error::config("densify_interval and tile_size must be positive"));
        }
        if self.jump_ramp[0] > self.jump_ramp[1] {
            return Err(Error::config("jump_ramp start exceeds its end"));
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return Err(Error::config(format!("sh_degree {} is not supported", self.sh_degree)));
        }
        let positive = [self.densify_grad_threshold, self.size_threshold, self.kappa];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("densify_grad_threshold, size_threshold and kappa must be positive"));
        }
        if !(0.0..1.0).contains(&self.prune_opacity) {
            return Err(Error::config("prune_opacity must lie in [0, 1)"));
        }
        self.lr.validate()?;
        self.loss.validate()
    }

    /// Loss multipliers at iteration `it`.
    pub fn schedule(&self, it: usize) -> ScheduleState {
        let [a, b] = self.jump_ramp;
        let jump = if it >= b {
            1.0
        } else if it < a {
            0.0
        } else {
            (it - a) as f64 / (b - a) as f64
        };
        ScheduleState {
            jump,
            dn: if it >= self.dn_from { 1.0 } else { 0.0 },
        }
    }

    pub fn densify_now(&self, it: usize) -> bool {
        let n = it + 1;
        n >= self.densify_from && n < self.densify_until && n % self.densify_interval == 0
    }
}
