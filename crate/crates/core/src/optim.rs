//! Adam with per-parameter-group learning rates over the flat Gaussian layout.

use std::path::Path;

use crate::backward::{param_mut, SceneGrad, PARAMS_PER_GAUSSIAN};
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, `PARAMS_PER_GAUSSIAN` per Gaussian.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"OSADAM1\n";

impl Adam {
    pub fn new(params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    /// State sized for a scene of `n` Gaussians.
    pub fn for_gaussians(n: usize) -> Self {
        Self::new(n * PARAMS_PER_GAUSSIAN)
    }

    /// One update of `params` given `grads`; `lr(k)` is the rate of slot `k`.
    /// Moments and the step counter advance for every slot.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        self.step += 1;
        let (bc1, bc2) = self.bias_corrections();
        for k in 0..params.len() {
            let (m, v) = self.moments(k, grads[k]);
            params[k] -= lr(k) * (m / bc1) / ((v / bc2).sqrt() + self.eps);
        }
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn moments(&mut self, k: usize, g: f64) -> (f64, f64) {
        self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
        self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
        (self.m[k], self.v[k])
    }

    /// Updates every Gaussian of `scene`; `lr` maps a flat parameter index
    /// to its rate. Gaussians with non-finite gradients are left untouched
    /// (their moments too). Quaternions are renormalized afterwards. Returns
    /// the number of skipped Gaussians.
    pub fn step_scene(&mut self, scene: &mut GaussianScene, grads: &SceneGrad, lr: &[f64; PARAMS_PER_GAUSSIAN]) -> Result<usize> {
        let n = scene.len();
        if grads.gaussians.len() != n || self.m.len() != n * PARAMS_PER_GAUSSIAN {
            return Err(Error::Shape {
                expected: format!("{n} Gaussians"),
                actual: format!("{} gradients, {} optimizer slots", grads.gaussians.len(), self.m.len() / PARAMS_PER_GAUSSIAN),
            });
        }
        self.step += 1;
        let (bc1, bc2) = self.bias_corrections();
        let mut skipped = 0;
        for (i, (g, gg)) in scene.gaussians.iter_mut().zip(&grads.gaussians).enumerate() {
            if !gg.is_finite() {
                skipped += 1;
                continue;
            }
            for k in 0..PARAMS_PER_GAUSSIAN {
                let (m, v) = self.moments(i * PARAMS_PER_GAUSSIAN + k, gg.get(k));
                *param_mut(g, k) -= lr[k] * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
            let qn = g.rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
            if qn > 0.0 {
                g.rotation = g.rotation.map(|q| q / qn);
            } else {
                g.rotation = [1.0, 0.0, 0.0, 0.0];
            }
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} Gaussians with non-finite gradients");
        }
        Ok(skipped)
    }

    /// Keeps the state of Gaussians where `keep` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        let p = PARAMS_PER_GAUSSIAN;
        let filter = |x: &[f64]| -> Vec<f64> {
            x.chunks_exact(p)
                .zip(keep)
                .filter(|(_, &k)| k)
                .flat_map(|(c, _)| c.iter().copied())
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }

    /// Appends zeroed state for `count` new Gaussians.
    pub fn grow(&mut self, count: usize) {
        let n = self.m.len() + count * PARAMS_PER_GAUSSIAN;
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }

    /// Binary sidecar: magic, step, slot count, then both moment arrays (little endian).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(24 + 16 * self.m.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&self.step.to_le_bytes());
        bytes.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "not an optimizer state file"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let step = u64_at(8);
        let n = u64_at(16) as usize;
        if bytes.len() != 24 + 16 * n {
            return Err(Error::format(path, "truncated optimizer state"));
        }
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let mut adam = Self::new(n);
        adam.step = step;
        for k in 0..n {
            adam.m[k] = f(24 + 8 * k);
            adam.v[k] = f(24 + 8 * (n + k));
        }
        Ok(adam)
    }
}
