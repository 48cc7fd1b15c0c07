use crate::error::{Error, Result};
use crate::numkit::Tensor2D;

/// Width of the sinusoidal timestep embedding.
pub const EMB_DIM: usize = 16;

/// Discrete noise schedule over timesteps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `β_t` from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!("bad beta range [{beta_start}, {beta_end}]")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_t` for `t ∈ 1..=T`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `x_t = √ᾱ_t x₀ + √(1 − ᾱ_t) ε`.
    pub fn diffuse(&self, x0: &Tensor2D, eps: &Tensor2D, t: usize) -> Result<Tensor2D> {
        let a = self.alpha_bar(t);
        x0.scale(a.sqrt()).add(&eps.scale((1.0 - a).sqrt()))
    }
}

/// Sinusoidal embedding of timestep `t`: pairs `(sin tω_i, cos tω_i)` with
/// frequencies `ω_i = 100^(−i/8)`.
pub fn timestep_embedding(t: usize) -> [f64; EMB_DIM] {
    let mut e = [0.0; EMB_DIM];
    for i in 0..EMB_DIM / 2 {
        let w = 100f64.powf(-(i as f64) / (EMB_DIM / 2) as f64);
        e[2 * i] = (t as f64 * w).sin();
        e[2 * i + 1] = (t as f64 * w).cos();
    }
    e
}
