//! Base quantizer plus binary residual tiers.
//!
//! A residual quantizer spends `n − 1` bits on a uniform base quantizer and
//! one extra bit per residual tier: tier `k` adds `Δ_k · sign(r_k)` where
//! `r_k` is what the previous tiers left over. `sign(0)` is `+1`. The base
//! grid may be shifted by an integer phase times `s / 2^(T+1)`, which lets
//! joint mode reproduce every `n`-bit uniform grid, including those that
//! contain zero.

use super::uniform::UniformQuantizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptMode {
    /// Residual steps are bit shifts of the base step (`s/4`, then `s/8`).
    Joint,
    /// Residual steps are free parameters.
    Separate,
}

impl OptMode {
    pub fn as_u8(self) -> u8 {
        match self {
            OptMode::Joint => 1,
            OptMode::Separate => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptMode::Joint => "joint",
            OptMode::Separate => "separate",
        }
    }
}

#[inline]
pub fn sign(r: f64) -> f64 {
    if r < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualQuantizer {
    base: UniformQuantizer,
    delta_res: f64,
    delta_res2: Option<f64>,
    phase: i8,
    mode: OptMode,
}

impl ResidualQuantizer {
    /// Joint mode: `Δ_res = s/4`, `Δ_res2 = s/8`. With `t` tiers and an odd
    /// phase this is exactly a `(base + t)`-bit uniform quantizer of step
    /// `s / 2^t`; even phases give that grid shifted by half its step.
    pub fn joint(base: UniformQuantizer, tiers: u8, phase: i8) -> Result<Self> {
        check_tiers(tiers)?;
        check_phase(phase, tiers)?;
        let s = base.step();
        Ok(Self {
            base,
            delta_res: s / 4.0,
            delta_res2: (tiers == 2).then_some(s / 8.0),
            phase,
            mode: OptMode::Joint,
        })
    }

    pub fn separate(base: UniformQuantizer, delta_res: f64, delta_res2: Option<f64>, phase: i8) -> Result<Self> {
        for d in std::iter::once(delta_res).chain(delta_res2) {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidArgument(format!("residual step {d} must be > 0")));
            }
        }
        check_phase(phase, 1 + delta_res2.is_some() as u8)?;
        Ok(Self { base, delta_res, delta_res2, phase, mode: OptMode::Separate })
    }

    pub fn new(
        base: UniformQuantizer,
        mode: OptMode,
        delta_res: f64,
        delta_res2: Option<f64>,
        phase: i8,
    ) -> Result<Self> {
        match mode {
            OptMode::Joint => Self::joint(base, 1 + delta_res2.is_some() as u8, phase),
            OptMode::Separate => Self::separate(base, delta_res, delta_res2, phase),
        }
    }

    pub fn base(&self) -> &UniformQuantizer {
        &self.base
    }

    pub fn mode(&self) -> OptMode {
        self.mode
    }

    pub fn delta_res(&self) -> f64 {
        self.delta_res
    }

    pub fn delta_res2(&self) -> Option<f64> {
        self.delta_res2
    }

    /// Base grid offset in units of `s / 2^(T+1)`, `T` the carried tiers.
    pub fn phase(&self) -> i8 {
        self.phase
    }

    /// `d offset / d s`.
    pub fn offset_per_step(&self) -> f64 {
        f64::from(self.phase) / f64::from(2u8 << self.max_tiers())
    }

    /// Shift applied to the base grid.
    pub fn offset(&self) -> f64 {
        self.base.step() * self.offset_per_step()
    }

    /// Number of residual tiers this quantizer carries parameters for.
    pub fn max_tiers(&self) -> u8 {
        1 + self.delta_res2.is_some() as u8
    }

    /// Stored bits per element when all tiers are used.
    pub fn bit_cost(&self) -> u8 {
        self.base.bits() + self.max_tiers()
    }

    /// Same quantizer with a new base step; joint-mode residual steps and the
    /// offset follow.
    pub fn with_base_step(&self, step: f64) -> Result<Self> {
        let base = self.base.rescaled(step)?;
        match self.mode {
            OptMode::Joint => Self::joint(base, self.max_tiers(), self.phase),
            OptMode::Separate => Self::separate(base, self.delta_res, self.delta_res2, self.phase),
        }
    }

    pub fn with_deltas(&self, delta_res: f64, delta_res2: Option<f64>) -> Result<Self> {
        Self::separate(self.base, delta_res, delta_res2, self.phase)
    }

    /// Base output `base(x − o) + o` for offset `o`.
    #[inline]
    pub fn quantize_base(&self, x: f64) -> f64 {
        let o = self.offset();
        self.base.quantize(x - o) + o
    }

    /// Quantizes one value using `tiers` residual tiers (0, 1 or 2).
    #[inline]
    pub fn quantize_scalar(&self, x: f64, tiers: u8) -> f64 {
        let mut out = self.quantize_base(x);
        if tiers >= 1 {
            out += self.delta_res * sign(x - out);
        }
        if tiers >= 2 {
            let d2 = self.delta_res2.expect("tier count validated by caller");
            out += d2 * sign(x - out);
        }
        out
    }
}

/// Largest admissible `|phase|` for `tiers` carried tiers; the offsets then
/// span one full base step.
pub fn max_phase(tiers: u8) -> i8 {
    1i8 << tiers
}

fn check_phase(phase: i8, tiers: u8) -> Result<()> {
    if phase.unsigned_abs() > max_phase(tiers) as u8 {
        return Err(Error::InvalidArgument(format!("phase {phase} out of range for {tiers} tiers")));
    }
    Ok(())
}

fn check_tiers(tiers: u8) -> Result<()> {
    if !(1..=2).contains(&tiers) {
        return Err(Error::InvalidArgument(format!("residual tier count {tiers} not in {{1, 2}}")));
    }
    Ok(())
}

/// Hierarchical residual quantization: tiers 0, 1 and 2 give the `n − 1`,
/// `n` and `n + 1` bit outputs sharing one base quantizer.
pub fn quantize_residual(x: &[f64], q: &ResidualQuantizer, tiers: u8) -> Result<Vec<f64>> {
    if tiers > q.max_tiers() {
        return Err(Error::InvalidArgument(format!(
            "{tiers} residual tiers requested but quantizer carries {}",
            q.max_tiers()
        )));
    }
    Ok(x.iter().map(|v| q.quantize_scalar(*v, tiers)).collect())
}
