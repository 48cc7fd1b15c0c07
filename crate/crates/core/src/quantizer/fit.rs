//! Step-size fitting by coarse-to-fine 1-D search.
//!
//! Every fit minimizes the squared reconstruction error of one vector. The
//! base step is searched on a 64-point grid over `(0, 1.05 · range / (2^N − 2)]`
//! (`range` for N = 1), since an asymmetric grid may leave one level outside
//! the data range. The grid is seeded with the min/max calibration step
//! `s_full`, refined by three finer 64-point grids around the incumbent and
//! polished with golden-section search. For fixed base codes the optimal binary residual step is the mean
//! absolute residual, so separate-mode fits profile `Δ_res` in closed form.

use super::residual::{max_phase, sign, OptMode, ResidualQuantizer};
use super::uniform::{min_max, UniformQuantizer};
use crate::error::{Error, Result};

const COARSE_POINTS: usize = 64;
const REFINE_LEVELS: usize = 3;
const GOLDEN_ITERS: usize = 40;
const RANGE_SLACK: f64 = 1.05;

fn sse(x: &[f64], y: impl Iterator<Item = f64>) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Minimizes `f` over `(lo, hi]`; returns the best argument and value seen.
pub(crate) fn minimize_1d(lo: f64, hi: f64, seeds: &[f64], f: impl FnMut(f64) -> f64) -> (f64, f64) {
    search_1d(lo, hi, seeds, COARSE_POINTS, REFINE_LEVELS, GOLDEN_ITERS, f)
}

fn search_1d(
    lo: f64,
    hi: f64,
    seeds: &[f64],
    points: usize,
    levels: usize,
    golden_iters: usize,
    mut f: impl FnMut(f64) -> f64,
) -> (f64, f64) {
    let mut best = (hi, f(hi));
    for &s in seeds {
        if s > lo && s <= hi {
            let v = f(s);
            if v < best.1 {
                best = (s, v);
            }
        }
    }
    let consider = |s: f64, best: &mut (f64, f64), f: &mut dyn FnMut(f64) -> f64| {
        if s > lo && s <= hi {
            let v = f(s);
            if v < best.1 {
                *best = (s, v);
            }
        }
    };
    let mut width = hi - lo;
    let mut center = 0.5 * (lo + hi);
    for level in 0..=levels {
        let (a, b) = if level == 0 {
            (lo, hi)
        } else {
            ((center - width).max(lo), (center + width).min(hi))
        };
        let h = (b - a) / points as f64;
        for i in 1..=points {
            consider(a + h * i as f64, &mut best, &mut f);
        }
        center = best.0;
        width = h;
    }
    // golden-section polish on the final bracket
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((center - width).max(lo), (center + width).min(hi));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c.max(f64::MIN_POSITIVE)), f(d.max(f64::MIN_POSITIVE)));
    for _ in 0..golden_iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c.max(f64::MIN_POSITIVE));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d.max(f64::MIN_POSITIVE));
        }
    }
    for (s, v) in [(c, fc), (d, fd)] {
        if s > lo && s <= hi && v < best.1 {
            best = (s, v);
        }
    }
    best
}

fn full_range_step(x: &[f64], bits: u8) -> (f64, f64, f64) {
    let (lo, hi) = min_max(x);
    let qmax = ((1u64 << bits) - 1) as f64;
    (lo, hi, (hi - lo) / qmax)
}

/// Upper end of the step search.
fn max_step(lo: f64, hi: f64, bits: u8) -> f64 {
    let qmax = (1u64 << bits) - 1;
    RANGE_SLACK * (hi - lo) / qmax.saturating_sub(1).max(1) as f64
}

fn is_degenerate(lo: f64, hi: f64) -> bool {
    hi - lo <= f64::EPSILON * lo.abs().max(hi.abs()) || hi == lo
}

/// Smallest admissible residual step for a vector.
fn delta_floor(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (scale * 1e-12).max(1e-300)
}

/// Centered grid for step `s` plus the two neighbouring zero points.
fn base_candidates(lo: f64, hi: f64, s: f64, bits: u8) -> [UniformQuantizer; 3] {
    let c = UniformQuantizer::centered(lo, hi, s, bits).expect("positive step");
    let z = c.zero_point();
    [
        c,
        UniformQuantizer::with_step(s, z - 1, bits).expect("positive step"),
        UniformQuantizer::with_step(s, z + 1, bits).expect("positive step"),
    ]
}

/// Best of the base candidates for step `s` and phases `|p| ≤ max_phase`
/// under `err`.
fn best_base(
    lo: f64,
    hi: f64,
    s: f64,
    bits: u8,
    max_phase: i8,
    mut err: impl FnMut(&UniformQuantizer, i8) -> f64,
) -> (UniformQuantizer, i8, f64) {
    let mut best: Option<(UniformQuantizer, i8, f64)> = None;
    for q in base_candidates(lo, hi, s, bits) {
        for phase in -max_phase..=max_phase {
            let e = err(&q, phase);
            if best.as_ref().is_none_or(|b| e < b.2) {
                best = Some((q, phase, e));
            }
        }
    }
    best.expect("at least one candidate")
}

/// MSE-fitted plain uniform quantizer.
pub fn fit_uniform(x: &[f64], bits: u8) -> Result<UniformQuantizer> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a quantizer to an empty vector".into()));
    }
    let (lo, hi, s_full) = full_range_step(x, bits);
    if is_degenerate(lo, hi) {
        return UniformQuantizer::from_range(lo, hi, bits);
    }
    let err = |q: &UniformQuantizer, _| uniform_sse(x, q);
    let (s, _) = minimize_1d(0.0, max_step(lo, hi, bits), &[s_full], |s| best_base(lo, hi, s, bits, 0, err).2);
    Ok(best_base(lo, hi, s, bits, 0, err).0)
}

/// Error of a joint-mode quantizer with the given base and phase.
fn joint_error(x: &[f64], base: UniformQuantizer, tiers: u8, phase: i8) -> f64 {
    let q = ResidualQuantizer::joint(base, tiers, phase).expect("tiers and phase validated");
    sse(x, x.iter().map(|v| q.quantize_scalar(*v, tiers)))
}

/// Best `(Δ_res, Δ_res2, error)` for fixed base codes.
fn profile_separate(
    x: &[f64],
    base: &UniformQuantizer,
    phase: i8,
    tiers: u8,
    extra: &[f64],
) -> (f64, Option<f64>, f64) {
    let floor = delta_floor(x);
    let o = base.step() * f64::from(phase) / f64::from(2u8 << tiers);
    let resid: Vec<f64> = x.iter().map(|v| v - base.quantize(v - o) - o).collect();
    let mean_abs = |r: &[f64]| r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64;
    let d1 = mean_abs(&resid).max(floor);
    if tiers == 1 {
        let err: f64 = resid.iter().map(|r| (r.abs() - d1).powi(2)).sum();
        return (d1, None, err);
    }
    let two_tier = |d: f64| -> (f64, f64) {
        let r2: Vec<f64> = resid.iter().map(|r| r - d * sign(*r)).collect();
        let d2 = mean_abs(&r2).max(floor);
        (d2, r2.iter().map(|r| (r.abs() - d2).powi(2)).sum())
    };
    let rmax = resid.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut best = {
        let (d2, e) = two_tier(d1);
        (d1, d2, e)
    };
    for &d in extra {
        let d = d.max(floor);
        let (d2, e) = two_tier(d);
        if e < best.2 {
            best = (d, d2, e);
        }
    }
    if rmax > floor {
        let (d, _) = search_1d(0.0, rmax, &[], 16, 1, 24, |d| two_tier(d).1);
        let d = d.max(floor);
        let (d2, e) = two_tier(d);
        if e < best.2 {
            best = (d, d2, e);
        }
    }
    (best.0, Some(best.1), best.2)
}

/// Exact representation of a constant `c`: the base rounds `c` to level 0 and
/// the coupled residual tiers (`s/4`, `s/8`) add up to `c`.
fn degenerate_residual(c: f64, base_bits: u8, tiers: u8, mode: OptMode) -> Result<ResidualQuantizer> {
    let offset = if tiers == 2 { 0.375 } else { 0.25 };
    let step = if c == 0.0 { super::uniform::DEGENERATE_STEP } else { c.abs() / offset };
    let zero_point = if c < 0.0 { 1 } else { 0 };
    let base = UniformQuantizer::with_step(step, zero_point, base_bits)?;
    let joint = ResidualQuantizer::joint(base, tiers, 0)?;
    match mode {
        OptMode::Joint => Ok(joint),
        OptMode::Separate => ResidualQuantizer::separate(base, joint.delta_res(), joint.delta_res2(), 0),
    }
}

/// Fits a residual quantizer with `base_bits` base bits and `tiers` residual
/// tiers under the coupling of `mode`.
///
/// Joint-mode fits also evaluate the plain `base_bits` optimum embedded in the
/// finer grid, and separate-mode fits start from the joint and plain optima,
/// so separate ≤ joint ≤ plain base holds for every input.
pub fn fit_residual(x: &[f64], base_bits: u8, tiers: u8, mode: OptMode) -> Result<ResidualQuantizer> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a quantizer to an empty vector".into()));
    }
    if !(1..=2).contains(&tiers) {
        return Err(Error::InvalidArgument(format!("residual tier count {tiers} not in {{1, 2}}")));
    }
    let (lo, hi, s_full) = full_range_step(x, base_bits);
    if is_degenerate(lo, hi) {
        return degenerate_residual(0.5 * (lo + hi), base_bits, tiers, mode);
    }
    let phases = max_phase(tiers);
    let hi_step = max_step(lo, hi, base_bits);
    let plain = fit_uniform(x, base_bits)?;
    let joint_err = |q: &UniformQuantizer, p: i8| joint_error(x, *q, tiers, p);
    let (s_joint, _) =
        minimize_1d(0.0, hi_step, &[s_full], |s| best_base(lo, hi, s, base_bits, phases, joint_err).2);
    let (mut joint_base, mut joint_phase, e_joint) = best_base(lo, hi, s_joint, base_bits, phases, joint_err);
    // the plain base grid is a subset of the joint grid with phase 2^t − 1
    if joint_error(x, plain, tiers, phases - 1) < e_joint {
        (joint_base, joint_phase) = (plain, phases - 1);
    }
    if mode == OptMode::Joint {
        return ResidualQuantizer::joint(joint_base, tiers, joint_phase);
    }

    let sep_err = |q: &UniformQuantizer, p: i8| profile_separate(x, q, p, tiers, &[]).2;
    let (s_sep, _) = minimize_1d(0.0, hi_step, &[s_full, plain.step()], |s| {
        best_base(lo, hi, s, base_bits, phases, sep_err).2
    });
    let (sep_base, sep_phase, _) = best_base(lo, hi, s_sep, base_bits, phases, sep_err);

    let mut best: Option<(UniformQuantizer, i8, f64, Option<f64>, f64)> = None;
    for (base, phase, extra) in [
        (sep_base, sep_phase, vec![]),
        (joint_base, joint_phase, vec![joint_base.step() / 4.0]),
        (plain, 0, vec![]),
    ] {
        let (d1, d2, e) = profile_separate(x, &base, phase, tiers, &extra);
        if best.as_ref().is_none_or(|b| e < b.4) {
            best = Some((base, phase, d1, d2, e));
        }
    }
    let (base, phase, d1, d2, _) = best.expect("candidates evaluated");
    ResidualQuantizer::separate(base, d1, d2, phase)
}

/// Refits `q`'s step sizes to `x`, keeping its bits, tier count and mode.
pub fn fit_step_sizes(x: &[f64], q: &ResidualQuantizer) -> Result<ResidualQuantizer> {
    fit_residual(x, q.base().bits(), q.max_tiers(), q.mode())
}

/// Squared error of `q` with `tiers` tiers on `x`.
pub fn residual_sse(x: &[f64], q: &ResidualQuantizer, tiers: u8) -> f64 {
    sse(x, x.iter().map(|v| q.quantize_scalar(*v, tiers)))
}

pub fn uniform_sse(x: &[f64], q: &UniformQuantizer) -> f64 {
    sse(x, x.iter().map(|v| q.quantize(*v)))
}
