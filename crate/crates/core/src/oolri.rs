//! Low-rank adapter initialization from the quantization residual.
//!
//! With `E = W − Q(W)` and the first-order model `Q(W + L1 L2) ≈ Q(W) + L1 L2`,
//! the adapter loss becomes `‖E − L1 L2‖²`, minimized by the truncated SVD of
//! `E`. The singular values are split evenly between the factors.

use crate::error::{Error, Result};
use crate::numkit::{svd, Rng, Tensor2D};
use crate::quantizer::{dequantized_weight, quantize_columns, Adapter, LayerQuantState};

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterInit {
    pub l1: Tensor2D,
    pub l2: Tensor2D,
    pub rank: usize,
    pub residual_norm_before: f64,
    pub residual_norm_after: f64,
    /// Full singular spectrum of `E`, descending.
    pub spectrum: Vec<f64>,
}

impl AdapterInit {
    pub fn adapter(&self) -> Adapter {
        Adapter { l1: self.l1.clone(), l2: self.l2.clone() }
    }
}

/// `E = Ŵ − Q(Ŵ)` for the bare quantizer (the adapter must be zero).
pub fn quant_residual(w: &Tensor2D, state: &LayerQuantState) -> Result<Tensor2D> {
    if state.adapter.l1.max_abs() != 0.0 && state.adapter.l2.max_abs() != 0.0 {
        return Err(Error::InvalidArgument("quantization residual needs a zero adapter".into()));
    }
    state.scaling.scale_weights(w)?.sub(&dequantized_weight(state, w)?)
}

pub fn init_adapter(e: &Tensor2D, r: usize) -> Result<AdapterInit> {
    let (m, n) = e.shape();
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!("rank {r} outside [1, {}]", m.min(n))));
    }
    let dec = svd(e)?;
    let root: Vec<f64> = dec.s[..r].iter().map(|s| s.sqrt()).collect();
    let l1 = Tensor2D::from_fn(m, r, |i, k| root[k] * dec.u.get(i, k));
    let l2 = Tensor2D::from_fn(r, n, |k, j| root[k] * dec.v.get(j, k));
    let before = e.frobenius_norm();
    let tail: f64 = dec.s[r..].iter().map(|s| s * s).sum();
    Ok(AdapterInit {
        l1,
        l2,
        rank: r,
        residual_norm_before: before,
        residual_norm_after: tail.sqrt().min(before),
        spectrum: dec.s,
    })
}

/// `f(X) = ‖E − X‖²`.
pub fn linearized_loss(e: &Tensor2D, x: &Tensor2D) -> Result<f64> {
    Ok(e.sub(x)?.sum_squares())
}

/// `∇f(X) = −2 (E − X)`.
pub fn linearized_gradient(e: &Tensor2D, x: &Tensor2D) -> Result<Tensor2D> {
    Ok(e.sub(x)?.scale(-2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveViolation {
    pub check: &'static str,
    pub x1: Tensor2D,
    pub x2: Tensor2D,
    pub lambda: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub triples: usize,
    /// Largest `f(λX₁+(1−λ)X₂) − λf(X₁) − (1−λ)f(X₂)`.
    pub max_convexity_gap: f64,
    /// Largest `|‖∇f(X₁)−∇f(X₂)‖ − 2‖X₁−X₂‖| / max(1, 2‖X₁−X₂‖)`.
    pub max_lipschitz_error: f64,
    /// Largest relative gap between analytic and central-difference gradients.
    pub max_gradient_error: f64,
    pub violations: Vec<ObjectiveViolation>,
}

impl ObjectiveReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const CONVEXITY_TOL: f64 = 1e-9;
pub const LIPSCHITZ_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

/// Numerically checks convexity, the exact `2`-Lipschitz gradient identity
/// and the analytic gradient of `f(X) = ‖E − X‖²` on random triples.
pub fn verify_objective_properties(e: &Tensor2D, triples: usize, rng: &mut Rng) -> Result<ObjectiveReport> {
    let (m, n) = e.shape();
    let mut report = ObjectiveReport {
        triples,
        max_convexity_gap: f64::NEG_INFINITY,
        max_lipschitz_error: 0.0,
        max_gradient_error: 0.0,
        violations: vec![],
    };
    for _ in 0..triples {
        let x1 = rng.normal_tensor(m, n);
        let x2 = rng.normal_tensor(m, n);
        let lambda = rng.uniform();
        let v = check_triple(e, &x1, &x2, lambda)?;
        report.max_convexity_gap = report.max_convexity_gap.max(v[0]);
        report.max_lipschitz_error = report.max_lipschitz_error.max(v[1]);
        report.max_gradient_error = report.max_gradient_error.max(v[2]);
        for (check, error, tol) in
            [("convexity", v[0], CONVEXITY_TOL), ("lipschitz", v[1], LIPSCHITZ_TOL), ("gradient", v[2], GRADIENT_TOL)]
        {
            if error > tol {
                report.violations.push(ObjectiveViolation {
                    check,
                    x1: x1.clone(),
                    x2: x2.clone(),
                    lambda,
                    error,
                });
            }
        }
    }
    Ok(report)
}

/// `[convexity gap, Lipschitz error, gradient error]` for one triple.
pub fn check_triple(e: &Tensor2D, x1: &Tensor2D, x2: &Tensor2D, lambda: f64) -> Result<[f64; 3]> {
    let f = |x: &Tensor2D| linearized_loss(e, x);
    let mix = x1.scale(lambda).add(&x2.scale(1.0 - lambda))?;
    let convexity = f(&mix)? - lambda * f(x1)? - (1.0 - lambda) * f(x2)?;

    let gdiff = linearized_gradient(e, x1)?.sub(&linearized_gradient(e, x2)?)?.frobenius_norm();
    let xdiff = 2.0 * x1.sub(x2)?.frobenius_norm();
    let lipschitz = (gdiff - xdiff).abs() / xdiff.max(1.0);

    let g = linearized_gradient(e, x1)?;
    let mut fd = Tensor2D::zeros(x1.rows(), x1.cols());
    let mut probe = x1.clone();
    for k in 0..probe.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + FD_STEP;
        let up = f(&probe)?;
        probe.data_mut()[k] = orig - FD_STEP;
        let dn = f(&probe)?;
        probe.data_mut()[k] = orig;
        fd.data_mut()[k] = (up - dn) / (2.0 * FD_STEP);
    }
    let gradient = g.sub(&fd)?.frobenius_norm() / g.frobenius_norm().max(1.0);
    Ok([convexity, lipschitz, gradient])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitLosses {
    pub zero_init: f64,
    pub oolri: f64,
}

/// True adapter loss `‖Ŵ − Q(Ŵ + L1 L2)‖²` at zero init and at the
/// residual-SVD init of rank `r`.
pub fn init_loss_comparison(w: &Tensor2D, state: &LayerQuantState, r: usize) -> Result<InitLosses> {
    let mut bare = state.clone();
    bare.adapter = Adapter::zeros(w.rows(), w.cols(), r);
    let e = quant_residual(w, &bare)?;
    let init = init_adapter(&e, r)?;
    let w_hat = bare.scaling.scale_weights(w)?;
    let loss = |delta: &Tensor2D| -> Result<f64> {
        Ok(w_hat.sub(&quantize_columns(&w_hat.add(delta)?, &bare.specs)?)?.sum_squares())
    };
    Ok(InitLosses {
        zero_init: loss(&Tensor2D::zeros(w.rows(), w.cols()))?,
        oolri: loss(&init.adapter().delta_w())?,
    })
}
