//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use super::tensor::{dot, Tensor2D};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const TOL: f64 = 1e-12;

/// `a = u · diag(s) · vᵀ` with `u` m×p, `v` n×p, `p = min(m, n)` and `s`
/// sorted in non-increasing order.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Tensor2D,
    pub s: Vec<f64>,
    pub v: Tensor2D,
}

impl SvdResult {
    /// `Σ_{i<r} s_i u_i v_iᵀ`.
    pub fn truncated_reconstruction(&self, r: usize) -> Tensor2D {
        let (m, n) = (self.u.rows(), self.v.rows());
        let r = r.min(self.s.len());
        Tensor2D::from_fn(m, n, |i, j| {
            (0..r).map(|k| self.s[k] * self.u.get(i, k) * self.v.get(j, k)).sum()
        })
    }

    pub fn reconstruct(&self) -> Tensor2D {
        self.truncated_reconstruction(self.s.len())
    }
}

pub fn svd(a: &Tensor2D) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(SvdResult { u: t.v, s: t.s, v: t.u })
    }
}

/// Requires `rows >= cols`.
fn svd_tall(a: &Tensor2D) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // Work column-major: cols[j] is column j of the evolving A·V.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    let mut off = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                off = f64::max(off, rel);
                if rel <= TOL || gamma.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS, residual: off });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().fold(0.0_f64, |m, v| m.max(*v));

    let mut u = Tensor2D::zeros(m, n);
    let mut v = Tensor2D::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        let ucol = if sigma > 0.0 && sigma > smax * 1e-14 {
            cols[j].iter().map(|x| x / sigma).collect()
        } else {
            complete_basis(&ucols, m)
        };
        u.set_column(k, &ucol);
        v.set_column(k, &vcols[j]);
        s.push(sigma);
        ucols.push(ucol);
    }
    Ok(SvdResult { u, s, v })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// A unit vector orthogonal to `basis` (Gram–Schmidt over canonical vectors).
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                for (c, bv) in cand.iter_mut().zip(b) {
                    *c -= proj * bv;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = Some(cand);
        }
        if norm > 0.5 {
            break;
        }
    }
    let cand = best.expect("basis cannot span the whole space when a column is missing");
    cand.iter().map(|x| x / best_norm).collect()
}
