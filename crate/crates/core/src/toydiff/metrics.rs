use log::warn;

use crate::error::{Error, Result};
use crate::numkit::{dot, Tensor2D};

fn mean_pairwise(a: &Tensor2D, b: &Tensor2D) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let d: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            total += d.sqrt();
        }
    }
    total / (a.rows() * b.rows()) as f64
}

/// `2 E‖X − Y‖ − E‖X − X′‖ − E‖Y − Y′‖` over all sample pairs (V-statistic).
pub fn energy_distance(a: &Tensor2D, b: &Tensor2D) -> Result<f64> {
    if a.cols() != b.cols() || a.rows() == 0 || b.rows() == 0 {
        return Err(Error::DimensionMismatch(format!("energy distance of {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok((2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b)).max(0.0))
}

/// Cosine similarity between flattened per-step features. Pairs involving a
/// zero-norm feature are 0 (the diagonal stays 1).
pub fn temporal_similarity_map(features: &[Tensor2D]) -> Result<Tensor2D> {
    let n = features.len();
    if let Some(f) = features.iter().find(|f| f.shape() != features[0].shape()) {
        return Err(Error::DimensionMismatch(format!("feature shapes {:?} and {:?}", features[0].shape(), f.shape())));
    }
    let norms: Vec<f64> = features.iter().map(Tensor2D::frobenius_norm).collect();
    for (t, nv) in norms.iter().enumerate() {
        if *nv == 0.0 {
            warn!("zero-norm feature at trajectory step {t}; its similarities are set to 0");
        }
    }
    Ok(Tensor2D::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            (dot(features[i].data(), features[j].data()) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    }))
}
