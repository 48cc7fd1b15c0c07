//! Temporal relation distillation.
//!
//! Full-precision features are kept in one bounded FIFO queue per timestep.
//! A reference matrix drawn from all queues turns a feature vector into a
//! distribution over reference rows, `softmax(F_ref · x / τ)`, and the
//! quantized model is trained to match the full-precision distribution.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numkit::{dot, Rng, Tensor2D};

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMemory {
    queues: Vec<VecDeque<Vec<f64>>>,
    capacity: usize,
    dim: usize,
}

/// Per-queue summary for training logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueStats {
    pub len: usize,
    pub mean: f64,
    pub std: f64,
}

impl TemporalMemory {
    pub fn new(timesteps: usize, capacity: usize, dim: usize) -> Result<Self> {
        if timesteps == 0 || capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "memory needs T, L, d > 0 (got {timesteps}, {capacity}, {dim})"
            )));
        }
        Ok(Self { queues: vec![VecDeque::with_capacity(capacity); timesteps], capacity, dim })
    }

    pub fn timesteps(&self) -> usize {
        self.queues.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Queue for timestep `t` (1-based), oldest first.
    pub fn queue(&self, t: usize) -> Result<&VecDeque<Vec<f64>>> {
        self.check_t(t)?;
        Ok(&self.queues[t - 1])
    }

    pub fn is_warm(&self) -> bool {
        self.queues.iter().all(|q| !q.is_empty())
    }

    /// First timestep whose queue is empty.
    pub fn first_cold(&self) -> Option<usize> {
        self.queues.iter().position(VecDeque::is_empty).map(|i| i + 1)
    }

    pub fn fill_fraction(&self) -> f64 {
        let stored: usize = self.queues.iter().map(VecDeque::len).sum();
        stored as f64 / (self.capacity * self.queues.len()) as f64
    }

    pub fn stored_floats(&self) -> usize {
        self.queues.iter().map(|q| q.len() * self.dim).sum()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.queues.len() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside [1, {}]", self.queues.len())));
        }
        Ok(())
    }

    /// Appends `n` rows of `x_fp` drawn without replacement (kept in row
    /// order) to queue `t`, evicting the oldest entries beyond capacity.
    pub fn push_features(&mut self, t: usize, x_fp: &Tensor2D, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        self.check_t(t)?;
        if x_fp.cols() != self.dim {
            return Err(Error::DimensionMismatch(format!("features of dim {}, memory dim {}", x_fp.cols(), self.dim)));
        }
        if n > x_fp.rows() {
            return Err(Error::InvalidArgument(format!("cannot push {n} of {} rows", x_fp.rows())));
        }
        let mut idx = rng.sample_without_replacement(x_fp.rows(), n);
        idx.sort_unstable();
        let q = &mut self.queues[t - 1];
        for i in &idx {
            if q.len() == self.capacity {
                q.pop_front();
            }
            q.push_back(x_fp.row(*i).to_vec());
        }
        Ok(idx)
    }

    /// `k` rows per timestep, timestep-major. Queues shorter than `k` are
    /// sampled with replacement.
    pub fn build_reference(&self, k: usize, rng: &mut Rng) -> Result<ReferenceMatrix> {
        if k == 0 {
            return Err(Error::InvalidArgument("reference sample size k must be ≥ 1".into()));
        }
        if let Some(t) = self.first_cold() {
            return Err(Error::ColdMemory { timestep: t });
        }
        let mut data = Vec::with_capacity(self.queues.len() * k * self.dim);
        let mut provenance = Vec::with_capacity(self.queues.len() * k);
        for (ti, q) in self.queues.iter().enumerate() {
            let slots = if q.len() < k {
                rng.sample_with_replacement(q.len(), k)
            } else {
                rng.sample_without_replacement(q.len(), k)
            };
            for s in slots {
                data.extend_from_slice(&q[s]);
                provenance.push((ti + 1, s));
            }
        }
        let rows = provenance.len();
        Ok(ReferenceMatrix { features: Tensor2D::from_vec(rows, self.dim, data)?, k, provenance })
    }

    pub fn stats(&self) -> Vec<QueueStats> {
        self.queues
            .iter()
            .map(|q| {
                let count = (q.len() * self.dim) as f64;
                if q.is_empty() {
                    return QueueStats { len: 0, mean: 0.0, std: 0.0 };
                }
                let mean = q.iter().flatten().sum::<f64>() / count;
                let var = q.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                QueueStats { len: q.len(), mean, std: var.sqrt() }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMatrix {
    /// `R × d` with `R = T · k`.
    pub features: Tensor2D,
    pub k: usize,
    /// `(timestep, queue slot)` of each row.
    pub provenance: Vec<(usize, usize)>,
}

impl ReferenceMatrix {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMetric {
    Kl,
    /// Mean squared difference of the two distributions.
    Mse,
}

impl LossMetric {
    pub fn name(self) -> &'static str {
        match self {
            LossMetric::Kl => "kl",
            LossMetric::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kl" => Some(LossMetric::Kl),
            "mse" => Some(LossMetric::Mse),
            _ => None,
        }
    }
}

fn logits(f_ref: &Tensor2D, x: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be > 0")));
    }
    if x.len() != f_ref.cols() {
        return Err(Error::DimensionMismatch(format!("feature dim {} vs reference dim {}", x.len(), f_ref.cols())));
    }
    Ok((0..f_ref.rows()).map(|i| dot(f_ref.row(i), x) / tau).collect())
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `softmax(F_ref · x / τ)`.
pub fn relation_distribution(f_ref: &Tensor2D, x: &[f64], tau: f64) -> Result<Vec<f64>> {
    crate::numkit::softmax(&logits(f_ref, x, tau)?, 1.0)
}

/// Divergence between the relations of one aligned pair, with its gradient
/// with respect to `x_q`.
pub fn pair_loss_gradient(
    f_ref: &Tensor2D,
    x_fp: &[f64],
    x_q: &[f64],
    tau: f64,
    metric: LossMetric,
) -> Result<(f64, Vec<f64>)> {
    let lp = log_softmax(&logits(f_ref, x_fp, tau)?);
    let lq = log_softmax(&logits(f_ref, x_q, tau)?);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let q: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
    let r = p.len() as f64;
    // d loss / d logits
    let (loss, dz): (f64, Vec<f64>) = match metric {
        LossMetric::Kl => {
            let kl = p.iter().zip(lp.iter().zip(&lq)).filter(|(pi, _)| **pi > 0.0).map(|(pi, (a, b))| pi * (a - b)).sum::<f64>();
            (kl.max(0.0), q.iter().zip(&p).map(|(qi, pi)| qi - pi).collect())
        }
        LossMetric::Mse => {
            let loss = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r;
            let g: Vec<f64> = p.iter().zip(&q).map(|(a, b)| -2.0 * (a - b) / r).collect();
            let gq = dot(&g, &q);
            (loss, q.iter().zip(&g).map(|(qi, gi)| qi * (gi - gq)).collect())
        }
    };
    let mut grad = vec![0.0; x_q.len()];
    for (i, dzi) in dz.iter().enumerate() {
        for (g, f) in grad.iter_mut().zip(f_ref.row(i)) {
            *g += dzi * f / tau;
        }
    }
    Ok((loss, grad))
}

fn check_batches(x_fp: &Tensor2D, x_q: &Tensor2D) -> Result<()> {
    if x_fp.shape() != x_q.shape() {
        return Err(Error::DimensionMismatch(format!(
            "full-precision batch {:?} vs quantized batch {:?}",
            x_fp.shape(),
            x_q.shape()
        )));
    }
    Ok(())
}

/// Mean divergence over aligned batch rows.
pub fn mtrd_loss(f_ref: &Tensor2D, x_fp: &Tensor2D, x_q: &Tensor2D, tau: f64, metric: LossMetric) -> Result<f64> {
    Ok(mtrd_loss_gradient(f_ref, x_fp, x_q, tau, metric)?.0)
}

/// Mean divergence over the batch and its gradient with respect to every
/// row of `x_q`.
pub fn mtrd_loss_gradient(
    f_ref: &Tensor2D,
    x_fp: &Tensor2D,
    x_q: &Tensor2D,
    tau: f64,
    metric: LossMetric,
) -> Result<(f64, Tensor2D)> {
    check_batches(x_fp, x_q)?;
    let b = x_fp.rows();
    if b == 0 {
        return Ok((0.0, Tensor2D::zeros(0, x_q.cols())));
    }
    let mut grad = Tensor2D::zeros(b, x_q.cols());
    let mut total = 0.0;
    for i in 0..b {
        let (l, g) = pair_loss_gradient(f_ref, x_fp.row(i), x_q.row(i), tau, metric)?;
        total += l;
        for (dst, v) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = v / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

/// Gradient of the pair divergence with respect to `x_q`; for KL this is
/// `(1/τ) F_refᵀ (q − p)`.
pub fn mtrd_gradient(f_ref: &Tensor2D, x_fp: &[f64], x_q: &[f64], tau: f64, metric: LossMetric) -> Result<Vec<f64>> {
    Ok(pair_loss_gradient(f_ref, x_fp, x_q, tau, metric)?.1)
}

/// `align + α · mtrd`.
pub fn total_loss(align: f64, mtrd: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("distillation weight {alpha} must be ≥ 0")));
    }
    Ok(align + alpha * mtrd)
}
