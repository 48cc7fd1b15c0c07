use crate::error::{Error, Result};
use crate::numkit::Tensor2D;

/// Per-input-channel rebalancing factors `δ`.
///
/// Activations are multiplied by `δ` and weight columns divided by it, which
/// leaves `X · Wᵀ` unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScaling {
    delta: Vec<f64>,
}

impl ChannelScaling {
    pub fn identity(channels: usize) -> Self {
        Self { delta: vec![1.0; channels] }
    }

    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if let Some(d) = delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(format!("scaling factor {d} must be finite and > 0")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// `X · diag(δ)` for activations laid out as (batch × channels).
    pub fn scale_activations(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check(x.cols())?;
        Ok(Tensor2D::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * self.delta[j]))
    }

    /// `W · diag(δ)⁻¹` for weights laid out as (out × in).
    pub fn scale_weights(&self, w: &Tensor2D) -> Result<Tensor2D> {
        self.check(w.cols())?;
        Ok(Tensor2D::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j) / self.delta[j]))
    }

    fn check(&self, channels: usize) -> Result<()> {
        if channels != self.delta.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scaling factors for {channels} channels",
                self.delta.len()
            )));
        }
        Ok(())
    }
}

/// `δ_i = sqrt(max|W_{:,i}| / max|X_{:,i}|)`; channels where either maximum
/// is zero keep `δ_i = 1`.
pub fn compute_prescale(w: &Tensor2D, x_calib: &Tensor2D) -> Result<ChannelScaling> {
    if w.cols() != x_calib.cols() {
        return Err(Error::DimensionMismatch(format!(
            "weight has {} input channels, activations {}",
            w.cols(),
            x_calib.cols()
        )));
    }
    if x_calib.rows() == 0 {
        return Err(Error::InvalidArgument("empty calibration activations".into()));
    }
    let col_max = |t: &Tensor2D, j: usize| (0..t.rows()).fold(0.0_f64, |m, i| m.max(t.get(i, j).abs()));
    let delta = (0..w.cols())
        .map(|j| {
            let (wm, xm) = (col_max(w, j), col_max(x_calib, j));
            let d = (wm / xm).sqrt();
            if wm > 0.0 && xm > 0.0 && d.is_finite() && d > 0.0 {
                d
            } else {
                1.0
            }
        })
        .collect();
    ChannelScaling::new(delta)
}
