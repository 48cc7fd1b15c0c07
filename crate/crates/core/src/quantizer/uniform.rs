use crate::error::{Error, Result};
use crate::numkit::Tensor2D;

/// Step used when a calibration range collapses onto zero.
pub const DEGENERATE_STEP: f64 = 1e-8;

/// Affine uniform quantizer
/// `Q(x) = s · (clip(round(x / s) + z, 0, 2^N − 1) − z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantizer {
    bits: u8,
    step: f64,
    zero_point: i64,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    /// One quantizer per column.
    PerChannel,
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidArgument(format!("bit width {bits} outside [1, 16]")));
    }
    Ok(())
}

impl UniformQuantizer {
    /// Quantizer whose grid spans `[lower, upper]`.
    ///
    /// A collapsed range `lower == upper == c` is represented exactly: the
    /// step becomes `|c|` with the zero point picked so that `c` is a level,
    /// or [`DEGENERATE_STEP`] with `z = 0` when `c == 0`.
    pub fn from_range(lower: f64, upper: f64, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if !lower.is_finite() || !upper.is_finite() || lower > upper {
            return Err(Error::InvalidArgument(format!("bad quantization range [{lower}, {upper}]")));
        }
        let qmax = ((1u64 << bits) - 1) as f64;
        let span = upper - lower;
        if span <= f64::EPSILON * lower.abs().max(upper.abs()) || span == 0.0 {
            let c = 0.5 * (lower + upper);
            let (step, zero_point) = if c == 0.0 {
                (DEGENERATE_STEP, 0)
            } else if c > 0.0 {
                (c, 0)
            } else {
                (-c, 1)
            };
            return Ok(Self { bits, step, zero_point, lower, upper });
        }
        let step = span / qmax;
        let zero_point = -(lower / step).round() as i64;
        Ok(Self { bits, step, zero_point, lower, upper })
    }

    /// Quantizer with an explicit step and zero point; the clip bounds are the
    /// extreme grid levels.
    pub fn with_step(step: f64, zero_point: i64, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidArgument(format!("quantizer step {step} must be > 0")));
        }
        let qmax = ((1i64 << bits) - 1) as f64;
        Ok(Self {
            bits,
            step,
            zero_point,
            lower: -(zero_point as f64) * step,
            upper: (qmax - zero_point as f64) * step,
        })
    }

    /// Rebuilds a quantizer from stored fields, keeping the recorded
    /// calibration range.
    pub fn from_parts(bits: u8, step: f64, zero_point: i64, lower: f64, upper: f64) -> Result<Self> {
        let q = Self::with_step(step, zero_point, bits)?;
        if !lower.is_finite() || !upper.is_finite() || lower > upper {
            return Err(Error::InvalidArgument(format!("bad quantization range [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper, ..q })
    }

    /// Grid of `2^bits` levels of spacing `step` centered on the midpoint of
    /// `[lo, hi]`, with the zero point rounded per the affine rule.
    pub fn centered(lo: f64, hi: f64, step: f64, bits: u8) -> Result<Self> {
        let qmax = ((1i64 << bits) - 1) as f64;
        let lower = 0.5 * (lo + hi) - 0.5 * step * qmax;
        let zero_point = -(lower / step).round() as i64;
        Self::with_step(step, zero_point, bits)
    }

    #[inline]
    pub fn bits(&self) -> u8 {
        self.bits
    }

    #[inline]
    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn zero_point(&self) -> i64 {
        self.zero_point
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    #[inline]
    pub fn qmax(&self) -> i64 {
        (1i64 << self.bits) - 1
    }

    /// Replaces the step, keeping bits and zero point.
    pub fn rescaled(&self, step: f64) -> Result<Self> {
        Self::with_step(step, self.zero_point, self.bits)
    }

    /// Clipped integer code in `[0, 2^N − 1]`.
    #[inline]
    pub fn code(&self, x: f64) -> i64 {
        let c = (x / self.step).round() + self.zero_point as f64;
        c.clamp(0.0, self.qmax() as f64) as i64
    }

    #[inline]
    pub fn dequantize_code(&self, code: i64) -> f64 {
        self.step * (code - self.zero_point) as f64
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        self.dequantize_code(self.code(x))
    }

    pub fn quantize_slice(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.quantize(*v)).collect()
    }

    /// Smallest and largest representable values.
    pub fn level_range(&self) -> (f64, f64) {
        (self.dequantize_code(0), self.dequantize_code(self.qmax()))
    }
}

/// Per-tensor quantize-dequantize.
pub fn quantize_uniform(x: &Tensor2D, q: &UniformQuantizer) -> Tensor2D {
    x.map(|v| q.quantize(v))
}

/// Column-wise quantize-dequantize with one quantizer per column.
pub fn quantize_per_channel(x: &Tensor2D, qs: &[UniformQuantizer]) -> Result<Tensor2D> {
    if qs.len() != x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} quantizers for {} channels",
            qs.len(),
            x.cols()
        )));
    }
    Ok(Tensor2D::from_fn(x.rows(), x.cols(), |i, j| qs[j].quantize(x.get(i, j))))
}

/// Min/max calibration. Per-channel granularity yields one quantizer per column.
pub fn calibrate_uniform(
    x: &Tensor2D,
    bits: u8,
    granularity: Granularity,
) -> Result<Vec<UniformQuantizer>> {
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidArgument(format!("calibration bit width {bits} outside [1, 8]")));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::InvalidArgument("cannot calibrate on an empty tensor".into()));
    }
    match granularity {
        Granularity::PerTensor => {
            let (lo, hi) = min_max(x.data());
            Ok(vec![UniformQuantizer::from_range(lo, hi, bits)?])
        }
        Granularity::PerChannel => (0..x.cols())
            .map(|j| {
                let (lo, hi) = min_max(&x.column(j));
                UniformQuantizer::from_range(lo, hi, bits)
            })
            .collect(),
    }
}

pub fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}
