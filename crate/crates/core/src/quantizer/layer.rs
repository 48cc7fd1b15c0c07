use super::prescale::ChannelScaling;
use super::residual::{OptMode, ResidualQuantizer};
use super::uniform::UniformQuantizer;
use crate::error::{Error, Result};
use crate::numkit::{matmul, Tensor2D};

/// Quantizer assigned to one input channel (one weight column).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelQuantizer {
    /// Plain uniform quantizer (the `n − 1` tier, or baselines).
    Uniform(UniformQuantizer),
    /// Shared-base residual quantizer using `tiers` residual tiers.
    Residual { q: ResidualQuantizer, tiers: u8 },
}

impl ChannelQuantizer {
    pub fn residual(q: ResidualQuantizer, tiers: u8) -> Result<Self> {
        if tiers == 0 || tiers > q.max_tiers() {
            return Err(Error::InvalidArgument(format!(
                "channel uses {tiers} tiers, quantizer carries {}",
                q.max_tiers()
            )));
        }
        Ok(Self::Residual { q, tiers })
    }

    /// Stored bits per element.
    pub fn bits(&self) -> u8 {
        match self {
            Self::Uniform(q) => q.bits(),
            Self::Residual { q, tiers } => q.base().bits() + tiers,
        }
    }

    pub fn tiers(&self) -> u8 {
        match self {
            Self::Uniform(_) => 0,
            Self::Residual { tiers, .. } => *tiers,
        }
    }

    pub fn mode(&self) -> Option<OptMode> {
        match self {
            Self::Uniform(_) => None,
            Self::Residual { q, .. } => Some(q.mode()),
        }
    }

    pub fn base(&self) -> &UniformQuantizer {
        match self {
            Self::Uniform(q) => q,
            Self::Residual { q, .. } => q.base(),
        }
    }

    /// `d offset / d step` of the base grid (zero for uniform channels).
    pub fn offset_per_step(&self) -> f64 {
        match self {
            Self::Uniform(_) => 0.0,
            Self::Residual { q, .. } => q.offset_per_step(),
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset_per_step() * self.base().step()
    }

    /// Residual steps in tier order (empty for uniform channels).
    pub fn deltas(&self) -> Vec<f64> {
        match self {
            Self::Uniform(_) => vec![],
            Self::Residual { q, tiers } => {
                let mut d = vec![q.delta_res()];
                if *tiers == 2 {
                    d.push(q.delta_res2().expect("validated tier count"));
                }
                d
            }
        }
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        match self {
            Self::Uniform(q) => q.quantize(x),
            Self::Residual { q, tiers } => q.quantize_scalar(x, *tiers),
        }
    }

    pub fn quantize_slice(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.quantize(*v)).collect()
    }

    /// Copy with new trainable parameters. Joint-mode residual steps follow
    /// the base step; `deltas` is only read in separate mode.
    pub fn with_params(&self, step: f64, deltas: &[f64]) -> Result<Self> {
        match self {
            Self::Uniform(q) => Ok(Self::Uniform(q.rescaled(step)?)),
            Self::Residual { q, tiers } => {
                let q = q.with_base_step(step)?;
                let q = match q.mode() {
                    OptMode::Joint => q,
                    OptMode::Separate => q.with_deltas(deltas[0], deltas.get(1).copied())?,
                };
                Ok(Self::Residual { q, tiers: *tiers })
            }
        }
    }
}

/// Low-rank adapter `ΔW = L1 · L2` with `L1` (out × r) and `L2` (r × in).
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub l1: Tensor2D,
    pub l2: Tensor2D,
}

impl Adapter {
    pub fn zeros(out: usize, inp: usize, rank: usize) -> Self {
        Self { l1: Tensor2D::zeros(out, rank), l2: Tensor2D::zeros(rank, inp) }
    }

    pub fn new(l1: Tensor2D, l2: Tensor2D) -> Result<Self> {
        if l1.cols() != l2.rows() {
            return Err(Error::DimensionMismatch(format!(
                "adapter factors {:?} and {:?}",
                l1.shape(),
                l2.shape()
            )));
        }
        Ok(Self { l1, l2 })
    }

    pub fn rank(&self) -> usize {
        self.l1.cols()
    }

    pub fn delta_w(&self) -> Tensor2D {
        matmul(&self.l1, &self.l2).expect("adapter shapes validated")
    }
}

/// Per-timestep activation quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActQuant {
    pub step: f64,
    pub zero_point: i64,
}

impl ActQuant {
    pub fn quantizer(&self, bits: u8) -> Result<UniformQuantizer> {
        UniformQuantizer::with_step(self.step, self.zero_point, bits)
    }

    pub fn from_quantizer(q: &UniformQuantizer) -> Self {
        Self { step: q.step(), zero_point: q.zero_point() }
    }
}

/// Everything needed to run one linear layer quantized.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuantState {
    pub scaling: ChannelScaling,
    /// Target average weight bits `n`.
    pub base_bits: u8,
    pub bit_alloc: Vec<u8>,
    pub specs: Vec<ChannelQuantizer>,
    pub adapter: Adapter,
    pub act_bits: u8,
    /// Indexed by timestep `t − 1`.
    pub act_quant: Vec<ActQuant>,
}

impl LayerQuantState {
    pub fn channels(&self) -> usize {
        self.specs.len()
    }

    /// `Σ c_i − C · n`.
    pub fn budget_surplus(&self) -> i64 {
        self.bit_alloc.iter().map(|c| *c as i64).sum::<i64>()
            - self.channels() as i64 * self.base_bits as i64
    }

    pub fn validate(&self, out_channels: usize) -> Result<()> {
        let c = self.specs.len();
        if self.scaling.len() != c || self.bit_alloc.len() != c {
            return Err(Error::DimensionMismatch(format!(
                "{c} channel specs, {} scales, {} bit widths",
                self.scaling.len(),
                self.bit_alloc.len()
            )));
        }
        if self.adapter.l1.rows() != out_channels || self.adapter.l2.cols() != c {
            return Err(Error::DimensionMismatch(format!(
                "adapter {:?}·{:?} for a {out_channels}x{c} weight",
                self.adapter.l1.shape(),
                self.adapter.l2.shape()
            )));
        }
        let n = self.base_bits;
        for (i, (bits, spec)) in self.bit_alloc.iter().zip(&self.specs).enumerate() {
            if *bits + 1 < n || *bits > n + 1 {
                return Err(Error::InvalidArgument(format!(
                    "channel {i} has {bits} bits, outside {{n-1, n, n+1}} for n = {n}"
                )));
            }
            if spec.bits() != *bits {
                return Err(Error::InvalidArgument(format!(
                    "channel {i} allocated {bits} bits but its quantizer stores {}",
                    spec.bits()
                )));
            }
        }
        Ok(())
    }

    /// Pre-scaled weight plus adapter, before quantization.
    pub fn effective_weight(&self, w: &Tensor2D) -> Result<Tensor2D> {
        self.scaling.scale_weights(w)?.add(&self.adapter.delta_w())
    }
}

/// Quantizes each column of `w` with its channel quantizer.
pub fn quantize_columns(w: &Tensor2D, specs: &[ChannelQuantizer]) -> Result<Tensor2D> {
    if specs.len() != w.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} channel quantizers for {} columns",
            specs.len(),
            w.cols()
        )));
    }
    Ok(Tensor2D::from_fn(w.rows(), w.cols(), |i, j| specs[j].quantize(w.get(i, j))))
}

/// `Q(W · diag(δ)⁻¹ + L1 · L2)` column by column: the weight a quantized
/// forward pass multiplies with pre-scaled activations.
pub fn dequantized_weight(state: &LayerQuantState, w: &Tensor2D) -> Result<Tensor2D> {
    state.validate(w.rows())?;
    quantize_columns(&state.effective_weight(w)?, &state.specs)
}
