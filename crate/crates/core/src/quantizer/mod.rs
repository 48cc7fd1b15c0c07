//! Uniform, pre-scaled and residual mixed-precision weight quantization.

pub mod fit;
pub mod layer;
pub mod pack;
pub mod prescale;
pub mod residual;
pub mod ste;
pub mod uniform;

pub use fit::{fit_residual, fit_step_sizes, fit_uniform, residual_sse, uniform_sse};
pub use layer::{dequantized_weight, quantize_columns, ActQuant, Adapter, ChannelQuantizer, LayerQuantState};
pub use pack::{pack_channel, unpack_channel, PackedChannel};
pub use prescale::{compute_prescale, ChannelScaling};
pub use residual::{quantize_residual, sign, OptMode, ResidualQuantizer};
pub use ste::{fake_quant, fake_quant_channel, ChannelAnchor, ChannelFakeQuant, FakeQuant, RoundAnchor};
pub use uniform::{calibrate_uniform, quantize_per_channel, quantize_uniform, Granularity, UniformQuantizer};
