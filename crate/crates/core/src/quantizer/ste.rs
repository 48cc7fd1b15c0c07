//! Straight-through fake quantization with parameter derivatives.
//!
//! Rounding passes gradients through unchanged inside the clip range and
//! blocks them outside. Passing an anchor replaces `round(u)` by
//! `k₀ + (u − u₀)` (and freezes residual signs), which makes the forward map
//! smooth with derivatives equal to the straight-through ones. Finite
//! difference checks run against that anchored map.

use super::layer::ChannelQuantizer;
use super::residual::{sign, OptMode};

/// Rounding decision of one scalar: the integer `k` chosen for `u = x / s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundAnchor {
    pub k: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FakeQuant {
    pub value: f64,
    pub d_x: f64,
    pub d_step: f64,
    pub anchor: RoundAnchor,
}

/// Uniform fake quantization `s · (clip(k + z, 0, qmax) − z)`.
#[inline]
pub fn fake_quant(x: f64, step: f64, zero_point: i64, qmax: i64, anchor: Option<RoundAnchor>) -> FakeQuant {
    let u = x / step;
    let k = match anchor {
        Some(a) => a.k + (u - a.u),
        None => u.round(),
    };
    let z = zero_point as f64;
    let anchor = anchor.unwrap_or(RoundAnchor { k, u });
    // The clip region follows the (anchored) integer code.
    let c = anchor.k + z;
    if c < 0.0 {
        FakeQuant { value: step * (0.0 - z), d_x: 0.0, d_step: -z, anchor }
    } else if c > qmax as f64 {
        let top = qmax as f64 - z;
        FakeQuant { value: step * top, d_x: 0.0, d_step: top, anchor }
    } else {
        FakeQuant { value: step * k, d_x: 1.0, d_step: k - u, anchor }
    }
}

/// Anchor for a channel quantizer: base rounding plus residual signs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelAnchor {
    pub base: RoundAnchor,
    pub signs: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelFakeQuant {
    pub value: f64,
    pub d_x: f64,
    /// Derivative with respect to the base step (joint-mode residual steps
    /// move with it).
    pub d_step: f64,
    /// Derivatives with respect to free residual steps (separate mode only).
    pub d_delta: [f64; 2],
    pub anchor: ChannelAnchor,
}

pub fn fake_quant_channel(spec: &ChannelQuantizer, x: f64, anchor: Option<ChannelAnchor>) -> ChannelFakeQuant {
    let base = spec.base();
    // base(x − o) + o with o = c·s
    let c = spec.offset_per_step();
    let o = c * base.step();
    let b = fake_quant(x - o, base.step(), base.zero_point(), base.qmax(), anchor.map(|a| a.base));
    let mut out = ChannelFakeQuant {
        value: b.value + o,
        d_x: b.d_x,
        d_step: b.d_step + c * (1.0 - b.d_x),
        d_delta: [0.0; 2],
        anchor: ChannelAnchor { base: b.anchor, signs: [1.0; 2] },
    };
    if let ChannelQuantizer::Residual { q, tiers } = spec {
        let deltas = spec.deltas();
        let joint = q.mode() == OptMode::Joint;
        let shift = [0.25, 0.125];
        for k in 0..*tiers as usize {
            let sg = match anchor {
                Some(a) => a.signs[k],
                None => sign(x - out.value),
            };
            out.anchor.signs[k] = sg;
            out.value += deltas[k] * sg;
            if joint {
                out.d_step += shift[k] * sg;
            } else {
                out.d_delta[k] = sg;
            }
        }
    }
    out
}
