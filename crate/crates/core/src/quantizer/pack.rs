//! Logical storage layout for one channel: a base code array plus one sign
//! mask per residual tier.

use super::layer::ChannelQuantizer;
use super::residual::sign;
use crate::error::{Error, Result};

/// Fixed-width bit array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitArray {
    words: Vec<u64>,
    len: usize,
}

impl BitArray {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }
}

/// Packed channel: `base_bits`-wide codes and `tiers` sign masks
/// (bit set means `+Δ`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedChannel {
    pub base_bits: u8,
    pub codes: BitArray,
    pub masks: Vec<BitArray>,
    len: usize,
}

impl PackedChannel {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bits actually stored for the payload.
    pub fn stored_bits(&self) -> usize {
        self.codes.len() + self.masks.iter().map(BitArray::len).sum::<usize>()
    }

    fn code(&self, i: usize) -> i64 {
        let w = self.base_bits as usize;
        (0..w).fold(0i64, |c, b| c | ((self.codes.get(i * w + b) as i64) << b))
    }
}

pub fn pack_channel(x: &[f64], spec: &ChannelQuantizer) -> PackedChannel {
    let base = spec.base();
    let w = base.bits() as usize;
    let deltas = spec.deltas();
    let mut codes = BitArray::zeros(x.len() * w);
    let mut masks = vec![BitArray::zeros(x.len()); deltas.len()];
    let o = spec.offset();
    for (i, v) in x.iter().enumerate() {
        let code = base.code(v - o);
        for b in 0..w {
            codes.set(i * w + b, (code >> b) & 1 == 1);
        }
        let mut out = base.dequantize_code(code) + o;
        for (mask, d) in masks.iter_mut().zip(&deltas) {
            let s = sign(v - out);
            mask.set(i, s > 0.0);
            out += d * s;
        }
    }
    PackedChannel { base_bits: base.bits(), codes, masks, len: x.len() }
}

pub fn unpack_channel(p: &PackedChannel, spec: &ChannelQuantizer) -> Result<Vec<f64>> {
    let deltas = spec.deltas();
    if p.base_bits != spec.base().bits() || p.masks.len() != deltas.len() {
        return Err(Error::Format(format!(
            "packed channel has {} base bits and {} tiers, quantizer expects {} and {}",
            p.base_bits,
            p.masks.len(),
            spec.base().bits(),
            deltas.len()
        )));
    }
    let o = spec.offset();
    Ok((0..p.len)
        .map(|i| {
            let mut out = spec.base().dequantize_code(p.code(i)) + o;
            for (mask, d) in p.masks.iter().zip(&deltas) {
                out += if mask.get(i) { *d } else { -*d };
            }
            out
        })
        .collect())
}
