//! `MPQ2` checkpoint container.
//!
//! Layout: magic `MPQ2`, version `u32`, then sections `(tag u32, length u64,
//! payload)`. Integers and floats are little-endian; floats are `f64`.
//! A full-precision checkpoint carries `FP_WEIGHTS` and `SCHEDULE`; a
//! quantized one adds `QUANT_STATE`, `ADAPTERS` and `ACT_QUANT`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::Tensor2D;
use crate::quantizer::{
    ActQuant, Adapter, ChannelQuantizer, ChannelScaling, LayerQuantState, OptMode, ResidualQuantizer,
    UniformQuantizer,
};
use crate::toydiff::{Linear, NoiseSchedule, QuantizedModel, ToyDiffusionModel};

use super::pipeline::VariantModel;

pub const MAGIC: &[u8; 4] = b"MPQ2";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
enum Section {
    FpWeights = 1,
    QuantState = 2,
    Adapters = 3,
    ActQuant = 4,
    Schedule = 5,
}

impl Section {
    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => Section::FpWeights,
            2 => Section::QuantState,
            3 => Section::Adapters,
            4 => Section::ActQuant,
            5 => Section::Schedule,
            _ => return Err(Error::Format(format!("unknown section tag {tag}"))),
        })
    }
}

// ── Byte cursors ────────────────────────────────────────────────────────

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn tensor(&mut self, t: &Tensor2D) {
        t.write_to(&mut self.0).expect("writing to a Vec cannot fail");
    }
}

struct In<'a>(&'a [u8]);

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n > self.0.len() / 8 {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor2D> {
        Tensor2D::read_from(&mut self.0)
    }
    fn finish(&self, what: &str) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes in {what}", self.0.len())))
        }
    }
}

fn format_err(e: Error) -> Error {
    match e {
        Error::Format(_) | Error::Io(_) => e,
        other => Error::Format(other.to_string()),
    }
}

// ── Sections ────────────────────────────────────────────────────────────

fn fp_weights(model: &ToyDiffusionModel) -> Vec<u8> {
    let mut o = Out::default();
    o.u32(model.layers.len());
    for l in &model.layers {
        o.tensor(&l.w);
        o.f64s(&l.b);
    }
    o.0
}

/// SHA-256 of the teacher's `FP_WEIGHTS` payload, lowercase hex.
pub fn teacher_hash(model: &ToyDiffusionModel) -> String {
    Sha256::digest(fp_weights(model)).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_uniform(o: &mut Out, q: &UniformQuantizer) {
    o.u8(q.bits());
    o.f64(q.step());
    o.i64(q.zero_point());
    o.f64(q.lower());
    o.f64(q.upper());
}

fn read_uniform(i: &mut In) -> Result<UniformQuantizer> {
    let bits = i.u8()?;
    let (step, z, lower, upper) = (i.f64()?, i.i64()?, i.f64()?, i.f64()?);
    UniformQuantizer::from_parts(bits, step, z, lower, upper)
}

/// Channel record: mode byte (0 uniform, 1 joint, 2 separate), active tiers,
/// carried tiers, base quantizer, then the carried residual steps.
fn write_channel(o: &mut Out, spec: &ChannelQuantizer) {
    match spec {
        ChannelQuantizer::Uniform(q) => {
            o.u8(0);
            o.u8(0);
            o.u8(0);
            write_uniform(o, q);
        }
        ChannelQuantizer::Residual { q, tiers } => {
            o.u8(q.mode().as_u8());
            o.u8(*tiers);
            o.u8(q.max_tiers());
            write_uniform(o, q.base());
            o.f64(q.delta_res());
            if let Some(d2) = q.delta_res2() {
                o.f64(d2);
            }
            o.u8(q.phase() as u8);
        }
    }
}

fn read_channel(i: &mut In) -> Result<ChannelQuantizer> {
    let (mode, tiers, carried) = (i.u8()?, i.u8()?, i.u8()?);
    let base = read_uniform(i)?;
    if mode == 0 {
        return Ok(ChannelQuantizer::Uniform(base));
    }
    let mode = match mode {
        1 => OptMode::Joint,
        2 => OptMode::Separate,
        m => return Err(Error::Format(format!("unknown channel mode {m}"))),
    };
    if !(1..=2).contains(&carried) {
        return Err(Error::Format(format!("channel carries {carried} residual tiers")));
    }
    let d1 = i.f64()?;
    let d2 = if carried == 2 { Some(i.f64()?) } else { None };
    let phase = i.u8()? as i8;
    ChannelQuantizer::residual(ResidualQuantizer::new(base, mode, d1, d2, phase)?, tiers)
}

fn quant_state(q: &QuantizedModel) -> Vec<u8> {
    let mut o = Out::default();
    o.u32(q.first_layer.len());
    q.first_layer.iter().for_each(|u| write_uniform(&mut o, u));
    o.u32(q.layers.len());
    for s in &q.layers {
        o.f64s(s.scaling.delta());
        o.u8(s.base_bits);
        o.u8(s.act_bits);
        o.u32(s.bit_alloc.len());
        s.bit_alloc.iter().for_each(|b| o.u8(*b));
        s.specs.iter().for_each(|c| write_channel(&mut o, c));
    }
    o.0
}

fn adapters(q: &QuantizedModel) -> Vec<u8> {
    let mut o = Out::default();
    o.u32(q.layers.len());
    for s in &q.layers {
        o.tensor(&s.adapter.l1);
        o.tensor(&s.adapter.l2);
    }
    o.0
}

fn act_quant(q: &QuantizedModel) -> Vec<u8> {
    let mut o = Out::default();
    o.u32(q.layers.len());
    for s in &q.layers {
        o.u32(s.act_quant.len());
        for a in &s.act_quant {
            o.f64(a.step);
            o.i64(a.zero_point);
        }
    }
    o.0
}

fn schedule(model: &ToyDiffusionModel) -> Vec<u8> {
    let mut o = Out::default();
    o.f64s(model.schedule.betas());
    o.0
}

// ── Container ───────────────────────────────────────────────────────────

pub fn encode(model: &VariantModel) -> Vec<u8> {
    let (teacher, quant) = match model {
        VariantModel::Fp(m) => (m, None),
        VariantModel::Quantized(q) => (&q.teacher, Some(q)),
    };
    let mut sections = vec![(Section::FpWeights, fp_weights(teacher)), (Section::Schedule, schedule(teacher))];
    if let Some(q) = quant {
        sections.push((Section::QuantState, quant_state(q)));
        sections.push((Section::Adapters, adapters(q)));
        sections.push((Section::ActQuant, act_quant(q)));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (tag, payload) in sections {
        out.extend_from_slice(&(tag as u32).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<VariantModel> {
    decode_inner(bytes).map_err(format_err)
}

fn decode_inner(bytes: &[u8]) -> Result<VariantModel> {
    let mut i = In(bytes);
    let magic = i.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = i.u32()? as u32;
    if version > VERSION {
        return Err(Error::Format(format!("checkpoint version {version} is newer than supported {VERSION}")));
    }
    let mut found: [Option<&[u8]>; 5] = [None; 5];
    while !i.0.is_empty() {
        let tag = Section::from_tag(i.u32()? as u32)?;
        let len = usize::try_from(i.u64()?).map_err(|_| Error::Format("section too large".into()))?;
        let slot = &mut found[tag as usize - 1];
        if slot.is_some() {
            return Err(Error::Format(format!("duplicate section {tag:?}")));
        }
        *slot = Some(i.take(len)?);
    }
    let need = |s: Section| found[s as usize - 1].ok_or_else(|| Error::Format(format!("missing section {s:?}")));

    let mut r = In(need(Section::Schedule)?);
    let schedule = NoiseSchedule::from_betas(r.f64s()?)?;
    r.finish("SCHEDULE")?;

    let mut r = In(need(Section::FpWeights)?);
    let layers = (0..r.u32()?)
        .map(|_| Ok(Linear { w: r.tensor()?, b: r.f64s()? }))
        .collect::<Result<Vec<_>>>()?;
    r.finish("FP_WEIGHTS")?;
    let teacher = ToyDiffusionModel::from_layers(layers, schedule)?;

    let quant = [Section::QuantState, Section::Adapters, Section::ActQuant].map(|s| found[s as usize - 1]);
    let (qs, ad, aq) = match quant {
        [None, None, None] => return Ok(VariantModel::Fp(teacher)),
        [Some(a), Some(b), Some(c)] => (a, b, c),
        _ => return Err(Error::Format("incomplete quantization sections".into())),
    };

    let mut r = In(qs);
    let first_layer = (0..r.u32()?).map(|_| read_uniform(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut states = Vec::new();
    for _ in 0..r.u32()? {
        let scaling = ChannelScaling::new(r.f64s()?)?;
        let (base_bits, act_bits) = (r.u8()?, r.u8()?);
        let c = r.u32()?;
        let bit_alloc = r.take(c)?.to_vec();
        let specs = (0..c).map(|_| read_channel(&mut r)).collect::<Result<Vec<_>>>()?;
        states.push(LayerQuantState {
            scaling,
            base_bits,
            bit_alloc,
            specs,
            adapter: Adapter::zeros(0, 0, 0),
            act_bits,
            act_quant: vec![],
        });
    }
    r.finish("QUANT_STATE")?;

    let mut r = In(ad);
    if r.u32()? != states.len() {
        return Err(Error::Format("adapter count differs from layer count".into()));
    }
    for s in &mut states {
        s.adapter = Adapter::new(r.tensor()?, r.tensor()?)?;
    }
    r.finish("ADAPTERS")?;

    let mut r = In(aq);
    if r.u32()? != states.len() {
        return Err(Error::Format("activation quantizer count differs from layer count".into()));
    }
    for s in &mut states {
        s.act_quant = (0..r.u32()?)
            .map(|_| Ok(ActQuant { step: r.f64()?, zero_point: r.i64()? }))
            .collect::<Result<Vec<_>>>()?;
    }
    r.finish("ACT_QUANT")?;

    Ok(VariantModel::Quantized(QuantizedModel::new(teacher, first_layer, states)?))
}

pub fn save(path: &Path, model: &VariantModel) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<VariantModel> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
