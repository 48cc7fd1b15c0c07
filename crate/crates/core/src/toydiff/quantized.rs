//! Quantized student: frozen teacher weights, per-layer quantization state,
//! straight-through forward and backward passes.

use crate::error::{Error, Result};
use crate::numkit::{matmul, matmul_nt, matmul_tn, Tensor2D};
use crate::quantizer::{
    fake_quant, fake_quant_channel, ChannelAnchor, ChannelFakeQuant, FakeQuant, LayerQuantState, RoundAnchor,
    UniformQuantizer,
};

use super::model::{add_bias, network_input, silu, silu_grad, Denoiser, Prediction, ToyDiffusionModel};
use super::schedule::NoiseSchedule;

/// Bits of the protected input projection.
pub const FIRST_LAYER_BITS: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub teacher: ToyDiffusionModel,
    /// Per-input-channel quantizers of the first layer's weight.
    pub first_layer: Vec<UniformQuantizer>,
    /// States of layers `1..`, in order.
    pub layers: Vec<LayerQuantState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayerTrace {
    /// Layer input before pre-scaling.
    pub input: Tensor2D,
    pub xq: Tensor2D,
    pub act: Vec<FakeQuant>,
    pub wq: Tensor2D,
    pub weights: Vec<ChannelFakeQuant>,
    /// Pre-activation output.
    pub output: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTrace {
    pub t: usize,
    pub first_output: Tensor2D,
    pub layers: Vec<QuantLayerTrace>,
}

impl QuantTrace {
    pub fn eps(&self) -> &Tensor2D {
        &self.layers.last().expect("quantized layers").output
    }

    pub fn features(&self) -> &Tensor2D {
        &self.layers.last().expect("quantized layers").input
    }

    /// Rounding decisions to replay in an anchored pass.
    pub fn anchors(&self) -> QuantAnchors {
        QuantAnchors {
            weights: self.layers.iter().map(|l| l.weights.iter().map(|w| w.anchor).collect()).collect(),
            acts: self.layers.iter().map(|l| l.act.iter().map(|a| a.anchor).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantAnchors {
    pub weights: Vec<Vec<ChannelAnchor>>,
    pub acts: Vec<Vec<RoundAnchor>>,
}

/// Gradients of one quantized layer's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub l1: Tensor2D,
    pub l2: Tensor2D,
    /// Per-channel base step.
    pub steps: Vec<f64>,
    /// Per-channel free residual steps (zero unless separate mode).
    pub deltas: Vec<[f64; 2]>,
    /// Activation step of the traced timestep.
    pub act_step: f64,
}

impl QuantizedModel {
    pub fn new(teacher: ToyDiffusionModel, first_layer: Vec<UniformQuantizer>, layers: Vec<LayerQuantState>) -> Result<Self> {
        if layers.len() + 1 != teacher.layers.len() || first_layer.len() != teacher.layers[0].w.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} quantized layers and {} first-layer quantizers for a {}-layer model",
                layers.len(),
                first_layer.len(),
                teacher.layers.len()
            )));
        }
        for (state, layer) in layers.iter().zip(&teacher.layers[1..]) {
            state.validate(layer.w.rows())?;
            if state.act_quant.len() != teacher.timesteps() {
                return Err(Error::DimensionMismatch(format!(
                    "{} activation quantizers for {} timesteps",
                    state.act_quant.len(),
                    teacher.timesteps()
                )));
            }
        }
        Ok(Self { teacher, first_layer, layers })
    }

    pub fn first_weight(&self) -> Tensor2D {
        let w = &self.teacher.layers[0].w;
        Tensor2D::from_fn(w.rows(), w.cols(), |i, j| self.first_layer[j].quantize(w.get(i, j)))
    }

    pub fn forward_trace(&self, x: &Tensor2D, t: usize, anchors: Option<&QuantAnchors>) -> Result<QuantTrace> {
        if t == 0 || t > self.teacher.timesteps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside [1, {}]", self.teacher.timesteps())));
        }
        let first = &self.teacher.layers[0];
        let first_output = add_bias(matmul_nt(&network_input(x, t)?, &self.first_weight())?, &first.b)?;
        let mut a = first_output.map(silu);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, state) in self.layers.iter().enumerate() {
            let fp = &self.teacher.layers[li + 1];
            let tr = layer_forward(
                state,
                &fp.w,
                &fp.b,
                a,
                t,
                anchors.map(|an| an.weights[li].as_slice()),
                anchors.map(|an| an.acts[li].as_slice()),
            )?;
            a = tr.output.map(silu);
            layers.push(tr);
        }
        Ok(QuantTrace { t, first_output, layers })
    }

    /// Backpropagates `d_outputs[ℓ] = ∂L/∂y_ℓ` (one per quantized layer) and
    /// `∂L/∂features` through the straight-through pass.
    pub fn backward(
        &self,
        trace: &QuantTrace,
        d_outputs: &[Tensor2D],
        d_features: Option<&Tensor2D>,
    ) -> Result<Vec<LayerGrads>> {
        let n = self.layers.len();
        if d_outputs.len() != n {
            return Err(Error::DimensionMismatch(format!("{} output gradients for {n} layers", d_outputs.len())));
        }
        let mut grads = Vec::with_capacity(n);
        let mut carried: Option<Tensor2D> = None;
        for li in (0..n).rev() {
            let state = &self.layers[li];
            let tr = &trace.layers[li];
            let dy = match carried.take() {
                Some(c) => c.add(&d_outputs[li])?,
                None => d_outputs[li].clone(),
            };
            let (rows, cols) = tr.wq.shape();
            let dwq = matmul_tn(&dy, &tr.xq)?;
            let mut dweff = Tensor2D::zeros(rows, cols);
            let mut steps = vec![0.0; cols];
            let mut deltas = vec![[0.0; 2]; cols];
            for i in 0..rows {
                for j in 0..cols {
                    let g = dwq.get(i, j);
                    let fq = &tr.weights[i * cols + j];
                    dweff.set(i, j, g * fq.d_x);
                    steps[j] += g * fq.d_step;
                    deltas[j][0] += g * fq.d_delta[0];
                    deltas[j][1] += g * fq.d_delta[1];
                }
            }
            let l1 = matmul_nt(&dweff, &state.adapter.l2)?;
            let l2 = matmul_tn(&state.adapter.l1, &dweff)?;

            let dxq = matmul(&dy, &tr.wq)?;
            let delta = state.scaling.delta();
            let mut act_step = 0.0;
            let mut da = Tensor2D::zeros(dxq.rows(), dxq.cols());
            for r in 0..dxq.rows() {
                for c in 0..dxq.cols() {
                    let g = dxq.get(r, c);
                    let fq = &tr.act[r * dxq.cols() + c];
                    act_step += g * fq.d_step;
                    da.set(r, c, g * fq.d_x * delta[c]);
                }
            }
            if li == n - 1 {
                if let Some(df) = d_features {
                    da = da.add(df)?;
                }
            }
            grads.push(LayerGrads { l1, l2, steps, deltas, act_step });
            if li > 0 {
                let prev = &trace.layers[li - 1].output;
                carried = Some(Tensor2D::from_fn(da.rows(), da.cols(), |r, c| da.get(r, c) * silu_grad(prev.get(r, c))));
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

fn layer_forward(
    state: &LayerQuantState,
    w: &Tensor2D,
    b: &[f64],
    input: Tensor2D,
    t: usize,
    w_anchor: Option<&[ChannelAnchor]>,
    a_anchor: Option<&[RoundAnchor]>,
) -> Result<QuantLayerTrace> {
    let xhat = state.scaling.scale_activations(&input)?;
    let aq = state.act_quant[t - 1];
    let qmax = (1i64 << state.act_bits) - 1;
    if let Some(an) = a_anchor {
        if an.len() != xhat.data().len() {
            return Err(Error::DimensionMismatch("activation anchors from a different batch".into()));
        }
    }
    let act: Vec<FakeQuant> = xhat
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| fake_quant(*v, aq.step, aq.zero_point, qmax, a_anchor.map(|an| an[k])))
        .collect();
    let xq = Tensor2D::from_vec(xhat.rows(), xhat.cols(), act.iter().map(|f| f.value).collect())?;

    let weff = state.effective_weight(w)?;
    let cols = weff.cols();
    let weights: Vec<ChannelFakeQuant> = weff
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| fake_quant_channel(&state.specs[k % cols], *v, w_anchor.map(|an| an[k])))
        .collect();
    let wq = Tensor2D::from_vec(weff.rows(), cols, weights.iter().map(|f| f.value).collect())?;
    let output = add_bias(matmul_nt(&xq, &wq)?, b)?;
    Ok(QuantLayerTrace { input, xq, act, wq, weights, output })
}

impl Denoiser for QuantizedModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.teacher.schedule
    }

    fn predict(&self, x: &Tensor2D, t: usize) -> Result<Prediction> {
        let mut trace = self.forward_trace(x, t, None)?;
        let last = trace.layers.pop().expect("quantized layers");
        Ok(Prediction { eps: last.output, features: last.input })
    }
}
