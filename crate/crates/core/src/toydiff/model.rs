use crate::error::{Error, Result};
use crate::numkit::{matmul, matmul_nt, matmul_tn, Rng, Tensor2D};

use super::data::Dataset;
use super::schedule::{timestep_embedding, NoiseSchedule, EMB_DIM};

pub const DATA_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (out × in)
    pub w: Tensor2D,
    pub b: Vec<f64>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn init(inp: usize, out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / inp as f64).sqrt();
        Self { w: rng.normal_tensor(out, inp).scale(std), b: vec![0.0; out] }
    }

    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        add_bias(matmul_nt(x, &self.w)?, &self.b)
    }
}

pub fn add_bias(mut y: Tensor2D, b: &[f64]) -> Result<Tensor2D> {
    if y.cols() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} outputs, {} biases", y.cols(), b.len())));
    }
    for i in 0..y.rows() {
        for (v, bj) in y.row_mut(i).iter_mut().zip(b) {
            *v += bj;
        }
    }
    Ok(y)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Output of one denoiser evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub eps: Tensor2D,
    /// Input of the final layer (the last hidden block's output).
    pub features: Tensor2D,
}

/// Anything that predicts noise from `(x_t, t)`.
pub trait Denoiser {
    fn schedule(&self) -> &NoiseSchedule;
    fn predict(&self, x: &Tensor2D, t: usize) -> Result<Prediction>;
}

/// Small MLP noise predictor over `[x, emb(t)]` with SiLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDiffusionModel {
    pub layers: Vec<Linear>,
    pub schedule: NoiseSchedule,
}

/// Layer inputs and pre-activation outputs of a full-precision pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FpTrace {
    pub inputs: Vec<Tensor2D>,
    pub outputs: Vec<Tensor2D>,
}

impl FpTrace {
    pub fn eps(&self) -> &Tensor2D {
        self.outputs.last().expect("nonempty model")
    }

    pub fn features(&self) -> &Tensor2D {
        self.inputs.last().expect("nonempty model")
    }
}

pub const DEFAULT_HIDDEN: usize = 64;

impl ToyDiffusionModel {
    /// `[in, hidden, …, out]` widths; 3 to 5 linear layers.
    pub fn new(widths: &[usize], schedule: NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        if !(4..=6).contains(&widths.len())
            || widths[0] != DATA_DIM + EMB_DIM
            || *widths.last().unwrap() != DATA_DIM
            || widths.iter().any(|w| *w == 0 || *w > 64)
        {
            return Err(Error::Config(format!("unsupported layer widths {widths:?}")));
        }
        let layers = widths.windows(2).map(|p| Linear::init(p[0], p[1], rng)).collect();
        Ok(Self { layers, schedule })
    }

    /// Model from existing layers; shapes must chain and match the widths
    /// accepted by [`ToyDiffusionModel::new`].
    pub fn from_layers(layers: Vec<Linear>, schedule: NoiseSchedule) -> Result<Self> {
        let mut widths: Vec<usize> = layers.first().map(|l| vec![l.w.cols()]).unwrap_or_default();
        for (i, l) in layers.iter().enumerate() {
            if l.w.cols() != widths[i] || l.b.len() != l.w.rows() {
                return Err(Error::DimensionMismatch(format!("layer {i} has shape {:?}", l.w.shape())));
            }
            widths.push(l.w.rows());
        }
        if !(4..=6).contains(&widths.len())
            || widths[0] != DATA_DIM + EMB_DIM
            || *widths.last().unwrap() != DATA_DIM
            || widths.iter().any(|w| *w > 64)
        {
            return Err(Error::Config(format!("unsupported layer widths {widths:?}")));
        }
        Ok(Self { layers, schedule })
    }

    pub fn default_widths() -> Vec<usize> {
        vec![DATA_DIM + EMB_DIM, DEFAULT_HIDDEN, DEFAULT_HIDDEN, DEFAULT_HIDDEN, DATA_DIM]
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().unwrap().w.cols()
    }

    pub fn timesteps(&self) -> usize {
        self.schedule.steps()
    }

    pub fn forward_trace(&self, x: &Tensor2D, t: usize) -> Result<FpTrace> {
        let mut a = network_input(x, t)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&a)?;
            inputs.push(a);
            a = if i + 1 < self.layers.len() { y.map(silu) } else { y.clone() };
            outputs.push(y);
        }
        Ok(FpTrace { inputs, outputs })
    }

    pub fn forward(&self, x: &Tensor2D, t: usize) -> Result<Tensor2D> {
        Ok(self.forward_trace(x, t)?.outputs.pop().expect("nonempty model"))
    }

    /// Gradients of `mean((ε̂ − ε)²)` for every weight and bias.
    fn gradients(&self, trace: &FpTrace, eps: &Tensor2D) -> Result<Vec<(Tensor2D, Vec<f64>)>> {
        let out = trace.eps();
        let scale = 2.0 / out.data().len() as f64;
        let mut dy = out.sub(eps)?.scale(scale);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let dw = matmul_tn(&dy, &trace.inputs[i])?;
            let db = (0..dy.cols()).map(|j| (0..dy.rows()).map(|r| dy.get(r, j)).sum()).collect();
            grads.push((dw, db));
            if i > 0 {
                let da = matmul(&dy, &self.layers[i].w)?;
                let prev = &trace.outputs[i - 1];
                dy = Tensor2D::from_fn(da.rows(), da.cols(), |r, c| da.get(r, c) * silu_grad(prev.get(r, c)));
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

impl Denoiser for ToyDiffusionModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn predict(&self, x: &Tensor2D, t: usize) -> Result<Prediction> {
        let mut trace = self.forward_trace(x, t)?;
        let eps = trace.outputs.pop().expect("nonempty model");
        let features = trace.inputs.pop().expect("nonempty model");
        Ok(Prediction { eps, features })
    }
}

/// `[x, emb(t)]` for every row of `x`.
pub fn network_input(x: &Tensor2D, t: usize) -> Result<Tensor2D> {
    if x.cols() != DATA_DIM {
        return Err(Error::DimensionMismatch(format!("data has {} columns, expected {DATA_DIM}", x.cols())));
    }
    let e = timestep_embedding(t);
    Ok(Tensor2D::from_fn(x.rows(), DATA_DIM + EMB_DIM, |i, j| if j < DATA_DIM { x.get(i, j) } else { e[j - DATA_DIM] }))
}

/// Adam over a list of flat parameter buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (i, (pi, gi)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub dataset: Dataset,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub timesteps: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::TwoMoons,
            iterations: 3000,
            batch: 128,
            lr: 2e-3,
            beta_start: 1e-4,
            beta_end: 0.2,
            timesteps: 10,
        }
    }
}

/// Trains the full-precision teacher on the noise-prediction loss. Returns
/// the model and the per-iteration loss.
pub fn pretrain_fp(cfg: &PretrainConfig, rng: &mut Rng) -> Result<(ToyDiffusionModel, Vec<f64>)> {
    if cfg.batch == 0 || cfg.iterations == 0 {
        return Err(Error::Config("pretraining needs a positive batch size and iteration count".into()));
    }
    let schedule = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
    let mut model = ToyDiffusionModel::new(&ToyDiffusionModel::default_widths(), schedule, rng)?;
    let sizes: Vec<usize> = model.layers.iter().flat_map(|l| [l.w.data().len(), l.b.len()]).collect();
    let mut opt = Adam::new(cfg.lr, &sizes);
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let x0 = cfg.dataset.sample(cfg.batch, rng);
        let t = 1 + rng.below(cfg.timesteps);
        let eps = rng.normal_tensor(cfg.batch, DATA_DIM);
        let xt = model.schedule.diffuse(&x0, &eps, t)?;
        let trace = model.forward_trace(&xt, t)?;
        let loss = trace.eps().sub(&eps)?.sum_squares() / eps.data().len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, detail: format!("pretraining loss {loss}") });
        }
        history.push(loss);
        let grads = model.gradients(&trace, &eps)?;
        let mut params: Vec<&mut [f64]> =
            model.layers.iter_mut().flat_map(|l| [l.w.data_mut(), l.b.as_mut_slice()]).collect();
        let g: Vec<&[f64]> = grads.iter().flat_map(|(w, b)| [w.data(), b.as_slice()]).collect();
        opt.step(&mut params, &g);
    }
    Ok((model, history))
}
