//! Quantization-aware fine-tuning of adapters, step sizes and per-timestep
//! activation steps against a frozen full-precision teacher.

use log::{debug, info};

use crate::error::{Error, Result};
use crate::mtrd::{mtrd_loss_gradient, total_loss, LossMetric, TemporalMemory};
use crate::numkit::rng::streams;
use crate::numkit::{SeedStream, Tensor2D};

use super::data::Dataset;
use super::model::{FpTrace, DATA_DIM};
use super::quantized::{LayerGrads, QuantAnchors, QuantTrace, QuantizedModel};

const STEP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub dataset: Dataset,
    pub iterations: usize,
    pub batch: usize,
    pub alpha: f64,
    pub tau: f64,
    pub metric: LossMetric,
    pub n_push: usize,
    pub capacity: usize,
    pub k: usize,
    pub lr_adapter: f64,
    pub lr_step: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::TwoMoons,
            iterations: 2000,
            batch: 16,
            alpha: 1.0,
            tau: 1.0,
            metric: LossMetric::Kl,
            n_push: 8,
            capacity: 512,
            k: 32,
            lr_adapter: 1e-3,
            lr_step: 1e-4,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub align: f64,
    pub mtrd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLine {
    pub iter: usize,
    pub t: usize,
    pub align: f64,
    pub mtrd: f64,
    pub total: f64,
    pub fill: f64,
}

impl LogLine {
    pub const HEADER: &'static str = "iter\tt\tL_align\tL_MTRD\ttotal\tqueue_fill";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.4}",
            self.iter, self.t, self.align, self.mtrd, self.total, self.fill
        )
    }
}

/// One training example: noisy inputs at timestep `t` and the teacher's pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub x: Tensor2D,
    pub t: usize,
    pub teacher: FpTrace,
}

impl StepBatch {
    pub fn new(model: &QuantizedModel, x: Tensor2D, t: usize) -> Result<Self> {
        let teacher = model.teacher.forward_trace(&x, t)?;
        Ok(Self { x, t, teacher })
    }
}

/// `Σ_ℓ mean((y_ℓ^Q − y_ℓ^FP)²) + α · L_MTRD` and its gradients.
///
/// `f_ref = None` skips the distillation term.
pub fn loss_and_grads(
    model: &QuantizedModel,
    batch: &StepBatch,
    f_ref: Option<&Tensor2D>,
    cfg: &TrainConfig,
    anchors: Option<&QuantAnchors>,
) -> Result<(LossParts, Vec<LayerGrads>, QuantTrace)> {
    let trace = model.forward_trace(&batch.x, batch.t, anchors)?;
    let mut align = 0.0;
    let mut d_outputs = Vec::with_capacity(trace.layers.len());
    for (li, lt) in trace.layers.iter().enumerate() {
        let diff = lt.output.sub(&batch.teacher.outputs[li + 1])?;
        let count = diff.data().len() as f64;
        align += diff.sum_squares() / count;
        d_outputs.push(diff.scale(2.0 / count));
    }
    let (mtrd, d_features) = match f_ref {
        Some(f) if cfg.alpha > 0.0 => {
            let (l, g) = mtrd_loss_gradient(f, batch.teacher.features(), trace.features(), cfg.tau, cfg.metric)?;
            (l, Some(g.scale(cfg.alpha)))
        }
        _ => (0.0, None),
    };
    let total = total_loss(align, mtrd, cfg.alpha)?;
    let grads = model.backward(&trace, &d_outputs, d_features.as_ref())?;
    Ok((LossParts { align, mtrd, total }, grads, trace))
}

#[derive(Debug, Clone, PartialEq)]
struct LayerVelocity {
    l1: Tensor2D,
    l2: Tensor2D,
    steps: Vec<f64>,
    deltas: Vec<[f64; 2]>,
    act: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: QuantizedModel,
    pub memory: TemporalMemory,
    velocity: Vec<LayerVelocity>,
    pub iteration: usize,
    pub log: Vec<LogLine>,
}

impl TrainState {
    pub fn new(model: QuantizedModel, cfg: &TrainConfig) -> Result<Self> {
        let memory = TemporalMemory::new(model.teacher.timesteps(), cfg.capacity, model.teacher.feature_dim())?;
        let velocity = model
            .layers
            .iter()
            .map(|s| LayerVelocity {
                l1: Tensor2D::zeros(s.adapter.l1.rows(), s.adapter.l1.cols()),
                l2: Tensor2D::zeros(s.adapter.l2.rows(), s.adapter.l2.cols()),
                steps: vec![0.0; s.specs.len()],
                deltas: vec![[0.0; 2]; s.specs.len()],
                act: vec![0.0; s.act_quant.len()],
            })
            .collect();
        Ok(Self { model, memory, velocity, iteration: 0, log: vec![] })
    }

    /// Momentum update of every trainable parameter at timestep `t`.
    pub fn apply(&mut self, grads: &[LayerGrads], t: usize, cfg: &TrainConfig) -> Result<()> {
        let mu = cfg.momentum;
        for ((state, v), g) in self.model.layers.iter_mut().zip(&mut self.velocity).zip(grads) {
            for (p, (vel, gr)) in [(&mut state.adapter.l1, (&mut v.l1, &g.l1)), (&mut state.adapter.l2, (&mut v.l2, &g.l2))] {
                for ((pi, vi), gi) in p.data_mut().iter_mut().zip(vel.data_mut()).zip(gr.data()) {
                    *vi = mu * *vi + gi;
                    *pi -= cfg.lr_adapter * *vi;
                }
            }
            for (j, spec) in state.specs.iter_mut().enumerate() {
                v.steps[j] = mu * v.steps[j] + g.steps[j];
                let step = (spec.base().step() - cfg.lr_step * v.steps[j]).max(STEP_FLOOR);
                let mut deltas = spec.deltas();
                for (k, d) in deltas.iter_mut().enumerate() {
                    v.deltas[j][k] = mu * v.deltas[j][k] + g.deltas[j][k];
                    *d = (*d - cfg.lr_step * v.deltas[j][k]).max(STEP_FLOOR);
                }
                *spec = spec.with_params(step, &deltas)?;
            }
            let a = &mut state.act_quant[t - 1];
            v.act[t - 1] = mu * v.act[t - 1] + g.act_step;
            a.step = (a.step - cfg.lr_step * v.act[t - 1]).max(STEP_FLOOR);
        }
        Ok(())
    }
}

fn check_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.batch == 0 || cfg.n_push == 0 || cfg.n_push > cfg.batch || cfg.k == 0 || cfg.capacity == 0 {
        return Err(Error::Config(format!(
            "need 0 < n_push ≤ batch and k, L > 0 (batch {}, n_push {}, k {}, L {})",
            cfg.batch, cfg.n_push, cfg.k, cfg.capacity
        )));
    }
    if !(cfg.tau > 0.0) || !(cfg.alpha >= 0.0) || cfg.lr_adapter < 0.0 || cfg.lr_step < 0.0 {
        return Err(Error::Config("tau must be > 0; alpha and learning rates ≥ 0".into()));
    }
    Ok(())
}

/// Runs `cfg.iterations` steps. Each step samples a timestep and a data batch,
/// pushes teacher features into the memory, and updates the student.
pub fn finetune(model: QuantizedModel, cfg: &TrainConfig, seeds: &SeedStream) -> Result<TrainState> {
    check_config(cfg)?;
    let mut rng = seeds.fork(streams::FINETUNE);
    let mut mem_rng = seeds.fork(streams::MEMORY);
    let mut state = TrainState::new(model, cfg)?;
    let steps = state.model.teacher.timesteps();
    for it in 0..cfg.iterations {
        let t = 1 + rng.below(steps);
        let x0 = cfg.dataset.sample(cfg.batch, &mut rng);
        let eps = rng.normal_tensor(cfg.batch, DATA_DIM);
        let xt = state.model.teacher.schedule.diffuse(&x0, &eps, t)?;
        let batch = StepBatch::new(&state.model, xt, t)?;
        state.memory.push_features(t, batch.teacher.features(), cfg.n_push, &mut mem_rng)?;
        let reference = if cfg.alpha > 0.0 && state.memory.is_warm() {
            Some(state.memory.build_reference(cfg.k, &mut mem_rng)?)
        } else {
            None
        };
        let (parts, grads, _) = loss_and_grads(&state.model, &batch, reference.as_ref().map(|r| &r.features), cfg, None)?;
        let grads_finite = grads.iter().all(|g| {
            g.l1.is_finite() && g.l2.is_finite() && g.act_step.is_finite() && g.steps.iter().all(|v| v.is_finite())
        });
        if !parts.total.is_finite() || !grads_finite {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!(
                    "t = {t}, L_align = {}, L_MTRD = {}, memory fill {:.3}",
                    parts.align,
                    parts.mtrd,
                    state.memory.fill_fraction()
                ),
            });
        }
        state.apply(&grads, t, cfg)?;
        state.iteration = it + 1;
        state.log.push(LogLine {
            iter: it,
            t,
            align: parts.align,
            mtrd: parts.mtrd,
            total: parts.total,
            fill: state.memory.fill_fraction(),
        });
        if (it + 1) % 500 == 0 {
            for (ti, s) in state.memory.stats().iter().enumerate() {
                debug!("memory t={} len={} mean={:.4} std={:.4}", ti + 1, s.len, s.mean, s.std);
            }
            info!("finetune iter {} total {:.5}", it + 1, parts.total);
        }
    }
    Ok(state)
}
