//! End-to-end pipeline: pretraining, calibration, quantization, fine-tuning
//! and evaluation of the ablation variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::info;

use crate::error::{Error, Result};
use crate::mpq_search::{default_groups, search_allocation, SearchConfig};
use crate::numkit::rng::streams;
use crate::numkit::{SeedStream, Tensor2D};
use crate::oolri::{init_adapter, quant_residual};
use crate::quantizer::{
    compute_prescale, dequantized_weight, fit_uniform, ActQuant, Adapter, ChannelQuantizer, LayerQuantState,
};
use crate::toydiff::model::DATA_DIM;
use crate::toydiff::{
    collect_calibration, ddim_sample_from, energy_distance, finetune, pretrain_fp, temporal_similarity_map,
    Calibration, DdimConfig, Denoiser, PretrainConfig, QuantizedModel, ToyDiffusionModel, TrainConfig, TrainState,
    FIRST_LAYER_BITS,
};

use super::config::PipelineConfig;

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Fp,
    PtqOnly,
    FzRmq,
    Mtrd,
    Oolri,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Fp, Variant::PtqOnly, Variant::FzRmq, Variant::Mtrd, Variant::Oolri, Variant::Full];

    /// Config spelling.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fp => "fp",
            Variant::PtqOnly => "ptq",
            Variant::FzRmq => "fzrmq",
            Variant::Mtrd => "mtrd",
            Variant::Oolri => "oolri",
            Variant::Full => "full",
        }
    }

    /// Report spelling.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Fp => "FP",
            Variant::PtqOnly => "PTQ-only",
            Variant::FzRmq => "+FZRMQ",
            Variant::Mtrd => "+MTRD",
            Variant::Oolri => "+OOLRI",
            Variant::Full => "full",
        }
    }

    pub fn uses_search(self) -> bool {
        !matches!(self, Variant::Fp | Variant::PtqOnly)
    }

    pub fn uses_oolri(self) -> bool {
        matches!(self, Variant::Oolri | Variant::Full)
    }

    /// Distillation weight of the fine-tuning stage, if there is one.
    pub fn finetune_alpha(self, alpha: f64) -> Option<f64> {
        match self {
            Variant::Mtrd | Variant::Full => Some(alpha),
            Variant::Oolri => Some(0.0),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Per-layer summary of the weight quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    /// Index in the model (the first quantized layer is 1).
    pub layer: usize,
    pub channels: usize,
    pub total_bits: u64,
    /// `C · n`.
    pub budget: u64,
    pub objective: f64,
    pub baseline: f64,
    pub histogram: BTreeMap<u8, usize>,
    pub residual_before: f64,
    pub residual_after: f64,
}

pub fn pretrain_config(cfg: &PipelineConfig) -> PretrainConfig {
    PretrainConfig {
        dataset: cfg.dataset,
        iterations: cfg.pretrain_iterations,
        batch: cfg.pretrain_batch,
        lr: cfg.pretrain_lr,
        beta_start: cfg.beta_start,
        beta_end: cfg.beta_end,
        timesteps: cfg.timesteps,
    }
}

pub fn train_config(cfg: &PipelineConfig, alpha: f64) -> TrainConfig {
    TrainConfig {
        dataset: cfg.dataset,
        iterations: cfg.iterations,
        batch: cfg.batch,
        alpha,
        tau: cfg.tau,
        metric: cfg.loss_metric,
        n_push: cfg.n_push,
        capacity: cfg.queue_len,
        k: cfg.ref_k,
        lr_adapter: cfg.lr_adapter,
        lr_step: cfg.lr_step,
        momentum: cfg.momentum,
    }
}

pub fn pretrain(cfg: &PipelineConfig) -> Result<ToyDiffusionModel> {
    let mut rng = SeedStream::new(cfg.seed).fork(streams::PRETRAIN);
    let (model, history) = pretrain_fp(&pretrain_config(cfg), &mut rng)?;
    info!(
        "pretrained {} for {} iterations, final loss {:.4}",
        cfg.dataset,
        history.len(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}

pub fn calibrate(teacher: &ToyDiffusionModel, cfg: &PipelineConfig) -> Result<Calibration> {
    let mut rng = SeedStream::new(cfg.seed).fork(streams::CALIBRATION);
    collect_calibration(teacher, cfg.dataset, cfg.calib_batches, cfg.calib_batch, &mut rng)
}

/// Quantizes every layer after the first. With `search` the channel bit
/// allocation comes from the residual mixed-precision search, otherwise all
/// channels get a plain `n`-bit quantizer. With `oolri` the adapters start
/// from the quantization residual's truncated SVD, otherwise `L1` is
/// Kaiming-normal and `L2` zero.
pub fn quantize_model(
    teacher: &ToyDiffusionModel,
    calib: &Calibration,
    cfg: &PipelineConfig,
    search: bool,
    oolri: bool,
) -> Result<(QuantizedModel, Vec<LayerReport>)> {
    let mut init_rng = SeedStream::new(cfg.seed).fork(streams::ADAPTER_INIT);
    let w0 = &teacher.layers[0].w;
    let first_layer = (0..w0.cols())
        .map(|j| fit_uniform(&w0.column(j), FIRST_LAYER_BITS))
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.weight_bits;
    let mut layers = Vec::with_capacity(teacher.layers.len() - 1);
    let mut reports = Vec::with_capacity(teacher.layers.len() - 1);
    for li in 1..teacher.layers.len() {
        let w = &teacher.layers[li].w;
        let (out, inp) = w.shape();
        // The output projection is narrower than the configured rank.
        let rank = cfg.rank.min(out.min(inp));
        let x = calib.stacked(li)?;
        let groups = if cfg.groups == 0 { default_groups(inp) } else { cfg.groups.min(inp) };
        let (scaling, specs, bits, objective, baseline) = if search {
            let sc = SearchConfig { base_bits: n, groups, surplus: cfg.surplus_2bit, act_bits: cfg.act_bits };
            let res = search_allocation(w, &x, &sc)?;
            (res.scaling, res.specs, res.bits, res.objective, res.baseline)
        } else {
            let scaling = compute_prescale(w, &x)?;
            let w_hat = scaling.scale_weights(w)?;
            let specs = (0..inp)
                .map(|j| Ok(ChannelQuantizer::Uniform(fit_uniform(&w_hat.column(j), n)?)))
                .collect::<Result<Vec<_>>>()?;
            (scaling, specs, vec![n; inp], f64::NAN, f64::NAN)
        };
        let act_quant = calib
            .layer(li)
            .iter()
            .map(|xt| {
                let xh = scaling.scale_activations(xt)?;
                Ok(ActQuant::from_quantizer(&fit_uniform(xh.data(), cfg.act_bits)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut state = LayerQuantState {
            scaling,
            base_bits: n,
            bit_alloc: bits,
            specs,
            adapter: Adapter::zeros(out, inp, rank),
            act_bits: cfg.act_bits,
            act_quant,
        };
        let e = quant_residual(w, &state)?;
        let residual_before = e.frobenius_norm();
        state.adapter = if oolri {
            init_adapter(&e, rank)?.adapter()
        } else {
            let std = (2.0 / rank as f64).sqrt();
            Adapter::new(init_rng.normal_tensor(out, rank).scale(std), Tensor2D::zeros(rank, inp))?
        };
        let w_hat = state.scaling.scale_weights(w)?;
        let residual_after = w_hat.sub(&dequantized_weight(&state, w)?)?.frobenius_norm();
        let mut histogram = BTreeMap::new();
        for b in &state.bit_alloc {
            *histogram.entry(*b).or_insert(0) += 1;
        }
        reports.push(LayerReport {
            layer: li,
            channels: inp,
            total_bits: state.bit_alloc.iter().map(|b| u64::from(*b)).sum(),
            budget: inp as u64 * u64::from(n),
            objective,
            baseline,
            histogram,
            residual_before,
            residual_after,
        });
        layers.push(state);
    }
    Ok((QuantizedModel::new(teacher.clone(), first_layer, layers)?, reports))
}

/// Fine-tunes with distillation weight `alpha`.
pub fn finetune_model(model: QuantizedModel, cfg: &PipelineConfig, alpha: f64) -> Result<TrainState> {
    finetune(model, &train_config(cfg, alpha), &SeedStream::new(cfg.seed))
}

/// Either the teacher itself or a quantized student.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantModel {
    Fp(ToyDiffusionModel),
    Quantized(QuantizedModel),
}

impl VariantModel {
    pub fn denoiser(&self) -> &dyn Denoiser {
        match self {
            VariantModel::Fp(m) => m,
            VariantModel::Quantized(m) => m,
        }
    }

    /// Mean squared weight error over the quantized layers, measured in the
    /// pre-scaled domain; zero for the teacher.
    pub fn weight_mse(&self) -> Result<f64> {
        let VariantModel::Quantized(q) = self else {
            return Ok(0.0);
        };
        let mut total = 0.0;
        for (state, layer) in q.layers.iter().zip(&q.teacher.layers[1..]) {
            let w_hat = state.scaling.scale_weights(&layer.w)?;
            let err = w_hat.sub(&dequantized_weight(state, &layer.w)?)?;
            total += err.sum_squares() / err.data().len() as f64;
        }
        Ok(total / q.layers.len() as f64)
    }
}

/// Builds one ablation variant from a shared teacher and calibration set.
pub fn build_variant(
    teacher: &ToyDiffusionModel,
    calib: &Calibration,
    cfg: &PipelineConfig,
    variant: Variant,
) -> Result<VariantModel> {
    if variant == Variant::Fp {
        return Ok(VariantModel::Fp(teacher.clone()));
    }
    let (model, _) = quantize_model(teacher, calib, cfg, variant.uses_search(), variant.uses_oolri())?;
    Ok(VariantModel::Quantized(match variant.finetune_alpha(cfg.alpha) {
        Some(alpha) => finetune_model(model, cfg, alpha)?.model,
        None => model,
    }))
}

/// Sample quality and temporal structure of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Energy distance per replicate.
    pub energies: Vec<f64>,
    /// Cosine-similarity map of the first replicate's trajectory features.
    pub temporal_map: Tensor2D,
}

impl Evaluation {
    pub fn median_energy(&self) -> f64 {
        median(&self.energies)
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Samples `eval_replicates` batches from shared starting noise (identical
/// for every model under the same seed) and scores them against fresh data.
pub fn evaluate(model: &dyn Denoiser, cfg: &PipelineConfig) -> Result<Evaluation> {
    let seeds = SeedStream::new(cfg.seed);
    let mut noise_rng = seeds.fork(streams::SAMPLING);
    let mut data_rng = seeds.fork(streams::EVAL_DATA);
    let ddim = DdimConfig { steps: cfg.sample_steps, eta: cfg.eta };
    let mut energies = Vec::with_capacity(cfg.eval_replicates);
    let mut temporal_map = None;
    for _ in 0..cfg.eval_replicates {
        let x_t = noise_rng.normal_tensor(cfg.eval_samples, DATA_DIM);
        let mut step_rng = noise_rng.split();
        let traj = ddim_sample_from(model, x_t, &ddim, &mut step_rng)?;
        let data = cfg.dataset.sample(cfg.eval_samples, &mut data_rng);
        energies.push(energy_distance(traj.samples(), &data)?);
        if temporal_map.is_none() {
            temporal_map = Some(temporal_similarity_map(&traj.features)?);
        }
    }
    Ok(Evaluation { energies, temporal_map: temporal_map.expect("at least one replicate") })
}
