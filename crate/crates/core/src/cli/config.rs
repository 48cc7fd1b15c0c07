//! Flat `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mtrd::LossMetric;
use crate::toydiff::Dataset;

use super::pipeline::Variant;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset: Dataset,
    pub seed: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub pretrain_iterations: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub calib_batches: usize,
    pub calib_batch: usize,
    pub weight_bits: u8,
    pub act_bits: u8,
    /// Channel groups per layer; 0 picks `C/10`.
    pub groups: usize,
    pub surplus_2bit: f64,
    pub rank: usize,
    pub alpha: f64,
    pub tau: f64,
    pub queue_len: usize,
    pub ref_k: usize,
    pub n_push: usize,
    pub iterations: usize,
    pub batch: usize,
    pub loss_metric: LossMetric,
    pub lr_adapter: f64,
    pub lr_step: f64,
    pub momentum: f64,
    pub sample_steps: usize,
    pub eta: f64,
    pub eval_samples: usize,
    pub eval_replicates: usize,
    pub variants: Vec<Variant>,
    pub fp_checkpoint: String,
    pub quant_checkpoint: String,
    pub tuned_checkpoint: String,
    pub train_log: String,
    pub samples_out: String,
    pub report_out: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::TwoMoons,
            seed: 0,
            timesteps: 10,
            beta_start: 1e-4,
            beta_end: 0.2,
            pretrain_iterations: 3000,
            pretrain_batch: 128,
            pretrain_lr: 2e-3,
            calib_batches: 4,
            calib_batch: 64,
            weight_bits: 4,
            act_bits: 8,
            groups: 0,
            surplus_2bit: 0.0,
            rank: 4,
            alpha: 1.0,
            tau: 1.0,
            queue_len: 512,
            ref_k: 32,
            n_push: 8,
            iterations: 2000,
            batch: 16,
            loss_metric: LossMetric::Kl,
            lr_adapter: 1e-3,
            lr_step: 1e-4,
            momentum: 0.9,
            sample_steps: 10,
            eta: 0.0,
            eval_samples: 1000,
            eval_replicates: 3,
            variants: Variant::ALL.to_vec(),
            fp_checkpoint: "fp.mpq2".into(),
            quant_checkpoint: "quant.mpq2".into(),
            tuned_checkpoint: "tuned.mpq2".into(),
            train_log: "train.tsv".into(),
            samples_out: "samples.tsv".into(),
            report_out: "report.tsv".into(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_variants(value: &str) -> Result<Vec<Variant>> {
    value.split(',').map(|v| v.trim().parse()).collect()
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "timesteps" => self.timesteps = parse_value(key, v)?,
            "beta_start" => self.beta_start = parse_value(key, v)?,
            "beta_end" => self.beta_end = parse_value(key, v)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_value(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse_value(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_value(key, v)?,
            "calib_batches" => self.calib_batches = parse_value(key, v)?,
            "calib_batch" => self.calib_batch = parse_value(key, v)?,
            "weight_bits" => self.weight_bits = parse_value(key, v)?,
            "act_bits" => self.act_bits = parse_value(key, v)?,
            "groups" => self.groups = parse_value(key, v)?,
            "surplus_2bit" => self.surplus_2bit = parse_value(key, v)?,
            "rank" => self.rank = parse_value(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "tau" => self.tau = parse_value(key, v)?,
            "queue_len" => self.queue_len = parse_value(key, v)?,
            "ref_k" => self.ref_k = parse_value(key, v)?,
            "n_push" => self.n_push = parse_value(key, v)?,
            "iterations" => self.iterations = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "loss_metric" => {
                self.loss_metric =
                    LossMetric::parse(v).ok_or_else(|| Error::Config(format!("loss_metric: expected kl or mse, got {v:?}")))?
            }
            "lr_adapter" => self.lr_adapter = parse_value(key, v)?,
            "lr_step" => self.lr_step = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "sample_steps" => self.sample_steps = parse_value(key, v)?,
            "eta" => self.eta = parse_value(key, v)?,
            "eval_samples" => self.eval_samples = parse_value(key, v)?,
            "eval_replicates" => self.eval_replicates = parse_value(key, v)?,
            "variants" => self.variants = parse_variants(v)?,
            "fp_checkpoint" => self.fp_checkpoint = v.to_string(),
            "quant_checkpoint" => self.quant_checkpoint = v.to_string(),
            "tuned_checkpoint" => self.tuned_checkpoint = v.to_string(),
            "train_log" => self.train_log = v.to_string(),
            "samples_out" => self.samples_out = v.to_string(),
            "report_out" => self.report_out = v.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn emit(&self) -> String {
        let variants: Vec<&str> = self.variants.iter().map(|v| v.name()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", self.dataset.to_string());
        kv("seed", self.seed.to_string());
        kv("timesteps", self.timesteps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("pretrain_iterations", self.pretrain_iterations.to_string());
        kv("pretrain_batch", self.pretrain_batch.to_string());
        kv("pretrain_lr", self.pretrain_lr.to_string());
        kv("calib_batches", self.calib_batches.to_string());
        kv("calib_batch", self.calib_batch.to_string());
        kv("weight_bits", self.weight_bits.to_string());
        kv("act_bits", self.act_bits.to_string());
        kv("groups", self.groups.to_string());
        kv("surplus_2bit", self.surplus_2bit.to_string());
        kv("rank", self.rank.to_string());
        kv("alpha", self.alpha.to_string());
        kv("tau", self.tau.to_string());
        kv("queue_len", self.queue_len.to_string());
        kv("ref_k", self.ref_k.to_string());
        kv("n_push", self.n_push.to_string());
        kv("iterations", self.iterations.to_string());
        kv("batch", self.batch.to_string());
        kv("loss_metric", self.loss_metric.name().to_string());
        kv("lr_adapter", self.lr_adapter.to_string());
        kv("lr_step", self.lr_step.to_string());
        kv("momentum", self.momentum.to_string());
        kv("sample_steps", self.sample_steps.to_string());
        kv("eta", self.eta.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("eval_replicates", self.eval_replicates.to_string());
        kv("variants", variants.join(","));
        kv("fp_checkpoint", self.fp_checkpoint.clone());
        kv("quant_checkpoint", self.quant_checkpoint.clone());
        kv("tuned_checkpoint", self.tuned_checkpoint.clone());
        kv("train_log", self.train_log.clone());
        kv("samples_out", self.samples_out.clone());
        kv("report_out", self.report_out.clone());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.timesteps == 0 {
            return fail("timesteps must be positive".into());
        }
        if !(0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return fail(format!("need 0 < beta_start ≤ beta_end < 1, got {} and {}", self.beta_start, self.beta_end));
        }
        if self.pretrain_iterations == 0 || self.pretrain_batch == 0 || !(self.pretrain_lr > 0.0) {
            return fail("pretraining needs positive iterations, batch and learning rate".into());
        }
        if self.calib_batches == 0 || self.calib_batch == 0 {
            return fail("calibration needs at least one non-empty batch".into());
        }
        if !(2..=8).contains(&self.weight_bits) {
            return fail(format!("weight_bits {} outside [2, 8]", self.weight_bits));
        }
        if !(2..=16).contains(&self.act_bits) {
            return fail(format!("act_bits {} outside [2, 16]", self.act_bits));
        }
        if self.groups > crate::mpq_search::MAX_GROUPS {
            return fail(format!("groups {} exceeds {}", self.groups, crate::mpq_search::MAX_GROUPS));
        }
        if !(0.0..=1.0).contains(&self.surplus_2bit) {
            return fail(format!("surplus_2bit {} outside [0, 1]", self.surplus_2bit));
        }
        if self.rank == 0 {
            return fail("rank must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("alpha must be ≥ 0 and tau > 0".into());
        }
        if self.queue_len == 0 || self.ref_k == 0 || self.n_push == 0 {
            return fail("queue_len, ref_k and n_push must be positive".into());
        }
        if self.batch == 0 || self.n_push > self.batch {
            return fail(format!("n_push {} must not exceed batch {}", self.n_push, self.batch));
        }
        if !(self.lr_adapter >= 0.0) || !(self.lr_step >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return fail("learning rates must be ≥ 0 and momentum in [0, 1)".into());
        }
        if self.sample_steps == 0 || self.sample_steps > self.timesteps {
            return fail(format!("sample_steps {} outside [1, {}]", self.sample_steps, self.timesteps));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return fail(format!("eta {} outside [0, 1]", self.eta));
        }
        if self.eval_samples < 2 || self.eval_replicates == 0 {
            return fail("evaluation needs at least 2 samples and 1 replicate".into());
        }
        if self.variants.is_empty() {
            return fail("variants list is empty".into());
        }
        Ok(())
    }
}

impl FromStr for PipelineConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", no + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
