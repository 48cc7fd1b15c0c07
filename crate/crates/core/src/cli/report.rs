//! Allocation and ablation reports, as TSV and as aligned text.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::Result;
use crate::toydiff::{Calibration, ToyDiffusionModel};

use super::config::PipelineConfig;
use super::pipeline::{build_variant, evaluate, Evaluation, LayerReport, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub energy: f64,
    pub energies: Vec<f64>,
    pub weight_mse: f64,
    /// Frobenius distance of the temporal similarity map to the teacher's.
    pub temporal_distance: f64,
}

/// Builds and scores every configured variant against one teacher. Variants
/// are independent and run concurrently; rows keep the configured order.
pub fn run_ablation(teacher: &ToyDiffusionModel, calib: &Calibration, cfg: &PipelineConfig) -> Result<Vec<AblationRow>> {
    let fp = evaluate(teacher, cfg)?;
    cfg.variants
        .par_iter()
        .map(|v| -> Result<AblationRow> {
            let model = build_variant(teacher, calib, cfg, *v)?;
            let eval: Evaluation = if *v == Variant::Fp { fp.clone() } else { evaluate(model.denoiser(), cfg)? };
            Ok(AblationRow {
                variant: *v,
                energy: eval.median_energy(),
                weight_mse: model.weight_mse()?,
                temporal_distance: eval.temporal_map.sub(&fp.temporal_map)?.frobenius_norm(),
                energies: eval.energies,
            })
        })
        .collect()
}

pub fn ablation_tsv(rows: &[AblationRow], teacher_hash: &str) -> String {
    let mut s = format!("# teacher {teacher_hash}\nvariant\tenergy_distance\tweight_mse\ttemporal_distance\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.9e}\t{:.9e}\t{:.9e}",
            r.variant.label(),
            r.energy,
            r.weight_mse,
            r.temporal_distance
        );
    }
    s
}

pub fn ablation_pretty(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<10} {:>14} {:>12} {:>12}\n", "variant", "energy dist", "weight mse", "temporal");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>14.6} {:>12.6} {:>12.4}",
            r.variant.label(),
            r.energy,
            r.weight_mse,
            r.temporal_distance
        );
    }
    s
}

pub fn allocation_tsv(reports: &[LayerReport]) -> String {
    let mut s = String::from("layer\tchannels\ttotal_bits\tbudget\tobjective\tbaseline\tbits_histogram\tresidual_before\tresidual_after\n");
    for r in reports {
        let hist: Vec<String> = r.histogram.iter().map(|(b, c)| format!("{b}:{c}")).collect();
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.9e}\t{:.9e}\t{}\t{:.9e}\t{:.9e}",
            r.layer,
            r.channels,
            r.total_bits,
            r.budget,
            r.objective,
            r.baseline,
            hist.join(","),
            r.residual_before,
            r.residual_after
        );
    }
    s
}
