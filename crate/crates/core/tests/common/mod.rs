#![allow(dead_code)]

use mpqdm2::cli::pipeline::{calibrate, quantize_model};
use mpqdm2::cli::PipelineConfig;
use mpqdm2::numkit::{SeedStream, Tensor2D};
use mpqdm2::toydiff::{NoiseSchedule, QuantizedModel, ToyDiffusionModel};

/// Randomly initialised denoiser with the default widths and schedule.
pub fn random_teacher(seed: u64) -> ToyDiffusionModel {
    let mut rng = SeedStream::new(seed).fork(99);
    let schedule = NoiseSchedule::linear(10, 1e-4, 0.2).unwrap();
    ToyDiffusionModel::new(&ToyDiffusionModel::default_widths(), schedule, &mut rng).unwrap()
}

/// Config for fast pipeline runs in tests.
pub fn small_config(seed: u64, weight_bits: u8, act_bits: u8) -> PipelineConfig {
    PipelineConfig {
        seed,
        weight_bits,
        act_bits,
        calib_batches: 2,
        calib_batch: 32,
        pretrain_iterations: 300,
        iterations: 40,
        eval_samples: 200,
        eval_replicates: 1,
        ..Default::default()
    }
}

/// Searched, OOLRI-initialised student of a random teacher.
pub fn quantized(seed: u64, weight_bits: u8, act_bits: u8, oolri: bool) -> QuantizedModel {
    let cfg = small_config(seed, weight_bits, act_bits);
    let teacher = random_teacher(seed);
    let calib = calibrate(&teacher, &cfg).unwrap();
    quantize_model(&teacher, &calib, &cfg, true, oolri).unwrap().0
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

pub fn max_abs_diff(a: &Tensor2D, b: &Tensor2D) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative agreement with an absolute floor for vanishing gradients.
pub fn rel_close(analytic: f64, numeric: f64, rtol: f64, floor: f64) -> bool {
    (analytic - numeric).abs() <= rtol * analytic.abs().max(numeric.abs()) + floor
}
