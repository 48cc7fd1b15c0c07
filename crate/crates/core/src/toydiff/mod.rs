//! Toy denoising diffusion model over 2-D data, its sampler, and the
//! quantization-aware fine-tuning loop.

pub mod calibrate;
pub mod data;
pub mod finetune;
pub mod metrics;
pub mod model;
pub mod quantized;
pub mod sampler;
pub mod schedule;

pub use calibrate::{collect_activations, collect_calibration, Calibration};
pub use data::Dataset;
pub use finetune::{finetune, loss_and_grads, LogLine, LossParts, StepBatch, TrainConfig, TrainState};
pub use metrics::{energy_distance, temporal_similarity_map};
pub use model::{pretrain_fp, Denoiser, FpTrace, Linear, Prediction, PretrainConfig, ToyDiffusionModel};
pub use quantized::{LayerGrads, QuantAnchors, QuantTrace, QuantizedModel, FIRST_LAYER_BITS};
pub use sampler::{ddim_sample, ddim_sample_from, ddim_timesteps, DdimConfig, Trajectory};
pub use schedule::{timestep_embedding, NoiseSchedule, EMB_DIM};
