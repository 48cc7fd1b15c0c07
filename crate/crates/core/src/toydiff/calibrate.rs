use crate::error::Result;
use crate::numkit::{Rng, Tensor2D};

use super::data::Dataset;
use super::model::{ToyDiffusionModel, DATA_DIM};

/// Input activations of every layer at every timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// `[layer][t − 1]`, each (samples × layer inputs).
    pub activations: Vec<Vec<Tensor2D>>,
}

impl Calibration {
    pub fn timesteps(&self) -> usize {
        self.activations.first().map_or(0, Vec::len)
    }

    pub fn layer(&self, layer: usize) -> &[Tensor2D] {
        &self.activations[layer]
    }

    /// All timesteps of one layer stacked row-wise.
    pub fn stacked(&self, layer: usize) -> Result<Tensor2D> {
        let parts: Vec<&Tensor2D> = self.activations[layer].iter().collect();
        Tensor2D::vstack(&parts)
    }
}

/// Runs the full-precision model on `inputs[t − 1]` at each timestep `t`
/// and records every layer's input.
pub fn collect_activations(model: &ToyDiffusionModel, inputs: &[Tensor2D]) -> Result<Calibration> {
    let mut activations = vec![Vec::with_capacity(inputs.len()); model.layers.len()];
    for (i, x) in inputs.iter().enumerate() {
        let trace = model.forward_trace(x, i + 1)?;
        for (l, a) in trace.inputs.into_iter().enumerate() {
            activations[l].push(a);
        }
    }
    Ok(Calibration { activations })
}

/// Forward-diffused data batches: `batches · batch` samples per timestep.
pub fn collect_calibration(
    model: &ToyDiffusionModel,
    dataset: Dataset,
    batches: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<Calibration> {
    let inputs = (1..=model.timesteps())
        .map(|t| {
            let parts = (0..batches)
                .map(|_| {
                    let x0 = dataset.sample(batch, rng);
                    let eps = rng.normal_tensor(batch, DATA_DIM);
                    model.schedule.diffuse(&x0, &eps, t)
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor2D::vstack(&parts.iter().collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    collect_activations(model, &inputs)
}
