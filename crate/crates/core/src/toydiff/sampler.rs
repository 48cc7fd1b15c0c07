use crate::error::{Error, Result};
use crate::numkit::{Rng, Tensor2D};

use super::model::{Denoiser, DATA_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimConfig {
    pub steps: usize,
    pub eta: f64,
}

/// States `x_{τ_S}, …, x_0` of one sampling run plus the per-step
/// denoiser outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Timesteps visited, descending.
    pub timesteps: Vec<usize>,
    /// `steps + 1` states; the last one is the sample.
    pub states: Vec<Tensor2D>,
    pub eps: Vec<Tensor2D>,
    pub features: Vec<Tensor2D>,
}

impl Trajectory {
    pub fn samples(&self) -> &Tensor2D {
        self.states.last().expect("trajectory has a final state")
    }
}

/// Evenly spaced timesteps from `T` down to 1.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::Config(format!("sampling steps {steps} outside [1, {total}]")));
    }
    let mut ts: Vec<usize> = if steps == 1 {
        vec![total]
    } else {
        (0..steps).map(|i| 1 + ((i * (total - 1)) as f64 / (steps - 1) as f64).round() as usize).collect()
    };
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

pub fn ddim_sample<D: Denoiser + ?Sized>(model: &D, n: usize, cfg: &DdimConfig, rng: &mut Rng) -> Result<Trajectory> {
    let x_t = rng.normal_tensor(n, DATA_DIM);
    ddim_sample_from(model, x_t, cfg, rng)
}

/// DDIM update
/// `x_prev = √ᾱ_prev x̂₀ + √(1 − ᾱ_prev − σ²) ε̂ + σ z`
/// with `σ = η √((1 − ᾱ_prev)/(1 − ᾱ_t)) √(1 − ᾱ_t/ᾱ_prev)`.
pub fn ddim_sample_from<D: Denoiser + ?Sized>(
    model: &D,
    x_t: Tensor2D,
    cfg: &DdimConfig,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(Error::Config(format!("eta {} outside [0, 1]", cfg.eta)));
    }
    let schedule = model.schedule().clone();
    let timesteps = ddim_timesteps(schedule.steps(), cfg.steps)?;
    let mut traj = Trajectory { timesteps: timesteps.clone(), states: vec![x_t], eps: vec![], features: vec![] };
    for (i, t) in timesteps.iter().enumerate() {
        let prev = timesteps.get(i + 1).copied().unwrap_or(0);
        let (a_t, a_prev) = (schedule.alpha_bar(*t), schedule.alpha_bar(prev));
        let x = traj.states.last().unwrap();
        let pred = model.predict(x, *t)?;
        let sigma = cfg.eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt();
        let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
        let noise = if sigma > 0.0 { Some(rng.normal_tensor(x.rows(), x.cols())) } else { None };
        let next = Tensor2D::from_fn(x.rows(), x.cols(), |r, c| {
            let e = pred.eps.get(r, c);
            let x0 = (x.get(r, c) - (1.0 - a_t).sqrt() * e) / a_t.sqrt();
            let z = noise.as_ref().map_or(0.0, |nz| nz.get(r, c));
            a_prev.sqrt() * x0 + dir * e + sigma * z
        });
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("sampler state at timestep {t}")));
        }
        traj.states.push(next);
        traj.eps.push(pred.eps);
        traj.features.push(pred.features);
    }
    Ok(traj)
}
