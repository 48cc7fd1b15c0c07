use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::numkit::{Rng, Tensor2D};

/// Synthetic 2-D data distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dataset {
    /// Two interleaved half circles, centered at the origin, noise std 0.05.
    TwoMoons,
    /// Eight isotropic Gaussians (std 0.1) on a circle of radius 1.5.
    GaussianMixture8,
}

const MOON_NOISE: f64 = 0.05;
const RING_RADIUS: f64 = 1.5;
const RING_STD: f64 = 0.1;

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::TwoMoons => "two-moons",
            Dataset::GaussianMixture8 => "gaussian-mixture-8",
        }
    }

    /// Exact population mean.
    pub fn mean(self) -> [f64; 2] {
        [0.0, 0.0]
    }

    pub fn sample(self, n: usize, rng: &mut Rng) -> Tensor2D {
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let (x, y) = match self {
                Dataset::TwoMoons => {
                    let theta = PI * rng.uniform();
                    let (x, y) = if rng.uniform() < 0.5 {
                        (theta.cos(), theta.sin())
                    } else {
                        (1.0 - theta.cos(), 0.5 - theta.sin())
                    };
                    (x - 0.5 + MOON_NOISE * rng.normal(), y - 0.25 + MOON_NOISE * rng.normal())
                }
                Dataset::GaussianMixture8 => {
                    let a = rng.below(8) as f64 * PI / 4.0;
                    (RING_RADIUS * a.cos() + RING_STD * rng.normal(), RING_RADIUS * a.sin() + RING_STD * rng.normal())
                }
            };
            data.push(x);
            data.push(y);
        }
        Tensor2D::from_vec(n, 2, data).expect("finite samples")
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "two-moons" => Ok(Dataset::TwoMoons),
            "gaussian-mixture-8" => Ok(Dataset::GaussianMixture8),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}
