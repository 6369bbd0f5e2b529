//! Initial data `xi`: seeded samplers of initial path segments.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathspace::{PathGrid, TimeGrid};
use crate::sde::noise::keyed_rng;

/// Law of the initial path. Only nodes up to the start time are used; the
/// integrator freezes every sample after it.
pub trait InitialLaw: Send + Sync {
    fn tag(&self) -> String;

    /// Sample for particle `i` under the (already derived) init seed.
    fn sample(&self, i: usize, seed: u64, grid: &TimeGrid, dim: usize) -> PathGrid;

    /// Label keying the particle's noise and randomizer.
    fn label(&self, i: usize) -> u64 {
        i as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// `xi = c`.
    Constant { value: Vec<f64> },
    /// Particles alternate between the constants `a` and `b` (exactly balanced).
    TwoPoint { a: Vec<f64>, b: Vec<f64> },
    /// `+-scale` with probability 1/2 from a uniform draw: `u < 1/2 -> -scale`.
    RademacherUniform { scale: f64 },
    /// `+-scale` with probability 1/2 from the sign of a standard normal draw.
    RademacherSign { scale: f64 },
    /// Constant path at an independent `N(mean, std^2)` draw per coordinate.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// `xi_s = x0 + std W_s` with `W` a Brownian motion (a genuinely
    /// path-dependent initial segment).
    BrownianHistory { x0: Vec<f64>, std: f64 },
    /// Particle `i` takes `paths[i mod k]`, with label `labels[i mod k]` when given.
    Atoms {
        paths: Vec<PathGrid>,
        labels: Option<Vec<u64>>,
    },
}

impl Init {
    pub fn constant(value: Vec<f64>) -> Self {
        Self::Constant { value }
    }

    pub fn atoms(paths: Vec<PathGrid>) -> Self {
        Self::Atoms {
            paths,
            labels: None,
        }
    }

    pub fn labelled_atoms(paths: Vec<PathGrid>, labels: Vec<u64>) -> Result<Self> {
        if labels.len() != paths.len() {
            return Err(Error::Config("one label per atom is required".into()));
        }
        Ok(Self::Atoms {
            paths,
            labels: Some(labels),
        })
    }

    pub fn validate(&self, dim: usize, grid: &TimeGrid) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("initial law: {msg}")));
        match self {
            Self::Constant { value } if value.len() != dim => bad("constant has wrong dimension"),
            Self::TwoPoint { a, b } if a.len() != dim || b.len() != dim => {
                bad("two-point values have wrong dimension")
            }
            Self::Gaussian { mean, std } if mean.len() != dim || *std < 0.0 => {
                bad("bad gaussian parameters")
            }
            Self::BrownianHistory { x0, std } if x0.len() != dim || *std < 0.0 => {
                bad("bad brownian parameters")
            }
            Self::Atoms { paths, .. } if paths.is_empty() => bad("no atoms"),
            Self::Atoms { paths, .. }
                if paths
                    .iter()
                    .any(|p| p.dim() != dim || !p.grid().same_as(grid)) =>
            {
                bad("atoms live on another grid or space")
            }
            _ => Ok(()),
        }
    }
}

impl InitialLaw for Init {
    fn tag(&self) -> String {
        match self {
            Self::Constant { .. } => "constant".into(),
            Self::TwoPoint { .. } => "two_point".into(),
            Self::RademacherUniform { .. } => "rademacher_uniform".into(),
            Self::RademacherSign { .. } => "rademacher_sign".into(),
            Self::Gaussian { .. } => "gaussian".into(),
            Self::BrownianHistory { .. } => "brownian_history".into(),
            Self::Atoms { paths, .. } => format!("atoms[{}]", paths.len()),
        }
    }

    fn sample(&self, i: usize, seed: u64, grid: &TimeGrid, dim: usize) -> PathGrid {
        let mut rng = keyed_rng(seed, i as u64, 0);
        match self {
            Self::Constant { value } => PathGrid::constant(*grid, value),
            Self::TwoPoint { a, b } => {
                PathGrid::constant(*grid, if i.is_multiple_of(2) { a } else { b })
            }
            Self::RademacherUniform { scale } => {
                let c: Vec<f64> = (0..dim)
                    .map(|_| {
                        if rng.random::<f64>() < 0.5 {
                            -scale
                        } else {
                            *scale
                        }
                    })
                    .collect();
                PathGrid::constant(*grid, &c)
            }
            Self::RademacherSign { scale } => {
                let c: Vec<f64> = (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if z < 0.0 {
                            -scale
                        } else {
                            *scale
                        }
                    })
                    .collect();
                PathGrid::constant(*grid, &c)
            }
            Self::Gaussian { mean, std } => {
                let c: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + std * z
                    })
                    .collect();
                PathGrid::constant(*grid, &c)
            }
            Self::BrownianHistory { x0, std } => {
                let mut p = PathGrid::constant(*grid, x0);
                let sd = std * grid.dt().sqrt();
                let mut cur = x0.clone();
                for j in 1..grid.nodes() {
                    for v in cur.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += sd * z;
                    }
                    p.at_mut(j).copy_from_slice(&cur);
                }
                p
            }
            Self::Atoms { paths, .. } => paths[i % paths.len()].clone(),
        }
    }

    fn label(&self, i: usize) -> u64 {
        match self {
            Self::Atoms {
                paths,
                labels: Some(labels),
            } => labels[i % paths.len()],
            _ => i as u64,
        }
    }
}
