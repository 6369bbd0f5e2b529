//! Empirical measures on path space and their 2-Wasserstein distance.

pub mod ot;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::hilbert::{dist, HilbertVec};
use crate::pathspace::{check_compatible, stop_at, sup_dist, PathGrid, PathView, TimeGrid};
use crate::stats::pairwise_sum;

/// Largest support size accepted by exact W2.
pub const EXACT_CAP: usize = 512;

const WEIGHT_TOL: f64 = 1e-12;

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Config(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Config(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Finitely supported `mu` in `P_2(C([0,T]; H))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPathMeasure {
    atoms: Vec<PathGrid>,
    weights: Vec<f64>,
}

impl EmpiricalPathMeasure {
    pub fn new(atoms: Vec<PathGrid>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("a measure needs at least one atom".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for a in &atoms[1..] {
            check_compatible(&atoms[0], a)?;
        }
        check_weights(&weights)?;
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<PathGrid>) -> Result<Self> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn dirac(x: PathGrid) -> Self {
        Self {
            atoms: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[PathGrid] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &TimeGrid {
        self.atoms[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| *w == w0)
    }

    pub fn view(&self, upto: usize) -> LawView<'_> {
        LawView::weighted(&self.atoms, &self.weights, upto)
    }

    pub fn full_view(&self) -> LawView<'_> {
        self.view(self.grid().steps)
    }

    /// Replaces atom `i`; weights are unchanged.
    pub fn with_atom(&self, i: usize, atom: PathGrid) -> Result<Self> {
        check_compatible(&self.atoms[0], &atom)?;
        let mut out = self.clone();
        out.atoms[i] = atom;
        Ok(out)
    }

    /// Appends an atom of weight `p`, scaling the others by `1 - p`.
    pub fn with_extra_atom(&self, atom: PathGrid, p: f64) -> Result<Self> {
        check_compatible(&self.atoms[0], &atom)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "extra atom weight must be in (0,1), got {p}"
            )));
        }
        let mut atoms = self.atoms.clone();
        atoms.push(atom);
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * (1.0 - p)).collect();
        weights.push(p);
        Ok(Self { atoms, weights })
    }

    /// Second moment `int ||x||_T^2 mu(dx)`.
    pub fn second_moment(&self) -> f64 {
        self.full_view().sup_second_moment()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, (a, p)) in self.atoms.iter().zip(&self.weights).enumerate() {
            writeln!(w, "atom,{i},weight,{}", crate::pathspace::fmt17(*p))?;
            a.write_csv(&mut w)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `mu_{[0,t]}`: pushforward of `mu` under `x -> x_{. ^ t}`.
pub fn stopped_measure(mu: &EmpiricalPathMeasure, t: f64) -> Result<EmpiricalPathMeasure> {
    let j = mu.grid().snap(t)?;
    Ok(stopped_measure_at(mu, j))
}

pub fn stopped_measure_at(mu: &EmpiricalPathMeasure, j: usize) -> EmpiricalPathMeasure {
    EmpiricalPathMeasure {
        atoms: mu.atoms.iter().map(|a| stop_at(a, j)).collect(),
        weights: mu.weights.clone(),
    }
}

/// `int x_t mu(dx)`.
pub fn mean_at(mu: &EmpiricalPathMeasure, t: f64) -> Result<HilbertVec> {
    let j = mu.grid().snap(t)?;
    Ok(HilbertVec(mu.view(j).mean_now().to_vec()))
}

/// A measure on path space seen through stopping at node `upto`.
///
/// This is the argument handed to coefficients and functionals. It borrows
/// the atoms, so the particle system never copies its paths to build a law,
/// and it caches the node mean (needed by most mean-field couplings).
#[derive(Debug)]
pub struct LawView<'a> {
    atoms: &'a [PathGrid],
    weights: Option<&'a [f64]>,
    upto: usize,
    mean: OnceLock<Vec<f64>>,
    second: OnceLock<f64>,
}

impl<'a> LawView<'a> {
    pub fn uniform(atoms: &'a [PathGrid], upto: usize) -> Self {
        Self {
            atoms,
            weights: None,
            upto,
            mean: OnceLock::new(),
            second: OnceLock::new(),
        }
    }

    pub fn weighted(atoms: &'a [PathGrid], weights: &'a [f64], upto: usize) -> Self {
        Self {
            atoms,
            weights: Some(weights),
            upto,
            mean: OnceLock::new(),
            second: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn upto(&self) -> usize {
        self.upto
    }

    pub fn time(&self) -> f64 {
        self.atoms[0].grid().time(self.upto)
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn weight(&self, i: usize) -> f64 {
        match self.weights {
            Some(w) => w[i],
            None => 1.0 / self.atoms.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn atom(&self, i: usize) -> PathView<'a> {
        self.atoms[i].view(self.upto)
    }

    /// Expectation of `f(x_{. ^ t})`, fixed-order summation.
    pub fn expect(&self, f: impl Fn(PathView<'a>) -> f64) -> f64 {
        let terms: Vec<f64> = (0..self.len())
            .map(|i| self.weight(i) * f(self.atom(i)))
            .collect();
        pairwise_sum(&terms)
    }

    /// `int x_t mu(dx)` at the stopping node, cached.
    pub fn mean_now(&self) -> &[f64] {
        self.mean.get_or_init(|| self.mean_node(self.upto))
    }

    /// `int x_s mu(dx)` for `s <= t` (clamped to the stopping node).
    pub fn mean_node(&self, j: usize) -> Vec<f64> {
        let j = j.min(self.upto);
        (0..self.dim())
            .map(|k| {
                let terms: Vec<f64> = (0..self.len())
                    .map(|i| self.weight(i) * self.atoms[i].at(j)[k])
                    .collect();
                pairwise_sum(&terms)
            })
            .collect()
    }

    /// `int ||x||_t^2 mu(dx)`, i.e. `W_2(mu_{[0,t]}, delta_0)^2`, cached.
    pub fn sup_second_moment(&self) -> f64 {
        *self.second.get_or_init(|| {
            self.expect(|x| {
                let s = x.sup_norm();
                s * s
            })
        })
    }

    /// Materializes the stopped measure.
    pub fn to_measure(&self) -> EmpiricalPathMeasure {
        EmpiricalPathMeasure {
            atoms: self.atoms.iter().map(|a| stop_at(a, self.upto)).collect(),
            weights: self.weights(),
        }
    }
}

/// Finitely supported law on the action space `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalControlMeasure {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl EmpiricalControlMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Config(
                "control measure needs matching non-empty atoms and weights".into(),
            ));
        }
        check_weights(&weights)?;
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }
}

/// Empirical law of the particles' actions at one step: `N` actions of
/// dimension `m`, stored contiguously, equal weights.
#[derive(Debug, Clone, Copy)]
pub struct ControlLawView<'a> {
    actions: &'a [f64],
    m: usize,
}

impl<'a> ControlLawView<'a> {
    pub fn new(actions: &'a [f64], m: usize) -> Self {
        Self { actions, m }
    }

    pub fn len(&self) -> usize {
        self.actions.len().checked_div(self.m).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn action(&self, i: usize) -> &'a [f64] {
        &self.actions[i * self.m..(i + 1) * self.m]
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len();
        (0..self.m)
            .map(|k| {
                let terms: Vec<f64> = (0..n).map(|i| self.actions[i * self.m + k]).collect();
                pairwise_sum(&terms) / n as f64
            })
            .collect()
    }

    pub fn to_measure(&self) -> EmpiricalControlMeasure {
        let n = self.len();
        EmpiricalControlMeasure {
            atoms: (0..n).map(|i| self.action(i).to_vec()).collect(),
            weights: vec![1.0 / n as f64; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum W2Mode {
    Exact,
    Sliced { projections: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub distance: f64,
    /// Number of random projections used (sliced mode only).
    pub projections: Option<usize>,
}

/// `W_2(mu, nu)` with ground cost `||x - y||_T`.
///
/// Exact mode solves the discrete transport problem: an assignment for two
/// uniform measures with the same number of atoms, min-cost flow otherwise.
/// Sliced mode averages one-dimensional transport costs of projections onto
/// random unit directions of the (node x coordinate) space, rescaled by `d`;
/// it approximates the transport cost under the time-averaged squared norm,
/// which coincides with the sup-norm cost on time-constant paths.
pub fn wasserstein2(
    mu: &EmpiricalPathMeasure,
    nu: &EmpiricalPathMeasure,
    mode: W2Mode,
) -> Result<W2Estimate> {
    check_compatible(&mu.atoms[0], &nu.atoms[0])?;
    match mode {
        W2Mode::Exact => {
            let n = mu.len();
            let m = nu.len();
            if n > EXACT_CAP || m > EXACT_CAP {
                return Err(Error::Capacity(format!(
                    "exact W2 supports at most {EXACT_CAP} atoms per measure (got {n} and {m}); use sliced mode"
                )));
            }
            let steps = mu.grid().steps;
            let cost: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let x = &mu.atoms[i];
                    nu.atoms.iter().map(move |y| {
                        let d = sup_dist(x, y, steps);
                        d * d
                    })
                })
                .collect();
            let total = exact_cost(&cost, mu, nu);
            Ok(W2Estimate {
                distance: total.max(0.0).sqrt(),
                projections: None,
            })
        }
        W2Mode::Sliced { projections, seed } => {
            if projections == 0 {
                return Err(Error::Config(
                    "sliced W2 needs at least one projection".into(),
                ));
            }
            let dim = mu.atoms[0].raw().len();
            let d = mu.dim() as f64;
            let costs: Vec<f64> = (0..projections)
                .into_par_iter()
                .map(|p| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(p as u64);
                    let mut theta: Vec<f64> =
                        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let nrm = crate::hilbert::norm(&theta);
                    theta.iter_mut().for_each(|v| *v /= nrm);
                    let proj = |m: &EmpiricalPathMeasure| -> Vec<f64> {
                        m.atoms
                            .iter()
                            .map(|a| crate::hilbert::dot(a.raw(), &theta))
                            .collect()
                    };
                    ot::w2_squared_1d(&proj(mu), &mu.weights, &proj(nu), &nu.weights)
                })
                .collect();
            let mean = pairwise_sum(&costs) / projections as f64;
            Ok(W2Estimate {
                distance: (d * mean).max(0.0).sqrt(),
                projections: Some(projections),
            })
        }
    }
}

fn exact_cost(cost: &[f64], mu: &EmpiricalPathMeasure, nu: &EmpiricalPathMeasure) -> f64 {
    let n = mu.len();
    if n == nu.len() && mu.is_uniform() && nu.is_uniform() {
        let (_, total) = ot::hungarian(cost, n);
        total / n as f64
    } else {
        ot::transport_cost(cost, &mu.weights, &nu.weights)
    }
}

/// Exact `W_2` between finitely supported laws on `R^m` (Euclidean cost).
pub fn wasserstein2_points(
    a: &EmpiricalControlMeasure,
    b: &EmpiricalControlMeasure,
) -> Result<f64> {
    if a.atoms.len() > EXACT_CAP || b.atoms.len() > EXACT_CAP {
        return Err(Error::Capacity("too many atoms for exact W2 on U".into()));
    }
    let m = a.atoms[0].len();
    if a.atoms.iter().chain(&b.atoms).any(|x| x.len() != m) {
        return Err(Error::Config(
            "control atoms of different dimensions".into(),
        ));
    }
    if m == 1 {
        let xs: Vec<f64> = a.atoms.iter().map(|x| x[0]).collect();
        let ys: Vec<f64> = b.atoms.iter().map(|x| x[0]).collect();
        return Ok(ot::w2_squared_1d(&xs, &a.weights, &ys, &b.weights)
            .max(0.0)
            .sqrt());
    }
    let cost: Vec<f64> = a
        .atoms
        .iter()
        .flat_map(|x| b.atoms.iter().map(move |y| dist(x, y).powi(2)))
        .collect();
    Ok(ot::transport_cost(&cost, &a.weights, &b.weights)
        .max(0.0)
        .sqrt())
}
