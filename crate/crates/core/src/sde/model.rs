//! Model specification: generator, coefficients, costs and constants.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::ActionSet;
use crate::error::{Error, Result};
use crate::hilbert::{dist, norm, SpaceSpec, SpectralOperator};
use crate::measure::{wasserstein2, ControlLawView, LawView, W2Mode};
use crate::pathspace::{sup_dist, PathGrid, PathView, TimeGrid};
use crate::sde::noise::keyed_rng;

/// Coefficients `b`, `sigma`, `f`, `g` of a controlled path-dependent
/// McKean-Vlasov equation.
///
/// Paths and laws arrive as stopped views, so implementations see only
/// `x_{. ^ t}` and `mu_{[0,t]}`. The diffusion is diagonal: `out[k]` is the
/// coefficient of `dB_k` in coordinate `k`, for `k < min(d, d_K)`.
pub trait Coefficients: Send + Sync {
    fn drift(
        &self,
        t: f64,
        x: PathView<'_>,
        law: &LawView<'_>,
        u: &[f64],
        nu: &ControlLawView<'_>,
        out: &mut [f64],
    );

    fn diffusion(
        &self,
        t: f64,
        x: PathView<'_>,
        law: &LawView<'_>,
        u: &[f64],
        nu: &ControlLawView<'_>,
        out: &mut [f64],
    );

    fn running_cost(
        &self,
        _t: f64,
        _x: PathView<'_>,
        _law: &LawView<'_>,
        _u: &[f64],
        _nu: &ControlLawView<'_>,
    ) -> f64 {
        0.0
    }

    fn terminal_cost(&self, _x: PathView<'_>, _law: &LawView<'_>) -> f64 {
        0.0
    }

    /// `false` when `b`, `sigma` ignore the state law (no fixed-point coupling).
    fn depends_on_law(&self) -> bool {
        true
    }

    /// `false` when `b`, `sigma`, `f` ignore the control law `nu`.
    fn depends_on_control_law(&self) -> bool {
        true
    }
}

/// Quadratic growth profile `h(r) = c0 + c1 r^2` for `|f|, |g| <= h(W_2(mu, delta_0)) (1 + ||x||^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostGrowth {
    pub c0: f64,
    pub c1: f64,
}

impl CostGrowth {
    pub fn h(&self, r: f64) -> f64 {
        self.c0 + self.c1 * r * r
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub tag: String,
    pub space: SpaceSpec,
    pub grid: TimeGrid,
    pub generator: SpectralOperator,
    pub coefficients: Arc<dyn Coefficients>,
    pub actions: ActionSet,
    /// Lipschitz constant `L` of `b` and `sigma` in `(x, mu)`.
    pub lipschitz: f64,
    pub cost_growth: Option<CostGrowth>,
    /// Growth `L(1 + |u|)` in the control is allowed (square-integrable controls).
    pub unbounded_controls: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("tag", &self.tag)
            .field("space", &self.space)
            .field("grid", &self.grid)
            .field("generator", &self.generator)
            .field("actions", &self.actions)
            .field("lipschitz", &self.lipschitz)
            .field("cost_growth", &self.cost_growth)
            .field("unbounded_controls", &self.unbounded_controls)
            .finish()
    }
}

impl ModelSpec {
    pub fn d(&self) -> usize {
        self.space.d
    }

    pub fn diffusion_rank(&self) -> usize {
        self.space.diffusion_rank()
    }

    pub fn eta(&self) -> f64 {
        self.generator.eta
    }

    /// Same model on another grid.
    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        let mut m = self.clone();
        m.grid = grid;
        m
    }

    /// Same model with the Lipschitz constant and coefficients replaced.
    pub fn with_coefficients(
        &self,
        tag: impl Into<String>,
        coefficients: Arc<dyn Coefficients>,
        lipschitz: f64,
    ) -> Self {
        let mut m = self.clone();
        m.tag = tag.into();
        m.coefficients = coefficients;
        m.lipschitz = lipschitz;
        m
    }

    /// Structural checks plus randomized spot-checks of non-anticipativity
    /// and of the declared Lipschitz constant (5% slack).
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.generator.dim() != self.space.d {
            return Err(Error::Config(format!(
                "generator has dimension {}, space has {}",
                self.generator.dim(),
                self.space.d
            )));
        }
        self.actions.validate()?;
        if !(self.lipschitz >= 0.0) || !self.lipschitz.is_finite() {
            return Err(Error::Config(
                "Lipschitz constant must be finite and nonnegative".into(),
            ));
        }
        self.spot_check(0x5eed, 24)
    }

    fn sample_actions(&self) -> Vec<Vec<f64>> {
        match &self.actions {
            ActionSet::Finite { actions } => actions.clone(),
            ActionSet::Box { lo, hi } => {
                let mid: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
                vec![lo.clone(), hi.clone(), mid]
            }
        }
    }

    fn spot_check(&self, seed: u64, trials: usize) -> Result<()> {
        let d = self.space.d;
        let r = self.diffusion_rank();
        let grid = self.grid;
        let mut rng = keyed_rng(seed, 0, 0);
        let walk = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| {
            let mut p = PathGrid::zeros(grid, d);
            let mut cur: Vec<f64> = (0..d)
                .map(|_| scale * (rng.random::<f64>() - 0.5))
                .collect();
            for j in 0..grid.nodes() {
                p.at_mut(j).copy_from_slice(&cur);
                for v in cur.iter_mut() {
                    *v += scale * 0.2 * (rng.random::<f64>() - 0.5);
                }
            }
            p
        };
        let acts = self.sample_actions();
        let slack = 1.05;
        let tol = 1e-9;
        for trial in 0..trials {
            let j = (trial * 7919) % grid.nodes();
            let t = grid.time(j);
            let u = &acts[trial % acts.len()];
            let nu_buf: Vec<f64> = u.clone();
            let nu = ControlLawView::new(&nu_buf, u.len());
            let x = walk(&mut rng, 2.0);
            let y = walk(&mut rng, 2.0);
            let mu_atoms: Vec<PathGrid> = (0..4).map(|_| walk(&mut rng, 2.0)).collect();
            let nu_atoms: Vec<PathGrid> = (0..4).map(|_| walk(&mut rng, 2.0)).collect();
            let law_mu = LawView::uniform(&mu_atoms, j);
            let law_nu = LawView::uniform(&nu_atoms, j);

            let mut bx = vec![0.0; d];
            let mut by = vec![0.0; d];
            let mut sx = vec![0.0; r];
            let mut sy = vec![0.0; r];
            let c = &self.coefficients;
            c.drift(t, x.view(j), &law_mu, u, &nu, &mut bx);
            c.diffusion(t, x.view(j), &law_mu, u, &nu, &mut sx);

            // perturbing the future of the path must not change anything
            let mut x_future = x.clone();
            for node in j + 1..grid.nodes() {
                x_future.at_mut(node).iter_mut().for_each(|v| *v += 1.0);
            }
            c.drift(t, x_future.view(j), &law_mu, u, &nu, &mut by);
            c.diffusion(t, x_future.view(j), &law_mu, u, &nu, &mut sy);
            if bx.iter().zip(&by).any(|(a, b)| a.to_bits() != b.to_bits())
                || sx.iter().zip(&sy).any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Err(Error::Config(format!(
                    "model '{}' is anticipative at t = {t}",
                    self.tag
                )));
            }

            c.drift(t, y.view(j), &law_nu, u, &nu, &mut by);
            c.diffusion(t, y.view(j), &law_nu, u, &nu, &mut sy);
            let w2 =
                wasserstein2(&law_mu.to_measure(), &law_nu.to_measure(), W2Mode::Exact)?.distance;
            let rhs = self.lipschitz * (sup_dist(&x, &y, j) + w2);
            if dist(&bx, &by) > slack * rhs + tol || dist(&sx, &sy) > slack * rhs + tol {
                return Err(Error::Config(format!(
                    "model '{}' violates the declared Lipschitz constant {} at t = {t}",
                    self.tag, self.lipschitz
                )));
            }

            // bound at (0, delta_0)
            let zero = PathGrid::zeros(grid, d);
            let dirac = [zero.clone()];
            let law0 = LawView::uniform(&dirac, j);
            c.drift(t, zero.view(j), &law0, u, &nu, &mut bx);
            c.diffusion(t, zero.view(j), &law0, u, &nu, &mut sx);
            let cap = if self.unbounded_controls {
                self.lipschitz * (1.0 + norm(u))
            } else {
                self.lipschitz
            };
            if norm(&bx) + norm(&sx) > slack * cap + tol {
                return Err(Error::Config(format!(
                    "model '{}': |b(0, delta_0)| + |sigma(0, delta_0)| exceeds L at t = {t}",
                    self.tag
                )));
            }
        }
        Ok(())
    }

    fn eta_plus(&self) -> f64 {
        self.eta().max(0.0)
    }

    /// Squared constant of the stochastic-convolution maximal inequality used
    /// in the contraction and growth estimates.
    fn conv_constant_sq(&self) -> f64 {
        4.0 * (2.0 * self.eta_plus() * self.grid.horizon).exp()
    }

    fn gronwall_rate(&self) -> f64 {
        let l2 = self.lipschitz * self.lipschitz;
        let e = (2.0 * self.eta_plus() * self.grid.horizon).exp();
        3.0 * l2 * e * self.grid.horizon + 3.0 * l2 * self.conv_constant_sq()
    }

    /// `C` with `||X||_{S_2} <= C (1 + ||xi_{. ^ t}||_{S_2})`, from Gronwall.
    pub fn apriori_constant(&self) -> f64 {
        let t = self.grid.horizon;
        let a = 3.0 * (1.0 + (2.0 * self.eta_plus() * t).exp());
        let k = self.gronwall_rate();
        a.max(2.0 * k * t).sqrt() * (2.0 * k * t).exp()
    }

    /// `C` with `||X^xi - X^xi'||_{S_2} <= C ||xi - xi'||_{S_2}`.
    pub fn lipschitz_in_initial_datum(&self) -> f64 {
        let t = self.grid.horizon;
        let a = 3.0 * (1.0 + (2.0 * self.eta_plus() * t).exp());
        a.sqrt() * (2.0 * self.gronwall_rate() * t).exp()
    }

    /// Contraction factor of the fixed-point map on a window of length `ell`.
    pub fn contraction_factor(&self, ell: f64) -> f64 {
        let l2 = self.lipschitz * self.lipschitz;
        let e = (2.0 * self.eta_plus() * self.grid.horizon).exp();
        (4.0 * l2 * e * ell * ell + 4.0 * l2 * self.conv_constant_sq() * ell).sqrt()
    }

    /// Longest window (at most 1 and at most `T`) on which the fixed-point
    /// map is a 1/2-contraction.
    pub fn contraction_window(&self) -> f64 {
        let t = self.grid.horizon;
        if self.lipschitz == 0.0 {
            return t;
        }
        let l2 = self.lipschitz * self.lipschitz;
        let e = (2.0 * self.eta_plus() * t).exp();
        let a = 4.0 * l2 * e;
        let b = 4.0 * l2 * self.conv_constant_sq();
        // a l^2 + b l = 1/4
        let ell = (-b + (b * b + a).sqrt()) / (2.0 * a);
        ell.min(1.0).min(t)
    }
}
