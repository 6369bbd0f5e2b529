//! Built-in linear mean-field models.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::ActionSet;
use crate::hilbert::{dot, norm, SpaceSpec, SpectralOperator};
use crate::measure::{ControlLawView, LawView};
use crate::pathspace::{PathView, TimeGrid};
use crate::sde::model::{Coefficients, CostGrowth, ModelSpec};

/// `b = c - kappa x + theta (E x_t - x) + u` (the action enters the first
/// `m` coordinates), diagonal constant `sigma`,
/// `f = <a1, x_t> - q |x_t|^2 - rho |u|^2` and `g = <ag, x_T> - q_T |x_T|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMeanField {
    pub shift: Vec<f64>,
    pub kappa: f64,
    pub theta: f64,
    pub sigma: Vec<f64>,
    pub control_gain: f64,
    pub a1: Vec<f64>,
    pub q: f64,
    pub rho: f64,
    pub ag: Vec<f64>,
    pub q_terminal: f64,
}

impl LinearMeanField {
    pub fn zero(d: usize) -> Self {
        Self {
            shift: vec![0.0; d],
            kappa: 0.0,
            theta: 0.0,
            sigma: vec![0.0; d],
            control_gain: 0.0,
            a1: vec![0.0; d],
            q: 0.0,
            rho: 0.0,
            ag: vec![0.0; d],
            q_terminal: 0.0,
        }
    }

    pub fn d(&self) -> usize {
        self.shift.len()
    }

    /// Smallest `L` meeting the Lipschitz and boundedness requirements over `U`.
    pub fn lipschitz(&self, actions: &ActionSet) -> f64 {
        let umax = match actions {
            ActionSet::Finite { actions } => actions.iter().map(|a| norm(a)).fold(0.0, f64::max),
            ActionSet::Box { lo, hi } => {
                let corner: Vec<f64> = lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| l.abs().max(h.abs()))
                    .collect();
                norm(&corner)
            }
        };
        let lx = (self.kappa + self.theta).abs().max(self.theta.abs());
        let at_zero = norm(&self.shift) + self.control_gain.abs() * umax + norm(&self.sigma);
        lx.max(at_zero)
    }

    pub fn cost_growth(&self, actions: &ActionSet) -> CostGrowth {
        let umax2 = match actions {
            ActionSet::Finite { actions } => actions.iter().map(|a| dot(a, a)).fold(0.0, f64::max),
            ActionSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum(),
        };
        CostGrowth {
            c0: self.q.abs()
                + self.q_terminal.abs()
                + self.rho.abs() * umax2
                + norm(&self.a1)
                + norm(&self.ag),
            c1: 0.0,
        }
    }

    pub fn into_model(
        self,
        tag: &str,
        grid: TimeGrid,
        rates: Vec<f64>,
        actions: ActionSet,
    ) -> ModelSpec {
        let d = self.d();
        let lipschitz = self.lipschitz(&actions);
        let cost_growth = Some(self.cost_growth(&actions));
        ModelSpec {
            tag: tag.into(),
            space: SpaceSpec { d, d_noise: d },
            grid,
            generator: SpectralOperator::generator_tight(rates.iter().map(|r| -r).collect()),
            coefficients: Arc::new(self),
            actions,
            lipschitz,
            cost_growth,
            unbounded_controls: false,
        }
    }
}

impl Coefficients for LinearMeanField {
    fn drift(
        &self,
        _t: f64,
        x: PathView<'_>,
        law: &LawView<'_>,
        u: &[f64],
        _nu: &ControlLawView<'_>,
        out: &mut [f64],
    ) {
        let xt = x.current();
        for k in 0..out.len() {
            out[k] = self.shift[k] - self.kappa * xt[k];
        }
        if self.theta != 0.0 {
            let m = law.mean_now();
            for k in 0..out.len() {
                out[k] += self.theta * (m[k] - xt[k]);
            }
        }
        if self.control_gain != 0.0 {
            for (o, v) in out.iter_mut().zip(u) {
                *o += self.control_gain * v;
            }
        }
    }

    fn diffusion(
        &self,
        _t: f64,
        _x: PathView<'_>,
        _law: &LawView<'_>,
        _u: &[f64],
        _nu: &ControlLawView<'_>,
        out: &mut [f64],
    ) {
        out.copy_from_slice(&self.sigma[..out.len()]);
    }

    fn running_cost(
        &self,
        _t: f64,
        x: PathView<'_>,
        _law: &LawView<'_>,
        u: &[f64],
        _nu: &ControlLawView<'_>,
    ) -> f64 {
        let xt = x.current();
        dot(&self.a1, xt) - self.q * dot(xt, xt) - self.rho * dot(u, u)
    }

    fn terminal_cost(&self, x: PathView<'_>, _law: &LawView<'_>) -> f64 {
        let xt = x.current();
        dot(&self.ag, xt) - self.q_terminal * dot(xt, xt)
    }

    fn depends_on_law(&self) -> bool {
        self.theta != 0.0
    }

    fn depends_on_control_law(&self) -> bool {
        false
    }
}

/// `b = sigma = 0`, `A = 0`.
pub fn frozen(grid: TimeGrid, d: usize) -> ModelSpec {
    LinearMeanField::zero(d).into_model("frozen", grid, vec![0.0; d], ActionSet::trivial())
}

/// `dX = -lambda X dt + s0 dB` in one dimension, with `A = -lambda`.
pub fn ou(grid: TimeGrid, lambda: f64, s0: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.sigma = vec![s0];
    c.into_model("ou", grid, vec![lambda], ActionSet::trivial())
}

/// `b = theta (E x_t - x_t)`, `sigma = s0`, `A = -a_rate`.
pub fn mean_reversion(grid: TimeGrid, theta: f64, s0: f64, a_rate: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.theta = theta;
    c.sigma = vec![s0];
    c.into_model("mean_reversion", grid, vec![a_rate], ActionSet::trivial())
}

/// `A = 0`, `b = -kappa x`, `sigma = s0`: Euler is first order in the mean.
pub fn weak_order(grid: TimeGrid, kappa: f64, s0: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.kappa = kappa;
    c.sigma = vec![s0];
    c.into_model("weak_order", grid, vec![0.0], ActionSet::trivial())
}

/// `b = -kappa x` with no noise; `kappa < 0` gives exponential growth.
pub fn linear_growth(grid: TimeGrid, kappa: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.kappa = -kappa;
    c.into_model("linear_growth", grid, vec![0.0], ActionSet::trivial())
}

/// `U = {0, 1}`, `b = u`, `sigma = 0`, `A = 0`, `f = 0`, `g = x_T`.
pub fn controlled_linear(grid: TimeGrid) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.control_gain = 1.0;
    c.ag = vec![1.0];
    c.into_model(
        "controlled_linear",
        grid,
        vec![0.0],
        ActionSet::scalar_finite(&[0.0, 1.0]),
    )
}

/// Uncontrolled OU with `f = -x_t^2` and `g = -x_T^2`.
pub fn quadratic(grid: TimeGrid, lambda: f64, s0: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.sigma = vec![s0];
    c.q = 1.0;
    c.q_terminal = 1.0;
    c.into_model("quadratic", grid, vec![lambda], ActionSet::trivial())
}

/// Brownian motion `s0 B` with `g = -x_T^2` and no running cost.
pub fn terminal_square(grid: TimeGrid, s0: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.sigma = vec![s0];
    c.q_terminal = 1.0;
    c.into_model("terminal_square", grid, vec![0.0], ActionSet::trivial())
}

/// Mean-field control problem: `b = theta (E x - x) + u`, `U = {-1, 0, 1}`,
/// `f = -x^2 - rho u^2`, `g = -x_T^2`, `A = -1/2`.
pub fn controlled_mean_field(grid: TimeGrid, theta: f64, s0: f64, rho: f64) -> ModelSpec {
    let mut c = LinearMeanField::zero(1);
    c.theta = theta;
    c.sigma = vec![s0];
    c.control_gain = 1.0;
    c.q = 1.0;
    c.rho = rho;
    c.q_terminal = 1.0;
    c.into_model(
        "controlled_mean_field",
        grid,
        vec![0.5],
        ActionSet::scalar_finite(&[-1.0, 0.0, 1.0]),
    )
}

/// Uncontrolled linear model with linear costs:
/// `A = diag(-lambda_k)`, `b = beta x + theta (E x - x)`, `sigma = s0 I`,
/// `f = <a1, x_t>`, `g = <ag, x_T>`. Its value is linear in the mean, see
/// [`linear_value_weights`].
pub fn linear_costs(
    grid: TimeGrid,
    lambda: Vec<f64>,
    beta: f64,
    theta: f64,
    s0: f64,
    a1: Vec<f64>,
    ag: Vec<f64>,
) -> ModelSpec {
    let d = lambda.len();
    let mut c = LinearMeanField::zero(d);
    c.kappa = -beta;
    c.theta = theta;
    c.sigma = vec![s0; d];
    c.a1 = a1;
    c.ag = ag;
    c.into_model("linear_costs", grid, lambda, ActionSet::trivial())
}

/// `h(t)` with `v(t, mu) = <E x_t, h(t)>` for [`linear_costs`]:
/// `h_k(t) = ag_k e^{c_k (T - t)} + a1_k (e^{c_k (T - t)} - 1) / c_k`, `c_k = beta - lambda_k`.
pub fn linear_value_weights(
    t: f64,
    horizon: f64,
    lambda: &[f64],
    beta: f64,
    a1: &[f64],
    ag: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let tau = horizon - t;
    let mut h = Vec::with_capacity(lambda.len());
    let mut dh = Vec::with_capacity(lambda.len());
    for k in 0..lambda.len() {
        let c = beta - lambda[k];
        let e = (c * tau).exp();
        let growth = if c.abs() < 1e-12 { tau } else { (e - 1.0) / c };
        h.push(ag[k] * e + a1[k] * growth);
        // dh/dt = -c h - a1
        dh.push(-c * h[k] - a1[k]);
    }
    (h, dh)
}

/// Drift/diffusion pairs `(F, G)` with `A = 0` in `d` dimensions.
pub fn ito_pairs(grid: TimeGrid, d: usize) -> Vec<ModelSpec> {
    let s0 = 0.4;
    let mut constant = LinearMeanField::zero(d);
    constant.shift = (0..d).map(|k| 0.5 - 0.75 * k as f64).collect();
    let mut brownian = LinearMeanField::zero(d);
    brownian.sigma = vec![s0; d];
    let mut reverting = LinearMeanField::zero(d);
    reverting.kappa = 1.0;
    reverting.sigma = vec![s0; d];
    let mut mean_field = LinearMeanField::zero(d);
    mean_field.theta = 1.0;
    mean_field.shift = vec![0.2; d];
    mean_field.sigma = vec![s0; d];
    vec![
        constant.into_model("constant_drift", grid, vec![0.0; d], ActionSet::trivial()),
        brownian.into_model("brownian", grid, vec![0.0; d], ActionSet::trivial()),
        reverting.into_model("reverting", grid, vec![0.0; d], ActionSet::trivial()),
        mean_field.into_model("mean_field", grid, vec![0.0; d], ActionSet::trivial()),
    ]
}

/// Every built-in model with representative parameters.
pub fn all_models(grid: TimeGrid) -> Vec<ModelSpec> {
    let mut v = vec![
        frozen(grid, 2),
        ou(grid, 1.0, 0.5),
        mean_reversion(grid, 1.0, 0.5, 1.0),
        weak_order(grid, 1.0, 0.2),
        controlled_linear(grid),
        quadratic(grid, 1.0, 0.5),
        terminal_square(grid, 0.5),
        controlled_mean_field(grid, 1.0, 0.3, 0.1),
        linear_costs(
            grid,
            vec![1.0, 0.5],
            0.3,
            0.5,
            0.3,
            vec![1.0, -0.5],
            vec![0.5, 1.0],
        ),
    ];
    v.extend(ito_pairs(grid, 2));
    v
}

/// Looks a built-in model up by tag with its default parameters.
pub fn by_tag(tag: &str, grid: TimeGrid) -> Option<ModelSpec> {
    all_models(grid).into_iter().find(|m| m.tag == tag)
}
