//! Hamiltonians of the master Bellman equation on finitely supported laws,
//! HJB residuals for candidate solutions, and the investment Hamiltonian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::CylindricalFunctional;
use crate::control::ActionSet;
use crate::error::{Error, Result};
use crate::hilbert::{dot, DenseMatrix, SpectralOperator};
use crate::measure::{
    wasserstein2_points, ControlLawView, EmpiricalControlMeasure, EmpiricalPathMeasure, LawView,
};
use crate::pathspace::PathView;
use crate::sde::builtin::linear_value_weights;
use crate::sde::ModelSpec;

/// Largest number of assignments an enumeration may visit.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// `F(x, u, nu)` at a fixed `(t, mu)`; `i` is the index of `x` in the support.
pub trait HamiltonianIntegrand: Sync {
    fn value(&self, i: usize, x: PathView<'_>, u: &[f64], nu: &EmpiricalControlMeasure) -> f64;

    fn depends_on_control_law(&self) -> bool;
}

/// Sup-form of the Hamiltonian on a finite support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianForm {
    /// Actions measurable w.r.t. a sample space in which every atom is split
    /// into two equally likely outcomes.
    MtBruteforce,
    /// Deterministic maps `a: supp(mu) -> U`.
    MMaps,
    /// `E[max_u F(xi, u)]`; requires `F` free of `nu`.
    Esssup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Maximizing assignment as action indices (empty for the esssup form).
    pub argmax: Vec<usize>,
}

fn finite_actions(set: &ActionSet) -> Result<&[Vec<f64>]> {
    set.actions().ok_or_else(|| {
        Error::Config("the Hamiltonian enumerations need a finite action set".into())
    })
}

fn capacity(q: usize, slots: usize) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..slots {
        total = total
            .checked_mul(q as u64)
            .filter(|t| *t <= ENUMERATION_CAP)
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "{q}^{slots} assignments exceed {ENUMERATION_CAP}; use the esssup form"
                ))
            })?;
    }
    Ok(total)
}

fn decode(mut code: u64, q: usize, slots: usize, out: &mut [usize]) {
    for s in (0..slots).rev() {
        out[s] = (code % q as u64) as usize;
        code /= q as u64;
    }
}

/// Maximum of `score` over all codes; ties go to the smallest code, which is
/// the lexicographically smallest assignment.
fn enumerate_max(
    total: u64,
    q: usize,
    slots: usize,
    score: impl Fn(&[usize]) -> f64 + Sync,
) -> (f64, Vec<usize>) {
    let chunk = 4096u64;
    let (value, code) = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut digits = vec![0; slots];
            let mut best = (f64::NEG_INFINITY, u64::MAX);
            for code in c * chunk..((c + 1) * chunk).min(total) {
                decode(code, q, slots, &mut digits);
                let v = score(&digits);
                if v > best.0 || best.1 == u64::MAX {
                    best = (v, code);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, u64::MAX),
            |a, b| {
                if b.1 == u64::MAX || (a.1 != u64::MAX && (a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)))
                {
                    a
                } else {
                    b
                }
            },
        );
    let mut digits = vec![0; slots];
    decode(code, q, slots, &mut digits);
    (value, digits)
}

/// Integrand values `F(x_i, u)` for a `nu`-free integrand.
fn table(f: &dyn HamiltonianIntegrand, mu: &LawView<'_>, actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dummy = EmpiricalControlMeasure {
        atoms: vec![actions[0].clone()],
        weights: vec![1.0],
    };
    (0..mu.len())
        .into_par_iter()
        .map(|i| {
            actions
                .iter()
                .map(|u| f.value(i, mu.atom(i), u, &dummy))
                .collect()
        })
        .collect()
}

/// `sup_a E[F(xi, a, P_a)]` over one of the three sup-forms.
///
/// All forms sum atoms in index order with identical per-atom terms, so on
/// `nu`-free integrands they return bit-identical values.
pub fn hamiltonian_sup_finite(
    f: &dyn HamiltonianIntegrand,
    mu: &LawView<'_>,
    actions: &ActionSet,
    form: HamiltonianForm,
) -> Result<HamiltonianValue> {
    let us = finite_actions(actions)?;
    let (k, q) = (mu.len(), us.len());
    let p = mu.weights();
    let free = !f.depends_on_control_law();
    match form {
        HamiltonianForm::Esssup => {
            if !free {
                return Err(Error::Unsupported(
                    "the esssup form needs an integrand free of the control law".into(),
                ));
            }
            let tab = table(f, mu, us);
            let mut acc = 0.0;
            let mut argmax = Vec::with_capacity(k);
            for i in 0..k {
                let mut best = 0;
                for u in 1..q {
                    if tab[i][u] > tab[i][best] {
                        best = u;
                    }
                }
                acc += p[i] * tab[i][best];
                argmax.push(best);
            }
            Ok(HamiltonianValue { value: acc, argmax })
        }
        HamiltonianForm::MMaps => {
            let total = capacity(q, k)?;
            let tab = if free { Some(table(f, mu, us)) } else { None };
            let (value, argmax) = enumerate_max(total, q, k, |a| {
                let nu = || EmpiricalControlMeasure {
                    atoms: a.iter().map(|ai| us[*ai].clone()).collect(),
                    weights: p.clone(),
                };
                let nu = if free { None } else { Some(nu()) };
                let mut acc = 0.0;
                for i in 0..k {
                    let v = match (&tab, &nu) {
                        (Some(t), _) => t[i][a[i]],
                        (None, Some(nu)) => f.value(i, mu.atom(i), &us[a[i]], nu),
                        _ => unreachable!(),
                    };
                    acc += p[i] * v;
                }
                acc
            });
            Ok(HamiltonianValue { value, argmax })
        }
        HamiltonianForm::MtBruteforce => {
            let total = capacity(q, 2 * k)?;
            let tab = if free { Some(table(f, mu, us)) } else { None };
            let (value, argmax) = enumerate_max(total, q, 2 * k, |a| {
                let nu = if free {
                    None
                } else {
                    Some(EmpiricalControlMeasure {
                        atoms: a.iter().map(|ai| us[*ai].clone()).collect(),
                        weights: (0..2 * k).map(|s| p[s / 2] / 2.0).collect(),
                    })
                };
                let mut acc = 0.0;
                for i in 0..k {
                    let v = |c: usize| match (&tab, &nu) {
                        (Some(t), _) => t[i][a[2 * i + c]],
                        (None, Some(nu)) => f.value(i, mu.atom(i), &us[a[2 * i + c]], nu),
                        _ => unreachable!(),
                    };
                    let half = p[i] / 2.0;
                    acc += half * v(0) + half * v(1);
                }
                acc
            });
            Ok(HamiltonianValue { value, argmax })
        }
    }
}

/// `sup E[F(xi, a(xi, r), P_{a(xi, r)})]` over maps `a: supp(mu) x cells -> U`,
/// where `r` is an independent randomizer taking cell `c` with probability
/// `cells[c]`. The argmax is atom-major.
pub fn hamiltonian_sup_randomized(
    f: &dyn HamiltonianIntegrand,
    mu: &LawView<'_>,
    actions: &ActionSet,
    cells: &[f64],
) -> Result<HamiltonianValue> {
    let us = finite_actions(actions)?;
    if cells.is_empty()
        || cells.iter().any(|w| !(*w > 0.0))
        || (cells.iter().sum::<f64>() - 1.0).abs() > 1e-12
    {
        return Err(Error::Config(
            "randomization cells need positive weights summing to one".into(),
        ));
    }
    let (k, q, r) = (mu.len(), us.len(), cells.len());
    let p = mu.weights();
    let total = capacity(q, k * r)?;
    let free = !f.depends_on_control_law();
    let tab = if free { Some(table(f, mu, us)) } else { None };
    let (value, argmax) = enumerate_max(total, q, k * r, |a| {
        let nu = if free {
            None
        } else {
            Some(EmpiricalControlMeasure {
                atoms: a.iter().map(|ai| us[*ai].clone()).collect(),
                weights: (0..k * r).map(|s| p[s / r] * cells[s % r]).collect(),
            })
        };
        let mut acc = 0.0;
        for i in 0..k {
            let row = &a[i * r..(i + 1) * r];
            let v = |u: usize| match (&tab, &nu) {
                (Some(t), _) => t[i][u],
                (None, Some(nu)) => f.value(i, mu.atom(i), &us[u], nu),
                _ => unreachable!(),
            };
            // a cell-constant assignment is a deterministic action
            let term = if row.iter().all(|u| *u == row[0]) {
                v(row[0])
            } else {
                row.iter().zip(cells).map(|(u, w)| w * v(*u)).sum()
            };
            acc += p[i] * term;
        }
        acc
    });
    Ok(HamiltonianValue { value, argmax })
}

/// `F(x, u, nu) = -W_2(nu, target)`.
#[derive(Debug, Clone)]
pub struct W2Penalty {
    pub target: EmpiricalControlMeasure,
}

impl HamiltonianIntegrand for W2Penalty {
    fn value(&self, _i: usize, _x: PathView<'_>, _u: &[f64], nu: &EmpiricalControlMeasure) -> f64 {
        -wasserstein2_points(nu, &self.target).unwrap_or(f64::INFINITY)
    }

    fn depends_on_control_law(&self) -> bool {
        true
    }
}

/// `F(x, u) = table[i][index of u]`, for tests and the CLI.
#[derive(Debug, Clone)]
pub struct TabulatedIntegrand {
    pub actions: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl HamiltonianIntegrand for TabulatedIntegrand {
    fn value(&self, i: usize, _x: PathView<'_>, u: &[f64], _nu: &EmpiricalControlMeasure) -> f64 {
        let k = self
            .actions
            .iter()
            .position(|a| a.as_slice() == u)
            .expect("action outside the table");
        self.values[i][k]
    }

    fn depends_on_control_law(&self) -> bool {
        false
    }
}

/// `F(x, u) = <x_T, e_1> u` (scalar `u`): rewards matching the sign of the path.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignMatching;

impl HamiltonianIntegrand for SignMatching {
    fn value(&self, _i: usize, x: PathView<'_>, u: &[f64], _nu: &EmpiricalControlMeasure) -> f64 {
        x.current()[0] * u[0]
    }

    fn depends_on_control_law(&self) -> bool {
        false
    }
}

/// `F(x, u) = f + <b, d_mu w(x)> + 1/2 Tr(sigma sigma^* d_x d_mu w(x))` from a
/// model and the derivative fields of a candidate at `(t, mu)`.
pub struct ModelIntegrand<'a> {
    model: &'a ModelSpec,
    t: f64,
    law: &'a LawView<'a>,
    dmu: Vec<f64>,
    dxdmu: Vec<f64>,
}

impl HamiltonianIntegrand for ModelIntegrand<'_> {
    fn value(&self, i: usize, x: PathView<'_>, u: &[f64], _nu: &EmpiricalControlMeasure) -> f64 {
        let (d, r) = (self.model.d(), self.model.diffusion_rank());
        let nu = ControlLawView::new(u, u.len());
        let c = &self.model.coefficients;
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; r];
        c.drift(self.t, x, self.law, u, &nu, &mut b);
        c.diffusion(self.t, x, self.law, u, &nu, &mut s);
        let g = &self.dmu[i * d..(i + 1) * d];
        let h = &self.dxdmu[i * d * d..(i + 1) * d * d];
        let trace: f64 = (0..r).map(|k| s[k] * s[k] * h[k * d + k]).sum();
        c.running_cost(self.t, x, self.law, u, &nu) + dot(&b, g) + 0.5 * trace
    }

    fn depends_on_control_law(&self) -> bool {
        self.model.coefficients.depends_on_control_law()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbResidual {
    pub candidate: String,
    pub model: String,
    pub t: f64,
    pub time_term: f64,
    /// `E <xi_t, A^* d_mu w(xi)>`.
    pub generator_term: f64,
    pub hamiltonian: f64,
    pub residual: f64,
    /// `|w(T, mu) - E g(xi, mu)|`.
    pub terminal_gap: f64,
}

/// Evaluates the HJB equation at `(t, mu)` for a candidate classical solution.
pub fn hjb_residual(
    w: &dyn CylindricalFunctional,
    model: &ModelSpec,
    t: f64,
    mu: &EmpiricalPathMeasure,
    form: HamiltonianForm,
) -> Result<HjbResidual> {
    if !mu.grid().same_as(&model.grid) || mu.dim() != model.d() {
        return Err(Error::Config(
            "measure and model live on different grids or spaces".into(),
        ));
    }
    if model.coefficients.depends_on_control_law() {
        return Err(Error::Unsupported(
            "residuals need coefficients free of the control law".into(),
        ));
    }
    let grid = model.grid;
    let j = grid.snap(t)?;
    let t = grid.time(j);
    let law = mu.view(j);
    let missing = |what: &str| Error::Contract(format!("candidate `{}` lacks {what}", w.tag()));
    let time_term = w.dt(t, &law).ok_or_else(|| missing("a time derivative"))?;
    let dmu = w
        .dmu_all(t, &law)
        .ok_or_else(|| missing("a measure derivative"))?;
    let dxdmu = w
        .dxdmu_all(t, &law)
        .ok_or_else(|| missing("a second-order derivative"))?;
    if dmu.iter().chain(&dxdmu).any(|v| !v.is_finite()) || !time_term.is_finite() {
        return Err(missing("finite derivative fields"));
    }
    let d = model.d();
    let eig = &model.generator.eigenvalues;
    let generator_term = {
        let terms: Vec<f64> = (0..law.len())
            .map(|i| {
                let x = law.atom(i).current();
                law.weight(i) * (0..d).map(|k| x[k] * eig[k] * dmu[i * d + k]).sum::<f64>()
            })
            .collect();
        crate::stats::pairwise_sum(&terms)
    };
    let integrand = ModelIntegrand {
        model,
        t,
        law: &law,
        dmu,
        dxdmu,
    };
    let hamiltonian = hamiltonian_sup_finite(&integrand, &law, &model.actions, form)?.value;
    let terminal = mu.full_view();
    let expected_g = terminal.expect(|x| model.coefficients.terminal_cost(x, &terminal));
    let terminal_gap = (w.eval(grid.horizon, &terminal) - expected_g).abs();
    Ok(HjbResidual {
        candidate: w.tag(),
        model: model.tag.clone(),
        t,
        time_term,
        generator_term,
        hamiltonian,
        residual: time_term + generator_term + hamiltonian,
        terminal_gap,
    })
}

/// `w(t, mu) = <E x_t, h(t)>`, the value of the uncontrolled linear-cost model
/// built by [`crate::sde::builtin::linear_costs`] with the same parameters.
#[derive(Debug, Clone)]
pub struct LinearValue {
    pub horizon: f64,
    pub lambda: Vec<f64>,
    pub beta: f64,
    pub a1: Vec<f64>,
    pub ag: Vec<f64>,
}

impl CylindricalFunctional for LinearValue {
    fn tag(&self) -> String {
        "linear_value".into()
    }

    fn eval(&self, t: f64, law: &LawView<'_>) -> f64 {
        let (h, _) =
            linear_value_weights(t, self.horizon, &self.lambda, self.beta, &self.a1, &self.ag);
        dot(law.mean_now(), &h)
    }

    fn dt(&self, t: f64, law: &LawView<'_>) -> Option<f64> {
        let (_, dh) =
            linear_value_weights(t, self.horizon, &self.lambda, self.beta, &self.a1, &self.ag);
        Some(dot(law.mean_now(), &dh))
    }

    fn dmu(&self, t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        Some(linear_value_weights(t, self.horizon, &self.lambda, self.beta, &self.a1, &self.ag).0)
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(DenseMatrix::zeros(self.lambda.len()))
    }

    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(self.dmu(t, law, law.atom(0))?.repeat(law.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestmentSolution {
    pub u_star: Vec<f64>,
    pub value: f64,
    /// `e^{-rt} <M u*, u*>`, reported when no box constraint is active.
    pub unconstrained_value: Option<f64>,
}

/// `<C u, p> - e^{-rt} (<a2, u> + <M u, u>)`.
pub fn investment_objective(
    u: &[f64],
    p: &[f64],
    t: f64,
    r: f64,
    a2: &[f64],
    c: &SpectralOperator,
    m: &SpectralOperator,
) -> f64 {
    let disc = (-r * t).exp();
    (0..u.len())
        .map(|k| {
            c.eigenvalues[k] * u[k] * p[k] - disc * (a2[k] * u[k] + m.eigenvalues[k] * u[k] * u[k])
        })
        .sum()
}

/// Maximizer of the investment Hamiltonian over a box `U`, coordinatewise
/// `u*_k = (e^{rt} c_k p_k - a2_k) / (2 m_k)` clamped to `[lo_k, hi_k]`.
pub fn investment_hamiltonian_closed_form(
    p: &[f64],
    t: f64,
    r: f64,
    a2: &[f64],
    c: &SpectralOperator,
    m: &SpectralOperator,
    actions: &ActionSet,
) -> Result<InvestmentSolution> {
    let ActionSet::Box { lo, hi } = actions else {
        return Err(Error::Config(
            "the investment Hamiltonian needs a box action set".into(),
        ));
    };
    let d = p.len();
    if [a2.len(), c.dim(), m.dim(), lo.len()]
        .iter()
        .any(|n| *n != d)
    {
        return Err(Error::Config(
            "investment data of mismatched dimensions".into(),
        ));
    }
    if m.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("M must be positive definite".into()));
    }
    let growth = (r * t).exp();
    let free: Vec<f64> = (0..d)
        .map(|k| 0.5 * (growth * c.eigenvalues[k] * p[k] - a2[k]) / m.eigenvalues[k])
        .collect();
    let u_star: Vec<f64> = (0..d).map(|k| free[k].clamp(lo[k], hi[k])).collect();
    let value = investment_objective(&u_star, p, t, r, a2, c, m);
    let interior = u_star == free;
    let unconstrained_value = interior.then(|| {
        (-r * t).exp()
            * (0..d)
                .map(|k| m.eigenvalues[k] * free[k] * free[k])
                .sum::<f64>()
    });
    Ok(InvestmentSolution {
        u_star,
        value,
        unconstrained_value,
    })
}
