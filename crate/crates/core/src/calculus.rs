//! Pathwise derivatives on Wasserstein path space and the functional Itô
//! formula verifier.
//!
//! Functionals are evaluated on a law already stopped at the current node
//! (a [`LawView`]), so `phi(t, mu) = phi(t, mu_{[0,t]})` holds by construction.
//! Finite differences split a single atom: moving atom `i` of weight `p_i`
//! by `eps h 1_{[t,T]}` changes `phi` by `eps p_i <d_mu phi(x_i), h> + O(eps^2)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlPolicy;
use crate::error::{Error, Result};
use crate::hilbert::{dot, DenseMatrix, HilbertVec};
use crate::measure::{EmpiricalPathMeasure, LawView};
use crate::pathspace::{bump_at, stop_at, PathGrid, PathView};
use crate::sde::integrate::{integrate_with, IntegrateOptions};
use crate::sde::{InitialLaw, ModelSpec};
use crate::stats::{grouped_jackknife_se, pairwise_sum, weighted_sum};

/// Real function on `[0,T] x P_2(C([0,T]; H))` with optional closed-form
/// pathwise derivatives.
pub trait CylindricalFunctional: Send + Sync {
    fn tag(&self) -> String;

    /// `phi(t, mu)`; `law` is `mu` stopped at the node of `t`.
    fn eval(&self, t: f64, law: &LawView<'_>) -> f64;

    /// `false` for functionals outside the differentiable class; every
    /// derivative operation then fails with [`Error::Unsupported`].
    fn regular(&self) -> bool {
        true
    }

    fn dt(&self, _t: f64, _law: &LawView<'_>) -> Option<f64> {
        None
    }

    fn dmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        None
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        None
    }

    /// `d_mu phi` at every atom of `law`, atom-major (`N * d` values).
    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(law.len() * law.dim());
        for i in 0..law.len() {
            out.extend(self.dmu(t, law, law.atom(i))?);
        }
        Some(out)
    }

    /// `d_x d_mu phi` at every atom, atom-major row-major (`N * d * d` values).
    fn dxdmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(law.len() * law.dim() * law.dim());
        for i in 0..law.len() {
            out.extend(self.dxdmu(t, law, law.atom(i))?.data);
        }
        Some(out)
    }
}

fn project(x: &[f64], h: &[f64]) -> f64 {
    dot(x, h)
}

/// `phi_1(t, mu) = int <x_t, h> mu(dx)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub h: Vec<f64>,
}

impl CylindricalFunctional for Linear {
    fn tag(&self) -> String {
        "linear".into()
    }

    fn eval(&self, _t: f64, law: &LawView<'_>) -> f64 {
        project(law.mean_now(), &self.h)
    }

    fn dt(&self, _t: f64, _law: &LawView<'_>) -> Option<f64> {
        Some(0.0)
    }

    fn dmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        Some(self.h.clone())
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(DenseMatrix::zeros(self.h.len()))
    }

    fn dmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(self.h.repeat(law.len()))
    }

    fn dxdmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(vec![0.0; law.len() * self.h.len() * self.h.len()])
    }
}

/// `t * int <x_t, h> mu(dx)`: the horizontal derivative is the linear part.
#[derive(Debug, Clone)]
pub struct TimeLinear {
    pub h: Vec<f64>,
}

impl CylindricalFunctional for TimeLinear {
    fn tag(&self) -> String {
        "time_linear".into()
    }

    fn eval(&self, t: f64, law: &LawView<'_>) -> f64 {
        t * project(law.mean_now(), &self.h)
    }

    fn dt(&self, _t: f64, law: &LawView<'_>) -> Option<f64> {
        Some(project(law.mean_now(), &self.h))
    }

    fn dmu(&self, t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        Some(self.h.iter().map(|v| t * v).collect())
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(DenseMatrix::zeros(self.h.len()))
    }

    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(
            self.h
                .iter()
                .map(|v| t * v)
                .collect::<Vec<_>>()
                .repeat(law.len()),
        )
    }

    fn dxdmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(vec![0.0; law.len() * self.h.len() * self.h.len()])
    }
}

/// `phi_2(t, mu) = (int <x_t, h> mu(dx))^2`.
#[derive(Debug, Clone)]
pub struct MeanSquare {
    pub h: Vec<f64>,
}

impl CylindricalFunctional for MeanSquare {
    fn tag(&self) -> String {
        "mean_square".into()
    }

    fn eval(&self, _t: f64, law: &LawView<'_>) -> f64 {
        let m = project(law.mean_now(), &self.h);
        m * m
    }

    fn dt(&self, _t: f64, _law: &LawView<'_>) -> Option<f64> {
        Some(0.0)
    }

    fn dmu(&self, _t: f64, law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        let m = project(law.mean_now(), &self.h);
        Some(self.h.iter().map(|v| 2.0 * m * v).collect())
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(DenseMatrix::zeros(self.h.len()))
    }

    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(self.dmu(t, law, law.atom(0))?.repeat(law.len()))
    }

    fn dxdmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(vec![0.0; law.len() * self.h.len() * self.h.len()])
    }
}

/// `phi_2` written as `int int <x_t, h> <y_t, h> mu(dx) mu(dy)`.
///
/// Evaluation performs the double sum (quadratic in the number of atoms).
#[derive(Debug, Clone)]
pub struct MeanSquareDouble {
    pub h: Vec<f64>,
}

impl MeanSquareDouble {
    fn kernel_mean(&self, law: &LawView<'_>) -> f64 {
        law.expect(|y| project(y.current(), &self.h))
    }
}

impl CylindricalFunctional for MeanSquareDouble {
    fn tag(&self) -> String {
        "mean_square_double".into()
    }

    fn eval(&self, _t: f64, law: &LawView<'_>) -> f64 {
        let proj: Vec<f64> = (0..law.len())
            .map(|i| project(law.atom(i).current(), &self.h))
            .collect();
        let w = law.weights();
        let mut inner = vec![0.0; law.len()];
        let rows: Vec<f64> = (0..law.len())
            .map(|i| {
                for (v, (wj, pj)) in inner.iter_mut().zip(w.iter().zip(&proj)) {
                    *v = wj * proj[i] * pj;
                }
                w[i] * pairwise_sum(&inner)
            })
            .collect();
        pairwise_sum(&rows)
    }

    fn dt(&self, _t: f64, _law: &LawView<'_>) -> Option<f64> {
        Some(0.0)
    }

    // d_mu int int k(x,y) = int (d_1 k(x,y) + d_2 k(y,x)) mu(dy) with k(x,y) = <x,h><y,h>
    fn dmu(&self, _t: f64, law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        let s = self.kernel_mean(law);
        Some(self.h.iter().map(|v| s * v + v * s).collect())
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(DenseMatrix::zeros(self.h.len()))
    }

    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(self.dmu(t, law, law.atom(0))?.repeat(law.len()))
    }

    fn dxdmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(vec![0.0; law.len() * self.h.len() * self.h.len()])
    }
}

/// `phi_3(t, mu) = int <x_t, Q x_t> mu(dx)` with `Q` diagonal or dense.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub q: DenseMatrix,
    pub diagonal: bool,
}

impl Quadratic {
    pub fn diagonal(q: &[f64]) -> Self {
        Self {
            q: DenseMatrix::from_diagonal(q),
            diagonal: true,
        }
    }

    pub fn dense(q: DenseMatrix) -> Self {
        Self { q, diagonal: false }
    }

    fn form(&self, x: &[f64]) -> f64 {
        if self.diagonal {
            x.iter()
                .enumerate()
                .map(|(k, v)| self.q.get(k, k) * v * v)
                .sum()
        } else {
            dot(x, &self.q.mul_vec(x))
        }
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        if self.diagonal {
            x.iter()
                .enumerate()
                .map(|(k, v)| 2.0 * self.q.get(k, k) * v)
                .collect()
        } else {
            let qx = self.q.mul_vec(x);
            let qtx = self.q.transpose().mul_vec(x);
            qx.iter().zip(&qtx).map(|(a, b)| a + b).collect()
        }
    }

    fn hessian(&self) -> DenseMatrix {
        let t = self.q.transpose();
        let mut h = DenseMatrix::zeros(self.q.n);
        for (o, (a, b)) in h.data.iter_mut().zip(self.q.data.iter().zip(&t.data)) {
            *o = a + b;
        }
        h
    }
}

impl CylindricalFunctional for Quadratic {
    fn tag(&self) -> String {
        if self.diagonal {
            "quadratic_diagonal".into()
        } else {
            "quadratic_dense".into()
        }
    }

    fn eval(&self, _t: f64, law: &LawView<'_>) -> f64 {
        law.expect(|x| self.form(x.current()))
    }

    fn dt(&self, _t: f64, _law: &LawView<'_>) -> Option<f64> {
        Some(0.0)
    }

    fn dmu(&self, _t: f64, _law: &LawView<'_>, x: PathView<'_>) -> Option<Vec<f64>> {
        Some(self.grad(x.current()))
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(self.hessian())
    }

    fn dmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        let d = law.dim();
        let mut out = vec![0.0; law.len() * d];
        if self.diagonal {
            for i in 0..law.len() {
                for (k, v) in law.atom(i).current().iter().enumerate() {
                    out[i * d + k] = 2.0 * self.q.get(k, k) * v;
                }
            }
        } else {
            let sym = self.hessian();
            for (i, row) in out.chunks_exact_mut(d).enumerate() {
                let x = law.atom(i).current();
                for (k, v) in row.iter_mut().enumerate() {
                    *v = dot(&sym.data[k * d..(k + 1) * d], x);
                }
            }
        }
        Some(out)
    }

    fn dxdmu_all(&self, _t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        Some(self.hessian().data.repeat(law.len()))
    }
}

/// `phi_4(t, mu) = int ||x||_t^2 mu(dx)` (running sup norm). Evaluation only:
/// its vertical derivative is not continuous.
#[derive(Debug, Clone, Default)]
pub struct SupSquare;

impl CylindricalFunctional for SupSquare {
    fn tag(&self) -> String {
        "sup_square".into()
    }

    fn eval(&self, _t: f64, law: &LawView<'_>) -> f64 {
        law.sup_second_moment()
    }

    fn regular(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct Constant {
    pub value: f64,
    pub dim: usize,
}

impl CylindricalFunctional for Constant {
    fn tag(&self) -> String {
        "constant".into()
    }

    fn eval(&self, _t: f64, _law: &LawView<'_>) -> f64 {
        self.value
    }

    fn dt(&self, _t: f64, _law: &LawView<'_>) -> Option<f64> {
        Some(0.0)
    }

    fn dmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim])
    }

    fn dxdmu(&self, _t: f64, _law: &LawView<'_>, _x: PathView<'_>) -> Option<DenseMatrix> {
        Some(DenseMatrix::zeros(self.dim))
    }
}

/// `sum_k phi_k`.
#[derive(Clone)]
pub struct Sum(pub Vec<Arc<dyn CylindricalFunctional>>);

fn add_into(acc: &mut Option<Vec<f64>>, v: Vec<f64>) {
    match acc {
        None => *acc = Some(v),
        Some(a) => a.iter_mut().zip(v).for_each(|(x, y)| *x += y),
    }
}

impl CylindricalFunctional for Sum {
    fn tag(&self) -> String {
        self.0.iter().map(|p| p.tag()).collect::<Vec<_>>().join("+")
    }

    fn eval(&self, t: f64, law: &LawView<'_>) -> f64 {
        self.0.iter().map(|p| p.eval(t, law)).sum()
    }

    fn regular(&self) -> bool {
        self.0.iter().all(|p| p.regular())
    }

    fn dt(&self, t: f64, law: &LawView<'_>) -> Option<f64> {
        self.0.iter().map(|p| p.dt(t, law)).sum()
    }

    fn dmu(&self, t: f64, law: &LawView<'_>, x: PathView<'_>) -> Option<Vec<f64>> {
        let mut acc = None;
        for p in &self.0 {
            add_into(&mut acc, p.dmu(t, law, x)?);
        }
        acc
    }

    fn dxdmu(&self, t: f64, law: &LawView<'_>, x: PathView<'_>) -> Option<DenseMatrix> {
        let mut acc = None;
        for p in &self.0 {
            add_into(&mut acc, p.dxdmu(t, law, x)?.data);
        }
        acc.map(|data| DenseMatrix { n: law.dim(), data })
    }

    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        let mut acc = None;
        for p in &self.0 {
            add_into(&mut acc, p.dmu_all(t, law)?);
        }
        acc
    }

    fn dxdmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        let mut acc = None;
        for p in &self.0 {
            add_into(&mut acc, p.dxdmu_all(t, law)?);
        }
        acc
    }
}

/// `c * phi`.
#[derive(Clone)]
pub struct Scaled {
    pub inner: Arc<dyn CylindricalFunctional>,
    pub factor: f64,
}

impl CylindricalFunctional for Scaled {
    fn tag(&self) -> String {
        format!("{}*{}", self.factor, self.inner.tag())
    }

    fn eval(&self, t: f64, law: &LawView<'_>) -> f64 {
        self.factor * self.inner.eval(t, law)
    }

    fn regular(&self) -> bool {
        self.inner.regular()
    }

    fn dt(&self, t: f64, law: &LawView<'_>) -> Option<f64> {
        self.inner.dt(t, law).map(|v| self.factor * v)
    }

    fn dmu(&self, t: f64, law: &LawView<'_>, x: PathView<'_>) -> Option<Vec<f64>> {
        self.inner
            .dmu(t, law, x)
            .map(|v| v.into_iter().map(|a| self.factor * a).collect())
    }

    fn dxdmu(&self, t: f64, law: &LawView<'_>, x: PathView<'_>) -> Option<DenseMatrix> {
        self.inner.dxdmu(t, law, x).map(|mut m| {
            m.data.iter_mut().for_each(|a| *a *= self.factor);
            m
        })
    }

    fn dmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        self.inner
            .dmu_all(t, law)
            .map(|v| v.into_iter().map(|a| self.factor * a).collect())
    }

    fn dxdmu_all(&self, t: f64, law: &LawView<'_>) -> Option<Vec<f64>> {
        self.inner
            .dxdmu_all(t, law)
            .map(|v| v.into_iter().map(|a| self.factor * a).collect())
    }
}

/// The built-in zoo in dimension `d` (`h = (1, -1/2, 1/3, ...)`, `Q = diag(1, 2, ...)`).
pub fn zoo(d: usize) -> Vec<Arc<dyn CylindricalFunctional>> {
    let h: Vec<f64> = (0..d)
        .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / (k + 1) as f64)
        .collect();
    let q: Vec<f64> = (0..d).map(|k| (k + 1) as f64).collect();
    let mut dense = DenseMatrix::from_diagonal(&q);
    if d > 1 {
        dense.set(0, 1, 0.25);
        dense.set(1, 0, -0.25);
    }
    vec![
        Arc::new(Linear { h: h.clone() }),
        Arc::new(MeanSquare { h: h.clone() }),
        Arc::new(MeanSquareDouble { h: h.clone() }),
        Arc::new(Quadratic::diagonal(&q)),
        Arc::new(Quadratic::dense(dense)),
        Arc::new(TimeLinear { h }),
        Arc::new(SupSquare),
        Arc::new(Constant { value: 1.5, dim: d }),
    ]
}

pub fn zoo_by_tag(tag: &str, d: usize) -> Result<Arc<dyn CylindricalFunctional>> {
    zoo(d)
        .into_iter()
        .find(|p| p.tag() == tag)
        .ok_or_else(|| Error::Config(format!("unknown functional `{tag}`")))
}

fn require_regular(phi: &dyn CylindricalFunctional) -> Result<()> {
    if phi.regular() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "`{}` has no pathwise derivatives",
            phi.tag()
        )))
    }
}

/// Default bump size `1e-5 (1 + ||x||_T)`.
pub fn default_eps(x: &PathGrid) -> f64 {
    1e-5 * (1.0 + x.full_view().sup_norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizontalDerivative {
    pub t: f64,
    pub delta: f64,
    pub value: f64,
    pub analytic: Option<f64>,
}

/// `[phi(t + delta, mu_{[0,t]}) - phi(t, mu)] / delta`; at `t = T` the
/// left-sided quotient at `T - delta` is returned.
pub fn horizontal_derivative(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    delta: f64,
) -> Result<HorizontalDerivative> {
    let grid = *mu.grid();
    let j = grid.snap(t)?;
    let k = ((delta / grid.dt()).round() as usize).max(1);
    let j = if j == grid.steps {
        j.checked_sub(k)
            .ok_or_else(|| Error::Domain("delta exceeds the horizon".into()))?
    } else {
        j
    };
    if j + k > grid.steps {
        return Err(Error::Domain("t + delta exceeds the horizon".into()));
    }
    let (t, t_next) = (grid.time(j), grid.time(j + k));
    let stopped: Vec<PathGrid> = mu.atoms().iter().map(|a| stop_at(a, j)).collect();
    let base = phi.eval(t, &mu.view(j));
    let frozen_base = phi.eval(t, &LawView::weighted(&stopped, mu.weights(), j));
    if base.to_bits() != frozen_base.to_bits() {
        return Err(Error::Contract(format!(
            "`{}` reads the future of its argument",
            phi.tag()
        )));
    }
    let moved = phi.eval(t_next, &LawView::weighted(&stopped, mu.weights(), j + k));
    Ok(HorizontalDerivative {
        t,
        delta: t_next - t,
        value: (moved - base) / (t_next - t),
        analytic: phi.dt(t, &mu.view(j)),
    })
}

fn check_atom(mu: &EmpiricalPathMeasure, i: usize) -> Result<f64> {
    let p = *mu
        .weights()
        .get(i)
        .ok_or_else(|| Error::Domain(format!("atom {i} out of range")))?;
    if p <= 0.0 {
        return Err(Error::Domain(format!("atom {i} has zero weight")));
    }
    Ok(p)
}

fn split_quotient(
    phi: &dyn CylindricalFunctional,
    t: f64,
    j: usize,
    atoms: &mut [PathGrid],
    weights: &[f64],
    base: f64,
    i: usize,
    h: &[f64],
    eps: f64,
) -> Result<f64> {
    let step: Vec<f64> = h.iter().map(|v| eps * v).collect();
    let moved = bump_at(&atoms[i], j, &step)?;
    let original = std::mem::replace(&mut atoms[i], moved);
    let bumped = phi.eval(t, &LawView::weighted(atoms, weights, j));
    atoms[i] = original;
    Ok((bumped - base) / (eps * weights[i]))
}

/// `<d_mu phi(t, mu)(x_i), h>` by splitting atom `i`.
pub fn measure_derivative_discrete(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    i: usize,
    h: &[f64],
    eps: f64,
) -> Result<f64> {
    require_regular(phi)?;
    check_atom(mu, i)?;
    if !(eps > 0.0) {
        return Err(Error::Domain("eps must be positive".into()));
    }
    if h.len() != mu.dim() {
        return Err(Error::Config("direction has wrong dimension".into()));
    }
    let j = mu.grid().snap(t)?;
    let t = mu.grid().time(j);
    let base = phi.eval(t, &mu.view(j));
    let mut atoms = mu.atoms().to_vec();
    split_quotient(phi, t, j, &mut atoms, mu.weights(), base, i, h, eps)
}

/// One-sided quotient with Richardson extrapolation `2 D(eps/2) - D(eps)`.
pub fn measure_derivative_richardson(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    i: usize,
    h: &[f64],
    eps: f64,
) -> Result<f64> {
    let coarse = measure_derivative_discrete(phi, t, mu, i, h, eps)?;
    let fine = measure_derivative_discrete(phi, t, mu, i, h, eps / 2.0)?;
    Ok(2.0 * fine - coarse)
}

fn field(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    eps: Option<f64>,
    richardson: bool,
) -> Result<Vec<HilbertVec>> {
    require_regular(phi)?;
    let j = mu.grid().snap(t)?;
    let t = mu.grid().time(j);
    let d = mu.dim();
    let base = phi.eval(t, &mu.view(j));
    (0..mu.len())
        .into_par_iter()
        .map_init(
            || mu.atoms().to_vec(),
            |atoms, i| {
                check_atom(mu, i)?;
                let eps = eps.unwrap_or_else(|| default_eps(&mu.atoms()[i]));
                let mut g = HilbertVec::zeros(d);
                for k in 0..d {
                    let e = HilbertVec::basis(d, k);
                    let coarse = split_quotient(phi, t, j, atoms, mu.weights(), base, i, &e, eps)?;
                    g[k] = if richardson {
                        let fine =
                            split_quotient(phi, t, j, atoms, mu.weights(), base, i, &e, eps / 2.0)?;
                        2.0 * fine - coarse
                    } else {
                        coarse
                    };
                }
                Ok(g)
            },
        )
        .collect()
}

/// `x_i -> d_mu phi(t, mu)(x_i)` on the support, one vector per atom.
pub fn measure_derivative_field(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    eps: Option<f64>,
) -> Result<Vec<HilbertVec>> {
    field(phi, t, mu, eps, false)
}

pub fn measure_derivative_field_richardson(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    eps: Option<f64>,
) -> Result<Vec<HilbertVec>> {
    field(phi, t, mu, eps, true)
}

/// Closed-form `d_mu phi` on the support.
pub fn analytic_field(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
) -> Result<Vec<HilbertVec>> {
    let j = mu.grid().snap(t)?;
    let law = mu.view(j);
    let flat = phi.dmu_all(mu.grid().time(j), &law).ok_or_else(|| {
        Error::Unsupported(format!(
            "`{}` has no closed-form measure derivative",
            phi.tag()
        ))
    })?;
    Ok(flat
        .chunks(mu.dim())
        .map(|c| HilbertVec(c.to_vec()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondDerivative {
    pub matrix: DenseMatrix,
    pub symmetrized: DenseMatrix,
}

/// Mass carried by each ghost atom in [`second_derivative`].
pub const GHOST_WEIGHT: f64 = 1e-2;

/// `d_x d_mu phi(t, mu)(x_i)`, column `k` being the difference quotient of
/// `y -> d_mu phi(t, mu)(y)` between `x_i + eps e_k` and `x_i`.
///
/// The field is read off at two ghost atoms (`x_i + eps e_k` and `x_i`, mass
/// [`GHOST_WEIGHT`] each, the rest rescaled), so both points see the same
/// measure. `eps` defaults to `1e-3 (1 + ||x_i||_T)`.
pub fn second_derivative(
    phi: &dyn CylindricalFunctional,
    t: f64,
    mu: &EmpiricalPathMeasure,
    i: usize,
    eps: Option<f64>,
) -> Result<SecondDerivative> {
    require_regular(phi)?;
    check_atom(mu, i)?;
    let grid = *mu.grid();
    let j = grid.snap(t)?;
    let t = grid.time(j);
    let d = mu.dim();
    let x = &mu.atoms()[i];
    let eps = eps.unwrap_or(1e-3 * (1.0 + x.full_view().sup_norm()));
    let pg = GHOST_WEIGHT;
    let n = mu.len();
    let mut weights: Vec<f64> = mu.weights().iter().map(|w| w * (1.0 - 2.0 * pg)).collect();
    weights.extend([pg, pg]);
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let shifted = bump_at(x, j, &HilbertVec::basis(d, k).scaled(eps))?;
            let mut atoms = mu.atoms().to_vec();
            atoms.push(shifted.clone());
            atoms.push(x.clone());
            let mut col = vec![0.0; d];
            for (l, c) in col.iter_mut().enumerate() {
                let step = HilbertVec::basis(d, l).scaled(eps);
                atoms[n] = bump_at(&shifted, j, &step)?;
                let upper = phi.eval(t, &LawView::weighted(&atoms, &weights, j));
                atoms[n] = shifted.clone();
                atoms[n + 1] = bump_at(x, j, &step)?;
                let lower = phi.eval(t, &LawView::weighted(&atoms, &weights, j));
                atoms[n + 1] = x.clone();
                *c = (upper - lower) / (eps * pg * eps);
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut matrix = DenseMatrix::zeros(d);
    for (k, col) in columns.iter().enumerate() {
        for (l, v) in col.iter().enumerate() {
            matrix.set(l, k, *v);
        }
    }
    let symmetrized = matrix.symmetrized();
    Ok(SecondDerivative {
        matrix,
        symmetrized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub functional_a: String,
    pub functional_b: String,
    pub pass: bool,
    pub max_eval_gap: f64,
    pub max_dt_gap: f64,
    pub max_dmu_gap: f64,
    pub max_dxdmu_gap: f64,
    /// Human-readable descriptions of the disagreements found.
    pub witnesses: Vec<String>,
}

/// Compares the finite-difference derivatives of two functionals that agree
/// on the sampled `(t, mu)`.
pub fn consistency_check(
    phi_a: &dyn CylindricalFunctional,
    phi_b: &dyn CylindricalFunctional,
    samples: &[(f64, EmpiricalPathMeasure)],
    tol: f64,
) -> Result<ConsistencyReport> {
    let mut r = ConsistencyReport {
        functional_a: phi_a.tag(),
        functional_b: phi_b.tag(),
        pass: true,
        max_eval_gap: 0.0,
        max_dt_gap: 0.0,
        max_dmu_gap: 0.0,
        max_dxdmu_gap: 0.0,
        witnesses: Vec::new(),
    };
    for (s, (t, mu)) in samples.iter().enumerate() {
        let j = mu.grid().snap(*t)?;
        let t = mu.grid().time(j);
        let (a, b) = (phi_a.eval(t, &mu.view(j)), phi_b.eval(t, &mu.view(j)));
        let gap = (a - b).abs();
        r.max_eval_gap = r.max_eval_gap.max(gap);
        if gap > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::Domain(format!(
                "functionals differ on sample {s}: {a} vs {b}"
            )));
        }
        let scale = 1.0 + a.abs();
        if j < mu.grid().steps {
            let delta = mu.grid().dt();
            let ha = horizontal_derivative(phi_a, t, mu, delta)?.value;
            let hb = horizontal_derivative(phi_b, t, mu, delta)?.value;
            r.max_dt_gap = r.max_dt_gap.max((ha - hb).abs());
            if (ha - hb).abs() > tol * scale {
                r.witnesses
                    .push(format!("sample {s}: horizontal {ha} vs {hb}"));
            }
        }
        let fa = measure_derivative_field(phi_a, t, mu, None)?;
        let fb = measure_derivative_field(phi_b, t, mu, None)?;
        for (i, (ga, gb)) in fa.iter().zip(&fb).enumerate() {
            let g = crate::hilbert::dist(ga, gb);
            r.max_dmu_gap = r.max_dmu_gap.max(g);
            if g > tol * scale {
                r.witnesses.push(format!(
                    "sample {s}, atom {i}: measure derivative gap {g:e}"
                ));
            }
        }
        for i in 0..mu.len() {
            let da = second_derivative(phi_a, t, mu, i, None)?.symmetrized;
            let db = second_derivative(phi_b, t, mu, i, None)?.symmetrized;
            let g = da.max_abs_diff(&db);
            r.max_dxdmu_gap = r.max_dxdmu_gap.max(g);
            if g > tol * scale {
                r.witnesses
                    .push(format!("sample {s}, atom {i}: second derivative gap {g:e}"));
            }
        }
    }
    r.pass = r.witnesses.is_empty();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoVariant {
    /// `A = 0`: `X = xi + int F dr + int G dB`.
    Plain,
    /// Mild solution with `A != 0`; adds `E <X_r, A^* d_mu phi>`.
    Mild,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub functional: String,
    pub model: String,
    pub variant: ItoVariant,
    pub t: f64,
    pub s: f64,
    pub particles: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub stderr: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Jackknife groups used for the standard error of the residual.
pub const ITO_GROUPS: usize = 10;

/// Checks the functional Itô formula along the particle system of `model`
/// (uncontrolled), from `t` to `s`.
///
/// The right-hand side uses left-endpoint quadrature on the grid with
/// `F = b`, `G = sigma` evaluated along the particles; the standard error
/// is a grouped jackknife over particles. Passes when
/// `|lhs - rhs| <= 3 se + 10 dt`.
pub fn ito_verify(
    phi: &dyn CylindricalFunctional,
    model: &ModelSpec,
    init: &dyn InitialLaw,
    t: f64,
    s: f64,
    particles: usize,
    seed: u64,
) -> Result<ItoReport> {
    let mut v = ito_verify_many(&[phi], model, init, t, s, particles, seed)?;
    Ok(v.remove(0))
}

/// [`ito_verify`] for several functionals along one simulated ensemble.
pub fn ito_verify_many(
    phis: &[&dyn CylindricalFunctional],
    model: &ModelSpec,
    init: &dyn InitialLaw,
    t: f64,
    s: f64,
    particles: usize,
    seed: u64,
) -> Result<Vec<ItoReport>> {
    for phi in phis {
        require_regular(*phi)?;
    }
    let variant = if model.generator.is_zero() {
        ItoVariant::Plain
    } else {
        ItoVariant::Mild
    };
    let policy = ControlPolicy::none();
    let e = integrate_with(
        model,
        init,
        &policy,
        &IntegrateOptions::new(t, particles, seed).until(s),
    )?;
    let grid = model.grid;
    let (d, n, r) = (model.d(), e.len(), model.diffusion_rank());
    let dt = grid.dt();
    let groups = ITO_GROUPS.min(n);
    let masks: Vec<Vec<f64>> = std::iter::once(None)
        .chain((0..groups).map(Some))
        .map(|g| {
            let size = match g {
                None => n,
                Some(g) => (0..n).filter(|i| i * groups / n == g).count(),
            };
            let w = 1.0 / (n - if g.is_some() { size } else { 0 }) as f64;
            (0..n)
                .map(|i| {
                    if g.is_some_and(|g| i * groups / n == g) {
                        0.0
                    } else {
                        w
                    }
                })
                .collect()
        })
        .collect();
    let eigen = &model.generator.eigenvalues;
    let coeffs = &model.coefficients;

    // rhs[step][functional][mask]
    let per_step: Vec<Vec<Vec<f64>>> = (e.start..e.end)
        .into_par_iter()
        .map(|j| -> Result<Vec<Vec<f64>>> {
            let tj = grid.time(j);
            let full = e.law(j);
            let nu = e.control_law(j);
            let mut drift = vec![0.0; n * d];
            let mut sig2 = vec![0.0; n * r.max(1)];
            let mut buf = vec![0.0; r];
            for i in 0..n {
                let x = e.particles[i].view(j);
                coeffs.drift(
                    tj,
                    x,
                    &full,
                    e.action(i, j),
                    &nu,
                    &mut drift[i * d..(i + 1) * d],
                );
                coeffs.diffusion(tj, x, &full, e.action(i, j), &nu, &mut buf);
                for k in 0..r {
                    sig2[i * r + k] = buf[k] * buf[k];
                }
            }
            let mut terms = vec![0.0; n];
            phis.iter()
                .map(|phi| {
                    masks
                        .iter()
                        .map(|w| {
                            let law = LawView::weighted(&e.particles, w, j);
                            let missing = || {
                                Error::Unsupported(format!(
                                    "`{}` lacks a closed-form derivative",
                                    phi.tag()
                                ))
                            };
                            let dtphi = phi.dt(tj, &law).ok_or_else(missing)?;
                            let g = phi.dmu_all(tj, &law).ok_or_else(missing)?;
                            let hess = phi.dxdmu_all(tj, &law).ok_or_else(missing)?;
                            let rows = terms
                                .iter_mut()
                                .zip(g.chunks_exact(d))
                                .zip(drift.chunks_exact(d))
                                .zip(sig2.chunks_exact(r.max(1)))
                                .zip(hess.chunks_exact(d * d));
                            for ((((term, gi), bi), si), hi) in rows {
                                let mut v = dot(bi, gi);
                                for k in 0..r {
                                    v += 0.5 * si[k] * hi[k * d + k];
                                }
                                *term = v;
                            }
                            if variant == ItoVariant::Mild {
                                for (i, term) in terms.iter_mut().enumerate() {
                                    let xi = e.particles[i].at(j);
                                    let gi = &g[i * d..(i + 1) * d];
                                    for k in 0..d {
                                        *term += xi[k] * eigen[k] * gi[k];
                                    }
                                }
                            }
                            Ok(dt * (dtphi + weighted_sum(w, &terms)))
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let (t_start, t_end) = (grid.time(e.start), grid.time(e.end));
    let reports = phis
        .iter()
        .enumerate()
        .map(|(f, phi)| {
            let sides = |m: usize| -> (f64, f64) {
                let w = &masks[m];
                let lhs = phi.eval(t_end, &LawView::weighted(&e.particles, w, e.end))
                    - phi.eval(t_start, &LawView::weighted(&e.particles, w, e.start));
                let rhs = pairwise_sum(&per_step.iter().map(|row| row[f][m]).collect::<Vec<_>>());
                (lhs, rhs)
            };
            let (lhs, rhs) = sides(0);
            let residual = lhs - rhs;
            let se = grouped_jackknife_se(groups, |g| {
                let (l, r) = sides(g.map_or(0, |g| g + 1));
                l - r
            });
            let tolerance = 3.0 * se + 10.0 * dt;
            ItoReport {
                functional: phi.tag(),
                model: model.tag.clone(),
                variant,
                t: t_start,
                s: t_end,
                particles: n,
                lhs,
                rhs,
                residual,
                stderr: se,
                tolerance,
                pass: residual.abs() <= tolerance,
            }
        })
        .collect();
    Ok(reports)
}
