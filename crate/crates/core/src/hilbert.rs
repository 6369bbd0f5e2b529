//! Truncated Hilbert-space linear algebra.
//!
//! Every space is represented by its first `d` coordinates against a fixed
//! orthonormal basis, and every operator is diagonal in that basis. This is
//! enough for the mild formulation, which only ever applies `e^{tA}`.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Truncation levels of the state space `H` and the noise space `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub d: usize,
    pub d_noise: usize,
}

impl SpaceSpec {
    pub fn new(d: usize, d_noise: usize) -> Result<Self> {
        if d == 0 || d_noise == 0 {
            return Err(Error::Config(format!(
                "space dimensions must be positive (d = {d}, dK = {d_noise})"
            )));
        }
        Ok(Self { d, d_noise })
    }

    /// Number of diagonal entries of a `d x dK` diffusion operator.
    pub fn diffusion_rank(&self) -> usize {
        self.d.min(self.d_noise)
    }
}

/// Coordinates of an element of `H` (or `K`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HilbertVec(pub Vec<f64>);

impl HilbertVec {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn basis(d: usize, k: usize) -> Self {
        let mut v = Self::zeros(d);
        v.0[k] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|x| a * x).collect())
    }

    pub fn add(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }
}

impl From<Vec<f64>> for HilbertVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for HilbertVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for HilbertVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Generator of a pseudo-contraction semigroup.
    Generator,
    Bounded,
    HilbertSchmidt,
}

/// A diagonal operator in the common basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    pub eigenvalues: Vec<f64>,
    pub kind: OperatorKind,
    /// Pseudo-contraction bound `eta` with `||e^{tA}|| <= e^{eta t}`.
    /// Only meaningful for generators.
    pub eta: f64,
}

impl SpectralOperator {
    /// Generator with a declared bound `eta`; rejects `max eigenvalue > eta`.
    pub fn generator(eigenvalues: Vec<f64>, eta: f64) -> Result<Self> {
        let op = Self {
            eigenvalues,
            kind: OperatorKind::Generator,
            eta,
        };
        op.validate()?;
        Ok(op)
    }

    /// Generator whose bound is the largest eigenvalue.
    pub fn generator_tight(eigenvalues: Vec<f64>) -> Self {
        let eta = max_or_zero(&eigenvalues);
        Self {
            eigenvalues,
            kind: OperatorKind::Generator,
            eta,
        }
    }

    pub fn zero_generator(d: usize) -> Self {
        Self::generator_tight(vec![0.0; d])
    }

    pub fn bounded(diagonal: Vec<f64>) -> Self {
        Self {
            eigenvalues: diagonal,
            kind: OperatorKind::Bounded,
            eta: 0.0,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::bounded(vec![1.0; d])
    }

    pub fn hilbert_schmidt(diagonal: Vec<f64>) -> Self {
        Self {
            eigenvalues: diagonal,
            kind: OperatorKind::HilbertSchmidt,
            eta: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        max_or_zero(&self.eigenvalues)
    }

    pub fn is_zero(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l == 0.0)
    }

    pub fn hs_norm(&self) -> f64 {
        norm(&self.eigenvalues)
    }

    /// Recomputes the generator bound and rejects inconsistent metadata.
    pub fn validate(&self) -> Result<()> {
        if self.eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("non-finite eigenvalue".into()));
        }
        if self.kind == OperatorKind::Generator && self.max_eigenvalue() > self.eta {
            return Err(Error::Config(format!(
                "declared pseudo-contraction bound eta = {} is below the largest eigenvalue {}",
                self.eta,
                self.max_eigenvalue()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<HilbertVec> {
        check_dim(self.dim(), x.len())?;
        Ok(HilbertVec(
            self.eigenvalues.iter().zip(x).map(|(l, v)| l * v).collect(),
        ))
    }

    /// Multiplies `x` in place by `e^{tA}`.
    pub fn semigroup_in_place(&self, t: f64, x: &mut [f64]) {
        for (l, v) in self.eigenvalues.iter().zip(x.iter_mut()) {
            if *l != 0.0 {
                *v *= (l * t).exp();
            }
        }
    }

    /// Diagonal of `e^{tA}`.
    pub fn semigroup_factors(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (l * t).exp()).collect()
    }
}

fn max_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Config(format!(
            "dimension mismatch: operator has dimension {expected}, vector has {got}"
        )));
    }
    Ok(())
}

/// `e^{tA} x` for a diagonal generator.
pub fn semigroup_apply(a: &SpectralOperator, t: f64, x: &[f64]) -> Result<HilbertVec> {
    if a.kind != OperatorKind::Generator {
        return Err(Error::Config("semigroup_apply needs a generator".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "semigroup time must be nonnegative, got {t}"
        )));
    }
    check_dim(a.dim(), x.len())?;
    let mut out = x.to_vec();
    a.semigroup_in_place(t, &mut out);
    Ok(HilbertVec(out))
}

/// Yosida approximation `A_n = n A (n - A)^{-1}`.
pub fn yosida(a: &SpectralOperator, n: f64) -> Result<SpectralOperator> {
    if a.kind != OperatorKind::Generator {
        return Err(Error::Config("yosida needs a generator".into()));
    }
    if !(n > a.eta) {
        return Err(Error::Domain(format!(
            "Yosida index n = {n} must exceed the pseudo-contraction bound eta = {}",
            a.eta
        )));
    }
    let eig = a
        .eigenvalues
        .iter()
        .map(|&l| n * l / (n - l))
        .collect::<Vec<_>>();
    Ok(SpectralOperator::generator_tight(eig))
}

/// Diagonal operators are self-adjoint, so `F* x = F x`.
pub fn adjoint_apply(f: &SpectralOperator, x: &[f64]) -> Result<HilbertVec> {
    f.apply(x)
}

/// Small dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, v) in diag.iter().enumerate() {
            m.set(k, k, *v);
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `(D + D^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        let mut s = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                s.set(i, j, 0.5 * (self.get(i, j) + self.get(j, i)));
            }
        }
        s
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| dot(&self.data[i * self.n..(i + 1) * self.n], x))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `Tr(diag(s) D)` for a diagonal `s` padded with zeros.
    pub fn weighted_trace(&self, diag: &[f64]) -> f64 {
        diag.iter()
            .enumerate()
            .take(self.n)
            .map(|(k, s)| s * self.get(k, k))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_generator_is_identity() {
        let a = SpectralOperator::zero_generator(3);
        let x = [1.5, -2.0, 0.25];
        assert_eq!(semigroup_apply(&a, 5.0, &x).unwrap().0, x.to_vec());
    }

    #[test]
    fn scalar_semigroup() {
        let a = SpectralOperator::generator_tight(vec![-1.0]);
        let y = semigroup_apply(&a, 1.0, &[2.0]).unwrap();
        assert_abs_diff_eq!(y[0], 0.735_758_882_342_884_6, epsilon = 1e-15);
        let a = SpectralOperator::generator_tight(vec![-1.0, -4.0]);
        let y = semigroup_apply(&a, 0.5, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(y[0], (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn semigroup_rejects_bad_input() {
        let a = SpectralOperator::generator_tight(vec![-1.0, -4.0]);
        assert!(matches!(
            semigroup_apply(&a, 1.0, &[1.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            semigroup_apply(&a, -1.0, &[1.0, 1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn yosida_values() {
        let z = yosida(&SpectralOperator::zero_generator(1), 10.0).unwrap();
        assert_eq!(z.eigenvalues, vec![0.0]);
        let a = yosida(&SpectralOperator::generator_tight(vec![-1.0]), 10.0).unwrap();
        assert_abs_diff_eq!(a.eigenvalues[0], -10.0 / 11.0, epsilon = 1e-15);
        let a = yosida(&SpectralOperator::generator_tight(vec![-100.0]), 4.0).unwrap();
        assert_abs_diff_eq!(a.eigenvalues[0], -400.0 / 104.0, epsilon = 1e-14);
        assert_eq!(a.kind, OperatorKind::Generator);
    }

    #[test]
    fn yosida_domain() {
        let a = SpectralOperator::generator(vec![-1.0, 0.5], 2.0).unwrap();
        assert!(matches!(yosida(&a, 2.0), Err(Error::Domain(_))));
        assert!(matches!(yosida(&a, 1.0), Err(Error::Domain(_))));
        assert!(yosida(&a, 2.5).is_ok());
    }

    #[test]
    fn inconsistent_eta_rejected() {
        assert!(SpectralOperator::generator(vec![1.0], 0.5).is_err());
    }

    #[test]
    fn adjoint_examples() {
        let x = [0.3, -0.7];
        assert_eq!(
            adjoint_apply(&SpectralOperator::identity(2), &x).unwrap().0,
            x.to_vec()
        );
        let f = SpectralOperator::bounded(vec![-1.0, -2.0]);
        assert_eq!(adjoint_apply(&f, &[1.0, 1.0]).unwrap().0, vec![-1.0, -2.0]);
        let f = SpectralOperator::bounded(vec![3.0]);
        assert_eq!(adjoint_apply(&f, &[0.0]).unwrap().0, vec![0.0]);
    }

    #[test]
    fn yosida_error_halves_when_n_doubles() {
        let eig = vec![-3.0, -1.0, -0.2];
        let a = SpectralOperator::generator_tight(eig.clone());
        let x = [1.0, -2.0, 0.5];
        let ax = a.apply(&x).unwrap();
        let err = |n: f64| {
            let an = yosida(&a, n).unwrap();
            dist(&an.apply(&x).unwrap(), &ax)
        };
        let mut n = 4.0 * 3.0;
        let mut prev = err(n);
        for _ in 0..6 {
            n *= 2.0;
            let e = err(n);
            assert!(e < prev);
            assert!(e / prev <= 0.6, "ratio {}", e / prev);
            prev = e;
        }
    }

    proptest! {
        #[test]
        fn semigroup_law(
            eig in proptest::collection::vec(-5.0f64..1.0, 3),
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            s in 0.0f64..2.0,
            t in 0.0f64..2.0,
        ) {
            let a = SpectralOperator::generator_tight(eig);
            let two = semigroup_apply(&a, s, &semigroup_apply(&a, t, &x).unwrap()).unwrap();
            let one = semigroup_apply(&a, s + t, &x).unwrap();
            for k in 0..3 {
                prop_assert!((two[k] - one[k]).abs() <= 1e-12 * (1.0 + one[k].abs()));
            }
        }

        #[test]
        fn pseudo_contraction_bound(
            eig in proptest::collection::vec(-5.0f64..1.0, 4),
            x in proptest::collection::vec(-10.0f64..10.0, 4),
            t in 0.0f64..3.0,
        ) {
            let a = SpectralOperator::generator_tight(eig);
            let y = semigroup_apply(&a, t, &x).unwrap();
            prop_assert!(y.norm() <= (a.eta * t).exp() * norm(&x) * (1.0 + 1e-14));
        }
    }
}
