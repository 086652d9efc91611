//! Concrete component families.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::problem::{check_dim, Component, Point, SmoothFunction};
use crate::prox::{
    prox_generic, prox_logistic_ridge, prox_rank_one_quadratic, resolvent_residual, sigmoid, softplus, ProxResult,
};
use crate::{Error, Result};

/// `f(x) = x'Ax/2 + b'x + c` with symmetric positive semidefinite `A`.
///
/// The eigendecomposition `A = Q diag(lambda) Q'` is computed once, so each
/// prox is `Q diag(1/(1 + gamma lambda)) Q' (z - gamma b)` at `O(d^2)` cost.
#[derive(Clone, Debug)]
pub struct QuadraticComponent {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl QuadraticComponent {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let d = b.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
        }
        let sym = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * (1.0 + eig.eigenvalues.amax())) {
            return Err(Error::SingularSystem);
        }
        Ok(Self { a: sym, b, c, basis: eig.eigenvectors, eigenvalues: eig.eigenvalues })
    }

    /// `f(x) = (x - center)' A (x - center) / 2`.
    pub fn centered(a: DMatrix<f64>, center: &Point) -> Result<Self> {
        let b = -(&a * center);
        let c = 0.5 * center.dot(&(&a * center));
        Self::new(a, b, c)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }
}

impl SmoothFunction for QuadraticComponent {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &Point) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x) + self.c
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.a * x + &self.b
    }
}

impl Component for QuadraticComponent {
    fn prox(&self, gamma: f64, z: &Point, _tol: f64) -> Result<ProxResult> {
        check_dim(z, self.dim())?;
        let rhs = z - &self.b * gamma;
        let mut coords = self.basis.tr_mul(&rhs);
        for (c, lambda) in coords.iter_mut().zip(self.eigenvalues.iter()) {
            *c /= 1.0 + gamma * lambda;
        }
        let point = &self.basis * coords;
        let residual = resolvent_residual(gamma, z, &point, &self.gradient(&point));
        Ok(ProxResult { point, residual, inner_iters: 0 })
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        Some((self.a.clone(), self.b.clone()))
    }
}

/// Ridge-regression sample: `f(x) = (a'x - y)^2 / 2 + mu |x|^2 / 2`.
#[derive(Clone, Debug)]
pub struct RidgeComponent {
    row: Point,
    target: f64,
    mu: f64,
}

impl RidgeComponent {
    pub fn new(row: Point, target: f64, mu: f64) -> Self {
        Self { row, target, mu }
    }

    pub fn row(&self) -> &Point {
        &self.row
    }

    pub fn target(&self) -> f64 {
        self.target
    }
}

impl SmoothFunction for RidgeComponent {
    fn dim(&self) -> usize {
        self.row.len()
    }

    fn value(&self, x: &Point) -> f64 {
        let r = self.row.dot(x) - self.target;
        0.5 * r * r + 0.5 * self.mu * x.norm_squared()
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.row * (self.row.dot(x) - self.target) + x * self.mu
    }
}

impl Component for RidgeComponent {
    fn prox(&self, gamma: f64, z: &Point, _tol: f64) -> Result<ProxResult> {
        prox_rank_one_quadratic(&self.row, self.target, self.mu, gamma, z)
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let d = self.dim();
        let a = &self.row * self.row.transpose() + DMatrix::identity(d, d) * self.mu;
        Some((a, &self.row * -self.target))
    }
}

/// Logistic loss with ridge term: `f(x) = log(1 + exp(-y a'x)) + mu |x|^2 / 2`.
#[derive(Clone, Debug)]
pub struct LogisticRidgeComponent {
    row: Point,
    label: f64,
    mu: f64,
}

impl LogisticRidgeComponent {
    /// `label` is `+1` or `-1`.
    pub fn new(row: Point, label: f64, mu: f64) -> Self {
        Self { row, label, mu }
    }

    pub fn row(&self) -> &Point {
        &self.row
    }

    pub fn label(&self) -> f64 {
        self.label
    }
}

impl SmoothFunction for LogisticRidgeComponent {
    fn dim(&self) -> usize {
        self.row.len()
    }

    fn value(&self, x: &Point) -> f64 {
        softplus(-self.label * self.row.dot(x)) + 0.5 * self.mu * x.norm_squared()
    }

    fn gradient(&self, x: &Point) -> Point {
        let margin = self.label * self.row.dot(x);
        &self.row * (-self.label * sigmoid(-margin)) + x * self.mu
    }
}

impl Component for LogisticRidgeComponent {
    fn prox(&self, gamma: f64, z: &Point, tol: f64) -> Result<ProxResult> {
        prox_logistic_ridge(&self.row, self.label, self.mu, gamma, z, tol)
    }

    fn is_analytic(&self) -> bool {
        false
    }
}

type Oracle<T> = Box<dyn Fn(&Point) -> T + Send + Sync>;

/// A component given only by value and gradient closures; its prox is
/// computed by [`prox_generic`] using the declared `mu` and `L`.
pub struct GenericComponent {
    dim: usize,
    mu: f64,
    l: f64,
    value: Oracle<f64>,
    gradient: Oracle<Point>,
}

impl GenericComponent {
    pub fn new(
        dim: usize,
        mu: f64,
        l: f64,
        value: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        Self { dim, mu, l, value: Box::new(value), gradient: Box::new(gradient) }
    }
}

impl fmt::Debug for GenericComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericComponent").field("dim", &self.dim).field("mu", &self.mu).field("L", &self.l).finish()
    }
}

impl SmoothFunction for GenericComponent {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        (self.gradient)(x)
    }
}

impl Component for GenericComponent {
    fn prox(&self, gamma: f64, z: &Point, tol: f64) -> Result<ProxResult> {
        prox_generic(self, self.mu, self.l, gamma, z, tol)
    }

    fn is_analytic(&self) -> bool {
        false
    }
}
