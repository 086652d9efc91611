//! The finite-sum model `min_x sum_i f_i(x)` and the oracle contract each
//! component must satisfy.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::prox::ProxResult;
use crate::{Error, Result, TOL_STAR};

/// Dense point of `R^d`.
pub type Point = DVector<f64>;

/// A differentiable function on `R^d`. Oracles must be pure.
pub trait SmoothFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
}

/// One summand `f_i` of the problem: value, gradient and prox oracles.
///
/// `prox(gamma, z, tol)` returns `argmin_x f(x) + |x - z|^2 / (2 gamma)`.
/// Closed-form implementations ignore `tol`; iterative ones drive the
/// resolvent residual `|x + gamma grad f(x) - z|` below it.
pub trait Component: SmoothFunction {
    fn prox(&self, gamma: f64, z: &Point, tol: f64) -> Result<ProxResult>;

    /// Whether `prox` is closed-form.
    fn is_analytic(&self) -> bool;

    /// `(A, b)` such that `f(x) = x'Ax/2 + b'x + const`, when `f` is quadratic.
    fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }
}

pub(crate) fn check_dim(x: &Point, dim: usize) -> Result<()> {
    if x.len() == dim {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: dim, got: x.len() })
    }
}

pub(crate) fn check_constants(mu: f64, l: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidConstants(format!("mu must be positive and finite, got {mu}")));
    }
    if !(l >= mu && l.is_finite()) {
        return Err(Error::InvalidConstants(format!("L must satisfy mu <= L < inf, got mu={mu}, L={l}")));
    }
    Ok(())
}

/// `n` components sharing the strong convexity modulus `mu` and smoothness
/// constant `L`. Immutable once assembled.
#[derive(Clone)]
pub struct FiniteSumProblem {
    components: Vec<Arc<dyn Component>>,
    mu: f64,
    l: f64,
    dim: usize,
    known_solution: Option<Point>,
}

impl fmt::Debug for FiniteSumProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteSumProblem")
            .field("n", &self.components.len())
            .field("mu", &self.mu)
            .field("L", &self.l)
            .field("dim", &self.dim)
            .field("known_solution", &self.known_solution.is_some())
            .finish()
    }
}

/// Validates and bundles the components. The result has no known solution.
pub fn assemble_problem(components: Vec<Arc<dyn Component>>, mu: f64, l: f64, dim: usize) -> Result<FiniteSumProblem> {
    if components.is_empty() {
        return Err(Error::EmptyComponentList);
    }
    check_constants(mu, l)?;
    if dim == 0 {
        return Err(Error::InvalidConstants("dimension must be at least 1".into()));
    }
    if let Some(c) = components.iter().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: c.dim() });
    }
    Ok(FiniteSumProblem { components, mu, l, dim, known_solution: None })
}

impl FiniteSumProblem {
    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    #[allow(non_snake_case)]
    pub fn L(&self) -> f64 {
        self.l
    }

    pub fn components(&self) -> &[Arc<dyn Component>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &dyn Component {
        self.components[i].as_ref()
    }

    pub fn known_solution(&self) -> Option<&Point> {
        self.known_solution.as_ref()
    }

    /// Attaches `x_star` after checking `|sum_i grad f_i(x_star)| <= n * TOL_STAR`.
    pub fn with_known_solution(mut self, x_star: Point) -> Result<Self> {
        let norm = self.full_gradient(&x_star)?.norm();
        let bound = self.n() as f64 * TOL_STAR;
        if !(norm <= bound) {
            return Err(Error::NotStationary { norm, bound });
        }
        self.known_solution = Some(x_star);
        Ok(self)
    }

    pub fn objective(&self, x: &Point) -> Result<f64> {
        check_dim(x, self.dim)?;
        Ok(self.components.iter().map(|c| c.value(x)).sum())
    }

    /// `sum_i grad f_i(x)`, accumulated in index order.
    pub fn full_gradient(&self, x: &Point) -> Result<Point> {
        check_dim(x, self.dim)?;
        let mut g = Point::zeros(self.dim);
        for c in &self.components {
            g += c.gradient(x);
        }
        Ok(g)
    }

    /// The table `(grad f_i(x))_i`.
    pub fn gradients_at(&self, x: &Point) -> Result<Vec<Point>> {
        check_dim(x, self.dim)?;
        Ok(self.components.iter().map(|c| c.gradient(x)).collect())
    }
}
