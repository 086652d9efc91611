//! Proximity operators for the shipped component families.
//!
//! Every operator reports the resolvent residual `|x + gamma grad f(x) - z|`,
//! which vanishes exactly when `x = prox_{gamma f}(z)`.

use nalgebra::{DMatrix, DVector};

use crate::problem::{check_dim, Point, SmoothFunction};
use crate::{Error, Result};

/// Budget of the safeguarded Newton iteration in [`prox_logistic_ridge`].
pub const LOGISTIC_INNER_BUDGET: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct ProxResult {
    pub point: Point,
    /// Norm of the resolvent defect at `point`.
    pub residual: f64,
    /// Zero for closed forms.
    pub inner_iters: usize,
}

/// `|x + gamma grad f(x) - z|`.
pub fn prox_residual(f: &dyn SmoothFunction, gamma: f64, z: &Point, x: &Point) -> Result<f64> {
    check_dim(z, f.dim())?;
    check_dim(x, f.dim())?;
    Ok(resolvent_residual(gamma, z, x, &f.gradient(x)))
}

pub(crate) fn resolvent_residual(gamma: f64, z: &Point, x: &Point, grad: &Point) -> f64 {
    x.iter()
        .zip(grad.iter())
        .zip(z.iter())
        .map(|((xi, gi), zi)| {
            let r = xi + gamma * gi - zi;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstants(format!("stepsize must be positive and finite, got {gamma}")))
    }
}

/// Prox of `f(x) = x'Ax/2 + b'x`: solves `(I + gamma A) x = z - gamma b`.
pub fn prox_quadratic(a: &DMatrix<f64>, b: &DVector<f64>, gamma: f64, z: &Point) -> Result<ProxResult> {
    check_gamma(gamma)?;
    let d = z.len();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
    }
    check_dim(b, d)?;
    let m = DMatrix::identity(d, d) + a * gamma;
    let rhs = z - b * gamma;
    let point = m.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
    let grad = a * &point + b;
    let residual = resolvent_residual(gamma, z, &point, &grad);
    Ok(ProxResult { point, residual, inner_iters: 0 })
}

/// Prox of `f(x) = (a'x - y)^2 / 2 + mu_reg |x|^2 / 2`.
///
/// The system `((1 + gamma mu_reg) I + gamma a a') x = z + gamma y a` is
/// inverted with the Sherman-Morrison formula in `O(d)`.
pub fn prox_rank_one_quadratic(a: &Point, y: f64, mu_reg: f64, gamma: f64, z: &Point) -> Result<ProxResult> {
    check_gamma(gamma)?;
    check_dim(a, z.len())?;
    let c = 1.0 + gamma * mu_reg;
    let r = z + a * (gamma * y);
    let coef = gamma * a.dot(&r) / (c + gamma * a.norm_squared());
    let point = (r - a * coef) / c;
    let grad = a * (a.dot(&point) - y) + &point * mu_reg;
    let residual = resolvent_residual(gamma, z, &point, &grad);
    Ok(ProxResult { point, residual, inner_iters: 0 })
}

/// `1 / (1 + exp(-t))`, only ever exponentiating a nonpositive argument.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Prox of `f(x) = log(1 + exp(-y a'x)) + mu_reg |x|^2 / 2` with `y = +-1`.
///
/// The optimality condition forces `x = (z + gamma y sigma(-y u) a) / (1 + gamma mu_reg)`
/// with `u = a'x`, so only the scalar `u` is unknown. It is the root of the
/// increasing function `h(u) = c u - a'z - gamma y |a|^2 sigma(-y u)`, found by
/// Newton steps kept inside a shrinking sign bracket.
pub fn prox_logistic_ridge(a: &Point, y: f64, mu_reg: f64, gamma: f64, z: &Point, tol: f64) -> Result<ProxResult> {
    check_gamma(gamma)?;
    check_dim(a, z.len())?;
    let c = 1.0 + gamma * mu_reg;
    let na2 = a.norm_squared();
    if na2 == 0.0 {
        return Ok(ProxResult { point: z / c, residual: 0.0, inner_iters: 0 });
    }
    let az = a.dot(z);
    let na = na2.sqrt();
    let h = |u: f64| c * u - az - gamma * y * na2 * sigmoid(-y * u);
    let dh = |u: f64| {
        let s = sigmoid(-y * u);
        c + gamma * na2 * s * (1.0 - s)
    };
    // Resolvent residual of the reconstructed point, as a function of (u, h(u)).
    let defect = |u: f64, hu: f64| gamma * na * (sigmoid(-y * u) - sigmoid(-y * (u - hu / c))).abs();

    let mut lo = (az - gamma * na2) / c;
    let mut hi = (az + gamma * na2) / c;
    let mut u = (az + gamma * y * na2 * sigmoid(-y * az / c)) / c;
    let mut iters = 0;
    let mut prev_abs = f64::INFINITY;
    loop {
        let hu = h(u);
        if hu == 0.0 || defect(u, hu) <= 0.5 * tol {
            break;
        }
        if iters >= LOGISTIC_INNER_BUDGET {
            return Err(Error::MaxInnerIterations { budget: LOGISTIC_INNER_BUDGET, residual: defect(u, hu) });
        }
        iters += 1;
        if hu < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        // Newton may cycle across the inflection point; bisect unless |h| halved.
        let newton = u - hu / dh(u);
        let next = if newton > lo && newton < hi && hu.abs() <= 0.5 * prev_abs { newton } else { 0.5 * (lo + hi) };
        prev_abs = hu.abs();
        if (next - u).abs() <= 4.0 * f64::EPSILON * (1.0 + u.abs()) {
            u = next;
            break;
        }
        u = next;
    }
    let point = (z + a * (gamma * y * sigmoid(-y * u))) / c;
    let grad = a * (-y * sigmoid(-y * a.dot(&point))) + &point * mu_reg;
    let residual = resolvent_residual(gamma, z, &point, &grad);
    Ok(ProxResult { point, residual, inner_iters: iters })
}

/// Iteration budget of [`prox_generic`]: `10 * ceil((1 + gamma L) / (1 + gamma mu) * ln(1/tol))`.
pub fn generic_prox_budget(mu: f64, l: f64, gamma: f64, tol: f64) -> usize {
    let ratio = (1.0 + gamma * l) / (1.0 + gamma * mu);
    let logs = (1.0 / tol).ln().max(1.0);
    10 * ((ratio * logs).ceil() as usize).max(1)
}

/// Prox of any `mu`-strongly convex, `L`-smooth `f` by gradient descent on
/// `phi(x) = f(x) + |x - z|^2 / (2 gamma)` with step `1 / (L + 1/gamma)`.
///
/// The descent step equals `x - r / (1 + gamma L)` where `r` is the
/// resolvent residual, so the stopping test costs nothing extra.
pub fn prox_generic(f: &dyn SmoothFunction, mu: f64, l: f64, gamma: f64, z: &Point, tol: f64) -> Result<ProxResult> {
    check_gamma(gamma)?;
    check_dim(z, f.dim())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidConstants(format!("prox tolerance must be positive, got {tol}")));
    }
    let budget = generic_prox_budget(mu, l, gamma, tol);
    let shrink = 1.0 / (1.0 + gamma * l);
    let mut x = z.clone();
    let mut iters = 0;
    loop {
        let r = &x + f.gradient(&x) * gamma - z;
        let residual = r.norm();
        if residual <= tol {
            return Ok(ProxResult { point: x, residual, inner_iters: iters });
        }
        if iters >= budget {
            return Err(Error::MaxInnerIterations { budget, residual });
        }
        x -= r * shrink;
        iters += 1;
    }
}
