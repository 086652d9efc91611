//! Contraction rates, the Lyapunov function, reference solutions and the
//! exhaustive one-step contraction check.
//!
//! With `w_x = (1 + 2 gamma mu L / (L + mu)) s` and
//! `w_g = (1 + 2 / (gamma (L + mu))) gamma^2`, the function
//!
//! ```text
//! psi(x, g_1..g_n) = w_x |x - x_star|^2 + w_g sum_i |g_i - grad f_i(x_star)|^2
//! ```
//!
//! satisfies `E[psi after one step | state] <= rho * psi(state)` with
//! `rho = max(1 - 2 gamma mu L / (L + mu + 2 gamma mu L), 1 - 2 s / (n (gamma (L + mu) + 2)))`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::problem::{check_constants, check_dim, FiniteSumProblem, Point, SmoothFunction};
use crate::sampler::enumerate_k_subsets;
use crate::solver::{step_with_subset, SolverState};
use crate::{Error, Result};

/// Default accuracy of [`reference_solution`].
pub const REFERENCE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rho_prox: f64,
    pub rho_sample: f64,
    pub rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_defazio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_dr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovWeights {
    pub w_x: f64,
    pub w_g: f64,
}

impl LyapunovWeights {
    pub fn new(gamma: f64, s: usize, mu: f64, l: f64) -> Self {
        Self {
            w_x: (1.0 + 2.0 * gamma * mu * l / (l + mu)) * s as f64,
            w_g: (1.0 + 2.0 / (gamma * (l + mu))) * gamma * gamma,
        }
    }
}

/// The minimizer and the gradient table at it.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub x_star: Point,
    pub grad_star: Vec<Point>,
}

impl Reference {
    pub fn from_solution(problem: &FiniteSumProblem, x_star: Point) -> Result<Self> {
        Ok(Self { grad_star: problem.gradients_at(&x_star)?, x_star })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstants(format!("stepsize must be positive and finite, got {gamma}")))
    }
}

fn check_batch(s: usize, n: usize) -> Result<()> {
    if s == 0 || s > n {
        Err(Error::InvalidBatchSize { s, n })
    } else {
        Ok(())
    }
}

pub fn theoretical_rate(gamma: f64, s: usize, n: usize, mu: f64, l: f64) -> Result<RateReport> {
    check_gamma(gamma)?;
    check_batch(s, n)?;
    check_constants(mu, l)?;
    let gml = 2.0 * gamma * mu * l;
    let rho_prox = 1.0 - gml / (l + mu + gml);
    let rho_sample = 1.0 - 2.0 / (gamma * (l + mu) + 2.0) * (s as f64 / n as f64);
    Ok(RateReport {
        rho_prox,
        rho_sample,
        rho: rho_prox.max(rho_sample),
        rho_defazio: (s == 1).then(|| defazio_rate_unchecked(gamma, n, mu, l)),
        rho_dr: (s == n).then(|| dr_rate_unchecked(gamma, mu, l)),
    })
}

/// `sqrt(s / (L mu n))`.
pub fn optimal_stepsize(s: usize, n: usize, mu: f64, l: f64) -> Result<f64> {
    check_batch(s, n)?;
    check_constants(mu, l)?;
    Ok((s as f64 / (l * mu * n as f64)).sqrt())
}

/// `ln(psi0 / eps) / (1 - rho)`: iterations after which the geometric bound
/// on `E[psi]` falls to `eps`. Not rounded.
pub fn iteration_complexity(gamma: f64, s: usize, n: usize, mu: f64, l: f64, psi0: f64, eps: f64) -> Result<f64> {
    let rate = theoretical_rate(gamma, s, n, mu, l)?;
    if !(eps > 0.0 && eps <= psi0) {
        return Err(Error::EpsNotBelowPsi0 { eps, psi0 });
    }
    Ok((psi0 / eps).ln() / (1.0 - rate.rho))
}

fn defazio_rate_unchecked(gamma: f64, n: usize, mu: f64, l: f64) -> f64 {
    (1.0 / (1.0 + gamma * mu)).max(1.0 - 1.0 / ((gamma * l + 1.0) * n as f64))
}

fn dr_rate_unchecked(gamma: f64, mu: f64, l: f64) -> f64 {
    (1.0 / (1.0 + gamma * mu)).max(1.0 - 1.0 / (gamma * l + 1.0))
}

/// Rate of the single-prox method's original analysis:
/// `max(1/(1 + gamma mu), 1 - 1/((gamma L + 1) n))`.
pub fn defazio_rate(gamma: f64, n: usize, mu: f64, l: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_batch(1, n)?;
    check_constants(mu, l)?;
    Ok(defazio_rate_unchecked(gamma, n, mu, l))
}

/// Douglas-Rachford rate for two functions, one `mu`-strongly convex and
/// `L`-smooth: `max(1/(1 + gamma mu), 1 - 1/(gamma L + 1))`.
pub fn dr_rate(gamma: f64, mu: f64, l: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_constants(mu, l)?;
    Ok(dr_rate_unchecked(gamma, mu, l))
}

/// Lyapunov value of the current `(x, grad_table)`.
pub fn lyapunov(
    state: &SolverState,
    problem: &FiniteSumProblem,
    reference: &Reference,
    gamma: f64,
    s: usize,
) -> Result<f64> {
    check_dim(&state.x, problem.dim())?;
    check_dim(&reference.x_star, problem.dim())?;
    if state.grad_table.len() != reference.grad_star.len() {
        return Err(Error::DimensionMismatch { expected: reference.grad_star.len(), got: state.grad_table.len() });
    }
    let w = LyapunovWeights::new(gamma, s, problem.mu(), problem.L());
    let table: f64 = state.grad_table.iter().zip(&reference.grad_star).map(|(g, gs)| (g - gs).norm_squared()).sum();
    Ok(w.w_x * (&state.x - &reference.x_star).norm_squared() + w.w_g * table)
}

/// Minimizer of the sum. Quadratic problems are solved directly from the
/// normal equations; anything else by gradient descent with step `1/(n L)`
/// until `|sum_i grad f_i(x)| <= tol`.
pub fn reference_solution(problem: &FiniteSumProblem, tol: f64) -> Result<Reference> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConstants(format!("tolerance must be positive, got {tol}")));
    }
    let x = match quadratic_normal_equations(problem) {
        Some((h, b)) => solve_normal_equations(problem, &h, &b)?,
        None => gradient_descent(problem, tol)?,
    };
    Reference::from_solution(problem, x)
}

fn quadratic_normal_equations(problem: &FiniteSumProblem) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let d = problem.dim();
    let mut h = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for c in problem.components() {
        let (a, lin) = c.quadratic_form()?;
        h += a;
        b += lin;
    }
    Some((h, b))
}

fn solve_normal_equations(problem: &FiniteSumProblem, h: &DMatrix<f64>, b: &DVector<f64>) -> Result<Point> {
    let chol = h.clone().cholesky().ok_or(Error::SingularSystem)?;
    let mut x = chol.solve(&(-b));
    // Two rounds of iterative refinement against the component gradients.
    for _ in 0..2 {
        let r = problem.full_gradient(&x)?;
        x -= chol.solve(&r);
    }
    Ok(x)
}

fn gradient_descent(problem: &FiniteSumProblem, tol: f64) -> Result<Point> {
    let n = problem.n() as f64;
    let step = 1.0 / (n * problem.L());
    let mut x = Point::zeros(problem.dim());
    let mut g = problem.full_gradient(&x)?;
    let kappa = problem.L() / problem.mu();
    let budget = 1000 + (50.0 * kappa * (1.0 + g.norm() / tol).ln()).ceil() as usize;
    for _ in 0..budget {
        if g.norm() <= tol {
            return Ok(x);
        }
        x -= &g * step;
        g = problem.full_gradient(&x)?;
    }
    if g.norm() <= tol {
        Ok(x)
    } else {
        Err(Error::MaxIterations { budget, grad_norm: g.norm() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionCheck {
    /// Exact expectation of the Lyapunov value after one step.
    pub lhs: f64,
    /// `rho` times the current Lyapunov value.
    pub rhs: f64,
    pub ok: bool,
}

/// Relative slack of [`verify_one_step_contraction`].
pub const CONTRACTION_SLACK: f64 = 1e-9;

/// Averages the Lyapunov value over every `s`-subset step from `state` and
/// compares it with `rho` times the current value.
///
/// `state.g_avg` must be the table mean; the check is meaningless otherwise.
pub fn verify_one_step_contraction(
    state: &SolverState,
    problem: &FiniteSumProblem,
    gamma: f64,
    s: usize,
    reference: &Reference,
    prox_tol: f64,
) -> Result<ContractionCheck> {
    let rate = theoretical_rate(gamma, s, problem.n(), problem.mu(), problem.L())?;
    let subsets = enumerate_k_subsets(problem.n(), s)?;
    let values: Vec<f64> = subsets
        .par_iter()
        .map(|subset| {
            let next = step_with_subset(problem, state, gamma, subset, prox_tol)?;
            lyapunov(&next, problem, reference, gamma, s)
        })
        .collect::<Result<_>>()?;
    let lhs = values.iter().sum::<f64>() / values.len() as f64;
    let rhs = rate.rho * lyapunov(state, problem, reference, gamma, s)?;
    Ok(ContractionCheck { lhs, rhs, ok: lhs <= rhs + CONTRACTION_SLACK * (1.0 + rhs) })
}

/// `<g_x - g_y, x - y> >= mu L/(L+mu) |x-y|^2 + 1/(L+mu) |g_x - g_y|^2`,
/// with absolute slack `1e-12 (1 + |x-y|^2)`.
pub fn check_coercivity(f: &dyn SmoothFunction, x: &Point, y: &Point, mu: f64, l: f64) -> Result<bool> {
    check_dim(x, f.dim())?;
    check_dim(y, f.dim())?;
    let dx = x - y;
    let dg = f.gradient(x) - f.gradient(y);
    let lhs = dg.dot(&dx);
    let dx2 = dx.norm_squared();
    let rhs = mu * l / (l + mu) * dx2 + dg.norm_squared() / (l + mu);
    Ok(lhs >= rhs - 1e-12 * (1.0 + dx2))
}

/// Geometric-mean per-step ratio of a Lyapunov trajectory after `burn_in` steps:
/// `(psi_T / psi_b)^(1 / (T - b))`. `None` when fewer than one step remains
/// or `psi_b` is not positive.
pub fn empirical_contraction(history: &[f64], burn_in: usize) -> Option<f64> {
    let last = history.len().checked_sub(1)?;
    if last <= burn_in || !(history[burn_in] > 0.0) {
        return None;
    }
    let steps = (last - burn_in) as f64;
    Some((history[last] / history[burn_in]).powf(1.0 / steps))
}

/// First `t` with `history[t] <= rel * history[0]`.
pub fn iterations_to_relative(history: &[f64], rel: f64) -> Option<usize> {
    let psi0 = *history.first()?;
    history.iter().position(|&p| p <= rel * psi0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::QuadraticComponent;
    use crate::problem::assemble_problem;
    use crate::problems::{gen_logistic_ridge, gen_quadratic, Family, GeneratorSpec};
    use crate::solver::SolverState;
    use std::sync::Arc;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rate_hand_values() {
        let r = theoretical_rate(1.0, 1, 1, 1.0, 1.0).unwrap();
        assert_eq!((r.rho_prox, r.rho_sample, r.rho), (0.5, 0.5, 0.5));
        assert_eq!(r.rho_defazio, Some(0.5));
        assert_eq!(r.rho_dr, Some(0.5));

        let r = theoretical_rate(0.1, 1, 10, 1.0, 10.0).unwrap();
        assert!(close(r.rho_prox, 1.0 - 2.0 / 13.0, 1e-15));
        assert!(close(r.rho_sample, 1.0 - (2.0 / 3.1) / 10.0, 1e-15));
        assert!(close(r.rho, 0.9354838709677419, 1e-15));
        assert_eq!(r.rho_defazio, Some(0.95));
        assert_eq!(r.rho_dr, None);
    }

    #[test]
    fn rate_rejects_bad_constants() {
        assert!(theoretical_rate(0.0, 1, 1, 1.0, 1.0).is_err());
        assert!(theoretical_rate(1.0, 2, 1, 1.0, 1.0).is_err());
        assert!(theoretical_rate(1.0, 1, 1, 2.0, 1.0).is_err());
        assert!(theoretical_rate(1.0, 0, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn rate_terms_are_monotone_in_gamma() {
        let mut prev: Option<RateReport> = None;
        for k in 0..60 {
            let gamma = 10f64.powf(-3.0 + 0.1 * k as f64);
            let r = theoretical_rate(gamma, 3, 20, 0.5, 40.0).unwrap();
            assert!(r.rho > 0.0 && r.rho < 1.0);
            if let Some(p) = prev {
                assert!(r.rho_prox < p.rho_prox);
                assert!(r.rho_sample > p.rho_sample);
            }
            prev = Some(r);
        }
    }

    #[test]
    fn optimal_stepsize_values() {
        assert!(close(optimal_stepsize(1, 100, 1.0, 100.0).unwrap(), 0.01, 1e-17));
        assert_eq!(optimal_stepsize(7, 7, 1.0, 1.0).unwrap(), 1.0);
        let a = optimal_stepsize(3, 10, 0.7, 9.0).unwrap();
        let b = optimal_stepsize(3, 10, 1.4, 18.0).unwrap();
        assert!(close(a / b, 2.0, 1e-14));
    }

    #[test]
    fn complexity_bound() {
        let e = std::f64::consts::E;
        let k = iteration_complexity(1.0, 1, 1, 1.0, 1.0, e, 1.0).unwrap();
        assert!(close(k, 2.0, 1e-15));
        assert_eq!(iteration_complexity(1.0, 1, 1, 1.0, 1.0, 3.0, 3.0).unwrap(), 0.0);
        let k1 = iteration_complexity(0.2, 2, 9, 1.0, 5.0, 1e3, 1.0).unwrap();
        let k2 = iteration_complexity(0.2, 2, 9, 1.0, 5.0, 1e6, 1.0).unwrap();
        assert!(close(k2, 2.0 * k1, 1e-12));
        assert!(matches!(iteration_complexity(1.0, 1, 1, 1.0, 1.0, 1.0, 2.0), Err(Error::EpsNotBelowPsi0 { .. })));
    }

    #[test]
    fn comparison_rates() {
        assert_eq!(defazio_rate(0.1, 10, 1.0, 10.0).unwrap(), 0.95);
        assert!(theoretical_rate(0.1, 1, 10, 1.0, 10.0).unwrap().rho <= 0.95);
        assert_eq!(dr_rate(1.0, 1.0, 1.0).unwrap(), 0.5);
        for gamma in [1e-9, 1e-12] {
            assert!(defazio_rate(gamma, 10, 1.0, 10.0).unwrap() > 1.0 - 1e-7);
        }
        // Both terms of the DR rate balance at gamma = 1/sqrt(mu L).
        let (mu, l): (f64, f64) = (0.5, 8.0);
        let g = 1.0 / (mu * l).sqrt();
        assert!(close(1.0 / (1.0 + g * mu), 1.0 - 1.0 / (g * l + 1.0), 1e-15));
    }

    fn one_dim() -> (FiniteSumProblem, Reference) {
        let f = QuadraticComponent::new(DMatrix::identity(1, 1), Point::zeros(1), 0.0).unwrap();
        let p = assemble_problem(vec![Arc::new(f)], 1.0, 1.0, 1).unwrap();
        let r = reference_solution(&p, REFERENCE_TOL).unwrap();
        (p, r)
    }

    #[test]
    fn lyapunov_hand_value() {
        let (p, r) = one_dim();
        assert_eq!(r.x_star[0], 0.0);
        assert_eq!(r.grad_star, vec![Point::zeros(1)]);
        let st = SolverState::from_table(Point::from_vec(vec![2.0]), vec![Point::zeros(1)]);
        assert_eq!(lyapunov(&st, &p, &r, 1.0, 1).unwrap(), 8.0);
        let scaled = SolverState::from_table(Point::from_vec(vec![6.0]), vec![Point::zeros(1)]);
        assert_eq!(lyapunov(&scaled, &p, &r, 1.0, 1).unwrap(), 72.0);
        let at_star = SolverState::from_table(Point::zeros(1), vec![Point::zeros(1)]);
        assert_eq!(lyapunov(&at_star, &p, &r, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn contraction_tight_on_one_dim_example() {
        let (p, r) = one_dim();
        let st = SolverState::from_table(Point::from_vec(vec![2.0]), vec![Point::zeros(1)]);
        let c = verify_one_step_contraction(&st, &p, 1.0, 1, &r, 1e-10).unwrap();
        assert_eq!((c.lhs, c.rhs), (4.0, 4.0));
        assert!(c.ok);
    }

    #[test]
    fn contraction_at_fixed_point_is_zero() {
        let p = gen_quadratic(&GeneratorSpec { family: Family::Quadratic, n: 6, dim: 3, mu: 1.0, l: 10.0, seed: 9 })
            .unwrap();
        let r = reference_solution(&p, REFERENCE_TOL).unwrap();
        let st = SolverState::from_table(r.x_star.clone(), r.grad_star.clone());
        let c = verify_one_step_contraction(&st, &p, 0.2, 2, &r, 1e-10).unwrap();
        assert!(c.lhs < 1e-18 && c.rhs < 1e-18 && c.ok);
    }

    #[test]
    fn reference_for_logistic_is_stationary() {
        let p = gen_logistic_ridge(&GeneratorSpec {
            family: Family::LogisticRidge,
            n: 4,
            dim: 2,
            mu: 0.5,
            l: 3.0,
            seed: 1,
        })
        .unwrap();
        let r = reference_solution(&p, 1e-12).unwrap();
        assert!(p.full_gradient(&r.x_star).unwrap().norm() <= 1e-12);
        let sum = r.grad_star.iter().fold(Point::zeros(2), |acc, g| acc + g);
        assert!(sum.norm() <= 1e-12);
    }

    #[test]
    fn coercivity_identity_quadratic_is_tight() {
        let f = QuadraticComponent::new(DMatrix::identity(2, 2), Point::zeros(2), 0.0).unwrap();
        let x = Point::from_vec(vec![1.0, 2.0]);
        let y = Point::from_vec(vec![-3.0, 0.5]);
        assert!(check_coercivity(&f, &x, &y, 1.0, 1.0).unwrap());
        assert!(check_coercivity(&f, &x, &x, 1.0, 1.0).unwrap());
        // Claiming a larger modulus than the function has must fail.
        assert!(!check_coercivity(&f, &x, &y, 2.0, 2.0).unwrap());
    }

    #[test]
    fn trajectory_helpers() {
        let h: Vec<f64> = (0..21).map(|t| 0.5f64.powi(t)).collect();
        assert!((empirical_contraction(&h, 10).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(empirical_contraction(&h[..11], 10), None);
        assert_eq!(empirical_contraction(&[0.0, 0.0, 0.0], 0), None);
        assert_eq!(iterations_to_relative(&h, 1e-3), Some(10));
        assert_eq!(iterations_to_relative(&h, 1e-9), None);
        assert_eq!(iterations_to_relative(&[], 0.5), None);
    }
}
