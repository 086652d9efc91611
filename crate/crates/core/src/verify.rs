//! Property suites run by `point-saga verify`.
//!
//! Each suite returns a [`SuiteOutcome`]; `quick` uses reduced sample counts,
//! `full` the complete ones (10^4 prox instances, 10^4-iteration drift runs,
//! 100 enumerated contraction trials per cell).

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    check_coercivity, defazio_rate, dr_rate, optimal_stepsize, reference_solution, theoretical_rate,
    verify_one_step_contraction, REFERENCE_TOL,
};
use crate::components::{GenericComponent, LogisticRidgeComponent, QuadraticComponent, RidgeComponent};
use crate::problem::{Component, FiniteSumProblem, Point};
use crate::problems::{generate, Family, GeneratorSpec};
use crate::solver::{GradientInit, Solver, SolverConfig, SolverState, StepSize};
use crate::{Result, DEFAULT_PROX_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Quick,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

pub fn run_all(scale: Scale) -> Vec<SuiteOutcome> {
    vec![
        prox_residual_suite(scale),
        firm_nonexpansive_suite(scale),
        drift_suite(scale),
        coercivity_suite(scale),
        contraction_suite(scale),
        rate_dominance_suite(),
        full_batch_suite(scale),
    ]
}

fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

fn gaussian(rng: &mut impl Rng, d: usize, scale: f64) -> Point {
    Point::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// A random component from one of the shipped families, with its declared
/// `(mu, L)`.
pub struct RandomInstance {
    pub component: Arc<dyn Component>,
    pub mu: f64,
    pub l: f64,
}

pub const FAMILIES: [&str; 4] = ["quadratic", "rank_one", "logistic", "generic"];

pub fn random_instance(family: &str, rng: &mut impl Rng, d: usize) -> RandomInstance {
    let mu = rng.random_range(0.05..1.0);
    match family {
        "quadratic" => {
            let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &g * g.transpose() + DMatrix::identity(d, d) * mu;
            let l = a.symmetric_eigenvalues().max();
            let b = gaussian(rng, d, 1.0);
            RandomInstance { component: Arc::new(QuadraticComponent::new(a, b, 0.0).unwrap()), mu, l }
        }
        "rank_one" => {
            let a = gaussian(rng, d, 1.0);
            let l = mu + a.norm_squared();
            let y = rng.sample::<f64, _>(StandardNormal);
            RandomInstance { component: Arc::new(RidgeComponent::new(a, y, mu)), mu, l }
        }
        "logistic" => {
            let a = gaussian(rng, d, 2.0);
            let l = mu + 0.25 * a.norm_squared();
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            RandomInstance { component: Arc::new(LogisticRidgeComponent::new(a, y, mu)), mu, l }
        }
        "generic" => {
            // Separable f(x) = sum_k w_k softplus(x_k) + mu |x|^2 / 2, prox by inner descent.
            let w = Point::from_fn(d, |_, _| rng.random_range(0.0..4.0));
            let l = mu + 0.25 * w.max();
            let wv = w.clone();
            let value = move |x: &Point| {
                x.iter().zip(wv.iter()).map(|(xi, wi)| wi * crate::prox::softplus(*xi)).sum::<f64>()
                    + 0.5 * mu * x.norm_squared()
            };
            let gradient =
                move |x: &Point| Point::from_fn(x.len(), |k, _| w[k] * crate::prox::sigmoid(x[k]) + mu * x[k]);
            RandomInstance { component: Arc::new(GenericComponent::new(d, mu, l, value, gradient)), mu, l }
        }
        other => panic!("unknown family {other}"),
    }
}

fn instances(scale: Scale) -> usize {
    match scale {
        Scale::Quick => 1000,
        Scale::Full => 10_000,
    }
}

fn random_gamma(rng: &mut impl Rng) -> f64 {
    10f64.powf(rng.random_range(-2.0..2.0))
}

/// Resolvent residual of every shipped prox family on random instances.
pub fn prox_residual_suite(scale: Scale) -> SuiteOutcome {
    let mut rng = rng(101);
    let mut worst = Vec::new();
    let mut passed = true;
    for family in FAMILIES {
        let mut max_res: f64 = 0.0;
        for _ in 0..instances(scale) {
            let inst = random_instance(family, &mut rng, 4);
            let gamma = random_gamma(&mut rng);
            let z = gaussian(&mut rng, 4, 3.0);
            match inst.component.prox(gamma, &z, DEFAULT_PROX_TOL) {
                Ok(p) => {
                    let res =
                        crate::prox::prox_residual(inst.component.as_ref(), gamma, &z, &p.point).unwrap_or(f64::NAN);
                    max_res = max_res.max(res);
                    if !(res <= DEFAULT_PROX_TOL) {
                        passed = false;
                    }
                }
                Err(_) => {
                    passed = false;
                    max_res = f64::INFINITY;
                }
            }
        }
        worst.push(format!("{family}: {max_res:.1e}"));
    }
    SuiteOutcome::new("prox_residuals", passed, format!("max residual per family: {}", worst.join(", ")))
}

/// `|p1 - p2|^2 <= <p1 - p2, z1 - z2>` for random pairs.
pub fn firm_nonexpansive_suite(scale: Scale) -> SuiteOutcome {
    let mut rng = rng(202);
    let mut violations = 0usize;
    let mut total = 0usize;
    for family in FAMILIES {
        for _ in 0..instances(scale) {
            let inst = random_instance(family, &mut rng, 4);
            let gamma = random_gamma(&mut rng);
            let z1 = gaussian(&mut rng, 4, 3.0);
            let z2 = gaussian(&mut rng, 4, 3.0);
            let (Ok(p1), Ok(p2)) = (inst.component.prox(gamma, &z1, 1e-12), inst.component.prox(gamma, &z2, 1e-12))
            else {
                violations += 1;
                continue;
            };
            let dp = &p1.point - &p2.point;
            let slack = 1e-10 * (1.0 + (&z1 - &z2).norm_squared());
            if dp.norm_squared() > dp.dot(&(&z1 - &z2)) + slack {
                violations += 1;
            }
            total += 1;
        }
    }
    SuiteOutcome::new("firm_nonexpansiveness", violations == 0, format!("{violations} violations in {total} pairs"))
}

fn drift_problem() -> Result<FiniteSumProblem> {
    generate(&GeneratorSpec { family: Family::Quadratic, n: 50, dim: 10, mu: 1.0, l: 10.0, seed: 7 })
}

pub(crate) fn drift_check(iters: usize, keep_override: Option<f64>) -> Result<(bool, String)> {
    let p = drift_problem()?;
    let cfg = SolverConfig {
        batch_size: 5,
        max_iters: iters,
        refresh_every: None,
        trace_every: iters.max(1),
        seed: 3,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(&p, cfg)?;
    solver.set_keep_override(keep_override);
    let mut state = solver.initialize(&Point::zeros(10), None)?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..iters {
        solver.step(&mut state)?;
        let drift = state.table_drift();
        let bound = 1e-10 * (1.0 + state.g_avg.norm());
        worst = worst.max(drift / bound);
        ok &= drift <= bound;
    }
    Ok((ok, format!("{iters} steps, worst drift / bound = {worst:.2e}")))
}

/// Running average of the table stays equal to its exact mean.
pub fn drift_suite(scale: Scale) -> SuiteOutcome {
    let iters = match scale {
        Scale::Quick => 2000,
        Scale::Full => 10_000,
    };
    SuiteOutcome::from_result("average_drift", drift_check(iters, None))
}

/// Coercivity of every component of every generated family.
pub fn coercivity_suite(scale: Scale) -> SuiteOutcome {
    let pairs = match scale {
        Scale::Quick => 100,
        Scale::Full => 1000,
    };
    let r = (|| -> Result<(bool, String)> {
        let mut rng = rng(303);
        let mut failures = 0usize;
        let mut checked = 0usize;
        for family in [Family::Quadratic, Family::RidgeRegression, Family::LogisticRidge] {
            let p = generate(&GeneratorSpec { family, n: 10, dim: 4, mu: 0.5, l: 5.0, seed: 11 })?;
            for c in p.components() {
                for _ in 0..pairs {
                    let x = gaussian(&mut rng, 4, 3.0);
                    let y = gaussian(&mut rng, 4, 3.0);
                    if !check_coercivity(c.as_ref(), &x, &y, p.mu(), p.L())? {
                        failures += 1;
                    }
                    checked += 1;
                }
            }
        }
        Ok((failures == 0, format!("{failures} failures in {checked} pairs")))
    })();
    SuiteOutcome::from_result("coercivity", r)
}

/// Random state with `g_avg` equal to the exact table mean.
pub fn random_state(rng: &mut impl Rng, problem: &FiniteSumProblem, center: &Point, spread: f64) -> SolverState {
    let d = problem.dim();
    let x = center + gaussian(rng, d, spread);
    let table = (0..problem.n()).map(|_| gaussian(rng, d, spread * problem.L())).collect();
    SolverState::from_table(x, table)
}

/// Exhaustive one-step contraction on `n = 6, d = 3` quadratics.
pub fn contraction_suite(scale: Scale) -> SuiteOutcome {
    let trials = match scale {
        Scale::Quick => 10,
        Scale::Full => 100,
    };
    let r = (|| -> Result<(bool, String)> {
        let p = generate(&GeneratorSpec { family: Family::Quadratic, n: 6, dim: 3, mu: 1.0, l: 10.0, seed: 5 })?;
        let reference = reference_solution(&p, REFERENCE_TOL)?;
        let mut rng = rng(404);
        let mut worst: f64 = 0.0;
        let mut failures = 0usize;
        let mut count = 0usize;
        for s in [1, 2, 3, 6] {
            let g_star = optimal_stepsize(s, 6, p.mu(), p.L())?;
            for gamma in [0.1 * g_star, g_star, 10.0 * g_star] {
                for _ in 0..trials {
                    let st = random_state(&mut rng, &p, &reference.x_star, 1.0);
                    let c = verify_one_step_contraction(&st, &p, gamma, s, &reference, 1e-12)?;
                    if c.rhs > 0.0 {
                        worst = worst.max(c.lhs / c.rhs);
                    }
                    failures += usize::from(!c.ok);
                    count += 1;
                }
            }
        }
        Ok((failures == 0, format!("{failures} failures in {count} states, max lhs/rhs = {worst:.6}")))
    })();
    SuiteOutcome::from_result("exhaustive_contraction", r)
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).collect()
}

/// Grid of `(gamma, kappa, n)`: `10 x 10 x 10`, log-spaced.
pub fn dominance_grid() -> Vec<(f64, f64, usize)> {
    let gammas = log_grid(1e-3, 1e2, 10);
    let kappas = log_grid(1.0, 1e4, 10);
    let mut ns: Vec<usize> = log_grid(1.0, 1e3, 10).into_iter().map(|v| v.round() as usize).collect();
    ns.dedup();
    let mut out = Vec::new();
    for &g in &gammas {
        for &k in &kappas {
            for &n in &ns {
                out.push((g, k, n));
            }
        }
    }
    out
}

/// `a <= b` up to 4 ulps; at `kappa = 1` the compared rates coincide exactly.
pub fn rate_at_most(a: f64, b: f64) -> bool {
    a <= b * (1.0 + 4.0 * f64::EPSILON)
}

/// Formula-level dominance over the single-prox and Douglas-Rachford rates.
pub fn rate_dominance_suite() -> SuiteOutcome {
    let r = (|| -> Result<(bool, String)> {
        let mut bad = 0usize;
        let grid = dominance_grid();
        for &(gamma, kappa, n) in &grid {
            let (mu, l) = (1.0, kappa);
            if !rate_at_most(theoretical_rate(gamma, 1, n, mu, l)?.rho, defazio_rate(gamma, n, mu, l)?) {
                bad += 1;
            }
            if !rate_at_most(theoretical_rate(gamma, n, n, mu, l)?.rho, dr_rate(gamma, mu, l)?) {
                bad += 1;
            }
        }
        Ok((bad == 0, format!("{bad} violations on {} grid points", grid.len())))
    })();
    SuiteOutcome::from_result("rate_dominance", r)
}

/// Douglas-Rachford on `min sum_i f_i(x_i)` subject to `x_1 = .. = x_n`,
/// started from the point equivalent to `(x0, table0)`. Returns the
/// consensus point after each iteration.
///
/// Governing sequence `u_i`: `y = mean(u)`, `p_i = prox_{gamma f_i}(2y - u_i)`,
/// `u_i += p_i - y`.
pub fn consensus_douglas_rachford(
    problem: &FiniteSumProblem,
    gamma: f64,
    x0: &Point,
    table0: &[Point],
    iters: usize,
    prox_tol: f64,
) -> Result<Vec<Point>> {
    let n = problem.n();
    let mean0 = table0.iter().fold(Point::zeros(x0.len()), |acc, g| acc + g) / n as f64;
    let mut u: Vec<Point> = table0.iter().map(|g| x0 - (g - &mean0) * gamma).collect();
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let y = u.iter().fold(Point::zeros(x0.len()), |acc, v| acc + v) / n as f64;
        let mut avg = Point::zeros(x0.len());
        for (i, ui) in u.iter_mut().enumerate() {
            let p = problem.component(i).prox(gamma, &(&y * 2.0 - &*ui), prox_tol)?.point;
            *ui += &p - &y;
            avg += p;
        }
        out.push(avg / n as f64);
    }
    Ok(out)
}

pub(crate) fn full_batch_check(iters: usize) -> Result<(bool, String)> {
    let p = generate(&GeneratorSpec { family: Family::Quadratic, n: 10, dim: 4, mu: 1.0, l: 10.0, seed: 13 })?;
    let x0 = Point::from_element(4, 1.0);
    let base = SolverConfig {
        gamma: StepSize::Auto,
        batch_size: 10,
        max_iters: iters,
        init_gradients: GradientInit::AtX0,
        ..SolverConfig::default()
    };
    let mut traj = Vec::new();
    for seed in [1u64, 2, 12345] {
        let mut solver = Solver::new(&p, SolverConfig { seed, ..base.clone() })?;
        let mut state = solver.initialize(&x0, None)?;
        let mut xs = Vec::with_capacity(iters);
        for _ in 0..iters {
            solver.step(&mut state)?;
            xs.push(state.x.clone());
        }
        traj.push(xs);
    }
    let identical = traj.windows(2).all(|w| w[0] == w[1]);
    let gamma = base.resolve_gamma(&p)?;
    let dr = consensus_douglas_rachford(&p, gamma, &x0, &p.gradients_at(&x0)?, iters, DEFAULT_PROX_TOL)?;
    let gap = traj[0].iter().zip(&dr).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    Ok((identical && gap <= 1e-10, format!("seed-independent: {identical}, max gap to Douglas-Rachford: {gap:.1e}")))
}

/// Full batch: seeds do not matter and iterates follow Douglas-Rachford.
pub fn full_batch_suite(scale: Scale) -> SuiteOutcome {
    let iters = match scale {
        Scale::Quick => 100,
        Scale::Full => 500,
    };
    SuiteOutcome::from_result("full_batch_determinism", full_batch_check(iters))
}
