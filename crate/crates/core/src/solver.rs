//! The minibatch Point-SAGA iteration.
//!
//! One step from `(x, g_1..g_n, g)` with sampled index set `S`, `|S| = s`:
//!
//! ```text
//! z_i   = x + gamma g_i - gamma g             for i in S
//! x_i   = prox_{gamma f_i}(z_i)
//! g_i  <- (z_i - x_i) / gamma                 (= grad f_i(x_i))
//! x'    = mean of x_i over S
//! g'    = (n - s)/n g + s/(n gamma) (x - x')  (= mean of the table)
//! ```
//!
//! Prox outputs are discarded after averaging; the state holds `(n + 2) d`
//! scalars.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{lyapunov, optimal_stepsize, Reference};
use crate::problem::{check_dim, FiniteSumProblem, Point};
use crate::sampler::Sampler;
use crate::{Error, Result, DEFAULT_PROX_TOL};

/// Minibatches at least this large fan their prox calls out over rayon.
const PARALLEL_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    /// `sqrt(s / (L mu n))`.
    Auto,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientInit {
    /// `g_i = grad f_i(x0)`.
    #[default]
    AtX0,
    Zeros,
    /// Caller supplies the table.
    Provided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gamma: StepSize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Halt once `|x - x_star|^2` is at or below this (needs a known solution).
    pub stop_dist_sq: Option<f64>,
    pub trace_every: usize,
    /// Cadence of exact recomputation of the table mean; `None` never refreshes.
    pub refresh_every: Option<usize>,
    pub init_gradients: GradientInit,
    pub prox_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: StepSize::Auto,
            batch_size: 1,
            max_iters: 1000,
            seed: 0,
            stop_dist_sq: None,
            trace_every: 1,
            refresh_every: Some(1000),
            init_gradients: GradientInit::AtX0,
            prox_tol: DEFAULT_PROX_TOL,
        }
    }
}

impl SolverConfig {
    /// Checks the config against `problem` and returns the numeric stepsize.
    pub fn resolve_gamma(&self, problem: &FiniteSumProblem) -> Result<f64> {
        let n = problem.n();
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidBatchSize { s: self.batch_size, n });
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidConstants("trace_every must be at least 1".into()));
        }
        if self.refresh_every == Some(0) {
            return Err(Error::InvalidConstants("refresh_every must be at least 1".into()));
        }
        if !(self.prox_tol > 0.0) {
            return Err(Error::InvalidConstants(format!("prox_tol must be positive, got {}", self.prox_tol)));
        }
        match self.gamma {
            StepSize::Fixed(g) if g > 0.0 && g.is_finite() => Ok(g),
            StepSize::Fixed(g) => Err(Error::InvalidConstants(format!("stepsize must be positive, got {g}"))),
            StepSize::Auto => optimal_stepsize(self.batch_size, n, problem.mu(), problem.L()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub t: usize,
    pub x: Point,
    pub grad_table: Vec<Point>,
    pub g_avg: Point,
}

impl SolverState {
    /// Builds a state whose running average is the exact table mean.
    pub fn from_table(x: Point, grad_table: Vec<Point>) -> Self {
        let g_avg = table_mean(&grad_table, x.len());
        Self { t: 0, x, grad_table, g_avg }
    }

    pub fn exact_mean(&self) -> Point {
        table_mean(&self.grad_table, self.x.len())
    }

    /// `|g_avg - mean(grad_table)|`.
    pub fn table_drift(&self) -> f64 {
        (&self.g_avg - self.exact_mean()).norm()
    }

    pub fn refresh_average(&mut self) {
        self.g_avg = self.exact_mean();
    }
}

fn table_mean(table: &[Point], dim: usize) -> Point {
    let mut sum = Point::zeros(dim);
    for g in table {
        sum += g;
    }
    sum / table.len() as f64
}

pub fn initialize(
    problem: &FiniteSumProblem,
    config: &SolverConfig,
    x0: &Point,
    provided: Option<&[Point]>,
) -> Result<SolverState> {
    check_dim(x0, problem.dim())?;
    let table = match config.init_gradients {
        GradientInit::AtX0 => problem.gradients_at(x0)?,
        GradientInit::Zeros => vec![Point::zeros(problem.dim()); problem.n()],
        GradientInit::Provided => {
            let table = provided.ok_or(Error::MissingProvidedGradients)?;
            if table.len() != problem.n() {
                return Err(Error::MissingProvidedGradients);
            }
            for g in table {
                check_dim(g, problem.dim())?;
            }
            table.to_vec()
        }
    };
    Ok(SolverState::from_table(x0.clone(), table))
}

/// One deterministic step using the index set `subset`.
pub fn step_with_subset(
    problem: &FiniteSumProblem,
    state: &SolverState,
    gamma: f64,
    subset: &[usize],
    prox_tol: f64,
) -> Result<SolverState> {
    let mut next = state.clone();
    advance(problem, &mut next, gamma, subset, prox_tol, None)?;
    Ok(next)
}

/// Applies one step in place. `keep_override` replaces the `(n - s)/n`
/// coefficient of the average update; it exists only for fault injection.
pub(crate) fn advance(
    problem: &FiniteSumProblem,
    state: &mut SolverState,
    gamma: f64,
    subset: &[usize],
    prox_tol: f64,
    keep_override: Option<f64>,
) -> Result<()> {
    let n = problem.n();
    let s = subset.len();
    if s == 0 || s > n {
        return Err(Error::InvalidBatchSize { s, n });
    }
    let x = &state.x;
    let g_avg = &state.g_avg;
    let table = &state.grad_table;
    let one = |&i: &usize| -> Result<(usize, Point, Point)> {
        let z = x + (&table[i] - g_avg) * gamma;
        let p = problem
            .component(i)
            .prox(gamma, &z, prox_tol)
            .map_err(|e| Error::ProxFailure { index: i, source: Box::new(e) })?;
        let g = (z - &p.point) / gamma;
        Ok((i, p.point, g))
    };
    let updates: Vec<(usize, Point, Point)> = if s >= PARALLEL_BATCH {
        subset.par_iter().map(one).collect::<Result<_>>()?
    } else {
        subset.iter().map(one).collect::<Result<_>>()?
    };

    let mut x_next = Point::zeros(problem.dim());
    for (_, p, _) in &updates {
        x_next += p;
    }
    x_next /= s as f64;
    for (i, _, g) in updates {
        state.grad_table[i] = g;
    }

    let keep = keep_override.unwrap_or((n - s) as f64 / n as f64);
    let pull = s as f64 / (n as f64 * gamma);
    state.g_avg = &state.g_avg * keep + (&state.x - &x_next) * pull;
    state.x = x_next;
    state.t += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub dist_sq: Option<f64>,
    pub lyapunov: Option<f64>,
    pub table_drift: f64,
    pub wall_ns: u64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: SolverState,
    pub gamma: f64,
    pub trace: Vec<TraceRecord>,
    /// Lyapunov value after every iteration `0..=t`; empty without a known solution.
    pub lyapunov_history: Vec<f64>,
    pub wall_ns: u64,
}

impl RunOutput {
    pub fn iterations(&self) -> usize {
        self.state.t
    }
}

/// Drives the iteration. Owns the sampler of one run.
pub struct Solver<'a> {
    problem: &'a FiniteSumProblem,
    config: SolverConfig,
    gamma: f64,
    sampler: Sampler,
    reference: Option<Reference>,
    keep_override: Option<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(problem: &'a FiniteSumProblem, config: SolverConfig) -> Result<Self> {
        let gamma = config.resolve_gamma(problem)?;
        let sampler = Sampler::new(config.seed, problem.n(), config.batch_size)?;
        let reference = match problem.known_solution() {
            Some(x) => Some(Reference { grad_star: problem.gradients_at(x)?, x_star: x.clone() }),
            None => None,
        };
        Ok(Self { problem, config, gamma, sampler, reference, keep_override: None })
    }

    #[cfg(test)]
    pub(crate) fn with_keep_override(mut self, keep: f64) -> Self {
        self.keep_override = Some(keep);
        self
    }

    pub(crate) fn set_keep_override(&mut self, keep: Option<f64>) {
        self.keep_override = keep;
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    pub fn initialize(&self, x0: &Point, provided: Option<&[Point]>) -> Result<SolverState> {
        initialize(self.problem, &self.config, x0, provided)
    }

    /// Draws the next subset and advances `state`; returns the subset used.
    pub fn step(&mut self, state: &mut SolverState) -> Result<Vec<usize>> {
        let sample = self.sampler.next_sample();
        advance(self.problem, state, self.gamma, &sample.indices, self.config.prox_tol, self.keep_override)?;
        if let Some(every) = self.config.refresh_every {
            if state.t.is_multiple_of(every) {
                state.refresh_average();
            }
        }
        Ok(sample.indices)
    }

    pub fn lyapunov(&self, state: &SolverState) -> Option<f64> {
        let r = self.reference.as_ref()?;
        lyapunov(state, self.problem, r, self.gamma, self.config.batch_size).ok()
    }

    fn record(&self, state: &SolverState, start: &Instant) -> TraceRecord {
        TraceRecord {
            t: state.t,
            dist_sq: self.reference.as_ref().map(|r| (&state.x - &r.x_star).norm_squared()),
            lyapunov: self.lyapunov(state),
            table_drift: state.table_drift(),
            wall_ns: start.elapsed().as_nanos() as u64,
        }
    }

    /// Iterates until `max_iters` or the distance threshold. Trace rows are
    /// taken at `t = 0`, every `trace_every` iterations, and at the last `t`.
    pub fn run(&mut self, x0: &Point, provided: Option<&[Point]>) -> Result<RunOutput> {
        let start = Instant::now();
        let mut state = self.initialize(x0, provided)?;
        let mut trace = vec![self.record(&state, &start)];
        let mut history = Vec::new();
        if let Some(psi) = self.lyapunov(&state) {
            history.push(psi);
        }
        let reached = |state: &SolverState, r: Option<&Reference>, thr: Option<f64>| match (r, thr) {
            (Some(r), Some(thr)) => (&state.x - &r.x_star).norm_squared() <= thr,
            _ => false,
        };
        let mut stopped = reached(&state, self.reference.as_ref(), self.config.stop_dist_sq);
        while !stopped && state.t < self.config.max_iters {
            self.step(&mut state)?;
            if let Some(psi) = self.lyapunov(&state) {
                history.push(psi);
            }
            stopped = reached(&state, self.reference.as_ref(), self.config.stop_dist_sq);
            if state.t % self.config.trace_every == 0 {
                trace.push(self.record(&state, &start));
            }
        }
        if trace.last().map(|r| r.t) != Some(state.t) {
            trace.push(self.record(&state, &start));
        }
        Ok(RunOutput {
            state,
            gamma: self.gamma,
            trace,
            lyapunov_history: history,
            wall_ns: start.elapsed().as_nanos() as u64,
        })
    }
}

/// Convenience wrapper: a fresh [`Solver`] run from `x0`.
pub fn run(problem: &FiniteSumProblem, config: &SolverConfig, x0: &Point) -> Result<RunOutput> {
    Solver::new(problem, config.clone())?.run(x0, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::QuadraticComponent;
    use crate::problem::assemble_problem;
    use crate::problems::{gen_quadratic, Family, GeneratorSpec};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn one_dim_problem() -> FiniteSumProblem {
        let f = QuadraticComponent::new(DMatrix::identity(1, 1), Point::zeros(1), 0.0).unwrap();
        assemble_problem(vec![Arc::new(f)], 1.0, 1.0, 1).unwrap().with_known_solution(Point::zeros(1)).unwrap()
    }

    fn one_dim_config() -> SolverConfig {
        SolverConfig {
            gamma: StepSize::Fixed(1.0),
            batch_size: 1,
            max_iters: 30,
            init_gradients: GradientInit::Zeros,
            ..SolverConfig::default()
        }
    }

    fn quad(n: usize, dim: usize, seed: u64) -> FiniteSumProblem {
        gen_quadratic(&GeneratorSpec { family: Family::Quadratic, n, dim, mu: 1.0, l: 10.0, seed }).unwrap()
    }

    #[test]
    fn initialize_modes() {
        let p = one_dim_problem();
        let x0 = Point::from_vec(vec![2.0]);
        let cfg = SolverConfig { init_gradients: GradientInit::AtX0, ..one_dim_config() };
        let st = initialize(&p, &cfg, &x0, None).unwrap();
        assert_eq!(st.grad_table, vec![Point::from_vec(vec![2.0])]);
        assert_eq!(st.g_avg, Point::from_vec(vec![2.0]));
        assert_eq!(st.table_drift(), 0.0);

        let zeros = initialize(&p, &one_dim_config(), &x0, None).unwrap();
        assert_eq!(zeros.g_avg, Point::zeros(1));

        let cfg = SolverConfig { init_gradients: GradientInit::Provided, ..one_dim_config() };
        let provided = initialize(&p, &cfg, &x0, Some(&[Point::zeros(1)])).unwrap();
        assert_eq!(provided, zeros);
        assert!(matches!(initialize(&p, &cfg, &x0, None), Err(Error::MissingProvidedGradients)));
        assert!(matches!(
            initialize(&p, &cfg, &Point::zeros(2), Some(&[Point::zeros(1)])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hand_traced_first_two_steps() {
        let p = one_dim_problem();
        let st = initialize(&p, &one_dim_config(), &Point::from_vec(vec![2.0]), None).unwrap();
        let st = step_with_subset(&p, &st, 1.0, &[0], 1e-10).unwrap();
        assert_eq!((st.x[0], st.grad_table[0][0], st.g_avg[0]), (1.0, 1.0, 1.0));
        let st = step_with_subset(&p, &st, 1.0, &[0], 1e-10).unwrap();
        assert_eq!((st.x[0], st.grad_table[0][0], st.g_avg[0]), (0.5, 0.5, 0.5));
        assert_eq!(st.t, 2);
    }

    #[test]
    fn run_with_zero_budget_returns_initial_state() {
        let p = one_dim_problem();
        let cfg = SolverConfig { max_iters: 0, ..one_dim_config() };
        let out = run(&p, &cfg, &Point::from_vec(vec![2.0])).unwrap();
        assert_eq!(out.state.t, 0);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].t, 0);
    }

    #[test]
    fn one_dim_run_halves_every_step() {
        let p = one_dim_problem();
        let out = run(&p, &one_dim_config(), &Point::from_vec(vec![2.0])).unwrap();
        let d = out.trace.last().unwrap().dist_sq.unwrap();
        let expected = 4.0 * 0.5f64.powi(60);
        assert!(((d - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn distance_threshold_stops_at_first_crossing() {
        // |x_t|^2 = 4^(1-t) <= 1e-16 first holds at t = 28.
        let p = one_dim_problem();
        let cfg = SolverConfig { max_iters: 100, stop_dist_sq: Some(1e-16), ..one_dim_config() };
        let out = run(&p, &cfg, &Point::from_vec(vec![2.0])).unwrap();
        assert_eq!(out.state.t, 28);
        assert_eq!(out.trace.last().unwrap().t, 28);
    }

    #[test]
    fn trace_row_count() {
        let p = quad(5, 2, 3);
        for (iters, every) in [(2000usize, 10usize), (2000, 3), (7, 7), (7, 1)] {
            let cfg = SolverConfig { max_iters: iters, trace_every: every, batch_size: 2, ..SolverConfig::default() };
            let out = run(&p, &cfg, &Point::zeros(2)).unwrap();
            assert_eq!(out.trace.len(), iters.div_ceil(every) + 1, "iters={iters} every={every}");
            assert!(out.trace.windows(2).all(|w| w[0].t < w[1].t));
        }
    }

    #[test]
    fn full_batch_ignores_seed() {
        let p = quad(6, 3, 1);
        let base = SolverConfig { batch_size: 6, max_iters: 50, ..SolverConfig::default() };
        let a = run(&p, &SolverConfig { seed: 1, ..base.clone() }, &Point::zeros(3)).unwrap();
        let b = run(&p, &SolverConfig { seed: 999, ..base }, &Point::zeros(3)).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = quad(10, 3, 2);
        let cfg = SolverConfig { batch_size: 3, max_iters: 200, seed: 17, ..SolverConfig::default() };
        let a = run(&p, &cfg, &Point::zeros(3)).unwrap();
        let b = run(&p, &cfg, &Point::zeros(3)).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.lyapunov_history, b.lyapunov_history);
    }

    #[test]
    fn parallel_and_serial_batches_agree() {
        let p = quad(20, 4, 8);
        let st = initialize(&p, &SolverConfig::default(), &Point::zeros(4), None).unwrap();
        let subset: Vec<usize> = (0..12).collect();
        let par = step_with_subset(&p, &st, 0.1, &subset, 1e-10).unwrap();
        let mut ser = st.clone();
        // Reference: serial evaluation in index order.
        let mut x = Point::zeros(4);
        for &i in &subset {
            let z = &st.x + (&st.grad_table[i] - &st.g_avg) * 0.1;
            let pr = p.component(i).prox(0.1, &z, 1e-10).unwrap();
            ser.grad_table[i] = (z - &pr.point) / 0.1;
            x += pr.point;
        }
        ser.x = x / 12.0;
        assert_eq!(par.x, ser.x);
        assert_eq!(par.grad_table, ser.grad_table);
    }

    #[test]
    fn updated_entries_equal_gradients_at_prox_points() {
        let p = quad(8, 3, 4);
        let gamma = 0.3;
        let st = initialize(&p, &SolverConfig::default(), &Point::from_vec(vec![1.0, -2.0, 0.5]), None).unwrap();
        let subset = [1, 4, 6];
        let next = step_with_subset(&p, &st, gamma, &subset, 1e-10).unwrap();
        for &i in &subset {
            let z = &st.x + (&st.grad_table[i] - &st.g_avg) * gamma;
            let xi = p.component(i).prox(gamma, &z, 1e-10).unwrap().point;
            let grad = p.component(i).gradient(&xi);
            assert!((&next.grad_table[i] - grad).norm() <= 1e-10 / gamma);
        }
        for i in [0, 2, 3, 5, 7] {
            assert_eq!(next.grad_table[i], st.grad_table[i]);
        }
    }

    #[test]
    fn solution_is_a_fixed_point() {
        let p = quad(7, 3, 5);
        let x_star = p.known_solution().unwrap().clone();
        let st = SolverState::from_table(x_star.clone(), p.gradients_at(&x_star).unwrap());
        let next = step_with_subset(&p, &st, 0.5, &[0, 3, 6], 1e-10).unwrap();
        assert!((&next.x - &x_star).norm() <= 1e-10);
        for (a, b) in next.grad_table.iter().zip(&st.grad_table) {
            assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn drift_is_small_and_refresh_zeroes_it() {
        let p = quad(50, 10, 6);
        let cfg = SolverConfig {
            batch_size: 5,
            max_iters: 10_000,
            refresh_every: None,
            trace_every: 10_000,
            ..SolverConfig::default()
        };
        let out = run(&p, &cfg, &Point::zeros(10)).unwrap();
        let drift = out.state.table_drift();
        assert!(drift <= 1e-10 * (1.0 + out.state.g_avg.norm()), "drift {drift:e}");

        let cfg = SolverConfig { max_iters: 1000, refresh_every: Some(1000), ..cfg };
        let out = run(&p, &cfg, &Point::zeros(10)).unwrap();
        assert_eq!(out.state.table_drift(), 0.0);
    }

    #[test]
    fn wrong_average_coefficient_drifts() {
        let p = quad(50, 10, 6);
        let cfg = SolverConfig { batch_size: 5, max_iters: 200, refresh_every: None, ..SolverConfig::default() };
        let mut solver = Solver::new(&p, cfg).unwrap().with_keep_override(46.0 / 50.0);
        let out = solver.run(&Point::zeros(10), None).unwrap();
        assert!(out.state.table_drift() > 1e-6);
    }

    #[test]
    fn config_errors() {
        let p = quad(5, 2, 0);
        let bad = SolverConfig { batch_size: 6, ..SolverConfig::default() };
        assert!(matches!(Solver::new(&p, bad), Err(Error::InvalidBatchSize { s: 6, n: 5 })));
        let bad = SolverConfig { gamma: StepSize::Fixed(-1.0), ..SolverConfig::default() };
        assert!(Solver::new(&p, bad).is_err());
        let bad = SolverConfig { trace_every: 0, ..SolverConfig::default() };
        assert!(Solver::new(&p, bad).is_err());
    }
}
