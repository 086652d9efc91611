//! Problem generators with planted solutions, and sparse data ingestion.
//!
//! Generators make the shared `(mu, L)` tight for every component: a
//! quadratic's spectrum contains both endpoints, and data rows are rescaled so
//! the data term's curvature bound is exactly `L - mu`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::analysis::{reference_solution, REFERENCE_TOL};
use crate::components::{LogisticRidgeComponent, QuadraticComponent, RidgeComponent};
use crate::problem::{assemble_problem, check_constants, Component, FiniteSumProblem, Point};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    RidgeRegression,
    LogisticRidge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n: usize,
    pub dim: usize,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    fn validate(&self, family: Family) -> Result<()> {
        if self.family != family {
            return Err(Error::InvalidSpec(format!("expected family {family:?}, got {:?}", self.family)));
        }
        if self.n == 0 || self.dim == 0 {
            return Err(Error::InvalidSpec("n and dim must be at least 1".into()));
        }
        check_constants(self.mu, self.l).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

/// Dispatches on `spec.family`.
pub fn generate(spec: &GeneratorSpec) -> Result<FiniteSumProblem> {
    match spec.family {
        Family::Quadratic => gen_quadratic(spec),
        Family::RidgeRegression => gen_ridge_regression(spec),
        Family::LogisticRidge => gen_logistic_ridge(spec),
    }
}

fn rng_for(spec: &GeneratorSpec) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(spec.seed)
}

fn gaussian_vector(rng: &mut impl Rng, d: usize) -> Point {
    Point::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Gaussian row rescaled to `|a|^2 = norm_sq`.
fn scaled_row(rng: &mut impl Rng, d: usize, norm_sq: f64) -> Point {
    loop {
        let a = gaussian_vector(rng, d);
        let n = a.norm();
        if n > 1e-8 {
            return a * (norm_sq.sqrt() / n);
        }
    }
}

/// `f_i(x) = (x - c_i)' A_i (x - c_i) / 2` with `A_i = Q_i D_i Q_i'`.
///
/// Each `D_i` contains both `mu` and `L` (for `dim = 1`, components alternate
/// between the two) with the remaining entries uniform in `[mu, L]`.
pub fn gen_quadratic(spec: &GeneratorSpec) -> Result<FiniteSumProblem> {
    spec.validate(Family::Quadratic)?;
    let (n, d, mu, l) = (spec.n, spec.dim, spec.mu, spec.l);
    let mut rng = rng_for(spec);
    let mut comps: Vec<Arc<dyn Component>> = Vec::with_capacity(n);
    let mut hessian = DMatrix::zeros(d, d);
    let mut rhs = Point::zeros(d);
    for i in 0..n {
        let mut diag = Point::zeros(d);
        if d == 1 {
            diag[0] = if i % 2 == 0 { l } else { mu };
        } else {
            diag[0] = mu;
            diag[d - 1] = l;
            for k in 1..d - 1 {
                diag[k] = rng.random_range(mu..=l);
            }
        }
        let q = random_orthogonal(&mut rng, d);
        let a = &q * DMatrix::from_diagonal(&diag) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let center = gaussian_vector(&mut rng, d);
        hessian += &a;
        rhs += &a * &center;
        comps.push(Arc::new(QuadraticComponent::centered(a, &center)?));
    }
    let problem = assemble_problem(comps, mu, l, d)?;
    let x_star = hessian.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
    // The normal equations above are the oracle; refine against the components.
    let x_star = reference_solution(&problem, REFERENCE_TOL).map(|r| r.x_star).unwrap_or(x_star);
    problem.with_known_solution(x_star)
}

/// `f_i(x) = (a_i'x - y_i)^2 / 2 + mu |x|^2 / 2` with `|a_i|^2 = L - mu`.
pub fn gen_ridge_regression(spec: &GeneratorSpec) -> Result<FiniteSumProblem> {
    spec.validate(Family::RidgeRegression)?;
    if spec.mu >= spec.l {
        return Err(Error::InvalidSpec("ridge regression needs mu < L".into()));
    }
    let (n, d, mu, l) = (spec.n, spec.dim, spec.mu, spec.l);
    let mut rng = rng_for(spec);
    let truth = gaussian_vector(&mut rng, d);
    let mut comps: Vec<Arc<dyn Component>> = Vec::with_capacity(n);
    for _ in 0..n {
        let a = scaled_row(&mut rng, d, l - mu);
        let noise: f64 = rng.sample(StandardNormal);
        let y = a.dot(&truth) + 0.1 * noise;
        comps.push(Arc::new(RidgeComponent::new(a, y, mu)));
    }
    let problem = assemble_problem(comps, mu, l, d)?;
    let x_star = reference_solution(&problem, REFERENCE_TOL)?.x_star;
    problem.with_known_solution(x_star)
}

/// `f_i(x) = log(1 + exp(-y_i a_i'x)) + mu |x|^2 / 2` with `|a_i|^2 = 4 (L - mu)`.
pub fn gen_logistic_ridge(spec: &GeneratorSpec) -> Result<FiniteSumProblem> {
    spec.validate(Family::LogisticRidge)?;
    if spec.mu >= spec.l {
        return Err(Error::InvalidSpec("logistic ridge needs mu < L".into()));
    }
    let (n, d, mu, l) = (spec.n, spec.dim, spec.mu, spec.l);
    let mut rng = rng_for(spec);
    let truth = gaussian_vector(&mut rng, d);
    let mut comps: Vec<Arc<dyn Component>> = Vec::with_capacity(n);
    for _ in 0..n {
        let a = scaled_row(&mut rng, d, 4.0 * (l - mu));
        let noise: f64 = rng.sample(StandardNormal);
        let y = if a.dot(&truth) + 0.5 * noise >= 0.0 { 1.0 } else { -1.0 };
        comps.push(Arc::new(LogisticRidgeComponent::new(a, y, mu)));
    }
    let problem = assemble_problem(comps, mu, l, d)?;
    let x_star = reference_solution(&problem, REFERENCE_TOL)?.x_star;
    problem.with_known_solution(x_star)
}

/// Rows and `+-1` labels read from a sparse data file.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Point>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }
}

/// Parses `label idx:val idx:val ...` lines. Indices are one-based and
/// strictly increasing within a line; `#` starts a comment. Positive labels
/// map to `+1`, all others to `-1`. Rows are densified to the largest index
/// seen, or to `dim` when given.
pub fn parse_libsvm(text: &str, dim: Option<usize>) -> Result<Dataset> {
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| err(format!("invalid label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label {label_tok:?}")));
        }
        let mut entries = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("invalid feature index in {tok:?}")))?;
            let val: f64 = val.parse().map_err(|_| err(format!("invalid feature value in {tok:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are one-based".into()));
            }
            if idx <= last {
                return Err(err(format!("feature indices must be strictly increasing ({idx} after {last})")));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value in {tok:?}")));
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(Error::InconsistentDimension { line: line_no, index: idx, dim: d });
                }
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        sparse.push(entries);
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
    }
    let d = dim.unwrap_or(max_index).max(1);
    let rows = sparse
        .into_iter()
        .map(|entries| {
            let mut row = Point::zeros(d);
            for (i, v) in entries {
                row[i] = v;
            }
            row
        })
        .collect();
    Ok(Dataset { rows, labels })
}

/// Builds logistic-ridge components over the rows of `dataset` with
/// `L = mu + max_i |a_i|^2 / 4`. Rows are not rescaled.
pub fn logistic_problem(dataset: &Dataset, mu: f64) -> Result<FiniteSumProblem> {
    let max_sq = dataset.rows.iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
    let l = mu + 0.25 * max_sq;
    check_constants(mu, l)?;
    let comps: Vec<Arc<dyn Component>> = dataset
        .rows
        .iter()
        .zip(&dataset.labels)
        .map(|(a, &y)| Arc::new(LogisticRidgeComponent::new(a.clone(), y, mu)) as Arc<dyn Component>)
        .collect();
    assemble_problem(comps, mu, l, dataset.dim())
}

pub fn load_libsvm(path: impl AsRef<Path>, mu: f64) -> Result<(Dataset, FiniteSumProblem)> {
    load_libsvm_with_dim(path, mu, None)
}

pub fn load_libsvm_with_dim(
    path: impl AsRef<Path>,
    mu: f64,
    dim: Option<usize>,
) -> Result<(Dataset, FiniteSumProblem)> {
    let path = path.as_ref();
    check_constants(mu, mu)?;
    let text = fs::read_to_string(path)?;
    let dataset = parse_libsvm(&text, dim)?;
    if dataset.n() == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let problem = logistic_problem(&dataset, mu)?;
    Ok((dataset, problem))
}
