//! Trace CSV and summary JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use point_saga::analysis::RateReport;
use point_saga::solver::TraceRecord;
use serde::Serialize;

pub const TRACE_HEADER: &str = "t,dist_sq,lyapunov,table_drift,wall_ns";

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn trace_csv(trace: &[TraceRecord], zero_wall_time: bool) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let wall = if zero_wall_time { 0 } else { r.wall_ns };
        let _ =
            writeln!(out, "{},{},{},{},{}", r.t, fmt_opt(r.dist_sq), fmt_opt(r.lyapunov), fmt_f64(r.table_drift), wall);
    }
    out
}

pub fn write_trace(path: &Path, trace: &[TraceRecord], zero_wall_time: bool) -> std::io::Result<()> {
    fs::write(path, trace_csv(trace, zero_wall_time))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub rho: f64,
    pub rho_prox: f64,
    pub rho_sample: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_defazio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_dr: Option<f64>,
    /// Mean over repeats of the per-run geometric-mean Lyapunov ratio after burn-in.
    pub empirical_contraction: Option<f64>,
    /// Mean over repeats.
    pub final_dist_sq: Option<f64>,
    /// `s` times the iteration count, averaged over repeats.
    pub prox_calls: u64,
    pub wall_ns: u64,
}

impl RunSummary {
    pub fn new(rates: &RateReport) -> Self {
        Self {
            rho: rates.rho,
            rho_prox: rates.rho_prox,
            rho_sample: rates.rho_sample,
            rho_defazio: rates.rho_defazio,
            rho_dr: rates.rho_dr,
            empirical_contraction: None,
            final_dist_sq: None,
            prox_calls: 0,
            wall_ns: 0,
        }
    }
}

pub const SWEEP_HEADER: &str =
    "gamma,s,rho,empirical_contraction,iterations_to_threshold,prox_calls,predicted_iterations,wall_ns";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub s: usize,
    pub rho: f64,
    pub empirical_contraction: Option<f64>,
    /// Mean over repeats; `None` if some repeat never reached the threshold.
    pub iterations_to_threshold: Option<f64>,
    pub prox_calls: Option<f64>,
    /// `ln(1/threshold) / (1 - rho)`.
    pub predicted_iterations: f64,
    pub wall_ns: u64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(r.gamma),
            r.s,
            fmt_f64(r.rho),
            fmt_opt(r.empirical_contraction),
            fmt_opt(r.iterations_to_threshold),
            fmt_opt(r.prox_calls),
            fmt_f64(r.predicted_iterations),
            r.wall_ns
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, 5e-324, -2.5e-17, 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            assert_eq!(digits, 17);
        }
    }

    #[test]
    fn missing_fields_are_empty() {
        let rows = vec![TraceRecord { t: 3, dist_sq: None, lyapunov: None, table_drift: 0.0, wall_ns: 12 }];
        let csv = trace_csv(&rows, false);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        assert_eq!(lines.next().unwrap(), "3,,,0.0000000000000000e0,12");
        assert_eq!(trace_csv(&rows, true).lines().nth(1).unwrap(), "3,,,0.0000000000000000e0,0");
    }
}
