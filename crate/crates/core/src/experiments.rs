//! Seeded experiment drivers shared by the command line and the acceptance
//! suite: error-versus-sample-size sweeps and convergence-rate runs.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{error_frob, error_op, normalize, Normalization, PdMatrix};
use crate::sampling::{sample_elliptical, EllipticalSpec, UDist};
use crate::sinkhorn::{
    linear_rate_estimate, verify_progress, ConvergenceTrace, RateEstimate, RunStatus,
    DEFAULT_MAX_ITERS, RATE_MIN_POINTS,
};
use crate::tyler::estimate;

/// Seed for one trial, fixed by `(seed, n, trial)` so results do not depend
/// on scheduling.
pub fn trial_seed(seed: u64, n: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | trial as u64);
    rng.next_u64()
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub p: usize,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// True shape; identity when absent.
    pub shape: Option<PdMatrix>,
    pub u_dist: UDist,
    pub tol: f64,
    pub max_iters: usize,
}

impl SweepConfig {
    pub fn new(p: usize, n_list: Vec<usize>, trials: usize, seed: u64) -> Self {
        SweepConfig {
            p,
            n_list,
            trials,
            seed,
            shape: None,
            u_dist: UDist::Constant,
            tol: 1e-8,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub trial: usize,
    pub err_op: f64,
    pub err_frob: f64,
    pub iters: usize,
    /// Run status, or the error that stopped the trial.
    pub status: String,
    /// Whether the run's trace passes [`verify_progress`].
    pub progress_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n: usize,
    pub median_err_op: f64,
    pub median_err_frob: f64,
    pub ok_trials: usize,
}

pub const SWEEP_HEADER: &str = "n,trial,err_op,err_frob,iters,status,progress_ok";
pub const SUMMARY_HEADER: &str = "n,median_err_op,median_err_frob,ok_trials";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            self.trial,
            self.err_op,
            self.err_frob,
            self.iters,
            self.status,
            self.progress_ok
        )
    }
}

impl SweepSummary {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.n, self.median_err_op, self.median_err_frob, self.ok_trials
        )
    }
}

fn run_trial(cfg: &SweepConfig, truth: &PdMatrix, n: usize, trial: usize) -> SweepRow {
    let failed = |status: String| SweepRow {
        n,
        trial,
        err_op: f64::NAN,
        err_frob: f64::NAN,
        iters: 0,
        status,
        progress_ok: false,
    };
    let spec = EllipticalSpec::new(truth, cfg.u_dist, trial_seed(cfg.seed, n, trial));
    let x = match sample_elliptical(&spec, n) {
        Ok(x) => x,
        Err(e) => return failed(format!("error: {e}")),
    };
    let est = match estimate(&x, cfg.tol, cfg.max_iters) {
        Ok(r) => r,
        Err(e) => return failed(format!("error: {e}")),
    };
    let iters = est.trace.iterations();
    let progress_ok = verify_progress(&est.trace);
    if est.trace.status == RunStatus::Diverged {
        return SweepRow {
            iters,
            progress_ok,
            ..failed(est.trace.status.to_string())
        };
    }
    match (
        error_op(truth, &est.sigma_hat),
        error_frob(truth, &est.sigma_hat),
    ) {
        (Ok(op), Ok(frob)) => SweepRow {
            n,
            trial,
            err_op: op,
            err_frob: frob,
            iters,
            status: est.trace.status.to_string(),
            progress_ok,
        },
        (Err(e), _) | (_, Err(e)) => failed(format!("error: {e}")),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs every `(n, trial)` pair in parallel on the current rayon pool.
/// Failed trials become rows with `NaN` errors and their status.
pub fn sweep(cfg: &SweepConfig) -> Result<(Vec<SweepRow>, Vec<SweepSummary>)> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if cfg.n_list.is_empty() {
        return Err(Error::InvalidArgument("n list is empty".into()));
    }
    if let Some(&n) = cfg.n_list.iter().find(|&&n| n <= cfg.p) {
        return Err(Error::InvalidArgument(format!(
            "every n must be at least p + 1 = {}, got {n}",
            cfg.p + 1
        )));
    }
    let truth = match &cfg.shape {
        Some(s) if s.dim() != cfg.p => {
            return Err(Error::DimMismatch {
                expected: cfg.p,
                actual: s.dim(),
            })
        }
        Some(s) => normalize(s, Normalization::TraceP),
        None => PdMatrix::identity(cfg.p),
    };
    let jobs: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(n, t)| run_trial(cfg, &truth, n, t))
        .collect();
    let summary = cfg
        .n_list
        .iter()
        .map(|&n| {
            let ok: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.n == n && r.err_op.is_finite())
                .collect();
            SweepSummary {
                n,
                median_err_op: median(ok.iter().map(|r| r.err_op).collect()),
                median_err_frob: median(ok.iter().map(|r| r.err_frob).collect()),
                ok_trials: ok.len(),
            }
        })
        .collect();
    Ok((rows, summary))
}

/// Ratios of consecutive medians, `median(n_i) / median(n_{i+1})`.
pub fn consecutive_ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0] / w[1]).collect()
}

#[derive(Debug)]
pub struct ConvergeReport {
    pub trace: ConvergenceTrace,
    pub rate: Result<RateEstimate>,
    /// Set when `n < 40 p`, below which fast convergence is not expected.
    pub warning: Option<String>,
}

/// Fraction of the trace used for the rate fit, widened to
/// [`RATE_MIN_POINTS`] records when the trace is short.
pub const RATE_TAIL_FRACTION: f64 = 0.5;

/// The rate fit used by [`converge`].
pub fn tail_rate(trace: &ConvergenceTrace) -> Result<RateEstimate> {
    let len = trace.records.len().max(1) as f64;
    let fraction = RATE_TAIL_FRACTION
        .max(RATE_MIN_POINTS as f64 / len)
        .min(1.0);
    linear_rate_estimate(trace, fraction)
}

/// Estimates from `n` isotropic Haar samples and fits the tail rate.
pub fn converge(
    p: usize,
    n: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<ConvergeReport> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument("p and n must be positive".into()));
    }
    let warning = (n < 40 * p).then(|| {
        format!(
            "n = {n} is below 40·p = {}; the iteration may converge slowly",
            40 * p
        )
    });
    let spec = EllipticalSpec::isotropic(p, UDist::Constant, seed);
    let x = sample_elliptical(&spec, n)?;
    let est = estimate(&x, tol, max_iters)?;
    let rate = tail_rate(&est.trace);
    Ok(ConvergeReport {
        trace: est.trace,
        rate,
        warning,
    })
}

/// Steps between the first record with `‖∇f‖ ≤ from` and the first with `‖∇f‖ ≤ to`.
pub fn iterations_between(trace: &ConvergenceTrace, from: f64, to: f64) -> Option<usize> {
    let a = trace.records.iter().find(|r| r.grad_norm <= from)?.iter;
    let b = trace.records.iter().find(|r| r.grad_norm <= to)?.iter;
    Some(b.saturating_sub(a))
}
