//! `tyler`: estimation, diagnostics, simulation and experiment sweeps.
//!
//! Exit codes: 0 success, 1 input/argument/I/O error, 2 the iteration did not
//! converge or no solution exists, 3 a spectral budget was exceeded.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tyler_core::cpmap::MatrixBudget;
use tyler_core::expander::{diagnose, CandidateBudget, DiagnosticsReport};
use tyler_core::experiments::{
    consecutive_ratios, converge, sweep, SweepConfig, SUMMARY_HEADER, SWEEP_HEADER,
};
use tyler_core::io::{
    read_matrix, read_vectors, write_matrix, write_trace, write_vectors, write_verdict,
    VerdictRecord,
};
use tyler_core::sampling::{sample_elliptical, EllipticalSpec, UDist};
use tyler_core::sinkhorn::{RunStatus, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use tyler_core::tyler::{
    estimate, existence_check, scaled_operator, ExistenceStatus, DEFAULT_EXHAUSTIVE_LIMIT,
};
use tyler_core::{Error, PdMatrix, VectorTuple};

#[derive(Parser)]
#[command(
    name = "tyler",
    version,
    about = "Tyler's M-estimator via operator Sinkhorn scaling"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Prefix of every output file; may include directories.
    #[arg(long, global = true, default_value = "tyler")]
    out_prefix: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SampleInput {
    /// Samples CSV, one sample per row.
    input: PathBuf,
    /// Read one sample per column instead.
    #[arg(long)]
    transpose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the shape matrix; writes shape, trace and verdict files.
    Estimate {
        #[command(flatten)]
        samples: SampleInput,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        /// Classify existence first and skip the iteration when no solution exists.
        #[arg(long)]
        check_existence: bool,
    },
    /// Expansion, spectral gap and Cheeger bound of the sample map.
    Diagnose {
        #[command(flatten)]
        samples: SampleInput,
        /// Largest sample-subset size whose span is a Cheeger candidate.
        #[arg(long, default_value_t = 2)]
        budget_spans: usize,
        /// Random projections per rank in the Cheeger search.
        #[arg(long, default_value_t = 8)]
        budget_random: usize,
        /// Also diagnose the operator scaled by the estimate.
        #[arg(long)]
        with_scaled: bool,
    },
    /// Draw elliptical samples.
    Simulate {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        n: usize,
        /// Shape matrix CSV, or `identity`.
        #[arg(long, default_value = "identity")]
        shape: String,
        /// Radial law: const, lognormal:s, pareto:a or cauchy.
        #[arg(long, default_value = "const")]
        u: String,
    },
    /// Estimation error against the truth over sample sizes and trials.
    Sweep {
        #[arg(long)]
        p: usize,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long)]
        trials: usize,
        /// Error reported in the ratio summary.
        #[arg(long, value_enum, default_value_t = Metric::Op)]
        metric: Metric,
        #[arg(long, default_value = "const")]
        u: String,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Full trace of one run with a fitted linear rate.
    Converge {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Op,
    Frob,
}

enum Outcome {
    Ok,
    NotConverged,
}

fn output(prefix: &str, suffix: &str) -> Result<BufWriter<File>, Error> {
    let path = PathBuf::from(format!("{prefix}{suffix}"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_samples(s: &SampleInput) -> Result<VectorTuple, Error> {
    read_vectors(BufReader::new(File::open(&s.input)?), s.transpose)
}

fn load_shape(spec: &str, p: usize) -> Result<PdMatrix, Error> {
    if spec == "identity" {
        return Ok(PdMatrix::identity(p));
    }
    let m = read_matrix(BufReader::new(File::open(Path::new(spec))?))?;
    if m.shape() != (p, p) {
        return Err(Error::DimMismatch {
            expected: p,
            actual: m.nrows(),
        });
    }
    PdMatrix::new(m)
}

fn cmd_estimate(
    cli: &Cli,
    samples: &SampleInput,
    tol: f64,
    max_iters: usize,
    check: bool,
) -> Result<Outcome, Error> {
    let x = load_samples(samples)?;
    let (p, n) = (x.dim(), x.len());
    if check {
        let verdict = existence_check(&x, DEFAULT_EXHAUSTIVE_LIMIT);
        if verdict.status == ExistenceStatus::NoSolution {
            write_verdict(
                output(&cli.out_prefix, "_verdict.jsonl")?,
                &VerdictRecord::new(&verdict, n, p),
            )?;
            eprintln!("no solution exists: {}", verdict.status);
            return Ok(Outcome::NotConverged);
        }
    }
    let r = estimate(&x, tol, max_iters)?;
    write_matrix(
        output(&cli.out_prefix, "_shape.csv")?,
        r.sigma_hat.as_matrix(),
    )?;
    write_trace(output(&cli.out_prefix, "_trace.csv")?, &r.trace)?;
    write_verdict(
        output(&cli.out_prefix, "_verdict.jsonl")?,
        &VerdictRecord::new(&r.verdict, n, p),
    )?;
    println!(
        "status={} iterations={} residual={:e} verdict={}",
        r.trace.status,
        r.trace.iterations(),
        r.residual,
        r.verdict.status
    );
    let ok =
        r.trace.status == RunStatus::Converged && r.verdict.status != ExistenceStatus::NoSolution;
    Ok(if ok {
        Outcome::Ok
    } else {
        Outcome::NotConverged
    })
}

fn write_report(prefix: &str, suffix: &str, report: &DiagnosticsReport) -> Result<(), Error> {
    let mut csv = output(prefix, &format!("{suffix}.csv"))?;
    writeln!(csv, "{}", DiagnosticsReport::CSV_HEADER)?;
    writeln!(csv, "{}", report.to_csv_row())?;
    csv.flush()?;
    let mut kv = output(prefix, &format!("{suffix}.txt"))?;
    write!(kv, "{}", report.to_key_value())?;
    kv.flush()?;
    Ok(())
}

fn cmd_diagnose(
    cli: &Cli,
    samples: &SampleInput,
    spans: usize,
    random: usize,
    with_scaled: bool,
) -> Result<Outcome, Error> {
    let x = load_samples(samples)?;
    let budget = MatrixBudget::default();
    let candidates = CandidateBudget {
        span_size: spans,
        random_count: random,
        seed: cli.seed,
        ..CandidateBudget::default()
    };
    let report = diagnose(&x, &budget, &candidates)?;
    write_report(&cli.out_prefix, "_diagnostics", &report)?;
    print!("{}", report.to_key_value());
    if with_scaled {
        let est = estimate(&x, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
        if est.trace.status != RunStatus::Converged {
            eprintln!(
                "estimate did not converge ({}); skipping the scaled operator",
                est.trace.status
            );
            return Ok(Outcome::NotConverged);
        }
        let tyler_core::CpMap::DiagonalOutput(z) = scaled_operator(&x, &est.sigma_hat)? else {
            unreachable!("scaled_operator builds a sample map")
        };
        let scaled = diagnose(&z, &budget, &candidates)?;
        write_report(&cli.out_prefix, "_diagnostics_scaled", &scaled)?;
        for line in scaled.to_key_value().lines() {
            println!("scaled.{line}");
        }
    }
    Ok(Outcome::Ok)
}

fn cmd_simulate(cli: &Cli, p: usize, n: usize, shape: &str, u: &str) -> Result<Outcome, Error> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument("p and n must be at least 1".into()));
    }
    let u_dist: UDist = u.parse()?;
    let spec = EllipticalSpec::new(&load_shape(shape, p)?, u_dist, cli.seed);
    let x = sample_elliptical(&spec, n)?;
    let mut out = output(&cli.out_prefix, "_samples.csv")?;
    write_vectors(&mut out, &x)?;
    out.flush()?;
    let mut meta = output(&cli.out_prefix, "_samples.meta")?;
    writeln!(
        meta,
        "p={p} n={n} seed={} u_dist={u_dist} shape={shape}",
        cli.seed
    )?;
    meta.flush()?;
    Ok(Outcome::Ok)
}

fn cmd_sweep(
    cli: &Cli,
    p: usize,
    n_list: &[usize],
    trials: usize,
    metric: Metric,
    u: &str,
    tol: f64,
) -> Result<Outcome, Error> {
    let mut cfg = SweepConfig::new(p, n_list.to_vec(), trials, cli.seed);
    cfg.u_dist = u.parse()?;
    cfg.tol = tol;
    let (rows, summary) = sweep(&cfg)?;
    let mut out = output(&cli.out_prefix, "_sweep.csv")?;
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in &rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()?;
    let mut out = output(&cli.out_prefix, "_sweep_summary.csv")?;
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in &summary {
        writeln!(out, "{}", s.to_csv())?;
    }
    out.flush()?;
    let medians: Vec<f64> = summary
        .iter()
        .map(|s| match metric {
            Metric::Op => s.median_err_op,
            Metric::Frob => s.median_err_frob,
        })
        .collect();
    for (w, ratio) in summary.windows(2).zip(consecutive_ratios(&medians)) {
        println!(
            "n={} -> n={}: median error ratio {ratio:.4}",
            w[0].n, w[1].n
        );
    }
    let failures = rows.iter().filter(|r| !r.err_op.is_finite()).count();
    if failures > 0 {
        eprintln!("{failures} trial(s) failed; see the status column");
    }
    Ok(Outcome::Ok)
}

fn cmd_converge(
    cli: &Cli,
    p: usize,
    n: usize,
    tol: f64,
    max_iters: usize,
) -> Result<Outcome, Error> {
    let report = converge(p, n, cli.seed, tol, max_iters)?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    write_trace(output(&cli.out_prefix, "_trace.csv")?, &report.trace)?;
    let mut out = output(&cli.out_prefix, "_rate.txt")?;
    let summary = match &report.rate {
        Ok(r) => format!("slope={}\nr2={}\npoints={}\n", r.slope, r.r2, r.points),
        Err(e) => format!("rate=unavailable\nreason={e}\n"),
    };
    write!(
        out,
        "status={}\niterations={}\n{summary}",
        report.trace.status,
        report.trace.iterations()
    )?;
    out.flush()?;
    print!(
        "status={}\niterations={}\n{summary}",
        report.trace.status,
        report.trace.iterations()
    );
    Ok(if report.trace.status == RunStatus::Converged {
        Outcome::Ok
    } else {
        Outcome::NotConverged
    })
}

fn dispatch(cli: &Cli) -> Result<Outcome, Error> {
    match &cli.command {
        Command::Estimate {
            samples,
            tol,
            max_iters,
            check_existence,
        } => cmd_estimate(cli, samples, *tol, *max_iters, *check_existence),
        Command::Diagnose {
            samples,
            budget_spans,
            budget_random,
            with_scaled,
        } => cmd_diagnose(cli, samples, *budget_spans, *budget_random, *with_scaled),
        Command::Simulate { p, n, shape, u } => cmd_simulate(cli, *p, *n, shape, u),
        Command::Sweep {
            p,
            n_list,
            trials,
            metric,
            u,
            tol,
        } => cmd_sweep(cli, *p, n_list, *trials, *metric, u, *tol),
        Command::Converge {
            p,
            n,
            tol,
            max_iters,
        } => cmd_converge(cli, *p, *n, *tol, *max_iters),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e @ Error::BudgetExceeded { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
