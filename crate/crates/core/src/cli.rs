//! Command-line front end and CSV persistence.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{ExperimentOutput, FailedRun, RunResult, SummaryRow};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::robust_weights::{solve_with_tolerance, ChiSquareBall};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

pub const RAW_CSV: &str = "raw.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const FAILURES_CSV: &str = "failures.csv";
pub const RESOLVED_CONFIG: &str = "config.resolved";

#[derive(Debug, Parser)]
#[command(
    name = "drbqo",
    version,
    about = "Distributionally robust Bayesian quadrature optimization"
)]
pub struct Cli {
    /// Maximum number of concurrent runs (default: number of processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override the master seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Solve the worst-case weights for one loss vector and print them as CSV.
    SolveWeights {
        /// Comma-separated values of l.
        #[arg(long = "l", allow_hyphen_values = true)]
        l: String,
        #[arg(long, allow_hyphen_values = true)]
        rho: String,
        /// Bisection tolerance on λ.
        #[arg(long, allow_hyphen_values = true)]
        eps: Option<String>,
    },
}

/// `v` rounded to 12 significant digits, printed in shortest form.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded:?}")
}

pub fn raw_header(d: usize) -> String {
    let xs: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    let rs: Vec<String> = (1..=d).map(|j| format!("report_x{j}")).collect();
    format!(
        "algorithm,rho,repetition,iteration,{},w_index,y,{},rho_regret,empirical_value",
        xs.join(","),
        rs.join(",")
    )
}

pub const SUMMARY_HEADER: &str =
    "algorithm,rho,iteration,mean_regret,ci96_regret,mean_empirical,ci96_empirical,log10_mean_regret";

pub fn raw_csv(results: &[RunResult], d: usize) -> String {
    let mut out = raw_header(d);
    out.push('\n');
    for r in results {
        for (k, rec) in r.trace.records.iter().enumerate() {
            let mut row = vec![
                r.algorithm.name().to_string(),
                fmt12(r.rho),
                r.repetition.to_string(),
                rec.t.to_string(),
            ];
            row.extend(rec.x.iter().map(|v| fmt12(*v)));
            row.push(rec.w_index.to_string());
            row.push(fmt12(rec.y));
            row.extend(rec.report_x.iter().map(|v| fmt12(*v)));
            row.push(fmt12(r.regret[k]));
            row.push(fmt12(r.empirical[k]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in rows {
        let fields = [
            s.algorithm.name().to_string(),
            fmt12(s.rho),
            s.iteration.to_string(),
            fmt12(s.mean_regret),
            fmt12(s.ci96_regret),
            fmt12(s.mean_empirical),
            fmt12(s.ci96_empirical),
            fmt12(s.log10_mean_regret),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn failures_csv(failures: &[FailedRun]) -> String {
    let mut out = String::from("algorithm,rho,repetition,message\n");
    for f in failures {
        let message = f.message.replace(['\n', ','], " ");
        out.push_str(&format!(
            "{},{},{},{}\n",
            f.algorithm.name(),
            fmt12(f.rho),
            f.repetition,
            message
        ));
    }
    out
}

fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RAW_CSV), raw_csv(&out.results, config.problem.d))?;
    fs::write(dir.join(SUMMARY_CSV), summary_csv(&out.summary))?;
    fs::write(dir.join(RESOLVED_CONFIG), config.to_text())?;
    let failures = dir.join(FAILURES_CSV);
    if out.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(failures)?;
        }
    } else {
        fs::write(failures, failures_csv(&out.failures))?;
    }
    Ok(())
}

/// Runs a config file end to end and returns the process exit code.
pub fn cmd_run(path: &Path, jobs: Option<usize>, seed: Option<u64>, err: &mut dyn Write) -> i32 {
    let mut config = match ExperimentConfig::from_file(path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = seed {
        config.master_seed = s;
    }
    let output = match crate::bench::run_experiment(&config.experiment(Execution::from_jobs(jobs))) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = config.resolved_output_dir();
    if let Err(e) = write_outputs(&dir, &config, &output) {
        let _ = writeln!(err, "error: writing {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    for f in &output.failures {
        let _ = writeln!(
            err,
            "run failed: {} rho={} repetition={}: {}",
            f.algorithm, f.rho, f.repetition, f.message
        );
    }
    if output.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

fn parse_f64(name: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{name}: '{}' is not a number", s.trim())))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("{name}: '{}' is not finite", s.trim())));
    }
    Ok(v)
}

/// Prints `n,rho,lambda,eta,value,p_1..p_n` for one loss vector.
pub fn cmd_solve_weights(
    l: &str,
    rho: &str,
    eps: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let result = (|| -> Result<String> {
        let values = l
            .split(',')
            .map(|s| parse_f64("l", s))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(Error::Config(format!(
                "l needs at least 2 values, got {}",
                values.len()
            )));
        }
        let rho = parse_f64("rho", rho)?;
        let eps = eps.map(|e| parse_f64("eps", e)).transpose()?;
        let ball = ChiSquareBall::new(values.len(), rho)?;
        let s = solve_with_tolerance(&values, &ball, eps)?;
        let mut row = vec![
            values.len().to_string(),
            fmt12(rho),
            fmt12(s.lam),
            fmt12(s.eta),
            fmt12(s.value),
        ];
        row.extend(s.p.iter().map(|v| fmt12(*v)));
        Ok(row.join(","))
    })();
    match result {
        Ok(row) => {
            let _ = writeln!(out, "{row}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Parses `args` (including the program name) and dispatches.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    match &cli.command {
        Command::Run { config } => cmd_run(config, cli.jobs, cli.seed, &mut stderr),
        Command::SolveWeights { l, rho, eps } => {
            cmd_solve_weights(l, rho, eps.as_deref(), &mut stdout, &mut stderr)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_row(l: &str, rho: &str) -> String {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(cmd_solve_weights(l, rho, None, &mut out, &mut err), EXIT_OK);
        String::from_utf8(out).unwrap().trim().to_string()
    }

    #[test]
    fn twelve_digit_format() {
        assert_eq!(fmt12(0.1464466094067262), "0.146446609407");
        assert_eq!(fmt12(1.0), "1.0");
        assert_eq!(fmt12(-0.0), "0");
        assert_eq!(fmt12(1e-20), "1e-20");
        assert_eq!(fmt12(123456789012345.0), "123456789012000.0");
        assert_eq!(fmt12(f64::NAN), "NaN");
    }

    #[test]
    fn solve_weights_examples() {
        let row = solve_row("0,1", "0.25");
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], "2");
        assert_eq!(f[4], "0.146446609407");
        assert_eq!(&f[5..], ["0.853553390593", "0.146446609407"]);

        let uniform = solve_row("3,1,2", "0");
        assert!(uniform.ends_with(",0.333333333333,0.333333333333,0.333333333333"));
        let corner = solve_row("3,1,2", "10");
        assert!(corner.ends_with(",0,1.0,0"));
        assert!(solve_row("-1, 0.5", "0.25").starts_with("2,0.25,"));
    }

    #[test]
    fn solve_weights_rejects_bad_input() {
        for (l, rho) in [
            ("a,b", "0.1"),
            ("1", "0.1"),
            ("1,2", "x"),
            ("1,2", "-1"),
            ("1,nan", "0.1"),
        ] {
            let (mut out, mut err) = (Vec::new(), Vec::new());
            assert_eq!(
                cmd_solve_weights(l, rho, None, &mut out, &mut err),
                EXIT_CONFIG,
                "{l} {rho}"
            );
            assert!(out.is_empty());
            assert!(!err.is_empty());
        }
    }

    #[test]
    fn headers() {
        assert_eq!(
            raw_header(2),
            "algorithm,rho,repetition,iteration,x1,x2,w_index,y,report_x1,report_x2,rho_regret,empirical_value"
        );
    }
}
