//! Non-robust comparison algorithms sharing the loop in [`crate::acquisition`].

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::acquisition::{run_loop, sample_rows, LoopConfig, Objective, ReportMode, RunTrace};
use crate::error::{Error, Result};
use crate::gp::{FunctionSample, GpPosterior};
use crate::robust_weights::empirical_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlgorithmId {
    Drbqo,
    EmpDrbqo,
    BqoTs,
    MaximinBqoTs,
    BqoEi,
    MaximinBqoEi,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 6] = [
        Self::Drbqo,
        Self::EmpDrbqo,
        Self::BqoTs,
        Self::MaximinBqoTs,
        Self::BqoEi,
        Self::MaximinBqoEi,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim();
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(key))
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{key}'")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Drbqo => "DRBQO",
            Self::EmpDrbqo => "EmpDRBQO",
            Self::BqoTs => "BQO_TS",
            Self::MaximinBqoTs => "MaximinBQO_TS",
            Self::BqoEi => "BQO_EI",
            Self::MaximinBqoEi => "MaximinBQO_EI",
        }
    }

    pub fn report_mode(self) -> ReportMode {
        match self {
            Self::Drbqo | Self::MaximinBqoTs | Self::MaximinBqoEi => ReportMode::Robust,
            Self::EmpDrbqo | Self::BqoTs | Self::BqoEi => ReportMode::Empirical,
        }
    }
}

impl std::fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Argmax over candidate rows of the uniform average over contexts; ties go to the lowest index.
pub fn bqo_ts_select_x(sample: &FunctionSample, n_contexts: usize) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, row) in sample_rows(sample, n_contexts)?.enumerate() {
        let v = empirical_mean(row);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best.0)
}

/// Closed-form expected improvement of a Gaussian with mean `mu` and sd `s` over `incumbent`.
pub fn expected_improvement(mu: f64, s: f64, incumbent: f64) -> f64 {
    let gain = mu - incumbent;
    if s <= 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / s;
    let std = Normal::standard();
    (gain * std.cdf(z) + s * std.pdf(z)).max(0.0)
}

/// Expected improvement of the uniform quadrature posterior at `x`.
pub fn quadrature_ei(gp: &GpPosterior, x: &[f64], contexts: &[Vec<f64>], incumbent: f64) -> Result<f64> {
    let n = contexts.len();
    let uniform = vec![1.0 / n as f64; n];
    let mu = gp.quadrature_mean(x, &uniform, contexts)?;
    let s = gp.quadrature_variance(x, &uniform, contexts)?.sqrt();
    Ok(expected_improvement(mu, s, incumbent))
}

/// Runs a baseline (or DRBQO itself) through the shared loop.
pub fn baseline_run<P: Objective + ?Sized>(
    algorithm: AlgorithmId,
    problem: &P,
    config: &LoopConfig,
) -> Result<RunTrace> {
    run_loop(algorithm, problem, config)
}
