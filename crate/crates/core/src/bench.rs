//! Synthetic problems, ground-truth regret oracles, and the repetition runner.

use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::acquisition::{ContextSet, DecisionBox, LoopConfig, Objective, RunTrace};
use crate::baselines::{baseline_run, AlgorithmId};
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::robust_weights::{empirical_mean, solve, ChiSquareBall};

/// Half-width multiplier of a two-sided 96% normal interval.
pub const CI96_Z: f64 = 1.7507;
/// Values are clamped to this before taking log10.
pub const LOG_FLOOR: f64 = 1e-12;

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Classic minimization test functions on their usual boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Branin,
    Levy,
    Hartmann3,
}

const HARTMANN3_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

impl TestFunction {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "branin" => Ok(Self::Branin),
            "levy" => Ok(Self::Levy),
            "hartmann3" => Ok(Self::Hartmann3),
            other => Err(Error::Config(format!("unknown test function '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Branin => "branin",
            Self::Levy => "levy",
            Self::Hartmann3 => "hartmann3",
        }
    }

    /// Fixed dimension, or `None` if any `d ≥ 1` works.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            Self::Branin => Some(2),
            Self::Levy => None,
            Self::Hartmann3 => Some(3),
        }
    }

    pub fn bounds(self, d: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Branin => (vec![-5.0, 0.0], vec![10.0, 15.0]),
            Self::Levy => (vec![-10.0; d], vec![10.0; d]),
            Self::Hartmann3 => (vec![0.0; 3], vec![1.0; 3]),
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Branin => {
                let (b, c, t) = (5.1 / (4.0 * PI * PI), 5.0 / PI, 1.0 / (8.0 * PI));
                let u = x[1] - b * x[0] * x[0] + c * x[0] - 6.0;
                u * u + 10.0 * (1.0 - t) * x[0].cos() + 10.0
            }
            Self::Levy => {
                let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
                let last = w[w.len() - 1];
                let head = (PI * w[0]).sin().powi(2);
                let body: f64 = w[..w.len() - 1]
                    .iter()
                    .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
                    .sum();
                head + body + (last - 1.0).powi(2) * (1.0 + (2.0 * PI * last).sin().powi(2))
            }
            Self::Hartmann3 => -(0..4)
                .map(|i| {
                    let r: f64 = (0..3)
                        .map(|j| HARTMANN3_A[i][j] * (x[j] - HARTMANN3_P[i][j]).powi(2))
                        .sum();
                    HARTMANN3_ALPHA[i] * (-r).exp()
                })
                .sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    /// `f(x, w) = −log(1 + exp(xᵀw))`.
    Logistic,
    /// `f(x, w) = −base(x + w)` on the unit cube, clamped, in base units.
    Shifted(TestFunction),
}

/// A synthetic objective with its fixed context sample. Rewards are maximized.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub name: String,
    pub kind: ProblemKind,
    domain: DecisionBox,
    contexts: ContextSet,
    noise_sd: f64,
}

impl SyntheticProblem {
    pub fn d(&self) -> usize {
        self.domain.dim()
    }

    pub fn m(&self) -> usize {
        self.contexts.dim()
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sd must be finite and nonnegative, got {noise_sd}"
            )));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    /// Noise-free reward at an arbitrary context vector.
    pub fn true_f(&self, x: &[f64], w: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Logistic => {
                let t: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                -softplus(t)
            }
            ProblemKind::Shifted(base) => {
                let (lo, hi) = base.bounds(x.len());
                let z: Vec<f64> = x
                    .iter()
                    .zip(w)
                    .enumerate()
                    .map(|(j, (a, b))| lo[j] + (hi[j] - lo[j]) * (a + b).clamp(0.0, 1.0))
                    .collect();
                -base.eval(&z)
            }
        }
    }

    /// Uniform average of the true reward over the context sample.
    pub fn empirical_value(&self, x: &[f64]) -> f64 {
        let row: Vec<f64> = (0..self.contexts.len()).map(|i| self.evaluate(x, i)).collect();
        empirical_mean(&row)
    }

    /// Worst-case reweighted average of the true reward over the ball.
    pub fn robust_value(&self, x: &[f64], ball: &ChiSquareBall) -> Result<f64> {
        let row: Vec<f64> = (0..self.contexts.len()).map(|i| self.evaluate(x, i)).collect();
        Ok(solve(&row, ball)?.value)
    }
}

impl Objective for SyntheticProblem {
    fn domain(&self) -> &DecisionBox {
        &self.domain
    }

    fn contexts(&self) -> &ContextSet {
        &self.contexts
    }

    fn evaluate(&self, x: &[f64], context: usize) -> f64 {
        self.true_f(x, self.contexts.get(context))
    }

    fn noise_sd(&self) -> f64 {
        self.noise_sd
    }
}

pub const DEFAULT_NOISE_SD: f64 = 0.01;
pub const DEFAULT_LOGISTIC_HALF_WIDTH: f64 = 3.0;
pub const DEFAULT_CONTEXT_SCALE: f64 = 0.1;

fn gaussian_contexts(n: usize, m: usize, scale: f64, seed: u64) -> Result<ContextSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        })
        .collect();
    ContextSet::new(draws)
}

/// Logistic problem on `[−3, 3]^d` with `n` standard normal contexts fixed by `seed`.
pub fn logistic_problem(d: usize, n: usize, seed: u64) -> Result<SyntheticProblem> {
    logistic_problem_on(d, n, seed, DEFAULT_LOGISTIC_HALF_WIDTH)
}

pub fn logistic_problem_on(d: usize, n: usize, seed: u64, half_width: f64) -> Result<SyntheticProblem> {
    if d == 0 {
        return Err(Error::Config("logistic problem needs d ≥ 1".into()));
    }
    Ok(SyntheticProblem {
        name: "logistic".into(),
        kind: ProblemKind::Logistic,
        domain: DecisionBox::cube(d, -half_width, half_width)?,
        contexts: gaussian_contexts(n, d, 1.0, seed)?,
        noise_sd: DEFAULT_NOISE_SD,
    })
}

/// `f(x, w) = −base(x + w)` with `x` in the unit cube and `w ~ N(0, scale²·I)`.
pub fn shifted_problem(
    base: TestFunction,
    d: usize,
    n: usize,
    seed: u64,
    context_scale: f64,
) -> Result<SyntheticProblem> {
    if d == 0 || base.fixed_dim().is_some_and(|k| k != d) {
        return Err(Error::Config(format!(
            "{} is not defined for d = {d}",
            base.name()
        )));
    }
    if !(context_scale > 0.0 && context_scale.is_finite()) {
        return Err(Error::Config(format!(
            "context scale must be positive, got {context_scale}"
        )));
    }
    Ok(SyntheticProblem {
        name: base.name().into(),
        kind: ProblemKind::Shifted(base),
        domain: DecisionBox::cube(d, 0.0, 1.0)?,
        contexts: gaussian_contexts(n, d, context_scale, seed)?,
        noise_sd: DEFAULT_NOISE_SD,
    })
}

/// Default lattice points per axis for the regret oracle.
pub fn default_oracle_resolution(d: usize) -> usize {
    match d {
        1 => 1001,
        2 => 101,
        _ => 31,
    }
}

/// Robust values of the true reward on a dense decision lattice.
#[derive(Debug, Clone)]
pub struct RegretOracle {
    domain: DecisionBox,
    resolution: usize,
    pub ball: ChiSquareBall,
    pub eval_grid: Vec<Vec<f64>>,
    pub robust_values: Vec<f64>,
    pub x_star: Vec<f64>,
    pub g_star: f64,
}

impl RegretOracle {
    pub fn build<P: Objective + ?Sized>(
        problem: &P,
        ball: &ChiSquareBall,
        resolution: usize,
        execution: Execution,
    ) -> Result<Self> {
        let domain = problem.domain().clone();
        let d = domain.dim();
        if d > 3 {
            return Err(Error::Config(format!("regret oracle supports d ≤ 3, got {d}")));
        }
        if resolution < 2 {
            return Err(Error::Config("oracle resolution must be at least 2".into()));
        }
        let n = problem.contexts().len();
        if ball.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: ball.n(),
                context: "ball size vs contexts",
            });
        }
        let eval_grid = domain.lattice(resolution);
        let robust_values = execution
            .map(&eval_grid, |x| {
                let row: Vec<f64> = (0..n).map(|i| problem.evaluate(x, i)).collect();
                solve(&row, ball).map(|s| s.value)
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let mut best = 0;
        for (i, v) in robust_values.iter().enumerate() {
            if *v > robust_values[best] {
                best = i;
            }
        }
        Ok(Self {
            domain,
            resolution,
            ball: *ball,
            x_star: eval_grid[best].clone(),
            g_star: robust_values[best],
            eval_grid,
            robust_values,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Index of the lattice point closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let r = self.resolution;
        x.iter().enumerate().fold(0, |acc, (j, v)| {
            let (lo, hi) = (self.domain.lo[j], self.domain.hi[j]);
            let k = (((v - lo) / (hi - lo)) * (r - 1) as f64)
                .round()
                .clamp(0.0, (r - 1) as f64);
            acc * r + k as usize
        })
    }

    pub fn regret(&self, x: &[f64]) -> f64 {
        self.g_star - self.robust_values[self.nearest(x)]
    }
}

/// Per-run metrics, indexed by iteration `1..=T`.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: AlgorithmId,
    pub rho: f64,
    pub repetition: usize,
    pub seed: u64,
    pub trace: RunTrace,
    pub regret: Vec<f64>,
    pub empirical: Vec<f64>,
    /// Exact robust value of the true reward at each report point.
    pub robust: Vec<f64>,
    pub wall_time: Duration,
}

impl RunResult {
    pub fn final_regret(&self) -> f64 {
        *self.regret.last().unwrap_or(&f64::NAN)
    }

    pub fn final_empirical(&self) -> f64 {
        *self.empirical.last().unwrap_or(&f64::NAN)
    }

    pub fn final_robust(&self) -> f64 {
        *self.robust.last().unwrap_or(&f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedRun {
    pub algorithm: AlgorithmId,
    pub rho: f64,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: AlgorithmId,
    pub rho: f64,
    pub iteration: usize,
    pub mean_regret: f64,
    pub ci96_regret: f64,
    pub mean_empirical: f64,
    pub ci96_empirical: f64,
    pub log10_mean_regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub d: usize,
    pub n: usize,
    pub noise_sd: f64,
    /// Half-width of the logistic decision box.
    pub half_width: f64,
    /// Context sd for shifted problems.
    pub context_scale: f64,
}

impl ProblemSpec {
    pub fn logistic(d: usize, n: usize) -> Self {
        Self {
            kind: ProblemKind::Logistic,
            d,
            n,
            noise_sd: DEFAULT_NOISE_SD,
            half_width: DEFAULT_LOGISTIC_HALF_WIDTH,
            context_scale: DEFAULT_CONTEXT_SCALE,
        }
    }

    pub fn build(&self, seed: u64) -> Result<SyntheticProblem> {
        let p = match self.kind {
            ProblemKind::Logistic => logistic_problem_on(self.d, self.n, seed, self.half_width)?,
            ProblemKind::Shifted(base) => shifted_problem(base, self.d, self.n, seed, self.context_scale)?,
        };
        p.with_noise_sd(self.noise_sd)
    }
}

/// A full (algorithm × ρ × repetition) sweep.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: ProblemSpec,
    pub algorithms: Vec<AlgorithmId>,
    pub rhos: Vec<f64>,
    pub repetitions: usize,
    pub master_seed: u64,
    /// Template for each run; `rho` and `seed` are overwritten per job.
    pub loop_config: LoopConfig,
    pub oracle_resolution: Option<usize>,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: Vec<RunResult>,
    pub failures: Vec<FailedRun>,
    pub summary: Vec<SummaryRow>,
    pub oracles: Vec<RegretOracle>,
}

/// Seed of repetition `r`; shared by every algorithm and ρ so that runs see common random numbers.
pub fn repetition_seed(master_seed: u64, repetition: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(repetition as u64 + 1);
    rng.next_u64()
}

struct Job {
    algorithm: AlgorithmId,
    rho_index: usize,
    repetition: usize,
}

pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutput> {
    if exp.algorithms.is_empty() || exp.rhos.is_empty() || exp.repetitions == 0 {
        return Err(Error::Config(
            "experiment needs algorithms, rho values and repetitions".into(),
        ));
    }
    let problem = exp.problem.build(exp.master_seed)?;
    let resolution = exp
        .oracle_resolution
        .unwrap_or_else(|| default_oracle_resolution(problem.d()));
    let oracles = exp
        .rhos
        .iter()
        .map(|&rho| {
            let ball = ChiSquareBall::new(problem.contexts().len(), rho)?;
            RegretOracle::build(&problem, &ball, resolution, exp.execution)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for &algorithm in &exp.algorithms {
        for rho_index in 0..exp.rhos.len() {
            for repetition in 0..exp.repetitions {
                jobs.push(Job {
                    algorithm,
                    rho_index,
                    repetition,
                });
            }
        }
    }

    let outcomes = exp.execution.map(&jobs, |job| {
        let rho = exp.rhos[job.rho_index];
        let oracle = &oracles[job.rho_index];
        let seed = repetition_seed(exp.master_seed, job.repetition);
        let config = LoopConfig {
            rho,
            seed,
            ..exp.loop_config.clone()
        };
        let start = Instant::now();
        let outcome = baseline_run(job.algorithm, &problem, &config).and_then(|trace| {
            let mut regret = Vec::with_capacity(trace.records.len());
            let mut empirical = Vec::with_capacity(trace.records.len());
            let mut robust = Vec::with_capacity(trace.records.len());
            for r in &trace.records {
                regret.push(oracle.regret(&r.report_x));
                empirical.push(problem.empirical_value(&r.report_x));
                robust.push(problem.robust_value(&r.report_x, &oracle.ball)?);
            }
            Ok(RunResult {
                algorithm: job.algorithm,
                rho,
                repetition: job.repetition,
                seed,
                trace,
                regret,
                empirical,
                robust,
                wall_time: start.elapsed(),
            })
        });
        outcome.map_err(|e| FailedRun {
            algorithm: job.algorithm,
            rho,
            repetition: job.repetition,
            message: e.to_string(),
        })
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(&results, &exp.algorithms, &exp.rhos);
    Ok(ExperimentOutput {
        results,
        failures,
        summary,
        oracles,
    })
}

/// Mean and 96% half-width; the half-width is 0 for fewer than two values.
pub fn mean_ci96(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    if r == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    if r == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    (mean, CI96_Z * var.sqrt() / (r as f64).sqrt())
}

/// Per-iteration statistics for every (algorithm, ρ) cell with at least one successful run.
pub fn summarize(results: &[RunResult], algorithms: &[AlgorithmId], rhos: &[f64]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &algorithm in algorithms {
        for &rho in rhos {
            let cell: Vec<&RunResult> = results
                .iter()
                .filter(|r| r.algorithm == algorithm && r.rho.to_bits() == rho.to_bits())
                .collect();
            let horizon = cell.iter().map(|r| r.regret.len()).min().unwrap_or(0);
            for t in 0..horizon {
                let regrets: Vec<f64> = cell.iter().map(|r| r.regret[t]).collect();
                let empiricals: Vec<f64> = cell.iter().map(|r| r.empirical[t]).collect();
                let (mean_regret, ci96_regret) = mean_ci96(&regrets);
                let (mean_empirical, ci96_empirical) = mean_ci96(&empiricals);
                rows.push(SummaryRow {
                    algorithm,
                    rho,
                    iteration: t + 1,
                    mean_regret,
                    ci96_regret,
                    mean_empirical,
                    ci96_empirical,
                    log10_mean_regret: mean_regret.max(LOG_FLOOR).log10(),
                });
            }
        }
    }
    rows
}
