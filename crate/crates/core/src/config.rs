//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment, lists are comma-separated.
//! Every key is optional; unknown keys are rejected.
//!
//! ```text
//! problem = logistic
//! d = 2
//! n = 10
//! algorithms = DRBQO, BQO_TS, BQO_EI
//! rho = 0.5, 1.0
//! horizon = 60
//! repetitions = 10
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::acquisition::{CandidateMode, CandidatePolicy, LengthScaleMode, LoopConfig, DEFAULT_SCALE_GRID};
use crate::baselines::AlgorithmId;
use crate::bench::{default_oracle_resolution, Experiment, ProblemKind, ProblemSpec, TestFunction};
use crate::error::{Error, Result};
use crate::gp::DEFAULT_GRID_CAP;
use crate::kernel::KernelFamily;
use crate::parallel::Execution;

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DRBQO_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithms: Vec<AlgorithmId>,
    pub rhos: Vec<f64>,
    pub horizon: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub kernel: KernelFamily,
    pub length_scales: LengthScaleMode,
    pub gp_noise_var: f64,
    pub candidates: CandidatePolicy,
    pub initial_design: Option<usize>,
    pub random_w: bool,
    pub grid_cap: usize,
    pub oracle_resolution: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let lc = LoopConfig::default();
        Self {
            problem: ProblemSpec::logistic(2, 10),
            algorithms: vec![AlgorithmId::Drbqo, AlgorithmId::BqoTs, AlgorithmId::BqoEi],
            rhos: vec![1.0],
            horizon: lc.horizon,
            repetitions: 1,
            master_seed: 0,
            kernel: lc.kernel,
            length_scales: lc.length_scales,
            gp_noise_var: lc.noise_var,
            candidates: lc.candidates,
            initial_design: None,
            random_w: false,
            grid_cap: DEFAULT_GRID_CAP,
            oracle_resolution: None,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::ConfigLine {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| line_err(line, format!("'{key}' expects a number, got '{v}'")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(line, key, s.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(line_err(
            line,
            format!("'{key}' expects true or false, got '{v}'"),
        )),
    }
}

fn with_line<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => line_err(line, m),
        other => other,
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut grid: Option<Vec<f64>> = None;
        let mut fixed: Option<(f64, f64)> = None;
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| line_err(line, format!("expected 'key = value', got '{content}'")))?;
            let (key, v) = (key.trim(), value.trim());
            if v.is_empty() {
                return Err(line_err(line, format!("'{key}' has no value")));
            }
            if seen.iter().any(|k| k == key) {
                return Err(line_err(line, format!("duplicate key '{key}'")));
            }
            seen.push(key.to_string());
            match key {
                "problem" => {
                    c.problem.kind = if v.eq_ignore_ascii_case("logistic") {
                        ProblemKind::Logistic
                    } else {
                        ProblemKind::Shifted(with_line(line, TestFunction::parse(v))?)
                    }
                }
                "d" => c.problem.d = parse_num(line, key, v)?,
                "n" => c.problem.n = parse_num(line, key, v)?,
                "noise_sd" => c.problem.noise_sd = parse_num(line, key, v)?,
                "domain_half_width" => c.problem.half_width = parse_num(line, key, v)?,
                "context_scale" => c.problem.context_scale = parse_num(line, key, v)?,
                "algorithms" => {
                    c.algorithms = v
                        .split(',')
                        .map(|s| with_line(line, AlgorithmId::parse(s)))
                        .collect::<Result<_>>()?
                }
                "rho" => c.rhos = parse_list(line, key, v)?,
                "horizon" => c.horizon = parse_num(line, key, v)?,
                "repetitions" => c.repetitions = parse_num(line, key, v)?,
                "master_seed" => c.master_seed = parse_num(line, key, v)?,
                "kernel" => c.kernel = with_line(line, KernelFamily::parse(v))?,
                "length_scales" => {
                    if v.eq_ignore_ascii_case("learn") {
                        fixed = None;
                    } else {
                        let pair: Vec<f64> = parse_list(line, key, v)?;
                        if pair.len() != 2 {
                            return Err(line_err(line, "'length_scales' expects 'learn' or 'theta, psi'"));
                        }
                        fixed = Some((pair[0], pair[1]));
                    }
                }
                "length_scale_grid" => grid = Some(parse_list(line, key, v)?),
                "gp_noise_var" => c.gp_noise_var = parse_num(line, key, v)?,
                "candidate_mode" => c.candidates.mode = with_line(line, CandidateMode::parse(v))?,
                "candidate_count" => c.candidates.count = parse_num(line, key, v)?,
                "initial_design" => c.initial_design = Some(parse_num(line, key, v)?),
                "random_w" => c.random_w = parse_bool(line, key, v)?,
                "grid_cap" => c.grid_cap = parse_num(line, key, v)?,
                "oracle_resolution" => c.oracle_resolution = Some(parse_num(line, key, v)?),
                "output_dir" => c.output_dir = PathBuf::from(v),
                _ => return Err(line_err(line, format!("unknown key '{key}'"))),
            }
        }
        c.length_scales = match (fixed, grid) {
            (Some((theta, psi)), _) => LengthScaleMode::Fixed { theta, psi },
            (None, Some(grid)) => LengthScaleMode::Learn { grid },
            (None, None) => LengthScaleMode::Learn {
                grid: DEFAULT_SCALE_GRID.to_vec(),
            },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Checks everything the runner would otherwise reject midway.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let p = &self.problem;
        if p.n < 2 {
            return fail(format!("n must be at least 2, got {}", p.n));
        }
        if p.d == 0 {
            return fail("d must be at least 1".into());
        }
        if let ProblemKind::Shifted(base) = p.kind {
            if base.fixed_dim().is_some_and(|k| k != p.d) {
                return fail(format!(
                    "{} needs d = {}",
                    base.name(),
                    base.fixed_dim().unwrap_or(0)
                ));
            }
        }
        if p.d > 3 {
            return fail(format!("the regret oracle supports d ≤ 3, got {}", p.d));
        }
        if !(p.noise_sd >= 0.0 && p.noise_sd.is_finite()) {
            return fail(format!("noise_sd must be nonnegative, got {}", p.noise_sd));
        }
        if !(p.half_width > 0.0 && p.half_width.is_finite()) {
            return fail(format!(
                "domain_half_width must be positive, got {}",
                p.half_width
            ));
        }
        if !(p.context_scale > 0.0 && p.context_scale.is_finite()) {
            return fail(format!("context_scale must be positive, got {}", p.context_scale));
        }
        if self.algorithms.is_empty() || self.rhos.is_empty() {
            return fail("algorithms and rho must be nonempty".into());
        }
        if let Some(r) = self.rhos.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return fail(format!("rho must be finite and nonnegative, got {r}"));
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1".into());
        }
        if !(self.gp_noise_var > 0.0 && self.gp_noise_var.is_finite()) {
            return fail(format!(
                "gp_noise_var must be positive, got {}",
                self.gp_noise_var
            ));
        }
        if self.candidates.count == 0 {
            return fail("candidate_count must be at least 1".into());
        }
        if self.initial_design == Some(0) {
            return fail("initial_design must be at least 1".into());
        }
        let scales: Vec<f64> = match &self.length_scales {
            LengthScaleMode::Fixed { theta, psi } => vec![*theta, *psi],
            LengthScaleMode::Learn { grid } => grid.clone(),
        };
        if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return fail("length scales must be positive".into());
        }
        if self.kernel != KernelFamily::SquaredExponential
            && (self.candidates.count + self.horizon + 6 * p.d + 12) * p.n > self.grid_cap
        {
            return fail(format!(
                "non-separable kernels sample densely: candidate_count · n may exceed grid_cap = {}",
                self.grid_cap
            ));
        }
        if self.oracle_resolution.is_some_and(|r| r < 2) {
            return fail("oracle_resolution must be at least 2".into());
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn experiment(&self, execution: Execution) -> Experiment {
        Experiment {
            problem: self.problem.clone(),
            algorithms: self.algorithms.clone(),
            rhos: self.rhos.clone(),
            repetitions: self.repetitions,
            master_seed: self.master_seed,
            loop_config: LoopConfig {
                horizon: self.horizon,
                rho: self.rhos[0],
                seed: self.master_seed,
                kernel: self.kernel,
                length_scales: self.length_scales.clone(),
                noise_var: self.gp_noise_var,
                candidates: self.candidates,
                initial_design: self.initial_design,
                random_w: self.random_w,
                grid_cap: self.grid_cap,
            },
            oracle_resolution: self.oracle_resolution,
            execution,
        }
    }

    /// Every setting in canonical form; parses back to the same config.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let p = &self.problem;
        let mut s = String::new();
        let problem = match p.kind {
            ProblemKind::Logistic => "logistic",
            ProblemKind::Shifted(base) => base.name(),
        };
        let _ = writeln!(s, "problem = {problem}");
        let _ = writeln!(s, "d = {}", p.d);
        let _ = writeln!(s, "n = {}", p.n);
        let _ = writeln!(s, "noise_sd = {}", p.noise_sd);
        let _ = writeln!(s, "domain_half_width = {}", p.half_width);
        let _ = writeln!(s, "context_scale = {}", p.context_scale);
        let algs: Vec<&str> = self.algorithms.iter().map(|a| a.name()).collect();
        let _ = writeln!(s, "algorithms = {}", algs.join(", "));
        let _ = writeln!(s, "rho = {}", join(&self.rhos));
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "repetitions = {}", self.repetitions);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "kernel = {}", self.kernel.name());
        match &self.length_scales {
            LengthScaleMode::Fixed { theta, psi } => {
                let _ = writeln!(s, "length_scales = {theta}, {psi}");
            }
            LengthScaleMode::Learn { grid } => {
                let _ = writeln!(s, "length_scales = learn");
                let _ = writeln!(s, "length_scale_grid = {}", join(grid));
            }
        }
        let _ = writeln!(s, "gp_noise_var = {}", self.gp_noise_var);
        let _ = writeln!(s, "candidate_mode = {}", self.candidates.mode.name());
        let _ = writeln!(s, "candidate_count = {}", self.candidates.count);
        let init = self
            .initial_design
            .unwrap_or_else(|| crate::acquisition::default_initial_design(p.d));
        let _ = writeln!(s, "initial_design = {init}");
        let _ = writeln!(s, "random_w = {}", self.random_w);
        let _ = writeln!(s, "grid_cap = {}", self.grid_cap);
        let res = self
            .oracle_resolution
            .unwrap_or_else(|| default_oracle_resolution(p.d));
        let _ = writeln!(s, "oracle_resolution = {res}");
        let _ = writeln!(s, "output_dir = {}", self.resolved_output_dir().display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{DEFAULT_CONTEXT_SCALE, DEFAULT_LOGISTIC_HALF_WIDTH, DEFAULT_NOISE_SD};

    #[test]
    fn defaults_from_empty_text() {
        let c = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(c.problem.kind, ProblemKind::Logistic);
        assert_eq!(c.problem.noise_sd, DEFAULT_NOISE_SD);
        assert_eq!(c.problem.half_width, DEFAULT_LOGISTIC_HALF_WIDTH);
        assert_eq!(c.problem.context_scale, DEFAULT_CONTEXT_SCALE);
        assert_eq!(c.candidates.count, 512);
    }

    #[test]
    fn parses_every_key() {
        let text = "
            problem = branin   # shifted
            d = 2
            n = 6
            noise_sd = 0.02
            domain_half_width = 2
            context_scale = 0.05
            algorithms = DRBQO, MaximinBQO_EI
            rho = 0, 0.5,3
            horizon = 7
            repetitions = 3
            master_seed = 42
            kernel = se
            length_scales = 0.3, 0.4
            gp_noise_var = 0.001
            candidate_mode = fixed_grid
            candidate_count = 100
            initial_design = 5
            random_w = true
            grid_cap = 4096
            oracle_resolution = 51
            output_dir = out/here
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.problem.kind, ProblemKind::Shifted(TestFunction::Branin));
        assert_eq!(c.algorithms, vec![AlgorithmId::Drbqo, AlgorithmId::MaximinBqoEi]);
        assert_eq!(c.rhos, vec![0.0, 0.5, 3.0]);
        assert_eq!(c.length_scales, LengthScaleMode::Fixed { theta: 0.3, psi: 0.4 });
        assert_eq!(
            c.candidates,
            CandidatePolicy {
                mode: CandidateMode::FixedGrid,
                count: 100
            }
        );
        assert_eq!(c.initial_design, Some(5));
        assert!(c.random_w);
        assert_eq!(c.oracle_resolution, Some(51));
        assert_eq!(c.output_dir, PathBuf::from("out/here"));
        assert_eq!(c.master_seed, 42);
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::parse(
            "problem = hartmann3\nd = 3\nrho = 0.25, 1\nlength_scale_grid = 0.2, 0.5\n",
        )
        .unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.length_scales, c.length_scales);
    }

    fn line_of(text: &str) -> (usize, String) {
        match ExperimentConfig::parse(text) {
            Err(Error::ConfigLine { line, message }) => (line, message),
            other => panic!("expected a line error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(line_of("d = 2\nbogus = 1\n").0, 2);
        let (line, msg) = line_of("\n\nalgorithms = DRBQO, MTBO\n");
        assert_eq!(line, 3);
        assert!(msg.contains("MTBO"));
        assert_eq!(line_of("horizon = ten").0, 1);
        assert_eq!(line_of("horizon 10").0, 1);
        assert_eq!(line_of("d = 2\nd = 3").0, 2);
        assert_eq!(line_of("problem = rosenbrock").0, 1);
        assert_eq!(line_of("random_w = maybe").0, 1);
        assert_eq!(line_of("length_scales = 0.1").0, 1);
    }

    #[test]
    fn semantic_checks() {
        for bad in [
            "n = 1",
            "rho = -0.5",
            "repetitions = 0",
            "problem = branin\nd = 3",
            "problem = levy\nd = 4",
            "candidate_count = 0",
            "gp_noise_var = 0",
            "length_scale_grid = 0.1, -1",
            "kernel = matern52\ncandidate_count = 512",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
        assert!(ExperimentConfig::parse("kernel = matern32\ncandidate_count = 50\nhorizon = 10").is_ok());
    }
}
