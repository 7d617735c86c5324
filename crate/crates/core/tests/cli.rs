use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drbqo::bench::mean_ci96;

const BIN: &str = env!("CARGO_BIN_EXE_drbqo");

fn drbqo(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("DRBQO_OUTPUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("DRBQO_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn config(dir: &Path, body: &str, output: &Path) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, format!("{body}\noutput_dir = {}\n", output.display())).unwrap();
    path
}

const SMALL: &str = "\
# small logistic sweep
problem = logistic
d = 2
n = 4
algorithms = DRBQO, BQO_TS
rho = 0.5, 1
horizon = 4
repetitions = 2
master_seed = 5
candidate_count = 40
oracle_resolution = 31";

#[test]
fn solve_weights_prints_csv_row() {
    let o = drbqo(&["solve-weights", "--l", "0,1", "--rho", "0.25"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = stdout(&o);
    let f: Vec<&str> = row.trim().split(',').collect();
    assert_eq!(f.len(), 7);
    assert_eq!(f[0], "2");
    assert_eq!(f[1], "0.25");
    assert_eq!(f[4], "0.146446609407");
    assert_eq!(&f[5..], ["0.853553390593", "0.146446609407"]);

    let uniform = stdout(&drbqo(&["solve-weights", "--l", "3,1,2", "--rho", "0"], None));
    assert!(uniform
        .trim()
        .ends_with("0.333333333333,0.333333333333,0.333333333333"));
    let corner = stdout(&drbqo(&["solve-weights", "--l", "3,1,2", "--rho", "10"], None));
    assert!(corner.trim().ends_with(",0,1.0,0"), "{corner}");
    let negative = drbqo(
        &[
            "solve-weights",
            "--l",
            "-1,-0.5,2",
            "--rho",
            "0.3",
            "--eps",
            "1e-12",
        ],
        None,
    );
    assert!(negative.status.success(), "{}", stderr(&negative));
}

#[test]
fn solve_weights_rejects_non_numeric() {
    let o = drbqo(&["solve-weights", "--l", "1,abc", "--rho", "0.25"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("abc"));
    assert!(stdout(&o).is_empty());
    let o = drbqo(&["solve-weights", "--l", "1", "--rho", "0.25"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_writes_three_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config(tmp.path(), SMALL, &out);
    let o = drbqo(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["config.resolved", "raw.csv", "summary.csv"]);

    let raw = std::fs::read_to_string(out.join("raw.csv")).unwrap();
    let mut lines = raw.lines();
    assert_eq!(
        lines.next().unwrap(),
        "algorithm,rho,repetition,iteration,x1,x2,w_index,y,report_x1,report_x2,rho_regret,empirical_value"
    );
    assert_eq!(lines.count(), 2 * 2 * 2 * 4);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with(
        "algorithm,rho,iteration,mean_regret,ci96_regret,mean_empirical,ci96_empirical,log10_mean_regret\n"
    ));
    assert_eq!(summary.lines().count(), 1 + 2 * 2 * 4);

    let resolved = std::fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("master_seed = 5"));
    assert!(resolved.contains("candidate_count = 40"));
}

fn parse_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn summary_recomputes_from_raw() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config(tmp.path(), SMALL, &out);
    assert!(drbqo(&["run", cfg.to_str().unwrap()], None).status.success());
    let raw = parse_rows(&std::fs::read_to_string(out.join("raw.csv")).unwrap());
    let summary = parse_rows(&std::fs::read_to_string(out.join("summary.csv")).unwrap());
    let close = |a: f64, b: &str| {
        let b: f64 = b.parse().unwrap();
        (a - b).abs() <= 1e-10 * (1.0 + b.abs())
    };
    for row in &summary {
        let cell: Vec<&Vec<String>> = raw
            .iter()
            .filter(|r| r[0] == row[0] && r[1] == row[1] && r[3] == row[2])
            .collect();
        assert_eq!(cell.len(), 2);
        let regret: Vec<f64> = cell.iter().map(|r| r[10].parse().unwrap()).collect();
        let empirical: Vec<f64> = cell.iter().map(|r| r[11].parse().unwrap()).collect();
        let (mr, cr) = mean_ci96(&regret);
        let (me, ce) = mean_ci96(&empirical);
        assert!(close(mr, &row[3]) && close(cr, &row[4]), "{row:?}");
        assert!(close(me, &row[5]) && close(ce, &row[6]), "{row:?}");
        assert!(close(mr.max(1e-12).log10(), &row[7]), "{row:?}");
        assert!(regret.iter().all(|r| *r >= -1e-12));
    }
}

#[test]
fn seed_flag_and_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("configured");
    let env_dir = tmp.path().join("from_env");
    let cfg = config(tmp.path(), SMALL, &out);
    let o = drbqo(
        &["run", cfg.to_str().unwrap(), "--seed", "6", "--jobs", "1"],
        Some(&env_dir),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.exists());
    let resolved = std::fs::read_to_string(env_dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("master_seed = 6"));
    assert!(resolved.contains(&format!("output_dir = {}", env_dir.display())));

    assert!(drbqo(&["run", cfg.to_str().unwrap()], None).status.success());
    let a = std::fs::read(out.join("raw.csv")).unwrap();
    let b = std::fs::read(env_dir.join("raw.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn config_errors_exit_one_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (body, needle) in [
        ("algorithms = DRBQO, MTBO", "MTBO"),
        ("problem = logistic\nwarp = 9", "line 2"),
        ("n = 1", "n must be at least 2"),
        ("horizon = soon", "soon"),
    ] {
        let cfg = config(tmp.path(), body, &out);
        let o = drbqo(&["run", cfg.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(1), "{body}");
        assert!(stderr(&o).contains(needle), "{body}: {}", stderr(&o));
        assert!(!out.exists(), "{body}");
    }
    let o = drbqo(&["run", tmp.path().join("missing.cfg").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shifted_problem_runs_with_maximin_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let body = "problem = branin\nd = 2\nn = 5\nalgorithms = MaximinBQO_TS, EmpDRBQO, MaximinBQO_EI\n\
                rho = 0.25\nhorizon = 3\nrepetitions = 1\ncandidate_count = 30\noracle_resolution = 21\n\
                length_scales = 0.3, 0.3\nrandom_w = true";
    let cfg = config(tmp.path(), body, &out);
    let o = drbqo(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    for name in ["MaximinBQO_TS", "EmpDRBQO", "MaximinBQO_EI"] {
        assert_eq!(
            summary
                .lines()
                .filter(|l| l.starts_with(&format!("{name},")))
                .count(),
            3
        );
    }
}
