use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#"seed = 7

[habitat]
lower = [0.0]
upper = [5.0]
density = { family = "uniform", value = 1.0 }

[model]
family = "constant"
rate = 1.0

[theta]
triples = [[1, 1, 1], [3, 1, 2]]

[run]
n_paths = 20000
times = [0.5, 2.0, 10.0]
"#;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn agingpop(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agingpop"))
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `(time, statistic) -> (value, stderr)` rows of a summary file.
fn summary_rows(path: &Path) -> Vec<(f64, String, f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].to_string(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect()
}

fn header_of(line: &str) -> Value {
    serde_json::from_str(line.trim_start_matches("# ")).unwrap()
}

#[test]
fn count_means_match_immigration_death_law() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, BASE);
    let out = dir.path().join("out");
    let o = agingpop(&cfg, &out, &["simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = summary_rows(&out.join("summary.csv"));
    let counts: Vec<_> = rows.iter().filter(|r| r.1 == "count").collect();
    assert_eq!(counts.len(), 3);
    for (t, _, mean, se) in counts {
        // χ(Λ) = 5, m = 1: the count is Poisson with mean 5(1 − e^{−t})
        let exact = 5.0 * (1.0 - (-t).exp());
        let sd = (exact / 20000.0).sqrt();
        assert!((mean - exact).abs() < 4.0 * sd, "t = {t}: {mean} vs {exact}");
        assert!((se / sd - 1.0).abs() < 0.1);
    }
}

#[test]
fn horizon_zero_echoes_initial_state() {
    let dir = TempDir::new().unwrap();
    let start = r#"[{"x":[1.0],"alpha":0.5},{"x":[4.0],"alpha":2.0},{"x":[4.0],"alpha":2.0}]"#;
    fs::write(dir.path().join("start.json"), start).unwrap();
    let text = BASE.replace("times = [0.5, 2.0, 10.0]", "times = [0.0]")
        + "\n[initial]\nlaw = \"dirac\"\npath = \"start.json\"\n";
    let cfg = write_config(&dir, &text);
    let out = dir.path().join("out");
    let o = agingpop(&cfg, &out, &["simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let parse = |name: &str| -> Value { serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap() };
    assert_eq!(parse("terminal.json"), serde_json::from_str::<Value>(start).unwrap());
    assert_eq!(parse("initial.json"), parse("terminal.json"));
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 1, "only the header");
    let rows = summary_rows(&out.join("summary.csv"));
    assert_eq!(rows[1], (0.0, "count".to_string(), 3.0, 0.0));
}

#[test]
fn config_echo_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    // odd spacing, comments and no trailing newline must all survive
    let text = format!("# leading comment\n{}  # trailing   \n\n[output]\ndir = \"ignored\"", BASE);
    let cfg = write_config(&dir, &text);
    let out = dir.path().join("out");
    assert!(agingpop(&cfg, &out, &["simulate"]).status.success());
    assert!(agingpop(&cfg, &out, &["stationary-sample", "--count", "10"]).status.success());
    for name in ["summary.csv", "events.jsonl", "stationary.jsonl"] {
        let first = fs::read_to_string(out.join(name)).unwrap().lines().next().unwrap().to_string();
        let h = header_of(&first);
        assert_eq!(h["config"].as_str().unwrap().as_bytes(), text.as_bytes(), "{name}");
        assert_eq!(h["seed"], 7);
    }
}

#[test]
fn runs_are_deterministic_per_seed_and_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &BASE.replace("n_paths = 20000", "n_paths = 2000"));
    let run = |extra: &[&str], out: &str| {
        let out = dir.path().join(out);
        let mut args = extra.to_vec();
        args.push("simulate");
        assert!(agingpop(&cfg, &out, &args).status.success());
        (fs::read(out.join("summary.csv")).unwrap(), fs::read(out.join("events.jsonl")).unwrap())
    };
    let a = run(&["--threads", "1"], "a");
    let b = run(&["--threads", "3"], "b");
    assert_eq!(a, b);
    let c = run(&["--seed", "8"], "c");
    assert_ne!(a.0, c.0);
    let h = header_of(std::str::from_utf8(&c.0).unwrap().lines().next().unwrap());
    assert_eq!(h["seed"], 8);
}

#[test]
fn stationary_sample_has_poisson_mean() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, BASE);
    let out = dir.path().join("out");
    let o = agingpop(&cfg, &out, &["stationary-sample", "--count", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("stationary.jsonl")).unwrap();
    let sizes: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<Vec<Value>>(l).unwrap().len() as f64)
        .collect();
    assert_eq!(sizes.len(), 20000);
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    // χ(Λ)/m = 5
    assert!((mean - 5.0).abs() < 4.0 * (5.0f64 / 20000.0).sqrt(), "{mean}");
}

#[test]
fn missing_density_parameter_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &BASE.replace(", value = 1.0", ""));
    let out = dir.path().join("out");
    let o = agingpop(&cfg, &out, &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("value"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &BASE.replace("n_paths = 20000", "n_paths = 20000\nnpaths = 3"));
    let o = agingpop(&cfg, &dir.path().join("out"), &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("npaths"), "{}", stderr(&o));
}

#[test]
fn negative_rate_fails_validation_before_sampling() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &BASE.replace("rate = 1.0", "rate = -1.0"));
    let out = dir.path().join("out");
    let o = agingpop(&cfg, &out, &["verify", "--suite", "sampler"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("model") && e.contains("-1"), "{e}");
    assert!(!out.exists(), "nothing may run before validation");
}

#[test]
fn invalid_fields_are_named() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("upper = [5.0]", "upper = [-1.0]", "habitat"),
        ("times = [0.5, 2.0, 10.0]", "times = [2.0, 0.5]", "run.times"),
        ("n_paths = 20000", "n_paths = 0", "run.n_paths"),
        ("triples = [[1, 1, 1], [3, 1, 2]]", "triples = [[0, 1, 1]]", "theta.triples"),
        ("n_paths = 20000", "n_paths = 20000\ntolerances = { chi = 0.0, time = 1e-10 }", "run.tolerances"),
    ];
    for (from, to, field) in cases {
        let cfg = write_config(&dir, &BASE.replace(from, to));
        let o = agingpop(&cfg, &dir.path().join("out"), &["simulate"]);
        assert_eq!(o.status.code(), Some(2), "{to}");
        assert!(stderr(&o).contains(field), "{to}: {}", stderr(&o));
    }
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, BASE);
    let o = agingpop(&cfg, &dir.path().join("out"), &["verify", "--suite", "everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("metrics, generator, sampler, laws, ergodicity or all"));
}

#[test]
fn metrics_suite_reports_only_metric_criteria() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, &BASE.replace("times = [0.5, 2.0, 10.0]", "times = [1.0]\nscale = 0.01"));
    let out = dir.path().join("out");
    let o = agingpop(&cfg, &out, &["verify", "--suite", "metrics"]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("criterion  1") && s.contains("criterion  2"));
    assert!(!s.contains("criterion  3"));
    let reports = fs::read_to_string(out.join("reports.csv")).unwrap();
    let mut lines = reports.lines();
    assert_eq!(header_of(lines.next().unwrap())["command"], "verify");
    assert_eq!(lines.next().unwrap(), "test,statistic,value,bound,pass,seed,samples,note");
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.contains(",true,")));
}

#[test]
fn non_constant_model_cannot_run_count_oracle() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace(
        "family = \"constant\"\nrate = 1.0",
        "family = \"separable\"\nbase = 0.5\namplitude = 1.0\nfrequency = 1.0\nprofile = { profile = \"unit\" }",
    );
    let cfg = write_config(&dir, &text);
    let o = agingpop(&cfg, &dir.path().join("out"), &["verify", "--suite", "sampler"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.family"));
}

fn demo() -> PathBuf {
    repo().join("configs/demo.toml")
}

fn fixture(name: &str) -> PathBuf {
    repo().join("configs/fixtures").join(name)
}

fn distance(args: &[&str]) -> Output {
    let dir = TempDir::new().unwrap();
    let mut all = vec!["distance"];
    all.extend_from_slice(args);
    agingpop(&demo(), dir.path(), &all)
}

#[test]
fn frozen_fixture_distances() {
    let (a, b) = (fixture("a.json"), fixture("b.json"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    let o = distance(&[a, b, "--metric", "ground"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "distance = 5.3412963118775414e-2\ntail_bound = 9.313225746154785e-10\n");
    let o = distance(&[a, b, "--metric", "kappa"]);
    assert_eq!(stdout(&o), "distance = 5.991872829879414e-2\ntail_bound = 4.3399631977081294e-7\n");
    let o = distance(&[a, b, "--metric", "kappa", "--budget", "12"]);
    let fields: Vec<f64> = stdout(&o).lines().map(|l| l.split(" = ").nth(1).unwrap().parse().unwrap()).collect();
    let (small, tail) = (fields[0], fields[1]);
    // truncated sums grow with the budget and miss at most the tail
    assert!(small <= 5.991872829879414e-2 && 5.991872829879414e-2 - small <= tail, "{small} {tail}");
}

#[test]
fn identical_files_are_at_distance_zero() {
    let a = fixture("a.json");
    let a = a.to_str().unwrap();
    for metric in ["ground", "kappa"] {
        let o = distance(&[a, a, "--metric", metric]);
        assert!(stdout(&o).starts_with("distance = 0e0\n"), "{}", stdout(&o));
    }
}

#[test]
fn distance_rejects_bad_files() {
    let dir = TempDir::new().unwrap();
    let planar = dir.path().join("planar.json");
    fs::write(&planar, r#"[{"x":[1.0,2.0],"alpha":0.0}]"#).unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "[\n  {\"x\":[1.0],\"alpha\":0.0},\n  {\"x\":[2.0] \"alpha\":1.0}\n]").unwrap();
    let a = fixture("a.json");
    let o = distance(&[a.to_str().unwrap(), planar.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension mismatch"), "{}", stderr(&o));
    let o = distance(&[a.to_str().unwrap(), broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}
