use std::path::Path;
use std::process::{Command, Output};

fn rbf(args: &[&str], repo: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rbf"));
    cmd.args(args);
    match repo {
        Some(r) => cmd.env("RBF_REPO", r),
        None => cmd.env_remove("RBF_REPO"),
    };
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn push_pull_round_trip_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    let input = dir.path().join("in.bin");
    let output = dir.path().join("out.bin");
    let content: Vec<u8> = (0..200_000u32).map(|i| (i % 253) as u8).collect();
    std::fs::write(&input, &content).unwrap();

    for expected in 1..=3 {
        let o = rbf(&["push", "--name", "model/fno", "--file", input.to_str().unwrap()], Some(&repo));
        assert!(o.status.success(), "{o:?}");
        assert_eq!(stdout(&o).trim(), expected.to_string());
    }
    let o = rbf(&["pull", "--name", "model/fno", "--file", output.to_str().unwrap()], Some(&repo));
    assert!(o.status.success());
    assert_eq!(std::fs::read(&output).unwrap(), content);

    let o = rbf(&["latest", "--repo", repo.to_str().unwrap(), "--name", "model/fno"], None);
    assert!(stdout(&o).contains("version=3\n"));
    assert!(stdout(&o).contains("bytes=200000\n"));

    let o = rbf(&["pull", "--name", "model/fno", "--version", "1"], Some(&repo));
    assert_eq!(o.stdout, content);
}

#[test]
fn mover_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = rbf(&["pull", "--name", "nothing"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown-file"));

    let f = dir.path().join("f");
    std::fs::write(&f, b"x").unwrap();
    rbf(&["push", "--name", "a", "--file", f.to_str().unwrap()], Some(dir.path()));
    let o = rbf(&["pull", "--name", "a", "--version", "5"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(11));
    let o = rbf(&["push", "--name", "../bad", "--file", f.to_str().unwrap()], Some(dir.path()));
    assert_eq!(o.status.code(), Some(13));
}

#[test]
fn simulate_is_deterministic_and_stats_reads_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    std::fs::write(&cfg, "horizon_h = 72\n[[batch]]\nname = \"batch\"\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let run = |out: &Path| rbf(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()], None);
    let (oa, ob) = (run(&a), run(&b));
    assert!(oa.status.success(), "{oa:?}");
    assert_eq!(oa.stdout, ob.stdout);
    assert!(stdout(&oa).contains("fno/ded n="));
    for f in ["trace.ndjson", "publishes.csv", "intervals.csv", "staleness_fno.csv", "deploy_history_pcr.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let o = rbf(&["stats", "--trace", a.join("trace.ndjson").to_str().unwrap(), "--model", "fno", "--tiers", "all"], None);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("fno/all n="));
}

#[test]
fn bad_config_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "sensor_interval_min = -5\n").unwrap();
    let out = dir.path().join("o");
    let o = rbf(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let o = rbf(&["simulate", "--config", "/nonexistent/x.toml", "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3));
    let o = rbf(&["stats", "--trace", "/nonexistent/t", "--model", "fno"], None);
    assert_eq!(o.status.code(), Some(3));
    let o = rbf(&["stats", "--trace", "x", "--model", "gpt"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_publish_is_an_empty_selection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    // One dedicated instance fits into three hours.
    std::fs::write(&cfg, "horizon_h = 3\n[dedicated]\ntrain_factor_std = 0.0\n").unwrap();
    let out = dir.path().join("o");
    assert!(rbf(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None).status.success());
    let o = rbf(&["stats", "--trace", out.join("trace.ndjson").to_str().unwrap(), "--model", "fno"], None);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty-selection"));
}

#[test]
fn decay_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    std::fs::write(&cfg, "base_period_min = 134.8\n").unwrap();
    let csv = dir.path().join("decay.csv");
    let o = rbf(&["decay-report", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()], None);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("error floor: 0.44 m/s"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 22);
    let k1: f64 = rows[1][1].parse().unwrap();
    assert!((k1 - 67.4).abs() < 1e-9, "{k1}");
    let periods: Vec<f64> = rows[..21].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(periods.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(rows[21][0], "floor");
    assert!(periods[20] < 7.0);
}

#[test]
fn default_config_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = rbf(&["default-config"], None);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let csv = dir.path().join("d.csv");
    assert!(rbf(&["decay-report", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()], None).status.success());
}
