use std::fs;
use std::path::Path;
use std::process::Command;

use coexist_ppo::harness::{
    parse_config_text, read_metrics_csv, run_experiment, summarize, ExperimentConfig, METRIC_COLUMNS,
};
use coexist_ppo::Error;

const TINY: &str = "
# quick run
k_p = 2
k_s = 2
iters = 6
batch = 20
episode_len = 10
hidden = 8
";

fn tiny(out: &Path, extra: &str) -> ExperimentConfig {
    let mut text = TINY.to_string();
    text.push_str(&format!("out={}\n{extra}", out.display()));
    ExperimentConfig::resolve(&parse_config_text(&text, "tiny.cfg").unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn row_counts_and_aggregate_means() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&tiny(dir.path(), "seeds=0,1,2,3,4,5")).unwrap();
    assert_eq!(out.runs.len(), 6);
    for s in 0..6u64 {
        let rows = read_metrics_csv(&dir.path().join(format!("seed_{s}.csv"))).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.seed == s));
    }
    let agg = read_metrics_csv(&dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.len(), 6);
    for (i, row) in agg.iter().enumerate() {
        let mean: f64 = out.runs.iter().map(|r| r.rows[i].reward_p).sum::<f64>() / 6.0;
        // written with 9 significant digits
        assert!((row.reward_p - mean).abs() <= 1e-8 * mean.abs().max(1e-300));
    }
    let header = fs::read_to_string(dir.path().join("seed_0.csv")).unwrap();
    let first = header.lines().next().unwrap();
    assert_eq!(first, format!("iter,seed,{}", METRIC_COLUMNS.join(",")));
    let agg_header = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert!(agg_header.starts_with("iter,n_seeds,reward_p,"));
}

#[test]
fn reruns_are_byte_identical_and_order_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    run_experiment(&tiny(a.path(), "seeds=0,1,2")).unwrap();
    run_experiment(&tiny(b.path(), "seeds=0,1,2\njobs=3")).unwrap();
    run_experiment(&tiny(c.path(), "seeds=2,0")).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    for s in [0, 2] {
        let name = format!("seed_{s}.csv");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(c.path().join(&name)).unwrap());
    }
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&tiny(dir.path(), "seeds=0")).unwrap();
    let before = files(dir.path());
    match run_experiment(&tiny(dir.path(), "seeds=0")) {
        Err(Error::OutputExists(p)) => assert_eq!(p, dir.path()),
        other => panic!("expected OutputExists, got {other:?}"),
    }
    assert_eq!(files(dir.path()), before);

    fs::write(dir.path().join("notes.txt"), "keep me").unwrap();
    run_experiment(&tiny(dir.path(), "seeds=1\nforce=true")).unwrap();
    let names: Vec<String> = files(dir.path()).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"notes.txt".to_string()));
    assert!(names.contains(&"seed_1.csv".to_string()));
    assert!(!names.contains(&"seed_0.csv".to_string()));
}

#[test]
fn summarize_windows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&tiny(dir.path(), "seeds=0,1")).unwrap();
    let full = summarize(dir.path(), 1.0).unwrap();
    let rows = &out.runs[0].rows;
    let mean: f64 = rows.iter().map(|r| r.nqos_p).sum::<f64>() / rows.len() as f64;
    let line = full.get("seed_0.csv").unwrap();
    assert_eq!(line.window_rows, 6);
    assert!((line.means[7] - mean).abs() < 1e-8 * mean.max(1e-300) + 1e-300);

    let last = summarize(dir.path(), 0.34).unwrap();
    let line = last.get("seed_1.csv").unwrap();
    assert_eq!(line.window_rows, 2);
    let r = &out.runs[1].rows;
    let expect = (r[4].sum_rate_p + r[5].sum_rate_p) / 2.0;
    assert!((line.means[2] - expect).abs() < 1e-7 * expect.abs());
    assert!(last.get("aggregate.csv").is_some());
    assert!(last.to_csv().starts_with("file,rows,window_rows,reward_p"));

    assert!(summarize(dir.path(), 0.0).is_err());
    assert!(summarize(dir.path(), 1.5).is_err());
}

#[test]
fn constant_metric_summary_equals_constant() {
    let out = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..50)
        .map(|i| coexist_ppo::harness::MetricsRow::from_values(i, 7, [0.25; 12]))
        .collect();
    coexist_ppo::harness::write_metrics_csv(&out.path().join("seed_7.csv"), &rows).unwrap();
    let s = summarize(out.path(), 0.1).unwrap();
    assert!(s.lines[0].means.iter().all(|m| *m == 0.25));
}

#[test]
fn config_file_keys_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "k_p=2\nclip=-0.5\n").unwrap();
    let err = coexist_ppo::harness::parse_config_file(&cfg)
        .and_then(|e| ExperimentConfig::resolve(&e))
        .unwrap_err()
        .to_string();
    assert!(err.contains(":2") && err.contains("clip"), "{err}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coexist-ppo"))
}

#[test]
fn cli_run_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("res");
    let status = cli()
        .args(["run", "--experiment", "custom", "--mode", "centralized_full_csi", "--seeds", "4"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--set", "iters=3"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(read_metrics_csv(&out.join("seed_4.csv")).unwrap().len(), 3);
    let resolved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.contains("mode=centralized_full_csi"));

    let again = cli().args(["run", "--seeds", "4"]).arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let sum = cli().args(["summarize", "--window", "0.5", "--dir"]).arg(&out).output().unwrap();
    assert!(sum.status.success());
    let text = String::from_utf8(sum.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("seed_4.csv,3,2,"));
}

#[test]
fn cli_reports_bad_keys() {
    let out = cli().args(["run", "--set", "gamma=2", "--out", "/nonexistent/never"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gamma") && err.contains("--set:1"), "{err}");
}

#[test]
fn failed_run_leaves_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    // parameters overflow after the first Adam step
    let cfg = tiny(dir.path(), "seeds=3\nlr_policy=1e300");
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    let diag = fs::read_to_string(dir.path().join("error_seed_3.txt")).unwrap();
    assert!(diag.contains("seed=3"));
}
