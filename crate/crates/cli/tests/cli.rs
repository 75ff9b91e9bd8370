use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qgs_core::harness::metrics::mse;
use qgs_core::harness::output::{read_density, read_states, states_path};
use qgs_core::harness::Algorithm;

fn qgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgs"))
        .args(args)
        .env("QGS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn rule_order_two() {
    let o = qgs(&["rule", "--order", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "node,weight\n-0.5773502691896257,1\n0.5773502691896257,1\n");
}

#[test]
fn rule_order_zero_is_a_usage_error() {
    assert_eq!(qgs(&["rule", "--order", "0"]).status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let o = qgs(&["filter", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let o = qgs(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("benchmark"));
}

#[test]
fn missing_config_is_a_runtime_error() {
    let o = qgs(&["mc", "--config", "/nonexistent/qgs.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "horizon = 10\nsurprise = 1\n").unwrap();
    let o = qgs(&["mc", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("surprise"));
}

#[test]
fn config_and_preset_conflict() {
    let o = qgs(&["simulate", "--preset", "example1", "--config", "x.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn smoother_in_filter_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = qgs(&[
        "filter",
        "--preset",
        "example1",
        "--algos",
        "qgss",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_threads_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_qgs"))
        .args(["presets"])
        .env("QGS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn presets_lists_examples() {
    let o = qgs(&["presets"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("example3: n = 4, m = 2"), "{s}");
}

#[test]
fn simulate_writes_the_realization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = qgs(&[
        "simulate",
        "--preset",
        "example3",
        "--horizon",
        "15",
        "--seed",
        "3",
        "--out",
        d,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("simulation.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,u_1,u_2,x_1,x_2,x_3,x_4,r,z,y"));
    assert_eq!(lines.count(), 15);
}

#[test]
fn smooth_writes_states_densities_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "smooth",
        "--preset",
        "example2",
        "--horizon",
        "12",
        "--times",
        "6,12",
        "--out",
        d,
    ];
    let o = qgs(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in [
        "states_qgss.csv",
        "states_eks.csv",
        "density_qgss_t006.csv",
        "density_eks_t012.csv",
        "metrics.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("states_qgsf.csv").exists());
    let (xs, ds) = read_density(&dir.path().join("density_qgss_t012.csv")).unwrap();
    assert_eq!(xs.len(), 400);
    let h = xs[1] - xs[0];
    let mass: f64 = ds.iter().sum::<f64>() * h;
    assert!((mass - 1.0).abs() < 1e-2, "{mass}");
}

#[test]
fn fixed_grid_flag_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "filter",
        "--preset",
        "example1",
        "--horizon",
        "5",
        "--times",
        "5",
        "--grid",
        "-4:4:9",
        "--out",
        d,
    ];
    assert!(qgs(&args).status.success());
    let (xs, _) = read_density(&dir.path().join("density_qgsf_t005.csv")).unwrap();
    assert_eq!(xs, (-4..=4).map(f64::from).collect::<Vec<_>>());
}

#[test]
fn metrics_recompute_from_state_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "filter",
        "--preset",
        "example3",
        "--horizon",
        "25",
        "--algos",
        "qgsf,ekf",
        "--out",
        d,
    ];
    assert!(qgs(&args).status.success());
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let a: Algorithm = cells[0].parse().unwrap();
        let s = read_states(&states_path(dir.path(), a)).unwrap();
        assert_eq!(mse(&s.truth, &s.means), cells[1].parse::<f64>().unwrap());
    }
}

#[test]
fn mc_matches_golden_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data("small.cfg");
    let o = qgs(&[
        "mc",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let want = fs::read_to_string(data("small_metrics.csv")).unwrap();
    assert_eq!(got, want);
    for f in [
        "pdf_distances.csv",
        "summary.csv",
        "run_0000/density_qgss_t020.csv",
        "run_0002/states_eks.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // density files only for the first `grid.runs` runs
    assert!(!dir.path().join("run_0001/density_qgsf_t010.csv").exists());
}

#[test]
fn mc_output_is_byte_identical_across_runs_and_thread_counts() {
    let cfg = data("small.cfg");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_qgs"))
            .args(["mc", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
            .env("QGS_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
    };
    run(a.path(), "1");
    run(b.path(), "3");
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() > 10);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn benchmark_prints_a_table() {
    let args = [
        "benchmark",
        "--preset",
        "example1",
        "--horizon",
        "10",
        "--runs",
        "2",
        "--algos",
        "qgsf,ekf",
    ];
    let o = qgs(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("vs_qgsf") && s.contains("ekf"), "{s}");
}
