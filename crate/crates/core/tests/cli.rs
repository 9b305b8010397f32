use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use randinf::ar::direct_delta;
use randinf::cli::{check_with, GridArgs, EXIT_DEGENERATE, EXIT_DISAGREEMENT, EXIT_INPUT, EXIT_OK};
use randinf::cs::{build_cs_with, Algorithm};
use randinf::data::{load_csv, ColumnMap};
use randinf::interval::{Interval, IntervalUnion};
use randinf::randomization::{enumerate_assignments, DrawSet};
use randinf::ExperimentData;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_randinf"))
}

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tiny.csv")
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args(args);
    match threads {
        Some(t) => c.env("RANDINF_THREADS", t),
        None => c.env_remove("RANDINF_THREADS"),
    };
    c.output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Brute-force membership: observed statistic against the quantile of every
/// assignment's statistic, each computed from its defining sums.
fn brute_member(data: &ExperimentData, all: &[Vec<u8>], alpha_pct: usize, beta: f64) -> bool {
    let obs = direct_delta(data, data.z(), beta, false).unwrap().powi(2);
    let mut vals: Vec<f64> = all.iter().map(|z| direct_delta(data, z, beta, false).unwrap().powi(2)).collect();
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    let r = (1..=m).find(|&k| 100 * k >= (100 - alpha_pct) * m).unwrap();
    obs <= vals[r - 1] * (1.0 + 1e-9)
}

#[test]
fn tiny_example_matches_golden_output() {
    let path = tiny();
    let out = run(&["ci", "--input", path.to_str().unwrap(), "--alpha", "0.25", "--exhaustive"], None);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let got = json(&out);
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("golden/tiny_ci.json")).unwrap();
    for key in ["alpha", "m", "seed", "adjusted", "algorithm", "include_observed", "num_pairs"] {
        assert_eq!(got[key], golden[key], "{key}");
    }
    let a: IntervalUnion = serde_json::from_value(got["intervals"].clone()).unwrap();
    let b: IntervalUnion = serde_json::from_value(golden["intervals"].clone()).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.endpoints().iter().zip(b.endpoints()) {
        assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
    }
    assert!((got["wald"].as_f64().unwrap() - golden["wald"].as_f64().unwrap()).abs() < 1e-12);

    // the golden set itself, checked pointwise against the defining test
    let data = load_csv(&path, &ColumnMap::default(), true).unwrap();
    let all = enumerate_assignments(data.n(), data.n1()).unwrap();
    for iv in b.intervals() {
        assert!(brute_member(&data, &all, 25, 0.5 * (iv.lo + iv.hi)));
        for e in [iv.lo - 1e-5, iv.hi + 1e-5] {
            assert!(!brute_member(&data, &all, 25, e), "{e} lies outside");
        }
    }
}

#[test]
fn output_is_byte_identical_across_worker_counts() {
    let path = tiny();
    let args = ["ci", "--input", path.to_str().unwrap(), "--m", "300", "--seed", "17", "--x", "X1", "--adjusted"];
    let one = run(&args, Some("1"));
    let four = run(&args, Some("4"));
    let again = run(&args, None);
    assert_eq!(one.status.code(), Some(EXIT_OK));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(one.stdout, again.stdout);
}

#[test]
fn json_round_trips_the_interval_list() {
    let path = tiny();
    let data = load_csv(&path, &ColumnMap::default(), true).unwrap();
    let draws = randinf::randomization::draw_assignments(data.n(), data.n1(), 200, 5).unwrap();
    let direct = build_cs_with(&data, &draws, 0.1, false, Algorithm::Fast).unwrap();
    let out = run(&["ci", "--input", path.to_str().unwrap(), "--m", "200", "--seed", "5", "--alpha", "0.1"], None);
    let parsed: IntervalUnion = serde_json::from_value(json(&out)["intervals"].clone()).unwrap();
    assert_eq!(parsed, direct.intervals);
}

#[test]
fn unbounded_sets_render_infinities_as_strings() {
    let path = tiny();
    let out = run(&["ci", "--input", path.to_str().unwrap(), "--m", "50", "--alpha", "0.9"], None);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let u: IntervalUnion = serde_json::from_value(v["intervals"].clone()).unwrap();
    if !u.is_bounded() {
        assert!(text.contains("\"inf\"") || text.contains("\"-inf\""));
    }
}

#[test]
fn malformed_csv_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "Y,D,Z\n1.0,0,1\n2.0,2,0\n0.5,1,1\n0.1,0,0\n").unwrap();
    let out = run(&["ci", "--input", p.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-binary"));

    let missing = run(&["ci", "--input", dir.path().join("none.csv").to_str().unwrap()], None);
    assert_eq!(missing.status.code(), Some(EXIT_INPUT));
    let bad_alpha = run(&["ci", "--input", tiny().to_str().unwrap(), "--alpha", "1.5"], None);
    assert_eq!(bad_alpha.status.code(), Some(EXIT_INPUT));
}

#[test]
fn parallel_outcomes_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("parallel.csv");
    // Y - 2 D is constant within each arm
    let rows = [(1, 1), (0, 1), (1, 1), (0, 1), (1, 0), (0, 0), (0, 0), (1, 0)];
    let mut s = String::from("Y,D,Z\n");
    for (d, z) in rows {
        let y = 2.0 * d as f64 + if z == 1 { 0.5 } else { -0.25 };
        s.push_str(&format!("{y},{d},{z}\n"));
    }
    std::fs::write(&p, s).unwrap();
    let out = run(&["ci", "--input", p.to_str().unwrap(), "--exhaustive"], None);
    assert_eq!(out.status.code(), Some(EXIT_DEGENERATE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parallel"));
}

#[test]
fn simulate_rejects_zero_simulations() {
    let out = run(&["simulate", "--sims", "0"], None);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
}

#[test]
fn simulate_small_run_is_reproducible() {
    let args = ["simulate", "--n", "30", "--n1", "15", "--compliers", "10", "--k", "1", "--sims", "4", "--m", "40", "--format", "json"];
    let a = run(&args, Some("1"));
    let b = run(&args, Some("3"));
    assert_eq!(a.status.code(), Some(EXIT_OK));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["n_sims"], 4);
    assert_eq!(v["methods"].as_array().unwrap().len(), 2);
}

#[test]
fn check_passes_on_the_bundled_example() {
    let path = tiny();
    for extra in [&[][..], &["--adjusted", "--x", "X1"][..]] {
        let mut args = vec!["check", "--input", path.to_str().unwrap(), "--m", "150", "--seed", "2", "--alpha", "0.1"];
        args.extend_from_slice(extra);
        let out = run(&args, None);
        assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stdout));
        assert!(json(&out)["max_endpoint_diff"].as_f64().unwrap() <= 1e-8);
    }
}

#[test]
fn corrupted_fast_path_trips_the_check() {
    let data = load_csv(tiny(), &ColumnMap::default(), true).unwrap();
    let draws = DrawSet::from_draws(enumerate_assignments(12, 6).unwrap(), 0).unwrap();
    let grid = GridArgs { grid_lo: None, grid_hi: None, grid_step: None };
    let corrupt = |d: &ExperimentData, s: &DrawSet, a: f64, adj: bool| {
        let mut r = build_cs_with(d, s, a, adj, Algorithm::Fast)?;
        let shifted = r.intervals.intervals().iter().map(|iv| Interval::new(iv.lo + 0.01, iv.hi + 0.01));
        r.intervals = IntervalUnion::from_pieces(shifted);
        Ok(r)
    };
    let report = check_with(&data, &draws, 0.25, false, &grid, &corrupt).unwrap();
    assert!(!report.ok);
    assert_eq!(report.exit_code(), EXIT_DISAGREEMENT);
    assert!(report.max_endpoint_diff > 1e-3);
}

#[test]
fn grid_outside_the_set_agrees_vacuously() {
    let path = tiny();
    let out = run(
        &["check", "--input", path.to_str().unwrap(), "--exhaustive", "--alpha", "0.25", "--grid-lo", "50", "--grid-hi", "60", "--grid-step", "0.5"],
        None,
    );
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let v = json(&out);
    assert_eq!(v["grid_points"], 21);
    assert_eq!(v["grid_disagreements"], 0);
}

#[test]
fn grid_algorithm_lists_membership() {
    let path = tiny();
    let out = run(
        &["ci", "--input", path.to_str().unwrap(), "--exhaustive", "--alpha", "0.25", "--algorithm", "grid", "--grid-lo", "-1", "--grid-hi", "4", "--grid-step", "0.5"],
        None,
    );
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let pts = json(&out);
    let pts = pts.as_array().unwrap();
    assert_eq!(pts.len(), 11);
    let wald_like = pts.iter().find(|p| p["beta"] == 1.5).unwrap();
    assert_eq!(wald_like["member"], true);
    assert_eq!(pts[0]["member"], false);
}
