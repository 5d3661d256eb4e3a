#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::process::{Command, Output};

use delvekit::{two_sample, CountMatrix};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delvekit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn triples(rows: &[&[u64]]) -> String {
    let mut s = String::from("row,col,count\n");
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                s.push_str(&format!("{i},{j},{v}\n"));
            }
        }
    }
    s
}

fn groups(labels: &[&str]) -> String {
    let mut s = String::from("row,group\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

const ROWS: [&[u64]; 6] = [
    &[5, 1, 0, 2],
    &[4, 2, 1, 1],
    &[6, 0, 1, 1],
    &[0, 3, 4, 1],
    &[1, 4, 3, 0],
    &[0, 5, 2, 2],
];

#[test]
fn single_category_gives_zero_score() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", "row,col,count\n0,0,3\n1,0,5\n2,0,2\n");
    let g = write(dir.path(), "g.csv", &groups(&["a", "b", "b"]));
    let v = ok_json(&["test", &c, "--groups", &g]);
    assert_eq!(v["psi"], 0.0);
    assert_eq!(v["p_value"], 0.5);
    assert_eq!(v["reject"], false);
}

#[test]
fn kn_variant_routes_and_checks_groups() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", &triples(&ROWS));
    let per_row = ok_json(&["test", &c, "--variant", "delve_kn"]);
    assert_eq!(per_row["variant"], "delve_kn");
    assert_eq!(per_row["k"], 6);
    let general = ok_json(&["test", &c]);
    let (a, b) = (per_row["statistic"].as_f64().unwrap(), general["statistic"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));

    let g = write(dir.path(), "g.csv", &groups(&["x", "x", "x", "y", "y", "y"]));
    let out = run(&["test", &c, "--groups", &g, "--variant", "delve_kn"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("precondition"));
}

#[test]
fn plus_variant_shrinks_positive_scores() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", &triples(&ROWS));
    let g = write(dir.path(), "g.csv", &groups(&["x", "x", "x", "y", "y", "y"]));
    let plain = ok_json(&["test", &c, "--groups", &g]);
    let plus = ok_json(&["test", &c, "--groups", &g, "--variant", "delve_plus", "--weighted"]);
    assert!(plain["statistic"].as_f64().unwrap() > 0.0);
    assert!(plus["psi"].as_f64().unwrap() < plain["psi"].as_f64().unwrap());
    assert!(plus["weighted_statistic"].is_f64());
    assert!(plain["weighted_statistic"].is_null());
}

#[test]
fn concatenated_two_sample_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", &triples(&ROWS));
    let g = write(dir.path(), "g.csv", &groups(&["x", "x", "x", "y", "y", "y"]));
    let v = ok_json(&["test", &c, "--groups", &g]);
    let xa = CountMatrix::from_dense(&ROWS[..3], 4).unwrap();
    let xb = CountMatrix::from_dense(&ROWS[3..], 4).unwrap();
    let lib = two_sample(&xa, &xb).unwrap();
    let t = v["statistic"].as_f64().unwrap();
    let var = v["variance_estimate"].as_f64().unwrap();
    assert!((t - lib.statistic).abs() <= 1e-10 * t.abs());
    assert!((var - lib.variance_estimate.unwrap()).abs() <= 1e-10 * var);
}

#[test]
fn csv_output_and_matrix_market_input() {
    let dir = tempfile::tempdir().unwrap();
    let mm = write(
        dir.path(),
        "c.mtx",
        "%%MatrixMarket matrix coordinate integer general\n3 2 4\n1 1 2\n2 1 1\n2 2 1\n3 2 2\n",
    );
    let out = run(&["test", &mm, "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("variant,n,p,k,statistic"));
    assert!(lines.next().unwrap().starts_with("delve,3,2,3,"));
}

#[test]
fn malformed_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", "row,col,count\n0,zero,1\n");
    let out = run(&["test", &c]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn pairwise_matrix_layout() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", &triples(&ROWS));
    let g = write(dir.path(), "g.csv", &groups(&["x", "x", "x", "y", "y", "y"]));
    let out = run(&["pairwise", &c, "--groups", &g, "--variant", "delve"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], ",x,y");
    let z: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(lines[1].split(',').nth(1), Some(""));
    let direct = ok_json(&["test", &c, "--groups", &g]);
    assert_eq!(z, direct["psi"].as_f64().unwrap());
    assert_eq!(lines[2], format!("y,{},", lines[1].split(',').nth(2).unwrap()));
}

#[test]
fn pairwise_degenerate_pair_is_blank_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    // every count is 1 and b shares no category with a or c, so V = 0 for those pairs
    let rows: [&[u64]; 3] = [&[1, 1, 0, 0], &[0, 0, 1, 1], &[1, 1, 0, 0]];
    let c = write(dir.path(), "c.csv", &triples(&rows));
    let g = write(dir.path(), "g.csv", &groups(&["a", "b", "c"]));
    let out_path = dir.path().join("z.csv");
    let out = run(&["pairwise", &c, "--groups", &g, "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("a vs b") && stderr.contains("b vs c"), "{stderr}");
    let text = std::fs::read_to_string(out_path).unwrap();
    let cells: Vec<Vec<String>> = text.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(cells[1][2], "");
    assert_eq!(cells[2][3], "");
    assert!(!cells[1][3].is_empty());
    for i in 1..4 {
        for j in 1..4 {
            assert_eq!(cells[i][j], cells[j][i]);
        }
    }
}

const SMALL: &str = "design = experiment2\nn = 20\np = 30\nk = 4\nn_min = 10\nn_max = 20\nphi = 0.5\nreps = 60\n";

#[test]
fn missing_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "c.conf", &SMALL.replace("k = 4\n", ""));
    let out = run(&["calibrate", &conf, "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing config key 'k'"));
    let out = run(&["calibrate", &write(dir.path(), "d.conf", SMALL)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("'seed'"));
}

#[test]
fn infeasible_design_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(
        dir.path(),
        "c.conf",
        "design = contiguity\nn = 10\np = 8\nlen = 5\nhypothesis = alt\nsignal = 100\nreps = 5\nseed = 1\n",
    );
    let out_dir = dir.path().join("out");
    let out = run(&["simulate", &conf, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
    assert!(!out_dir.exists());
}

#[test]
fn power_at_zero_matches_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "c.conf", &format!("{SMALL}grid = 0,4\n"));
    let (p_dir, c_dir) = (dir.path().join("p"), dir.path().join("c"));
    for (cmd, d) in [("power", &p_dir), ("calibrate", &c_dir)] {
        let out = run(&[cmd, &conf, "--seed", "5", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let power = std::fs::read_to_string(p_dir.join("power.csv")).unwrap();
    let summary = std::fs::read_to_string(c_dir.join("summary.csv")).unwrap();
    for variant in ["delve", "delve_plus"] {
        let p0 = power
            .lines()
            .find(|l| l.split(',').nth(1) == Some(variant) && l.starts_with("0.0000000000000000e0"))
            .unwrap()
            .split(',')
            .nth(5)
            .unwrap()
            .to_string();
        let rate = summary
            .lines()
            .find(|l| l.starts_with(&format!("{variant},")))
            .unwrap()
            .split(',')
            .nth(6)
            .unwrap()
            .to_string();
        assert_eq!(p0, rate, "{variant}");
    }
}

#[test]
fn same_seed_gives_identical_files_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "c.conf", &format!("{SMALL}hypothesis = alt\nsignal = 3\n"));
    let (a, b, r) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("r"));
    for d in [&a, &b] {
        assert!(run(&["simulate", &conf, "--seed", "9", "--out", d.to_str().unwrap()]).status.success());
    }
    for name in ["report.json", "summary.csv", "values.csv", "histogram.csv", "config.resolved"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["signal"], "3");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let out = run(&["replay", a.join("manifest.json").to_str().unwrap(), "--out", r.to_str().unwrap(), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(a.join("values.csv")).unwrap(), std::fs::read(r.join("values.csv")).unwrap());
}

#[test]
fn floats_carry_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", &triples(&ROWS));
    let out = run(&["test", &c, "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let stat = text.lines().nth(1).unwrap().split(',').nth(4).unwrap().to_string();
    let mantissa = stat.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
}

#[test]
fn diagnose_modes() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(
        dir.path(),
        "p.json",
        r#"{"totals": [10, 12, 8], "omega": [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]], "labels": [0, 1, 1]}"#,
    );
    let v = ok_json(&["diagnose", "--params", &params]);
    assert_eq!(v["plugin"], false);
    assert_eq!(v["population"]["rho_sq"], 0.0);
    assert_eq!(v["population"]["snr"], 0.0);

    let c = write(dir.path(), "c.csv", &triples(&ROWS));
    let v = ok_json(&["diagnose", &c]);
    assert_eq!(v["plugin"], true);
    assert!(v["dimension_ratio"].as_f64().unwrap() > 0.0);
    assert!(v["population"]["rho_sq"].as_f64().unwrap() > 0.0);

    let out = run(&["diagnose", &c, "--population"]);
    assert_eq!(out.status.code(), Some(2));

    let v = ok_json(&["diagnose", "--n", "81", "--mean-length", "75.90", "--p", "1103"]);
    let dr = v["dimension_ratio"].as_f64().unwrap();
    assert!((dr - 423.07).abs() < 0.005 * 423.07);
    assert!(v.get("population").is_none());
}
