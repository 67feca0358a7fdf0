use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MIXED: &str = r#"{"type":"discrete","components":[{"prob":0.2,"atoms":[1.3,0.5]},{"prob":0.8,"atoms":[0.4]}]}"#;
const EXTINCTION: &str = r#"{"type":"discrete","components":[{"prob":0.75,"atoms":[0.6,0.6]},{"prob":0.25,"atoms":[]}]}"#;
const DETERMINISTIC: &str = r#"{"type":"deterministic_binary"}"#;

fn sbmc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbmc"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV output, skipping the config comment and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn close(v: &Value, want: f64, tol: f64) {
    let got = v.as_f64().unwrap();
    assert!((got - want).abs() <= tol, "{got} vs {want}");
}

#[test]
fn solve_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["solve", "--law", DETERMINISTIC], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json(&dir.path().join("solve.json"));
    close(&v["profile"]["p0"], 1.0, 1e-12);
    close(&v["profile"]["extinction_prob"], 0.0, 0.0);
    assert_eq!(v["config"]["law"]["type"], "deterministic_binary");
    assert_eq!(v["config"]["seed"], 42);

    let o = sbmc(&["solve", "--law", EXTINCTION], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    close(&v["profile"]["p0"], (2.0f64 / 3.0).ln() / 0.6f64.ln(), 1e-9);
    close(&v["profile"]["extinction_prob"], 1.0 / 3.0, 1e-10);
}

#[test]
fn default_dirichlet_has_no_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["solve", "--law", r#"{"type":"dirichlet","weights":[1.0,1.0]}"#], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no Malthusian exponent"), "{err}");
    assert!(err.contains("min moment 1.46"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["solve", "simulate-tree", "simulate-tagged", "verify"] {
        let o = sbmc(&[cmd, "--alpha", "-1"], dir.path());
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"alpha": 1.0, "bogus": 3}"#).unwrap();
    let o = sbmc(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = sbmc(&["solve", "--law", r#"{"type":"discrete","components":[{"prob":0.5,"atoms":[0.5]}]}"#], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = sbmc(&["solve", "--tail-tol", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!(r#"{{"law": {EXTINCTION}, "seed": 7, "replicas": 3}}"#)).unwrap();
    let o = sbmc(&["simulate-tree", "--config", cfg.to_str().unwrap(), "--seed", "9"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json(&dir.path().join("summary.json"));
    assert_eq!(v["config"]["seed"], 9);
    assert_eq!(v["config"]["replicas"], 3);
    assert_eq!(v["config"]["law"]["components"][0]["prob"], 0.75);
}

#[test]
fn four_leaf_tree() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(
        &["simulate-tree", "--law", DETERMINISTIC, "--n", "1", "--generations", "2", "--times", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let g = rows(&dir.path().join("generations.csv"));
    assert_eq!(g, vec![vec!["0", "2", "4", &g[0][3], "0"]]);
    close(&Value::from(g[0][3].parse::<f64>().unwrap()), 1.0, 1e-12);
    let text = fs::read_to_string(dir.path().join("trees.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["config"]["replicas"], 1);
    let nodes: Vec<Value> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    let leaves: Vec<&Value> = nodes.iter().filter(|n| n["node"]["label"].as_array().unwrap().len() == 2).collect();
    assert_eq!(leaves.len(), 4);
    for leaf in leaves {
        assert_eq!(leaf["node"]["size"], 0.25);
    }
}

#[test]
fn extinct_fraction_matches_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let n = 4000.0f64;
    let o = sbmc(
        &["simulate-tree", "--law", EXTINCTION, "--n", "4000", "--generations", "20", "--times", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let v = json(&dir.path().join("summary.json"));
    let q = 1.0 / 3.0;
    let sigma = (q * (1.0 - q) / n).sqrt();
    close(&v["generations"][0]["extinct_fraction"]["mean"], q, 4.0 * sigma);
}

#[test]
fn yule_count_at_alpha_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(
        &["simulate-tree", "--law", DETERMINISTIC, "--alpha", "0", "--n", "10000", "--times", "2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("summary.json"));
    let count = &v["times"][0]["count"];
    let se = count["std_err"].as_f64().unwrap();
    close(&count["mean"], 2f64.exp(), 4.0 * se);
}

#[test]
fn cap_exceeded_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["simulate-tree", "--n", "1", "--generations", "10", "--cap", "100"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn tagged_walk_of_deterministic_law() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["simulate-tagged", "--law", DETERMINISTIC, "--n", "5", "--generations", "6"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    for row in rows(&dir.path().join("walks.csv")) {
        let k: f64 = row[1].parse().unwrap();
        let s: f64 = row[2].parse().unwrap();
        assert!((s + k * std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn tagged_normalizations() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["simulate-tagged", "--n", "20000", "--times", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json(&dir.path().join("summary.json"));
    let se = v["mean_inverse_i"]["std_err"].as_f64().unwrap();
    close(&v["mean_inverse_i"]["mean"], 0.5, 4.0 * se);
    assert!(v["max_truncation_error"].as_f64().unwrap() <= 1e-6);

    let o = sbmc(&["simulate-tagged", "--law", MIXED, "--n", "20000", "--times", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json(&dir.path().join("summary.json"));
    let se = v["mean_y_alpha"]["std_err"].as_f64().unwrap();
    let want = v["inverse_alpha_m1"].as_f64().unwrap();
    close(&v["mean_y_alpha"]["mean"], want, 4.0 * se);
    let chi = rows(&dir.path().join("chi.csv"));
    assert_eq!(chi.len(), 20000);
}

#[test]
fn tagged_needs_negative_drift() {
    let dir = tempfile::tempdir().unwrap();
    let law = r#"{"type":"discrete","components":[{"prob":0.5,"atoms":[2.0]},{"prob":0.5,"atoms":[]}]}"#;
    let o = sbmc(&["simulate-tagged", "--law", law], dir.path());
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate-tree", "--law", MIXED, "--n", "50", "--times", "1,3", "--generations", "3"];
    sbmc(&args, a.path());
    sbmc(&[&args[..], &["--threads", "1"]].concat(), b.path());
    for f in ["generations.csv", "times.csv", "snapshots.csv", "trees.jsonl", "summary.json"] {
        let strip = |p: &Path| {
            fs::read_to_string(p.join(f))
                .unwrap()
                .replace(p.to_str().unwrap(), "OUT")
        };
        assert_eq!(strip(a.path()), strip(b.path()), "{f}");
    }
}

#[test]
fn acceptance_subset_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["verify", "--acceptance", "--criteria", "1,17,18"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v = json(&dir.path().join("reports.json"));
    assert_eq!(v["criteria"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(dir.path().join("reports.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("name,law,alpha,t,statistic,threshold,verdict,seed"));
}

#[test]
fn verify_uniform_binary_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["verify", "--seed", "42"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("[fail]"));
}

#[test]
fn verify_lattice_law_reports_caveats() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbmc(&["verify", "--law", DETERMINISTIC, "--n", "4000"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("[lattice caveat] tagged_limit"));
    let v = json(&dir.path().join("reports.json"));
    let caveats = v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["verdict"] == "lattice_caveat")
        .count();
    assert!(caveats >= 3);
}
