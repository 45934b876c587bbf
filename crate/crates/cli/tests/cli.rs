use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use funsens::model::wn_ishigami_value;
use serde_json::{json, Value};
use tempfile::TempDir;

fn funsens(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funsens"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

/// `index -> row` of an index report.
fn report(path: &Path) -> BTreeMap<String, BTreeMap<String, String>> {
    let (header, rows) = read_rows(path);
    rows.into_iter()
        .map(|r| (r[0].clone(), header.iter().cloned().zip(r).collect()))
        .collect()
}

fn value(rep: &BTreeMap<String, BTreeMap<String, String>>, index: &str, column: &str) -> f64 {
    rep[index][column].parse().unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn macro_config(n: usize) -> Value {
    json!({"schema_version": 1, "model": {"builtin": "wn_ishigami"}, "method": "macroparameter", "N": n, "seed": 7})
}

#[test]
fn sample_writes_blocks_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &macro_config(100));
    let out = tmp.path().join("design");
    ok(&funsens("sample", &cfg, &out, &[]));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["scheme"], "simple_mc");
    assert_eq!(manifest["N"], 100);
    let blocks = manifest["blocks"].as_array().unwrap();
    let names: Vec<&str> = blocks.iter().map(|b| b["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["A", "B", "C1", "C2", "C3"]);
    assert_eq!(blocks[2]["frozen_columns"], json!(["X2", "eps"]));
    assert_eq!(blocks[4]["frozen_columns"], json!(["X1", "X2"]));
    for b in blocks {
        assert_eq!(b["rows"], 100);
        let (header, rows) = read_rows(&out.join(format!("block_{}.csv", b["name"].as_str().unwrap())));
        assert_eq!(header.len(), 102);
        assert_eq!(&header[..3], ["X1", "X2", "eps1"]);
        assert_eq!(rows.len(), 100);
    }
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let again: Value = serde_json::from_str(&serde_json::to_string(&manifest).unwrap()).unwrap();
    assert_eq!(again, serde_json::from_str::<Value>(&text).unwrap());
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &macro_config(150));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&funsens("sample", &cfg, &a, &[]));
    ok(&funsens("sample", &cfg, &b, &[]));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let c = tmp.path().join("c");
    ok(&funsens("sample", &cfg, &c, &["--seed", "8"]));
    assert_ne!(dir_bytes(&a)["block_A.csv"], dir_bytes(&c)["block_A.csv"]);
}

/// Evaluates every sampled block with the benchmark outside the program.
fn external_evaluations(design: &Path) -> String {
    let manifest: Value = serde_json::from_str(&fs::read_to_string(design.join("manifest.json")).unwrap()).unwrap();
    let mut out = String::from("block,row,y\n");
    for b in manifest["blocks"].as_array().unwrap() {
        let name = b["name"].as_str().unwrap();
        let (_, rows) = read_rows(&design.join(format!("block_{name}.csv")));
        for (i, r) in rows.iter().enumerate() {
            let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
            out.push_str(&format!("{name},{i},{}\n", wn_ishigami_value(v[0], v[1], &v[2..])));
        }
    }
    out
}

#[test]
fn external_evaluations_reproduce_the_in_process_estimate() {
    let tmp = TempDir::new().unwrap();
    let design = tmp.path().join("design");
    let cfg = write_config(tmp.path(), "c.json", &macro_config(500));
    ok(&funsens("sample", &cfg, &design, &[]));
    fs::write(design.join("evals.csv"), external_evaluations(&design)).unwrap();

    let mut ext = macro_config(500);
    ext["evaluations"] = json!("design/evals.csv");
    let ext_cfg = write_config(tmp.path(), "ext.json", &ext);
    let (a, b) = (tmp.path().join("ext"), tmp.path().join("builtin"));
    ok(&funsens("estimate", &ext_cfg, &a, &[]));
    ok(&funsens("estimate", &cfg, &b, &[]));
    assert_eq!(fs::read(a.join("indices.csv")).unwrap(), fs::read(b.join("indices.csv")).unwrap());
    let rep = report(&a.join("indices.csv"));
    for name in ["S1", "ST1", "S2", "ST2", "Seps", "STeps"] {
        assert!(rep.contains_key(name), "{name}");
    }
}

#[test]
fn shuffled_or_short_evaluations_are_a_manifest_mismatch() {
    let tmp = TempDir::new().unwrap();
    let design = tmp.path().join("design");
    let cfg = write_config(tmp.path(), "c.json", &macro_config(100));
    ok(&funsens("sample", &cfg, &design, &[]));
    let text = external_evaluations(&design);
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(3, 40);
    fs::write(design.join("evals.csv"), lines.join("\n") + "\n").unwrap();
    let mut ext = macro_config(100);
    ext["evaluations"] = json!("design/evals.csv");
    let ext_cfg = write_config(tmp.path(), "ext.json", &ext);
    let o = funsens("estimate", &ext_cfg, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("manifest mismatch") && err.contains("expected blocks A:100 B:100"), "{err}");

    let short: Vec<&str> = text.lines().take(450).collect();
    fs::write(design.join("evals.csv"), short.join("\n") + "\n").unwrap();
    let o = funsens("estimate", &ext_cfg, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("found A:100 B:100 C1:100 C2:100 C3:49"));
}

#[test]
fn constant_outputs_are_a_numerical_failure() {
    let tmp = TempDir::new().unwrap();
    let design = tmp.path().join("design");
    let cfg = write_config(tmp.path(), "c.json", &macro_config(100));
    ok(&funsens("sample", &cfg, &design, &[]));
    let mut text = String::from("block,row,y\n");
    for b in ["A", "B", "C1", "C2", "C3"] {
        for i in 0..100 {
            text.push_str(&format!("{b},{i},1.5\n"));
        }
    }
    fs::write(design.join("evals.csv"), text).unwrap();
    let mut ext = macro_config(100);
    ext["evaluations"] = json!("design/evals.csv");
    let o = funsens("estimate", &write_config(tmp.path(), "ext.json", &ext), &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let mut no_seed = macro_config(100);
    no_seed.as_object_mut().unwrap().remove("seed");
    let mut bad_version = macro_config(100);
    bad_version["schema_version"] = json!(9);
    let mut bad_method = macro_config(100);
    bad_method["method"] = json!("bogus");
    let mut bad_formula = macro_config(100);
    bad_formula["method"] = json!("joint_glm");
    bad_formula["n_learn"] = json!(100);
    bad_formula["formulas"] = json!({"mean": "Y ~ X1 +", "dispersion": "~ 1"});
    for (name, cfg, cmd) in [
        ("no_seed", no_seed.clone(), "sample"),
        ("version", bad_version, "sample"),
        ("method", bad_method, "estimate"),
        ("formula", bad_formula, "fit-joint"),
    ] {
        let o = funsens(cmd, &write_config(tmp.path(), &format!("{name}.json"), &cfg), &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = funsens("sample", &write_config(tmp.path(), "seeded.json", &no_seed), &out, &["--seed", "3"]);
    ok(&o);
}

#[test]
fn trigger_estimate_runs_in_process() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = macro_config(1000);
    cfg["method"] = json!("trigger");
    let out = tmp.path().join("o");
    ok(&funsens("estimate", &write_config(tmp.path(), "c.json", &cfg), &out, &[]));
    let rep = report(&out.join("indices.csv"));
    assert!(rep.contains_key("STxi"));
    assert_eq!(rep["S1"]["algo"], "saltelli_trigger");
}

fn joint_config(engine: &str, mean: &str, dispersion: &str, n_learn: usize) -> Value {
    json!({
        "schema_version": 1,
        "model": {"builtin": "wn_ishigami"},
        "method": engine,
        "formulas": {"mean": mean, "dispersion": dispersion},
        "n_learn": n_learn,
        "N": 10000,
        "mc_replicates": 5,
        "fresh": 100000,
        "seed": 0
    })
}

#[test]
fn joint_gam_end_to_end_matches_the_reference_bands() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = joint_config("joint_gam", "Y ~ X1 + s(X1) + s(X2)", "~ s(X1)", 500);
    ok(&funsens("fit-joint", &write_config(tmp.path(), "c.json", &cfg), &out, &[]));
    for f in [
        "learning.csv",
        "mean_summary.csv",
        "dispersion_summary.csv",
        "eql_trace.csv",
        "residuals.csv",
        "observed_predicted.csv",
        "qq.csv",
        "residual_smoother.csv",
        "fit.json",
        "indices.csv",
        "variance_audit.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rep = report(&out.join("indices.csv"));
    let s1 = value(&rep, "S1", "value");
    let s2 = value(&rep, "S2", "value");
    let st = value(&rep, "STeps", "value");
    assert!((0.50..=0.61).contains(&s1), "S1 {s1}");
    assert!((0.17..=0.29).contains(&s2), "S2 {s2}");
    assert!((0.15..=0.30).contains(&st), "STeps {st}");
    assert!((0.18..=0.32).contains(&value(&rep, "STeps_Q2", "value")));
    assert_eq!(rep["S2eps"]["method"], "Eq");
    assert_eq!(value(&rep, "S2eps", "value"), 0.0);
    assert_eq!(rep["ST2"]["value"], rep["S2"]["value"]);
    assert_eq!(value(&rep, "S1eps", "interval_hi"), st);
    assert_eq!(rep["S1eps"]["lo_open"], "true");
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["converged"], true);
    assert!(fit["mean_explained_deviance"].as_f64().unwrap() > 0.85);
}

#[test]
fn intercept_only_dispersion_deduces_seps_with_a_caveat() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let mut cfg = joint_config("joint_glm", "Y ~ X1 + I(X2^2) + I(X1^3) + I(X2^4)", "~ 1", 300);
    cfg["fresh"] = json!(20000);
    ok(&funsens("fit-joint", &write_config(tmp.path(), "c.json", &cfg), &out, &[]));
    let rep = report(&out.join("indices.csv"));
    assert_eq!(rep["Seps"]["value"], rep["STeps"]["value"]);
    assert_eq!(rep["Seps"]["method"], "Eq");
    assert!(!rep["Seps"]["caveat"].is_empty());
    assert_eq!(value(&rep, "S1eps", "value"), 0.0);
}

#[test]
fn fit_joint_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = joint_config("joint_gam", "Y ~ s(X1) + s(X2)", "~ s(X1)", 200);
    cfg["N"] = json!(1000);
    cfg["fresh"] = json!(5000);
    let path = write_config(tmp.path(), "c.json", &cfg);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&funsens("fit-joint", &path, &a, &[]));
    ok(&funsens("fit-joint", &path, &b, &[]));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn six_input_external_learning_csv_runs_without_a_builtin() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("X1,X2,X3,X4,X5,X6,Y\n");
    let mut state = 12345u64;
    let mut unit = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    for _ in 0..300 {
        let x: Vec<f64> = (0..6).map(|_| unit()).collect();
        let noise = (unit() - 0.5) * 3.0;
        let y = 3.0 * x[1] + 2.0 * x[2] * x[2] + x[4] + (0.2 + 2.0 * x[0]) * noise;
        let row: Vec<String> = x.iter().chain([y].iter()).map(|v| v.to_string()).collect();
        csv.push_str(&(row.join(",") + "\n"));
    }
    fs::write(tmp.path().join("meteor.csv"), csv).unwrap();
    let inputs: Vec<Value> = (1..=6)
        .map(|i| json!({"name": format!("X{i}"), "law": {"uniform": {"lo": 0.0, "hi": 1.0}}}))
        .collect();
    let cfg = json!({
        "schema_version": 1,
        "model": {"external": {"inputs": inputs}},
        "method": "joint_glm",
        "formulas": {"mean": "Y ~ X2 + I(X3^2) + X5", "dispersion": "~ X1"},
        "learning": "meteor.csv",
        "N": 2000,
        "mc_replicates": 3,
        "fresh": 20000,
        "seed": 1
    });
    let out = tmp.path().join("o");
    ok(&funsens("fit-joint", &write_config(tmp.path(), "c.json", &cfg), &out, &[]));
    let rep = report(&out.join("indices.csv"));
    assert_eq!(rep["S1eps"]["lo_open"], "true");
    assert_eq!(value(&rep, "S1eps", "interval_hi"), value(&rep, "STeps", "value"));
    for k in 2..=6 {
        assert_eq!(value(&rep, &format!("S{k}eps"), "value"), 0.0);
    }
    for k in [1, 4, 6] {
        assert_eq!(rep[&format!("S{k}")]["method"], "Eq");
    }
    assert!(!out.join("learning.csv").exists());
}

#[test]
fn external_fit_joint_needs_a_learning_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "model": {"external": {"inputs": [{"name": "X1", "law": {"normal": {"mean": 0.0, "sd": 1.0}}}]}},
        "method": "joint_glm",
        "formulas": {"mean": "Y ~ X1", "dispersion": "~ 1"},
        "n_learn": 100,
        "seed": 1
    });
    let o = funsens("fit-joint", &write_config(tmp.path(), "c.json", &cfg), &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

fn replicate_config(replicates: usize) -> Value {
    json!({
        "schema_version": 1,
        "model": {"builtin": "wn_ishigami"},
        "method": "joint_glm",
        "engines": [
            {"method": "joint_glm", "mean": "Y ~ X1 + I(X2^2) + I(X1^3) + I(X2^4)", "dispersion": "~ 1"},
            {"method": "joint_gam", "mean": "Y ~ X1 + s(X1) + s(X2)", "dispersion": "~ s(X1)"}
        ],
        "n_learn": [150, 200],
        "replicates": replicates,
        "N": 1000,
        "fresh": 5000,
        "seed": 3
    })
}

#[test]
fn replicate_writes_boxplots_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), "c.json", &replicate_config(4));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&funsens("replicate", &path, &a, &[]));
    ok(&funsens("replicate", &path, &b, &[]));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let (header, rows) = read_rows(&a.join("boxplot.csv"));
    assert_eq!(header, ["index", "q1", "median", "q3", "lo_whisker", "hi_whisker", "engine", "n_learn"]);
    for engine in ["glm", "gam"] {
        for n in ["150", "200"] {
            assert!(rows.iter().any(|r| r[0] == "S1" && r[6] == engine && r[7] == n), "{engine} {n}");
        }
    }
    assert!(a.join("replicates_n150.csv").exists() && a.join("replicates_n200.csv").exists());
}

#[test]
fn single_replicate_box_is_the_estimate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    ok(&funsens("replicate", &write_config(tmp.path(), "c.json", &replicate_config(1)), &out, &[]));
    let (_, rows) = read_rows(&out.join("boxplot.csv"));
    for r in rows {
        assert!(r[1] == r[2] && r[2] == r[3] && r[3] == r[4] && r[4] == r[5], "{r:?}");
    }
}
