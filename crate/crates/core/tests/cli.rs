use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mpchorizon::cli::{run, ErrorRecord, Manifest, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE};
use mpchorizon::export::sha256_hex;
use mpchorizon::trainer::Dataset;
use serde_json::{json, Value};
use tempfile::TempDir;

fn write_config(dir: &Path, name: &str, body: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn invoke(cmd: &[&str], config: &Path, out: &Path) -> i32 {
    let mut args = vec!["mpchorizon"];
    args.extend_from_slice(cmd);
    let config = config.to_str().unwrap();
    let out = out.to_str().unwrap();
    args.extend_from_slice(&["--config", config, "--out", out]);
    run(args)
}

fn manifest(out: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty() && !l.contains('='))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn linear_training(seed: u64) -> Value {
    json!({
        "schema": "mpchorizon-config/1",
        "seed": seed,
        "network": {"kind": "res_linear", "width": 4, "depth": 4},
        "dataset": {"kind": "linear", "n": 4, "samples": 200},
        "train": {"learning_rate": 0.03, "batch_size": 20, "epochs": 3}
    })
}

#[test]
fn gen_data_manifest_hash_matches_reloaded_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        json!({"schema": "mpchorizon-config/1", "seed": 4, "dataset": {"kind": "linear", "n": 3, "samples": 40}}),
    );
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["gen-data"], &cfg, &out), EXIT_OK);
    let bytes = fs::read(out.join("dataset.json")).unwrap();
    let m = manifest(&out);
    assert_eq!(m.files["dataset.json"], sha256_hex(&bytes));
    assert_eq!(m.status, "ok");
    let text = String::from_utf8(bytes).unwrap();
    let data = Dataset::from_json(&text).unwrap();
    assert_eq!(data.len(), 40);
    assert_eq!(data.to_json().unwrap(), text);
}

#[test]
fn training_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", linear_training(9));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(invoke(&["train"], &cfg, &a), EXIT_OK);
    assert_eq!(invoke(&["train"], &cfg, &b), EXIT_OK);
    for f in ["train.csv", "run.json", "network.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }

    let other = write_config(tmp.path(), "d.json", linear_training(10));
    let c = tmp.path().join("c");
    assert_eq!(invoke(&["train"], &other, &c), EXIT_OK);
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(c.join("train.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", linear_training(1));
    let same = write_config(tmp.path(), "s.json", linear_training(2));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(invoke(&["train", "--seed", "2"], &cfg, &a), EXIT_OK);
    assert_eq!(invoke(&["train"], &same, &b), EXIT_OK);
    assert_eq!(fs::read(a.join("train.csv")).unwrap(), fs::read(b.join("train.csv")).unwrap());
    assert_eq!(manifest(&a).seed, 2);
}

#[test]
fn sweep_on_five_block_stack() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        json!({
            "schema": "mpchorizon-config/1",
            "seed": 3,
            "network": {"kind": "mlp_residual_stack", "width": 3, "depth": 5, "weight_std": 0.5},
            "dataset": {"kind": "linear", "n": 3, "samples": 64},
            "sweep": {"horizons": [1, 3, 5], "batches": 2, "batch_size": 16}
        }),
    );
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["sweep-gradients"], &cfg, &out), EXIT_OK);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    let hs: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(hs, ["1", "3", "5"]);
    let cos5: f64 = rows[2][2].parse().unwrap();
    assert!((cos5 - 1.0).abs() < 1e-12);
    for r in &rows {
        let cos: f64 = r[2].parse().unwrap();
        let one_minus: f64 = r[3].parse().unwrap();
        assert!((-1.0..=1.0).contains(&cos));
        assert_eq!(one_minus, 1.0 - cos);
    }
}

#[test]
fn sweep_with_checkpoints_trains_between_measurements() {
    let tmp = TempDir::new().unwrap();
    let mut body = linear_training(5);
    body["sweep"] = json!({"horizons": [1, 4], "batches": 2, "batch_size": 10, "checkpoints": [0, 2]});
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["sweep-gradients"], &cfg, &out), EXIT_OK);
    let rows = csv_rows(&out.join("sweep.csv"));
    let epochs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(epochs, ["0", "0", "2", "2"]);
    assert_eq!(csv_rows(&out.join("train.csv")).len(), 3);
}

fn planted_selection(objective: Value, cost: Value) -> Value {
    json!({
        "schema": "mpchorizon-config/1",
        "seed": 0,
        "selection": {
            "profile": {"kind": "planted", "depth": 20, "k": 0.9, "a": 1.0, "b": 5.0},
            "objective": objective,
            "cost": cost
        }
    })
}

#[test]
fn select_matches_brute_force_flag() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        (json!({"kind": "weighted", "lambda": 0.05}), json!({"kind": "linear", "unit_cost": 1.0, "node_memory": 10.0})),
        (json!({"kind": "weighted", "lambda": 0.02}), json!({"kind": "ladder", "unit_cost": 1.0, "node_memory": 8.0})),
        (json!({"kind": "accuracy_constraint", "epsilon": 0.1}), json!({"kind": "linear", "unit_cost": 1.0, "node_memory": 10.0})),
        (json!({"kind": "accuracy_constraint", "epsilon": 0.1}), json!({"kind": "ladder", "unit_cost": 2.0, "node_memory": 6.0})),
    ];
    for (i, (obj, cost)) in cases.into_iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.json"), planted_selection(obj, cost));
        let (scan, brute) = (tmp.path().join(format!("s{i}")), tmp.path().join(format!("b{i}")));
        assert_eq!(invoke(&["select-horizon"], &cfg, &scan), EXIT_OK);
        assert_eq!(invoke(&["select-horizon", "--brute-force"], &cfg, &brute), EXIT_OK);
        let read = |d: &Path| -> Value { serde_json::from_str(&fs::read_to_string(d.join("selection.json")).unwrap()).unwrap() };
        let (s, b) = (read(&scan), read(&brute));
        assert_eq!(s["selected_horizon"], b["selected_horizon"], "case {i}");
        assert_eq!(s["objective_value"], b["objective_value"], "case {i}");
        assert_eq!(b["brute_force"], json!(true));
        assert_eq!(csv_rows(&scan.join("profile.csv")).len(), 20);
    }
}

#[test]
fn profile_memory_static_and_eager() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        json!({
            "schema": "mpchorizon-config/1",
            "seed": 0,
            "memory": {"fixed_overhead": 0.0, "uniform_units": 1.0, "depth": 4, "loco_stages": [2]}
        }),
    );
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["profile-memory", "--mode", "static"], &cfg, &out), EXIT_OK);
    let rows = csv_rows(&out.join("memory.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1][0], "static");
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 7.0);
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), 6.0);
    assert!(out.join("memory_loco.csv").exists());

    let eager = tmp.path().join("eager");
    assert_eq!(invoke(&["profile-memory", "--mode", "eager"], &cfg, &eager), EXIT_OK);
    for r in csv_rows(&eager.join("memory.csv")) {
        assert!(r[5].parse::<f64>().unwrap().abs() <= 1e-9);
    }
}

#[test]
fn evaluate_pins_best_algorithm_at_zero() {
    let tmp = TempDir::new().unwrap();
    let mut body = linear_training(2);
    body["evaluate"] = json!({
        "algorithms": [{"kind": "mpc", "horizon": 1}, {"kind": "mpc", "horizon": 2}, {"kind": "loco", "stages": 2}],
        "objective": {"kind": "weighted", "lambda": 0.01},
        "cost": {"kind": "linear", "unit_cost": 1.0, "node_memory": 4.0},
        "fixed_overhead": 1.0
    });
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["evaluate"], &cfg, &out), EXIT_OK);
    let rows = csv_rows(&out.join("evaluate.csv"));
    assert_eq!(rows.len(), 4);
    let rel: Vec<f64> = rows.iter().map(|r| r[8].parse().unwrap()).collect();
    let obj: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    let best = (0..rows.len()).min_by(|&a, &b| obj[a].total_cmp(&obj[b])).unwrap();
    let worst = (0..rows.len()).max_by(|&a, &b| obj[a].total_cmp(&obj[b])).unwrap();
    assert_eq!(rel[best], 0.0);
    assert_eq!(rel[worst], 1.0);
    assert!(rel.iter().all(|r| (0.0..=1.0).contains(r)));
    let bp = rows.iter().find(|r| r[0] == "mpc-h4").unwrap();
    assert_eq!(bp[3].parse::<f64>().unwrap(), 1.0);
    for label in ["mpc-h1", "mpc-h2", "mpc-h4", "loco-2"] {
        assert!(out.join(format!("train_{label}.csv")).exists());
    }
}

#[test]
fn verify_theory_small_configuration() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        json!({
            "schema": "mpchorizon-config/1",
            "seed": 1,
            "theory": {"n": 4, "depth": 30, "seeds": 2, "lemma_chains": 2, "lemma_depth": 16, "lemma_samples": 10}
        }),
    );
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["verify-theory"], &cfg, &out), EXIT_OK);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("theory.json")).unwrap()).unwrap();
    assert_eq!(summary["lemma_violations"], json!(0));
    assert_eq!(csv_rows(&out.join("scaling.csv")).len(), 6);
    assert_eq!(csv_rows(&out.join("lemma.csv")).len(), 2);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut body = linear_training(0);
    body["train"]["momentum"] = json!(0.9);
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["train"], &cfg, &out), EXIT_USAGE);
    let rec: ErrorRecord = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec.kind, "config");
    assert_eq!(rec.command.as_deref(), Some("train"));
    assert!(rec.message.contains("momentum"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn wrong_schema_and_missing_section_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut body = linear_training(0);
    body["schema"] = json!("mpchorizon-config/0");
    let cfg = write_config(tmp.path(), "c.json", body);
    assert_eq!(invoke(&["train"], &cfg, &tmp.path().join("a")), EXIT_USAGE);

    let cfg = write_config(tmp.path(), "d.json", json!({"schema": "mpchorizon-config/1", "seed": 0}));
    assert_eq!(invoke(&["train"], &cfg, &tmp.path().join("b")), EXIT_USAGE);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(["mpchorizon", "fly", "--out", "x"]), EXIT_USAGE);
    assert_eq!(run(["mpchorizon", "train"]), EXIT_USAGE);
}

#[test]
fn divergence_exits_with_dedicated_code() {
    let tmp = TempDir::new().unwrap();
    let mut body = linear_training(0);
    body["train"]["learning_rate"] = json!(1.0e6);
    let cfg = write_config(tmp.path(), "c.json", body);
    let out = tmp.path().join("out");
    assert_eq!(invoke(&["train"], &cfg, &out), EXIT_DIVERGED);
    let rec: ErrorRecord = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec.kind, "diverged");
    assert_eq!(manifest(&out).status, "diverged");
    assert!(!out.join("network.json").exists());

    // a later successful run in the same directory clears the stale error record
    let ok = write_config(tmp.path(), "ok.json", linear_training(0));
    assert_eq!(invoke(&["train"], &ok, &out), EXIT_OK);
    assert!(!out.join("error.json").exists());
}

#[test]
fn relative_paths_resolve_against_config_directory() {
    let tmp = TempDir::new().unwrap();
    let gen = write_config(
        tmp.path(),
        "gen.json",
        json!({"schema": "mpchorizon-config/1", "seed": 4, "dataset": {"kind": "linear", "n": 4, "samples": 60}}),
    );
    let data_dir = tmp.path().join("data");
    assert_eq!(invoke(&["gen-data"], &gen, &data_dir), EXIT_OK);
    let mut body = linear_training(1);
    body["dataset"] = json!({"kind": "file", "path": "data/dataset.json"});
    let cfg = write_config(tmp.path(), "t.json", body);
    let elsewhere = TempDir::new().unwrap();
    assert_eq!(invoke(&["train"], &cfg, &elsewhere.path().join("out")), EXIT_OK);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_mpchorizon");
    let status = Command::new(exe).arg("--help").status().unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    let output = Command::new(exe).args(["nonsense"]).output().unwrap();
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    let stderr = String::from_utf8_lossy(&output.stderr);
    let last = stderr.lines().last().unwrap();
    let rec: ErrorRecord = serde_json::from_str(last).unwrap();
    assert_eq!(rec.kind, "usage");
}
