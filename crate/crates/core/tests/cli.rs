use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pocketgfn::app::Checkpoint;
use pocketgfn::autodiff::ParamStore;
use pocketgfn::ligand::FragmentLibrary;
use pocketgfn::policy::PolicyNet;
use serde_json::{json, Value};
use tempfile::TempDir;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data");

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pocketgfn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn base_config() -> Value {
    json!({
        "pockets": [format!("{DATA}/pockets/compact.jsonl"), format!("{DATA}/pockets/wide.jsonl")],
        "library": format!("{DATA}/toy_library.json"),
        "model": {
            "mode": "baseline", "width": 8, "heads": 2, "layers": 1, "fragment_embedding": 4,
            "head_hidden": 8, "log_z_hidden": 8,
            "pocket": { "width": 8, "vector_channels": 2, "layers": 1 },
            "trioformer": { "width": 8, "pair_width": 4, "heads": 2, "head_dim": 4, "layers": 1 }
        },
        "trainer": { "steps": 20, "batch_size": 4, "max_nodes": 2, "seed": 0 },
        "evaluation": { "molecules_per_pocket": 2, "top_k": 2 }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &Path, cfg: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(out);
    let mut args = vec!["train", "--config", s(cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn missing_pocket_is_a_config_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["pockets"] = json!([format!("{DATA}/pockets/nowhere.jsonl")]);
    let c = write_config(dir.path(), &cfg);
    let o = run(&["train", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.jsonl"), "{}", stderr(&o));
}

#[test]
fn invalid_field_is_named() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["trainer"]["batch_size"] = json!(0);
    let c = write_config(dir.path(), &cfg);
    let o = run(&["train", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("batch_size"), "{}", stderr(&o));

    let o = run(&["train", "--config", s(&c), "--weights", "0.5,0.6,0.1"]);
    assert_eq!(code(&o), 2);
    let o = run(&["train", "--config", s(&dir.path().join("absent.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &base_config());
    let out = train(dir.path(), &c, "run", &["--steps", "0", "--seed", "5"]);
    let ck = Checkpoint::load(out.join("checkpoint.json")).unwrap();
    let mut fresh = ParamStore::new(5);
    PolicyNet::new(&mut fresh, &FragmentLibrary::toy(), ck.meta.model.clone()).unwrap();
    assert_eq!(ck.params, fresh.to_map());
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap(), "");
}

#[test]
fn training_and_sampling_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &base_config());
    let a = train(dir.path(), &c, "a", &["--seed", "3"]);
    let b = train(dir.path(), &c, "b", &["--seed", "3"]);
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(a.join("metrics.jsonl")), read(b.join("metrics.jsonl")));
    assert_eq!(read(a.join("checkpoint.json")), read(b.join("checkpoint.json")));
    let lines = std::fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["step", "loss", "mean_reward", "log_Z_mean"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let ck = a.join("checkpoint.json");
    let sample = |name: &str, n: &str| {
        let out = dir.path().join(name);
        let o = run(&["sample", "--config", s(&c), "--checkpoint", s(&ck), "--n", n, "--seed", "9", "--out", s(&out)]);
        (code(&o), out)
    };
    let (c1, m1) = sample("m1.jsonl", "2");
    let (c2, m2) = sample("m2.jsonl", "2");
    assert!(c1 == 0 || c1 == 3);
    assert_eq!(c1, c2);
    assert_eq!(read(m1.clone()), read(m2));

    let text = std::fs::read_to_string(&m1).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(seen.insert((v["pocket"].to_string(), v["canonical"].to_string())), "duplicate {line}");
    }

    let (c3, one) = sample("one.jsonl", "1");
    assert_eq!(c3, 0);
    let per_pocket = std::fs::read_to_string(one).unwrap().lines().count();
    assert_eq!(per_pocket, 2);
}

#[test]
fn partial_sampling_exits_three() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &base_config());
    let run_dir = train(dir.path(), &c, "run", &["--steps", "0"]);
    // The toy library has only five terminal states.
    let out = dir.path().join("m.jsonl");
    let o = run(&["sample", "--config", s(&c), "--checkpoint", s(&run_dir.join("checkpoint.json")), "--n", "6", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(std::fs::read_to_string(out).unwrap().lines().count() <= 10);
}

#[test]
fn mode_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &base_config());
    let run_dir = train(dir.path(), &c, "run", &["--steps", "0"]);
    let o = run(&[
        "sample", "--config", s(&c), "--checkpoint", s(&run_dir.join("checkpoint.json")),
        "--mode", "trioformer", "--out", s(&dir.path().join("m.jsonl")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn corrupted_checkpoint_exits_two() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &base_config());
    let run_dir = train(dir.path(), &c, "run", &["--steps", "2"]);
    let ck = run_dir.join("checkpoint.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    let params = v["params"].as_object_mut().unwrap();
    let (_, t) = params.iter_mut().next().unwrap();
    let x = t["data"][0].as_f64().unwrap();
    t["data"][0] = json!(x + 1e-3);
    std::fs::write(&ck, serde_json::to_string(&v).unwrap()).unwrap();
    let o = run(&["sample", "--config", s(&c), "--checkpoint", s(&ck), "--out", s(&dir.path().join("m.jsonl"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    std::fs::write(&ck, "{ not json").unwrap();
    let o = run(&["sample", "--config", s(&c), "--checkpoint", s(&ck), "--out", s(&dir.path().join("m.jsonl"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluate_reports_bad_lines_and_round_trips_scores() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &base_config());
    let run_dir = train(dir.path(), &c, "run", &["--steps", "5"]);
    let ck = run_dir.join("checkpoint.json");
    let mut files = Vec::new();
    for k in 0..3 {
        let out = dir.path().join(format!("set{k}.jsonl"));
        let seed = k.to_string();
        let o = run(&["sample", "--config", s(&c), "--checkpoint", s(&ck), "--seed", &seed, "--out", s(&out)]);
        assert!(code(&o) == 0 || code(&o) == 3, "{}", stderr(&o));
        files.push(out);
    }
    let report_path = dir.path().join("report.json");
    let mut args = vec!["evaluate", "--config", s(&c), "--out", s(&report_path), "--molecules"];
    args.extend(files.iter().map(|p| s(p)));
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("baseline"), "{stdout}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["sets"], json!(3));

    // Tampering with a stored score is caught by the recomputation.
    let text = std::fs::read_to_string(&files[0]).unwrap();
    let mut v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    v["ds"] = json!(v["ds"].as_f64().unwrap() - 1.0);
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, serde_json::to_string(&v).unwrap() + "\n").unwrap();
    let o = run(&["evaluate", "--config", s(&c), "--molecules", s(&tampered)]);
    assert_ne!(code(&o), 0);

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, format!("{}\n{{ truncated\n", text.lines().next().unwrap())).unwrap();
    let o = run(&["evaluate", "--config", s(&c), "--molecules", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.jsonl:2"), "{}", stderr(&o));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "sample", "evaluate", "selfcheck"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
    }
}
