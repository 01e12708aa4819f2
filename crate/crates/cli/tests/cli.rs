use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TREE: &str = include_str!("../../core/tests/data/cifar100.csv");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hierlearn"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: &str) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with(&format!("error[{code}]")), "{err}");
    err
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, per_class: &str) {
    ok(
        dir,
        &["synth", "--branching", "2", "--depth", "3", "--dim", "8", "--per-class", per_class, "--seed", "1", "--out", "syn"],
    );
}

fn train_args<'a>(model: &'a str, options: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", "syn/data.csv", "--hierarchy", "syn/hierarchy.csv", "--model", model, "--options", options,
        "--epochs", "3", "--embed-dim", "4", "--lr", "1e-2", "--out", out,
    ]
}

#[test]
fn synth_writes_loadable_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--branching", "2", "--depth", "3", "--dim", "32", "--per-class", "100", "--seed", "0", "--out", "s"]);
    let data = fs::read_to_string(d.join("s/data.csv")).unwrap();
    assert_eq!(data.lines().count(), 801);
    assert!(data.starts_with("id,class,f0,"));
    let tree = hierlearn::HierarchyTree::parse(fs::File::open(d.join("s/hierarchy.csv")).unwrap()).unwrap();
    assert_eq!(tree.num_classes(), 8);
    hierlearn::Dataset::load(data.as_bytes(), &tree).unwrap();
    let man = json(&d.join("s/manifest.json"));
    assert_eq!(man["command"], "synth");
    assert_eq!(man["seed"], 0);
    assert_eq!(man["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn distances_on_the_reference_tree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tree.csv"), TREE).unwrap();
    ok(d, &["distances", "--hierarchy", "tree.csv", "--out", "m"]);
    let text = fs::read(d.join("m/d_h.csv")).unwrap();
    let m = hierlearn::ClassDistanceMatrix::read_csv(text.as_slice()).unwrap();
    let idx = |c: &str| m.labels.iter().position(|l| l == c).unwrap();
    assert_eq!(m.values[[idx("tiger"), idx("shark")]], 6.0);
    for name in ["d_t.csv", "s_h.csv"] {
        let back = hierlearn::ClassDistanceMatrix::read_csv(fs::read(d.join("m").join(name)).unwrap().as_slice()).unwrap();
        assert_eq!(back.len(), 100);
    }
    let man = json(&d.join("m/manifest.json"));
    assert_eq!(man["inputs"][0]["path"], "tree.csv");
    assert_eq!(man["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn malformed_hierarchies_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "id,parent\n").unwrap();
    fails_with(d, &["distances", "--hierarchy", "empty.csv", "--out", "m"], "EmptyHierarchy");
    fs::write(d.join("bad.csv"), "id,parent\nroot,\na,root\nb,nowhere\n").unwrap();
    fails_with(d, &["distances", "--hierarchy", "bad.csv", "--out", "m"], "OrphanNode");
    fails_with(d, &["distances", "--hierarchy", "missing.csv", "--out", "m"], "Io");
}

#[test]
fn mds_defaults_and_degenerate_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "5");
    ok(d, &["mds", "--hierarchy", "syn/hierarchy.csv", "--out", "a"]);
    ok(d, &["mds", "--hierarchy", "syn/hierarchy.csv", "--out", "b"]);
    assert_eq!(fs::read(d.join("a/proxies.csv")).unwrap(), fs::read(d.join("b/proxies.csv")).unwrap());
    let stress = fs::read_to_string(d.join("a/stress.csv")).unwrap();
    assert_eq!(stress.lines().count(), 1 + 1001);
    let out = ok(d, &["mds", "--hierarchy", "syn/hierarchy.csv", "--dim", "1", "--out", "c"]);
    assert!(out.contains("stress"));
}

#[test]
fn train_conflicts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "10");
    let err = fails_with(d, &train_args("corr", "standard", "x"), "ConfigConflict");
    assert!(err.contains("mds"));
    assert!(!d.join("x").exists());
    fails_with(d, &train_args("proxydr", "ema,mds", "x"), "ConfigConflict");
    fails_with(d, &train_args("softmax", "dynamic", "x"), "ConfigConflict");

    ok(d, &train_args("proxydr", "dynamic", "r1"));
    ok(d, &train_args("proxydr", "dynamic", "r2"));
    for f in ["checkpoint.json", "trace.jsonl"] {
        assert_eq!(fs::read(d.join("r1").join(f)).unwrap(), fs::read(d.join("r2").join(f)).unwrap());
    }
    let trace = fs::read_to_string(d.join("r1/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    ok(d, &train_args("corr", "mds", "r3"));
    fails_with(d, &train_args("corr", "mds,dynamic", "x"), "ConfigConflict");
}

#[test]
fn eval_report_and_living_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "20");
    ok(d, &train_args("normface", "standard", "run"));
    let base = [
        "eval", "--checkpoint", "run/checkpoint.json", "--data", "syn/data.csv", "--hierarchy", "syn/hierarchy.csv",
    ];
    let mut args = base.to_vec();
    args.extend(["--report", "out/report.json"]);
    ok(d, &args);
    let rep = json(&d.join("out/report.json"));
    for field in [
        "top1", "top5", "mean_corr_proxy", "mean_corr_prototype", "ahd_k1", "ahd_k5", "hp_at_5", "hs_at_50", "hs_at_250",
        "ahs_at_250",
    ] {
        assert!(rep.get(field).is_some(), "{field}");
    }
    assert_eq!(rep["metadata"]["split"], "test");
    assert!(rep["mean_corr_proxy_living"].is_null());
    assert!(d.join("out/report.json.manifest.json").exists());

    fs::write(d.join("living.txt"), "# living\nclass_0\nclass_1\nclass_2\nclass_3\n").unwrap();
    let mut args = base.to_vec();
    args.extend(["--report", "out/living.json", "--living-classes", "living.txt"]);
    ok(d, &args);
    let rep = json(&d.join("out/living.json"));
    assert_eq!(rep["metadata"]["living_class_count"], 4);
    assert!(rep["mean_corr_proxy_living"].is_f64());

    fs::write(d.join("bad.txt"), "class_0\nunicorn\n").unwrap();
    let mut args = base.to_vec();
    args.extend(["--report", "out/bad.json", "--living-classes", "bad.txt"]);
    fails_with(d, &args, "UnknownClass");
}

#[test]
fn eval_on_the_training_split_of_a_fitted_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth", "--branching", "2", "--depth", "2", "--dim", "8", "--per-class", "20", "--noise", "0.05", "--sigmas",
            "4,2", "--out", "syn",
        ],
    );
    let mut args = train_args("proxydr", "standard", "run");
    args[10] = "20";
    ok(d, &args);
    ok(
        d,
        &[
            "eval", "--checkpoint", "run/checkpoint.json", "--data", "syn/data.csv", "--hierarchy", "syn/hierarchy.csv",
            "--report", "train.json", "--split", "train",
        ],
    );
    let rep = json(&d.join("train.json"));
    assert_eq!(rep["top1"], 1.0);
    assert_eq!(rep["metadata"]["split"], "train");
}

#[test]
fn eval_rejects_a_foreign_hierarchy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "10");
    ok(d, &train_args("proxydr", "standard", "run"));
    ok(d, &["synth", "--branching", "3", "--depth", "2", "--dim", "8", "--per-class", "10", "--out", "other"]);
    let out = run(
        d,
        &[
            "eval", "--checkpoint", "run/checkpoint.json", "--data", "other/data.csv", "--hierarchy",
            "other/hierarchy.csv", "--report", "r.json",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}

#[test]
fn thread_cap_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "40");
    ok(d, &train_args("proxydr", "standard", "run"));
    let eval = |threads: &str, report: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_hierlearn"))
            .args([
                "eval", "--checkpoint", "run/checkpoint.json", "--data", "syn/data.csv", "--hierarchy", "syn/hierarchy.csv",
                "--report", report,
            ])
            .env("HIERLEARN_THREADS", threads)
            .current_dir(d)
            .output()
            .unwrap();
        (out.status.success(), String::from_utf8_lossy(&out.stderr).to_string())
    };
    assert!(eval("1", "a.json").0);
    assert!(eval("4", "b.json").0);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    let (success, err) = eval("zero", "c.json");
    assert!(!success);
    assert!(err.starts_with("error[InvalidArgument]"));
}

fn write_report(path: &Path, hash: &str, head: &str, seed: u64, top1: f64) {
    let rep = serde_json::json!({
        "top1": top1, "top5": null, "mean_corr_proxy": 0.5, "mean_corr_prototype": 0.4,
        "mean_corr_proxy_living": null, "mean_corr_prototype_living": null,
        "ahd_k1": 1.0, "ahd_k5": null, "hp_at_5": null, "hs_at_50": null, "hs_at_250": null, "ahs_at_250": null,
        "metadata": {
            "seed": seed, "config_hash": hash, "class_count": 8, "head": head, "options": "standard",
            "num_samples": 10, "split": "test", "correlation_diagonal_excluded": true,
            "retrieval_excludes_query": true, "proxies_normalized_post_hoc": false,
            "living_class_count": null, "undefined": []
        }
    });
    fs::write(path, serde_json::to_string_pretty(&rep).unwrap()).unwrap();
}

#[test]
fn aggregate_confidence_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("r")).unwrap();
    for (i, v) in [1.0, 2.0, 3.0, 4.0, 5.0].into_iter().enumerate() {
        write_report(&d.join(format!("r/a{i}.json")), "aaaa", "proxydr", i as u64, v);
        write_report(&d.join(format!("r/b{i}.json")), "bbbb", "normface", i as u64, 0.25);
    }
    write_report(&d.join("r/c0.json"), "cccc", "corr", 0, 0.5);
    ok(d, &["aggregate", "--reports", "r/*.json", "--out", "agg.json"]);
    let agg = json(&d.join("agg.json"));
    let groups = agg["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    let top1 = &groups[0]["metrics"]["top1"];
    assert_eq!(top1["mean"], 3.0);
    let want = 1.96 * 2.5f64.sqrt() / 5f64.sqrt();
    assert!((top1["half_width"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(groups[1]["metrics"]["top1"]["half_width"], 0.0);
    assert_eq!(groups[2]["metrics"]["top1"]["mean"], 0.5);
    assert!(groups[2]["metrics"]["top1"]["half_width"].is_null());
    assert_eq!(groups[2]["metrics"]["top1"]["ci_defined"], false);
    assert!(groups[0]["metrics"]["top5"]["mean"].is_null());
    assert!(agg["ci_method"].as_str().unwrap().contains("normal"));
    let csv = fs::read_to_string(d.join("agg.csv")).unwrap();
    assert!(csv.starts_with("config_hash,"));

    write_report(&d.join("r/a9.json"), "aaaa", "normface", 9, 1.0);
    fails_with(d, &["aggregate", "--reports", "r/*.json", "--out", "agg2.json"], "MixedConfigs");
    fails_with(d, &["aggregate", "--reports", "nothing/*.json", "--out", "agg3.json"], "NoReports");
}
