use std::path::Path;
use std::process::{Command, Output};

fn lglab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lglab"));
    cmd.args(args);
    for var in ["LGLAB_CONFIG", "LGLAB_SEED", "LGLAB_OUT", "LGLAB_THREADS", "LGLAB_PRECISION", "LGLAB_DETERMINISTIC"] {
        cmd.env_remove(var);
    }
    cmd.envs(envs.iter().copied());
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lglab(args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_small(out: &Path, seed: &str) {
    ok(&[
        "--out", p(out), "--seed", seed, "--deterministic", "gen", "--task", "sort", "--count", "300",
        "--values", "1-20", "--head-lengths", "2-5", "--tail-lengths", "6-8", "--context", "20",
    ]);
}

#[test]
fn gen_is_byte_identical_and_records_the_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen_small(&a, "7");
    gen_small(&b, "7");
    assert_eq!(std::fs::read(a.join("sort.jsonl")).unwrap(), std::fs::read(b.join("sort.jsonl")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("gen.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["generator"]["lengths"]["head"], serde_json::json!([2, 5]));
    assert_eq!(manifest["config"]["generator"]["lengths"]["head_mass"], 0.8);
    assert_eq!(manifest["artifacts"][0]["path"], "sort.jsonl");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lglab(&["--out", p(dir.path()), "gen", "--task", "bogus"], &[]).status.code(), Some(2));
    assert_eq!(lglab(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(lglab(&["--out", p(dir.path()), "verify-construction"], &[]).status.code(), Some(2));
    let missing = dir.path().join("none.lgck");
    let out = lglab(&["--out", p(dir.path()), "eval", "--checkpoint", p(&missing)], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_layers_file_then_environment_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[gen]\ntask = \"sort\"\ncount = 50\n").unwrap();
    let seed_of = |out: &Path, extra: &[&str], envs: &[(&str, &str)]| -> u64 {
        let mut args = vec!["--config", p(&cfg), "--out", p(out)];
        args.extend_from_slice(extra);
        args.push("gen");
        let o = lglab(&args, envs);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("gen.manifest.json")).unwrap()).unwrap();
        assert_eq!(m["config"]["generator"]["count"], 50);
        m["run"]["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&dir.path().join("f"), &[], &[]), 11);
    assert_eq!(seed_of(&dir.path().join("e"), &[], &[("LGLAB_SEED", "12")]), 12);
    assert_eq!(seed_of(&dir.path().join("g"), &["--seed", "13"], &[("LGLAB_SEED", "12")]), 13);
}

#[test]
fn train_resume_replays_and_eval_echoes_suites() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "3");
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "--out", p(out), "--seed", "5", "--deterministic", "train", "--data", "DATA", "--steps", "24",
            "--batch", "4", "--d", "16", "--d-mlp", "32", "--hint", "successor", "--softmax", "tempered",
        ];
        let d = data.join("sort.jsonl");
        args[7] = p(&d);
        args.extend_from_slice(extra);
        ok(&args);
    };
    let (full, half) = (dir.path().join("full"), dir.path().join("half"));
    train(&full, &[]);
    train(&half, &["--until", "10"]);
    let ck = half.join("checkpoint.lgck");
    train(&half, &["--resume", p(&ck)]);
    for f in ["checkpoint.lgck", "metrics.csv"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(half.join(f)).unwrap(), "{f}");
    }
    let metrics = std::fs::read_to_string(full.join("metrics.csv")).unwrap();
    assert!(metrics.lines().nth(2).unwrap().starts_with("2,aux,"));

    let ck = full.join("checkpoint.lgck");
    let csv = ok(&["--out", p(&full), "eval", "--checkpoint", p(&ck), "--lengths", "4,rep(6,2)", "--count", "5", "--values", "1-20"]);
    let tags: Vec<&str> = csv.lines().skip(4).map(|l| l.rsplitn(4, ',').last().unwrap()).collect();
    assert_eq!(tags, ["4", "\"rep(6,2)\""]);
}

#[test]
fn probe_on_the_construction() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--out", p(dir.path()), "probe", "--construction", "20", "--lengths", "4,7", "--count", "10"]);
    assert!(out.contains("min_finding_accuracy 1.000000"));
    assert!(out.contains("identity_successor_accuracy 1.000000"));
    let csv = std::fs::read_to_string(dir.path().join("projections.csv")).unwrap();
    assert!(csv.starts_with("position,depth,stage,basis,symbol,value\n"));
    // Example 0 has length 4: 8 positions × 2 depths × 2 stages × 2 bases.
    assert_eq!(csv.lines().count(), 1 + 8 * 8 * 103);
    assert!(!dir.path().join("svg").exists());
    ok(&["--out", p(dir.path()), "probe", "--construction", "20", "--depths", "0", "--stages", "pre", "--svg"]);
    assert_eq!(std::fs::read_dir(dir.path().join("svg")).unwrap().count(), 10 * 2);
}

#[test]
fn verify_construction_small_alphabet() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--out", p(dir.path()), "verify-construction", "--q", "10", "--exhaustive-upto", "4", "--eps-sweep"]);
    assert!(out.ends_with("PASS\n"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["suites"].as_array().unwrap().len(), 3);
    assert_eq!(report["pass"], true);
}
