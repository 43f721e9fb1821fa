use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use spatial_qa::datagen::{load_split, save_split, BioTag};
use spatial_qa::geo::load_catalog;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatial-qa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl World {
    /// Path inside the shared world; leaked so argument arrays can borrow it freely.
    fn p(&self, name: &str) -> &'static str {
        Box::leak(self.root.join(name).to_str().unwrap().to_owned().into_boxed_str())
    }
}

/// A small catalog, a dataset and a tiny trained spnet shared by every test.
fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let w = World { _dir: dir, root };
        ok(&["gen-catalog", "--out", w.p("cat.jsonl"), "--cities", "4", "--min-size", "40", "--max-size", "300", "--seed", "3"]);
        ok(&[
            "gen-data", "--catalog", w.p("cat.jsonl"), "--out-dir", w.p("data"),
            "--sizes", "200,40,40", "--negatives", "40", "--seed", "4",
        ]);
        fs::write(
            w.p("tiny.json"),
            r#"{"spatial": {"emb_dim": 6, "gru_hidden": 4, "drl_dims": [6, 1]}}"#,
        )
        .unwrap();
        ok(&[
            "--config", w.p("tiny.json"), "train", "--model", "spnet", "--data", w.p("data"),
            "--catalog", w.p("cat.jsonl"), "--out", w.p("spnet.ckpt"), "--epochs", "1", "--dev-limit", "20",
        ]);
        w
    })
}

#[test]
fn exit_codes() {
    let w = world();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["gen-catalog", "--out", w.p("x.jsonl"), "--cities", "0"]), 2);
    assert_eq!(code(&["gen-data", "--catalog", w.p("cat.jsonl"), "--out-dir", w.p("x"), "--sizes", "1,2"]), 2);
    assert_eq!(code(&["gen-data", "--catalog", w.p("cat.jsonl"), "--out-dir", w.p("x"), "--hard-frac", "2"]), 2);
    assert_eq!(code(&["gen-data", "--catalog", w.p("missing.jsonl"), "--out-dir", w.p("x")]), 1);
    let train = |extra: &[&str]| {
        let mut a = vec!["train", "--model", "spnet", "--data", w.p("data"), "--catalog", w.p("cat.jsonl"), "--out", w.p("never.ckpt")];
        a.extend_from_slice(extra);
        code(&a)
    };
    assert_eq!(train(&["--margin", "0"]), 2);
    assert_eq!(train(&["--init", w.p("spnet.ckpt")]), 2);
    assert_eq!(train(&["--dev-limit", "some"]), 2);
    assert_eq!(code(&["train", "--model", "lstm", "--data", "d", "--catalog", "c", "--out", "o"]), 2);
    fs::write(w.p("bad.json"), r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(code(&["--config", w.p("bad.json"), "grad-check"]), 2);
    assert_eq!(code(&["eval", "--data", "d", "--catalog", "c", "--out-report", "r"]), 2);
    assert_eq!(code(&["eval", "--model-file", w.p("missing.ckpt"), "--data", w.p("data/test.jsonl"), "--catalog", w.p("cat.jsonl"), "--out-report", w.p("r.json")]), 1);
}

#[test]
fn generation_is_byte_identical() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.jsonl");
    ok(&["gen-catalog", "--out", s(&cat), "--cities", "4", "--min-size", "40", "--max-size", "300", "--seed", "3"]);
    assert_eq!(fs::read(&cat).unwrap(), fs::read(w.p("cat.jsonl")).unwrap());
    let data = dir.path().join("data");
    ok(&["gen-data", "--catalog", s(&cat), "--out-dir", s(&data), "--sizes", "200,40,40", "--negatives", "40", "--seed", "4"]);
    for split in ["train", "dev", "test"] {
        let name = format!("{split}.jsonl");
        assert_eq!(fs::read(data.join(&name)).unwrap(), fs::read(Path::new(w.p("data")).join(&name)).unwrap(), "{split}");
    }
    assert_eq!(json(&data.join("stats.json"))["stats"], json(w.p("data/stats.json"))["stats"]);

    let other = dir.path().join("other.jsonl");
    ok(&["gen-catalog", "--out", s(&other), "--cities", "4", "--min-size", "40", "--max-size", "300", "--seed", "4"]);
    assert_ne!(fs::read(&other).unwrap(), fs::read(&cat).unwrap());
}

#[test]
fn artifacts_carry_provenance() {
    let w = world();
    let side = json(w.p("cat.jsonl.run.json"));
    assert_eq!(side["command"], "gen-catalog");
    assert_eq!(side["config"]["catalog"]["n_cities"], 4);
    assert!(side["tool_version"].as_str().unwrap().starts_with("spatial-qa"));
    let stats = json(w.p("data/stats.json"));
    assert_eq!(stats["run"]["config"]["data"]["sizes"], serde_json::json!([200, 40, 40]));
    assert!(Path::new(w.p("data/train.jsonl.run.json")).exists());
    let ckpt = json(w.p("spnet.ckpt"));
    assert_eq!(ckpt["meta"]["run"]["config"]["spatial"]["gru_hidden"], 4);
}

#[test]
fn hybrid_questions_all_carry_a_keyword() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--catalog", w.p("cat.jsonl"), "--out-dir", s(dir.path()), "--sizes", "30,10,10", "--negatives", "20", "--hybrid"]);
    for split in ["train", "dev", "test"] {
        for q in load_split(dir.path().join(format!("{split}.jsonl"))).unwrap() {
            let k = q.keyword.as_deref().expect("keyword");
            assert!(q.tokens.iter().any(|t| t == k), "{}", q.qid);
        }
    }
}

#[test]
fn training_smoke_run_lowers_the_loss() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    ok(&[
        "train", "--model", "spnet", "--data", w.p("data"), "--catalog", w.p("cat.jsonl"),
        "--out", s(&out), "--epochs", "3", "--patience", "9", "--dev-limit", "20", "--train-limit", "200",
    ]);
    let m = json(&dir.path().join("m.ckpt.metrics.json"));
    let epochs = m["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 4);
    assert!(epochs[0]["train_loss"].is_null());
    let first = epochs[1]["train_loss"].as_f64().unwrap();
    let last = epochs[3]["train_loss"].as_f64().unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn flags_override_the_config_file() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochs": 1, "patience": 9, "negatives": 3}, "spatial": {"emb_dim": 6, "gru_hidden": 4, "drl_dims": [6, 1]}}"#).unwrap();
    let metrics = dir.path().join("metrics.json");
    ok(&[
        "--config", s(&cfg), "train", "--model", "spnet-ablation", "--data", w.p("data"),
        "--catalog", w.p("cat.jsonl"), "--out", s(&dir.path().join("a.ckpt")), "--metrics", s(&metrics),
        "--epochs", "2", "--train-limit", "50", "--dev-limit", "10",
    ]);
    let m = json(&metrics);
    let t = &m["run"]["config"]["train"];
    assert_eq!(t["epochs"], 2);
    assert_eq!(t["patience"], 9);
    assert_eq!(t["negatives"], 3);
    assert_eq!(t["margin"], 1.0);
    assert_eq!(m["epochs"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_reruns_are_bit_identical() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let outcomes = dir.path().join("o.jsonl");
    let args = [
        "eval", "--model-file", w.p("spnet.ckpt"), "--data", w.p("data/test.jsonl"),
        "--catalog", w.p("cat.jsonl"), "--out-report", s(&report), "--out-outcomes", s(&outcomes),
    ];
    ok(&args);
    let (r1, o1) = (fs::read(&report).unwrap(), fs::read(&outcomes).unwrap());
    ok(&args);
    assert_eq!(fs::read(&report).unwrap(), r1);
    assert_eq!(fs::read(&outcomes).unwrap(), o1);
    assert_eq!(String::from_utf8(o1).unwrap().lines().count(), 40);
    assert!(fs::read_to_string(dir.path().join("r.json.txt")).unwrap().contains("acc@3"));
    let v = json(&report);
    assert_eq!(v["ranker"], "spnet");
    assert_eq!(v["report"]["count"], 40);

    let sd = dir.path().join("sd.json");
    ok(&["eval", "--baseline", "sd", "--data", w.p("data/test.jsonl"), "--catalog", w.p("cat.jsonl"), "--out-report", s(&sd)]);
    assert_eq!(json(&sd)["ranker"], "sort-by-distance");
    assert!(json(&sd)["checkpoint"].is_null());
}

fn table_rows(stdout: &str) -> Vec<Vec<String>> {
    stdout
        .lines()
        .skip(2)
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

#[test]
fn rank_respects_top_and_universe_size() {
    let w = world();
    let q = &load_split(w.p("data/test.jsonl")).unwrap()[0];
    let base = ["rank", "--model-file", w.p("spnet.ckpt"), "--question-file", w.p("data/test.jsonl"), "--catalog", w.p("cat.jsonl"), "--qid", &q.qid];
    let one = ok(&[&base[..], &["--top", "1"]].concat());
    assert_eq!(table_rows(&one).len(), 1);
    let cat = load_catalog(w.p("cat.jsonl")).unwrap();
    let n = spatial_qa::datagen::question_universe(&cat, q).len();
    let all = ok(&[&base[..], &["--top", "100000"]].concat());
    let rows = table_rows(&all);
    assert_eq!(rows.len(), n);
    for r in &rows {
        let cols = &r[r.len() - 5..];
        assert_eq!([&cols[0], &cols[2], &cols[3]], ["-", "-", "-"]);
        assert_eq!(cols[1], cols[4]);
    }
    assert_eq!(code(&[&base[..7], &["--qid", "nope"]].concat()), 1);
}

#[test]
fn joint_rank_without_locations_shows_zero_spatial_scores() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let joint = dir.path().join("joint.ckpt");
    ok(&[
        "--config", w.p("tiny.json"), "train", "--model", "joint", "--init", w.p("spnet.ckpt"),
        "--data", w.p("data"), "--catalog", w.p("cat.jsonl"), "--out", s(&joint),
        "--epochs", "1", "--train-limit", "40", "--dev-limit", "10",
    ]);
    let mut q = load_split(w.p("data/test.jsonl")).unwrap().remove(0);
    q.mentions.clear();
    q.bio_tags = vec![BioTag::O; q.tokens.len()];
    let qfile = dir.path().join("q.jsonl");
    save_split(std::slice::from_ref(&q), &qfile).unwrap();
    let out = ok(&["rank", "--model-file", s(&joint), "--question-file", s(&qfile), "--catalog", w.p("cat.jsonl"), "--top", "5"]);
    let rows = table_rows(&out);
    assert_eq!(rows.len(), 5);
    for r in rows {
        let cols = &r[r.len() - 5..];
        assert_eq!(cols[1], "0.000000");
        let (st, beta, sv): (f64, f64, f64) = (cols[0].parse().unwrap(), cols[3].parse().unwrap(), cols[4].parse().unwrap());
        let ckpt = json(&joint);
        let wt = ckpt["params"]["joint.w_t"]["data"][0].as_f64().unwrap();
        let expected = beta / (1.0 + (-wt * st).exp());
        assert!((sv - expected).abs() < 2e-6, "{sv} vs {expected}");
    }
}

#[test]
fn probe_writes_one_row_per_candidate_and_mention() {
    let w = world();
    let qs = load_split(w.p("data/test.jsonl")).unwrap();
    let q = qs.iter().find(|q| q.mentions.len() == 2).unwrap();
    let cat = load_catalog(w.p("cat.jsonl")).unwrap();
    let u = spatial_qa::datagen::question_universe(&cat, q);
    let cands = format!("{},{}", u[0].id, u[1].id);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    ok(&[
        "probe", "--model-file", w.p("spnet.ckpt"), "--question-file", w.p("data/test.jsonl"),
        "--catalog", w.p("cat.jsonl"), "--candidates", &cands, "--out", s(&csv), "--qid", &q.qid,
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("qid,candidate_id,mention,distance_km,weight"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let wgt: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!(wgt > -1.0 && wgt < 1.0);
    }
    assert!(dir.path().join("p.csv.run.json").exists());
    assert_eq!(
        code(&["probe", "--model-file", w.p("spnet.ckpt"), "--question-file", w.p("data/test.jsonl"), "--catalog", w.p("cat.jsonl"), "--candidates", "c99-99999", "--out", s(&csv)]),
        1
    );
}

#[test]
fn grad_check_passes_and_catches_a_broken_derivative() {
    let out = ok(&["grad-check", "--runs", "2"]);
    assert_eq!(out.lines().filter(|l| l.contains(" run ")).count(), 6);
    assert!(out.contains("tolerance 1e-3"));
    let bad = run(&["grad-check", "--model", "spnet", "--corrupt-tanh"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(code(&["grad-check", "--model", "rnn"]), 2);
}
