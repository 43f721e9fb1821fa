//! End-to-end acceptance run at full scale: one PASS/FAIL line per criterion.
//!
//! Every criterion is reported; the process exits 0 unless `ACCEPTANCE_STRICT`
//! is set, in which case any failure makes it exit 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use spatial_qa::datagen::{load_split, question_universe, BioTag};
use spatial_qa::geo::load_catalog;
use spatial_qa::joint::LexicalScorer;
use spatial_qa::train::{load_checkpoint, Model};

/// Training budget shared by SpNet and its ablation.
const EPOCHS: &str = "8";
const PATIENCE: &str = "3";
const DEV_LIMIT: &str = "200";
/// Budget for the hybrid smoke test.
const HYBRID_EPOCHS: &str = "3";
const HYBRID_PATIENCE: &str = "1";

type Check = Result<(bool, String), String>;

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spatial-qa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{} exited with {:?}: {}",
            args[0],
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json(p: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn read_lines(p: &Path) -> Result<Vec<Value>, String> {
    fs::read_to_string(p)
        .map_err(|e| format!("{}: {e}", p.display()))?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("missing number {key}"))
}

fn slice(report: &Value, group: &str, key: &str) -> Result<f64, String> {
    report[group]
        .as_array()
        .and_then(|a| a.iter().find(|s| s["key"] == key))
        .ok_or_else(|| format!("missing slice {group}={key}"))
        .and_then(|s| num(s, "acc3"))
}

fn report(path: &Path) -> Result<Value, String> {
    Ok(read_json(path)?["report"].clone())
}

fn km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lat = ((a.0 + b.0) / 2.0).to_radians();
    111.32 * (a.0 - b.0).abs() + 111.32 * lat.cos() * (a.1 - b.1).abs()
}

struct Entity {
    city: String,
    kind: String,
    at: (f64, f64),
}

fn load_entities(path: &Path) -> Result<(HashMap<String, Entity>, BTreeMap<(String, String), Vec<String>>), String> {
    let mut by_id = HashMap::new();
    let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for v in read_lines(path)? {
        let id = v["id"].as_str().ok_or("entity id")?.to_string();
        let e = Entity {
            city: v["city_id"].as_str().ok_or("city_id")?.to_string(),
            kind: v["poi_type"].as_str().ok_or("poi_type")?.to_string(),
            at: (num(&v, "lat")?, num(&v, "lon")?),
        };
        groups.entry((e.city.clone(), e.kind.clone())).or_default().push(id.clone());
        by_id.insert(id, e);
    }
    Ok((by_id, groups))
}

/// Brute-force gold over every stored question, from the raw files only.
fn gold_oracle(catalog: &Path, data: &Path) -> Check {
    let t = Instant::now();
    let (entities, groups) = load_entities(catalog)?;
    let (mut total, mut agree) = (0, 0);
    for split in ["train", "dev", "test"] {
        for q in read_lines(&data.join(format!("{split}.jsonl")))? {
            total += 1;
            let mentions: Vec<(f64, (f64, f64))> = q["mentions"]
                .as_array()
                .ok_or("mentions")?
                .iter()
                .map(|m| {
                    let sign = match m["sign"].as_str() {
                        Some("Near") => -1.0,
                        Some("Far") => 1.0,
                        _ => 0.0,
                    };
                    (sign, entities[m["entity_id"].as_str().unwrap_or_default()].at)
                })
                .collect();
            let excluded: HashSet<&str> = q["mentions"]
                .as_array()
                .unwrap()
                .iter()
                .filter_map(|m| m["entity_id"].as_str())
                .collect();
            let key = (
                q["city_id"].as_str().unwrap_or_default().to_string(),
                q["poi_type"].as_str().unwrap_or_default().to_string(),
            );
            let mut best: Option<(&str, f64)> = None;
            for id in groups.get(&key).map(Vec::as_slice).unwrap_or_default() {
                if excluded.contains(id.as_str()) {
                    continue;
                }
                let at = entities[id].at;
                let score: f64 = mentions.iter().map(|(w, p)| w * km(at, *p)).sum();
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((id, score));
                }
            }
            if best.map(|b| b.0) == q["gold_id"].as_str() {
                agree += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        total == 9000 && agree == total && secs < 300.0,
        format!("{agree}/{total} gold ids reproduced in {secs:.1}s"),
    ))
}

fn determinism(root: &Path) -> Check {
    let (a, b) = (root.join("a"), root.join("b"));
    for dir in [&a, &b] {
        fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        cli(&["gen-catalog", "--out", s(&dir.join("cat.jsonl"))])?;
        cli(&["gen-data", "--catalog", s(&dir.join("cat.jsonl")), "--out-dir", s(&dir.join("data"))])?;
    }
    let mut differing = Vec::new();
    for f in ["cat.jsonl", "data/train.jsonl", "data/dev.jsonl", "data/test.jsonl"] {
        if fs::read(a.join(f)).map_err(|e| e.to_string())? != fs::read(b.join(f)).map_err(|e| e.to_string())? {
            differing.push(f);
        }
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            "catalog and three splits byte-identical across two runs".into()
        } else {
            format!("differing: {differing:?}")
        },
    ))
}

fn gradients() -> Check {
    let out = cli(&["grad-check", "--runs", "10", "--seed", "2024"])?;
    let last = out.lines().last().unwrap_or_default().to_string();
    let err: f64 = last
        .split_whitespace()
        .nth(3)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("unparsed summary {last:?}"))?;
    Ok((err < 1e-3, format!("10 runs x 3 models, {last}")))
}

fn sd_sanity(root: &Path, catalog: &Path, data: &Path) -> Check {
    let mut lines = Vec::new();
    for split in ["train", "dev", "test"] {
        let text = fs::read_to_string(data.join(format!("{split}.jsonl"))).map_err(|e| e.to_string())?;
        for l in text.lines() {
            let v: Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            if v["template_id"].as_u64().is_some_and(|t| (1..=4).contains(&t)) {
                lines.push(l.to_string());
            }
        }
    }
    let qfile = root.join("sd_questions.jsonl");
    fs::write(&qfile, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    let out = root.join("sd.report.json");
    cli(&["eval", "--baseline", "sd", "--data", s(&qfile), "--catalog", s(catalog), "--out-report", s(&out)])?;
    let r = report(&out)?;
    let acc1 = num(&r, "acc1")?;
    Ok((acc1 == 1.0, format!("Acc@1 {acc1:.4} on {} template 1-4 questions", lines.len())))
}

struct Trained {
    report: Value,
    seconds: f64,
}

fn train_and_eval(root: &Path, catalog: &Path, data: &Path, model: &str, extra: &[&str]) -> Result<Trained, String> {
    let t = Instant::now();
    let ckpt = root.join(format!("{model}.ckpt"));
    let mut args = vec![
        "train", "--model", model, "--data", s(data), "--catalog", s(catalog), "--out", s(&ckpt),
    ];
    args.extend_from_slice(extra);
    cli(&args)?;
    let out = root.join(format!("{model}.report.json"));
    cli(&[
        "eval", "--model-file", s(&ckpt), "--data", s(&data.join("test.jsonl")), "--catalog", s(catalog),
        "--out-report", s(&out),
    ])?;
    Ok(Trained {
        report: report(&out)?,
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn probe(root: &Path, catalog: &Path, data: &Path) -> Check {
    let questions = load_split(data.join("test.jsonl")).map_err(|e| e.to_string())?;
    let cat = load_catalog(catalog).map_err(|e| e.to_string())?;
    let mut twin_lines = fs::read_to_string(catalog).map_err(|e| e.to_string())?;
    let mut jobs = Vec::new();
    for (i, q) in questions.iter().filter(|q| q.mentions.len() >= 2).take(20).enumerate() {
        let u = question_universe(&cat, q);
        let (a, b) = (u[0], u[u.len() / 2]);
        let twin = format!("{}-twin{i}", a.id);
        twin_lines.push_str(&format!(
            "{{\"id\":\"{twin}\",\"name\":\"Twin Place\",\"city_id\":\"{}\",\"poi_type\":\"{}\",\"lat\":{:?},\"lon\":{:?}}}\n",
            a.city_id,
            a.poi_type.as_str(),
            a.location.lat_deg,
            a.location.lon_deg
        ));
        jobs.push((q.qid.clone(), a.id.clone(), twin, b.id.clone(), q.mentions.len()));
    }
    let twin_cat = root.join("cat_twins.jsonl");
    fs::write(&twin_cat, twin_lines).map_err(|e| e.to_string())?;
    let (mut rows, mut bad_range, mut bad_twin, mut bad_count) = (0, 0, 0, 0);
    for (qid, a, twin, b, m) in &jobs {
        let out = root.join(format!("probe-{qid}.csv"));
        cli(&[
            "probe", "--model-file", s(&root.join("spnet.ckpt")), "--question-file", s(&data.join("test.jsonl")),
            "--catalog", s(&twin_cat), "--candidates", &format!("{a},{twin},{b}"), "--out", s(&out), "--qid", qid,
        ])?;
        let text = fs::read_to_string(&out).map_err(|e| e.to_string())?;
        let weights: Vec<(String, String)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let mut parts = l.rsplitn(2, ',');
                let w = parts.next().unwrap_or_default().to_string();
                (parts.next().unwrap_or_default().to_string(), w)
            })
            .collect();
        rows += weights.len();
        bad_count += usize::from(weights.len() != 3 * m);
        bad_range += weights
            .iter()
            .filter(|(_, w)| !w.parse::<f64>().is_ok_and(|w| w > -1.0 && w < 1.0))
            .count();
        for i in 0..*m {
            if weights.get(i).map(|r| &r.1) != weights.get(m + i).map(|r| &r.1) {
                bad_twin += 1;
            }
        }
    }
    Ok((
        bad_range == 0 && bad_twin == 0 && bad_count == 0 && rows > 0,
        format!(
            "{rows} rows over {} questions; {bad_range} outside (-1, 1), {bad_twin} twin mismatches",
            jobs.len()
        ),
    ))
}

fn hybrid(root: &Path, catalog: &Path) -> Result<(Check, PathBuf, PathBuf), String> {
    let dir = root.join("hybrid");
    let data = dir.join("data");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    cli(&["gen-data", "--catalog", s(catalog), "--out-dir", s(&data), "--hybrid"])?;
    let budget = ["--epochs", HYBRID_EPOCHS, "--patience", HYBRID_PATIENCE, "--dev-limit", DEV_LIMIT];
    let spatial = train_and_eval(&dir, catalog, &data, "spnet", &budget)?;
    let init = dir.join("spnet.ckpt");
    let joint = train_and_eval(&dir, catalog, &data, "joint", &[&budget[..], &["--init", s(&init)]].concat())?;
    let lex_out = dir.join("lexical.report.json");
    cli(&[
        "eval", "--baseline", "lexical", "--data", s(&data.join("test.jsonl")), "--catalog", s(catalog),
        "--out-report", s(&lex_out),
    ])?;
    let (j, sp, lx) = (
        num(&joint.report, "acc3")?,
        num(&spatial.report, "acc3")?,
        num(&report(&lex_out)?, "acc3")?,
    );
    let check = Ok((
        j >= sp + 0.10 && j >= lx + 0.10,
        format!("joint {j:.4}, spatial-only {sp:.4}, lexical-only {lx:.4}"),
    ));
    Ok((check, dir.join("joint.ckpt"), data))
}

fn selector(joint_ckpt: &Path, catalog: &Path, data: &Path) -> Check {
    let cat = load_catalog(catalog).map_err(|e| e.to_string())?;
    let (model, _) = load_checkpoint(joint_ckpt).map_err(|e| e.to_string())?;
    let Model::Joint(joint) = model else {
        return Err("not a joint checkpoint".into());
    };
    let questions = load_split(data.join("test.jsonl")).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut scores, mut changed) = (0, 0);
    for q in questions.iter().take(100) {
        let mut q = q.clone();
        q.mentions.clear();
        q.bio_tags = vec![BioTag::O; q.tokens.len()];
        let universe = question_universe(&cat, &q);
        let before = joint.score_universe(&LexicalScorer, &q, &universe, &cat).map_err(|e| e.to_string())?;
        let mut scrambled = joint.clone();
        for (_, t) in scrambled.spatial.params.iter_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-3.0..3.0);
            }
        }
        let after = scrambled.score_universe(&LexicalScorer, &q, &universe, &cat).map_err(|e| e.to_string())?;
        scores += before.len();
        changed += before.iter().zip(&after).filter(|(x, y)| x.s.to_bits() != y.s.to_bits()).count();
    }
    Ok((
        changed == 0 && scores > 0,
        format!("{changed} of {scores} joint scores changed over 100 untagged questions"),
    ))
}

fn main() {
    let started = Instant::now();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).expect("work dir");
    let catalog = root.join("a/cat.jsonl");
    let data = root.join("a/data");

    let mut results: BTreeMap<u8, (&str, Check)> = BTreeMap::new();
    let mut record = |n: u8, name: &'static str, c: Check| {
        let line = match &c {
            Ok((true, d)) => format!("criterion {n:>2} PASS  {name}: {d}"),
            Ok((false, d)) => format!("criterion {n:>2} FAIL  {name}: {d}"),
            Err(e) => format!("criterion {n:>2} FAIL  {name}: error: {e}"),
        };
        println!("{line}");
        results.insert(n, (name, c));
    };

    record(2, "determinism", determinism(&root));
    record(1, "gold oracle", gold_oracle(&catalog, &data));
    record(3, "gradient integrity", gradients());
    record(10, "sort-by-distance sanity", sd_sanity(&root, &catalog, &data));

    let budget = ["--epochs", EPOCHS, "--patience", PATIENCE, "--dev-limit", DEV_LIMIT];
    let spnet = train_and_eval(&root, &catalog, &data, "spnet", &budget);
    let ablation = train_and_eval(&root, &catalog, &data, "spnet-ablation", &budget);
    let headline = spnet.as_ref().map_err(Clone::clone).and_then(|t| {
        let (a, m) = (num(&t.report, "acc3")?, num(&t.report, "mrr")?);
        Ok((
            a >= 0.70 && m >= 0.65 && t.seconds <= 7200.0,
            format!("Acc@3 {a:.4}, MRR {m:.4}, train+eval {:.0}s", t.seconds),
        ))
    });
    record(4, "headline toy result", headline);
    let gap = match (&spnet, &ablation) {
        (Ok(f), Ok(b)) => (|| {
            let (x, y) = (num(&f.report, "acc3")?, num(&b.report, "acc3")?);
            Ok((x - y >= 0.10, format!("SpNet {x:.4} vs no-DRL {y:.4}, gap {:.1} points", 100.0 * (x - y))))
        })(),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    record(5, "DRL ablation gap", gap);
    let by = |f: &dyn Fn(&Value) -> Check| spnet.as_ref().map_err(Clone::clone).and_then(|t| f(&t.report));
    record(
        6,
        "template-category ordering",
        by(&|r| {
            let (far, close, comb) = (
                slice(r, "by_category", "far")?,
                slice(r, "by_category", "close")?,
                slice(r, "by_category", "combination")?,
            );
            Ok((
                far >= close && close >= comb && close - comb >= 0.15,
                format!("far {far:.4}, close {close:.4}, combination {comb:.4}"),
            ))
        }),
    );
    record(
        7,
        "distractor degradation",
        by(&|r| {
            let (w, wo) = (slice(r, "by_distractor", "with")?, slice(r, "by_distractor", "without")?);
            Ok((w <= wo + 0.01, format!("with {w:.4}, without {wo:.4}")))
        }),
    );
    record(
        8,
        "single-mention accuracy",
        by(&|r| {
            let one = slice(r, "by_mentions", "1")?;
            Ok((one >= 0.95, format!("Acc@3 {one:.4} on single-mention questions")))
        }),
    );
    record(12, "probe output", probe(&root, &catalog, &data));

    match hybrid(&root, &catalog) {
        Ok((check, joint_ckpt, hdata)) => {
            record(11, "hybrid joint smoke test", check);
            record(9, "selector invariance", selector(&joint_ckpt, &catalog, &hdata));
        }
        Err(e) => {
            record(11, "hybrid joint smoke test", Err(e.clone()));
            record(9, "selector invariance", Err(e));
        }
    }

    println!();
    for (n, (name, c)) in &results {
        let ok = matches!(c, Ok((true, _)));
        println!("{n:>2}. {:<28} {}", name, if ok { "PASS" } else { "FAIL" });
    }
    let passed = results.values().filter(|(_, c)| matches!(c, Ok((true, _)))).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s (artifacts in {})",
        results.len(),
        started.elapsed().as_secs_f64(),
        root.display()
    );
    if passed < results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
