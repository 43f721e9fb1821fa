use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use log::{info, warn};
use serde_json::json;
use spatial_qa::autodiff::Faults;
use spatial_qa::datagen::{dataset_stats, generate_dataset, load_split, question_universe, save_split, QuestionInstance};
use spatial_qa::eval::{evaluate_outcomes, probe_weights, write_probe_csv, LexicalRanker, MetricsReport, SortByDistance};
use spatial_qa::geo::{generate_catalog, load_catalog, save_catalog, Catalog};
use spatial_qa::joint::{JointModel, LexicalScorer};
use spatial_qa::rank::Ranker;
use spatial_qa::rng::derive_seed;
use spatial_qa::spatial::{SpatialModel, Vocab};
use spatial_qa::train::{
    check_model_gradients, load_checkpoint, save_checkpoint, train, CheckpointDoc, CheckpointMeta, Model, ModelKind,
};

use crate::config::{write_json, Run, RunConfig, TOOL_VERSION};
use crate::{
    Baseline, Cli, Command, EvalArgs, GenCatalogArgs, GenDataArgs, GradCheckArgs, Limit, ProbeArgs, RankArgs, TrainArgs,
    Usage,
};

const GRAD_TOLERANCE: f64 = 1e-3;

pub fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenCatalog(a) => gen_catalog(a, &mut cfg),
        Command::GenData(a) => gen_data(a, &mut cfg),
        Command::Train(a) => train_cmd(a, &mut cfg),
        Command::Eval(a) => eval_cmd(a, &cfg),
        Command::Rank(a) => rank_cmd(a, &cfg),
        Command::Probe(a) => probe_cmd(a, &cfg),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn read_catalog(path: &Path) -> anyhow::Result<Catalog> {
    load_catalog(path).with_context(|| format!("loading catalog {}", path.display()))
}

fn read_split(path: &Path) -> anyhow::Result<Vec<QuestionInstance>> {
    load_split(path).with_context(|| format!("loading questions {}", path.display()))
}

fn read_model(path: &Path) -> anyhow::Result<(Model, CheckpointMeta)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_catalog(a: &GenCatalogArgs, cfg: &mut RunConfig) -> anyhow::Result<ExitCode> {
    let c = &mut cfg.catalog;
    if let Some(n) = a.cities {
        c.n_cities = n as usize;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(v) = a.min_size {
        c.min_size = v;
    }
    if let Some(v) = a.max_size {
        c.max_size = v;
    }
    c.validate().map_err(usage)?;

    let catalog = generate_catalog(&cfg.catalog)?;
    save_catalog(&catalog, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Run::new("gen-catalog", json!({ "out": path_str(&a.out) }), cfg).write_sidecar(&a.out)?;

    let sizes: Vec<usize> = catalog.cities().values().map(Vec::len).collect();
    println!(
        "cities {}, entities {}, city sizes {}..={}",
        sizes.len(),
        catalog.len(),
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0)
    );
    Ok(ExitCode::SUCCESS)
}

fn gen_data(a: &GenDataArgs, cfg: &mut RunConfig) -> anyhow::Result<ExitCode> {
    let d = &mut cfg.data;
    if let Some(s) = a.seed {
        d.seed = s;
    }
    if let Some(sizes) = a.sizes {
        d.sizes = sizes;
    }
    if a.hybrid {
        d.question.hybrid = true;
    }
    if let Some(n) = a.negatives {
        d.question.negatives = n;
    }
    if let Some(h) = a.hard_frac {
        d.question.hard_frac = h;
    }
    if !(0.0..=1.0).contains(&d.question.hard_frac) {
        return Err(usage(format!("--hard-frac must be in [0, 1], got {}", d.question.hard_frac)));
    }

    let catalog = read_catalog(&a.catalog)?;
    let ds = generate_dataset(&catalog, &cfg.data)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let run = Run::new(
        "gen-data",
        json!({ "catalog": path_str(&a.catalog), "out_dir": path_str(&a.out_dir) }),
        cfg,
    );
    for split in ds.splits() {
        let path = a.out_dir.join(format!("{}.jsonl", split.name.as_str()));
        save_split(&split.questions, &path).with_context(|| format!("writing {}", path.display()))?;
        run.write_sidecar(&path)?;
        println!("{}: {} questions", split.name.as_str(), split.questions.len());
    }
    let stats = dataset_stats(&ds, &catalog);
    println!("distractor share {:.4}", stats.distractor_share);
    write_json(
        &a.out_dir.join("stats.json"),
        &json!({ "run": run.to_value(), "stats": stats }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: &TrainArgs, cfg: &mut RunConfig) -> anyhow::Result<ExitCode> {
    let t = &mut cfg.train;
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(t.seed, a.seed);
    set!(t.epochs, a.epochs);
    set!(t.negatives, a.negatives);
    set!(t.margin, a.margin);
    set!(t.hard_frac, a.hard_frac);
    set!(t.adam.lr, a.lr);
    set!(t.patience, a.patience);
    match a.dev_limit {
        Some(Limit::All) => t.dev_limit = None,
        Some(Limit::First(n)) => t.dev_limit = Some(n),
        None => {}
    }
    t.validate().map_err(usage)?;
    if a.init.is_some() && a.model != ModelKind::Joint {
        return Err(usage("--init applies to --model joint only"));
    }

    let catalog = read_catalog(&a.catalog)?;
    let mut train_q = read_split(&a.data.join("train.jsonl"))?;
    if let Some(n) = a.train_limit {
        train_q.truncate(n);
    }
    let dev_q = read_split(&a.data.join("dev.jsonl"))?;
    let vocab = Vocab::build(&train_q);
    let seed = cfg.train.seed;

    let model = match a.model {
        ModelKind::Spnet | ModelKind::SpnetAblation => Model::Spatial(SpatialModel::new(
            cfg.spatial.clone(),
            vocab,
            seed,
            a.model == ModelKind::SpnetAblation,
        )?),
        ModelKind::Joint => {
            let spatial = match &a.init {
                Some(path) => match read_model(path)?.0 {
                    Model::Spatial(m) if !m.ablation => {
                        cfg.spatial = m.config.clone();
                        m.with_vocab(vocab)?
                    }
                    other => bail!("{} holds a {} model, not spnet", path.display(), other.kind()),
                },
                None => {
                    warn!("no --init checkpoint: the spatial part starts untrained");
                    SpatialModel::new(cfg.spatial.clone(), vocab, seed, false)?
                }
            };
            Model::Joint(JointModel::new(cfg.joint.clone(), spatial, seed)?)
        }
    };
    info!(
        "training {} on {} questions ({} dev)",
        a.model,
        train_q.len(),
        dev_q.len()
    );

    let inputs = json!({
        "model": a.model.as_str(),
        "data": path_str(&a.data),
        "catalog": path_str(&a.catalog),
        "init": a.init.as_deref().map(path_str),
        "train_limit": a.train_limit,
        "out": path_str(&a.out),
    });
    let outcome = train(model, &train_q, &dev_q, &catalog, &cfg.train)?;
    let run = Run::new("train", inputs, cfg).to_value();

    let meta = CheckpointMeta {
        epoch: outcome.best_epoch,
        dev_acc3: Some(outcome.best_dev_acc3),
        tool_version: TOOL_VERSION.to_string(),
        run: run.clone(),
    };
    save_checkpoint(&CheckpointDoc::from_model(&outcome.model, meta), &a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| suffixed(&a.out, ".metrics.json"));
    write_json(
        &metrics_path,
        &json!({
            "run": run,
            "best_epoch": outcome.best_epoch,
            "best_dev_acc3": outcome.best_dev_acc3,
            "epochs": outcome.history,
        }),
    )?;
    for r in &outcome.history {
        println!(
            "epoch {:>3}  loss {:>8}  dev acc@3 {:.4}  mrr {:.4}",
            r.epoch,
            r.train_loss.map_or("-".to_string(), |l| format!("{l:.4}")),
            r.dev_acc3,
            r.dev_mrr
        );
    }
    println!(
        "best epoch {} (dev acc@3 {:.4}) saved to {}",
        outcome.best_epoch,
        outcome.best_dev_acc3,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval_cmd(a: &EvalArgs, cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let catalog = read_catalog(&a.catalog)?;
    let questions = read_split(&a.data)?;
    let (name, ranker, meta): (String, Box<dyn Ranker>, Option<CheckpointMeta>) = match (&a.model_file, a.baseline) {
        (_, Some(Baseline::Sd)) => ("sort-by-distance".into(), Box::new(SortByDistance), None),
        (_, Some(Baseline::Lexical)) => ("lexical".into(), Box::new(LexicalRanker), None),
        (Some(path), None) => {
            let (model, meta) = read_model(path)?;
            (model.kind().to_string(), Box::new(model), Some(meta))
        }
        (None, None) => return Err(usage("either --model-file or --baseline is required")),
    };
    let outcomes = evaluate_outcomes(ranker.as_ref(), &questions, &catalog)?;
    let report = MetricsReport::from_outcomes(&outcomes);
    let inputs = json!({
        "model_file": a.model_file.as_deref().map(path_str),
        "baseline": name,
        "data": path_str(&a.data),
        "catalog": path_str(&a.catalog),
    });
    let run = Run::new("eval", inputs, cfg);
    write_json(
        &a.out_report,
        &json!({
            "run": run.to_value(),
            "ranker": name,
            "checkpoint": meta.map(|m| json!({ "epoch": m.epoch, "dev_acc3": m.dev_acc3, "tool_version": m.tool_version })),
            "report": report,
        }),
    )?;
    let table = report.to_table();
    let table_path = suffixed(&a.out_report, ".txt");
    fs::write(&table_path, format!("{name}\n{table}")).with_context(|| format!("writing {}", table_path.display()))?;
    if let Some(path) = &a.out_outcomes {
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        let mut w = BufWriter::new(file);
        for o in &outcomes {
            serde_json::to_writer(&mut w, o)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        run.write_sidecar(path)?;
    }
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn select_questions(path: &Path, qid: Option<&str>) -> anyhow::Result<Vec<QuestionInstance>> {
    let mut qs = read_split(path)?;
    if let Some(id) = qid {
        qs.retain(|q| q.qid == id);
        if qs.is_empty() {
            bail!("no question {id} in {}", path.display());
        }
    }
    Ok(qs)
}

fn rank_cmd(a: &RankArgs, _cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let catalog = read_catalog(&a.catalog)?;
    let (model, _) = read_model(&a.model_file)?;
    let questions = select_questions(&a.question_file, a.qid.as_deref())?;
    let dash = || "-".to_string();
    let f = |v: f64| format!("{v:.6}");
    for q in &questions {
        let universe = question_universe(&catalog, q);
        println!("{}: {}", q.qid, q.text());
        println!(
            "{:>5}  {:<14} {:<28} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "rank", "entity", "name", "s_t", "s_l", "alpha", "beta", "s"
        );
        let rows: Vec<(String, [String; 5])> = match &model {
            Model::Joint(j) => j
                .joint_rank(&LexicalScorer, q, &universe, &catalog)?
                .into_iter()
                .take(a.top)
                .map(|r| {
                    let s = r.scores;
                    (r.entity_id, [f(s.s_t), f(s.s_l), f(s.alpha), f(s.beta), f(s.s)])
                })
                .collect(),
            Model::Spatial(m) => m
                .rank_universe(q, &universe, &catalog)?
                .into_iter()
                .take(a.top)
                .map(|r| {
                    let s_l = if m.ablation { dash() } else { f(r.score) };
                    (r.entity_id, [dash(), s_l, dash(), dash(), f(r.score)])
                })
                .collect(),
        };
        for (i, (id, cols)) in rows.iter().enumerate() {
            let name = catalog.entity(id).map(|e| e.name.clone()).unwrap_or_default();
            println!(
                "{:>5}  {:<14} {:<28} {:>10} {:>10} {:>10} {:>10} {:>10}",
                i + 1,
                id,
                name,
                cols[0],
                cols[1],
                cols[2],
                cols[3],
                cols[4]
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn probe_cmd(a: &ProbeArgs, cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let catalog = read_catalog(&a.catalog)?;
    let (model, _) = read_model(&a.model_file)?;
    if model.kind() == ModelKind::SpnetAblation {
        return Err(usage("the ablation model has no distance weights to probe"));
    }
    let questions = select_questions(&a.question_file, a.qid.as_deref())?;
    let Some(q) = questions.first() else {
        bail!("{} holds no questions", a.question_file.display());
    };
    let candidates = a
        .candidates
        .iter()
        .map(|id| catalog.entity(id))
        .collect::<Result<Vec<_>, _>>()?;
    let records = probe_weights(model.spatial(), q, &candidates, &catalog)?;
    let file = File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_probe_csv(&records, BufWriter::new(file))?;
    let inputs = json!({
        "model_file": path_str(&a.model_file),
        "question_file": path_str(&a.question_file),
        "qid": q.qid,
        "candidates": a.candidates,
    });
    Run::new("probe", inputs, cfg).write_sidecar(&a.out)?;
    println!("{} rows for question {} written to {}", records.len(), q.qid, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn grad_check_cmd(a: &GradCheckArgs) -> anyhow::Result<ExitCode> {
    let kinds = if a.model.is_empty() { ModelKind::ALL.to_vec() } else { a.model.clone() };
    let faults = Faults {
        corrupt_tanh_backward: a.corrupt_tanh,
    };
    let mut worst = 0.0f64;
    for run in 0..a.runs {
        let seed = derive_seed(&[a.seed, run]);
        for &kind in &kinds {
            let r = check_model_gradients(kind, seed, faults)?;
            let at = r
                .worst
                .as_ref()
                .map_or(String::new(), |(name, i)| format!(" at {name}[{i}]"));
            println!(
                "{kind:<15} run {run}  {} coordinates  max rel err {:.3e}{at}",
                r.coordinates, r.max_rel_err
            );
            worst = worst.max(r.max_rel_err);
        }
    }
    println!("max rel err {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})");
    Ok(if worst < GRAD_TOLERANCE {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
