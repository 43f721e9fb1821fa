//! Max-margin training and checkpoints.
//!
//! ```
//! use spatial_qa::train::margin_loss;
//!
//! assert_eq!(margin_loss(2.0, 0.5, 1.0), 0.0);
//! assert!((margin_loss(0.2, 0.5, 1.0) - 1.3).abs() < 1e-12);
//! ```

mod checkpoint;
mod gradcheck;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::datagen::{Hardness, QuestionInstance};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::geo::{Catalog, Entity, GeoPoint};
use crate::joint::{JointModel, LexicalScorer, TextualScorer};
use crate::rank::{Ranked, Ranker};
use crate::rng::{rng_from, Rng};
use crate::spatial::SpatialModel;

pub use gradcheck::{check_model_gradients, GradCheckFixture};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, CheckpointDoc, CheckpointMeta, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Spnet,
    SpnetAblation,
    Joint,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Spnet, ModelKind::SpnetAblation, ModelKind::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Spnet => "spnet",
            ModelKind::SpnetAblation => "spnet-ablation",
            ModelKind::Joint => "joint",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?} (expected spnet, spnet-ablation or joint)")))
    }
}

/// A trainable ranking model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Spatial(SpatialModel),
    Joint(JointModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Spatial(m) if m.ablation => ModelKind::SpnetAblation,
            Model::Spatial(_) => ModelKind::Spnet,
            Model::Joint(_) => ModelKind::Joint,
        }
    }

    pub fn spatial(&self) -> &SpatialModel {
        match self {
            Model::Spatial(m) => m,
            Model::Joint(j) => &j.spatial,
        }
    }

    /// Scores `points` for `q` on a fresh tape, keeping it for backward.
    fn score_for_training(
        &self,
        tape: &mut Tape,
        q: &QuestionInstance,
        entities: &[&Entity],
        catalog: &Catalog,
    ) -> Result<crate::autodiff::Var> {
        let points: Vec<GeoPoint> = entities.iter().map(|e| e.location).collect();
        match self {
            Model::Spatial(m) => {
                let prep = m.prepare(q, catalog)?;
                let bound = m.params.bind(tape);
                m.score_on_tape(tape, &bound, &prep, &points)
            }
            Model::Joint(j) => {
                let prep = j.spatial.prepare(q, catalog)?;
                let sb = j.spatial.params.bind_as(tape, SPATIAL_PREFIX);
                let jb = j.params.bind_as(tape, JOINT_PREFIX);
                let s_t: Vec<f64> = entities
                    .iter()
                    .map(|e| LexicalScorer.score_text(q, e))
                    .collect();
                Ok(j.score_on_tape(tape, &sb, &jb, &prep, &points, &s_t)?.s)
            }
        }
    }
}

impl Ranker for Model {
    fn rank(&self, q: &QuestionInstance, universe: &[&Entity], catalog: &Catalog) -> Result<Vec<Ranked>> {
        match self {
            Model::Spatial(m) => m.rank_universe(q, universe, catalog),
            Model::Joint(j) => Ok(j
                .joint_rank(&LexicalScorer, q, universe, catalog)?
                .into_iter()
                .map(|r| Ranked {
                    entity_id: r.entity_id,
                    score: r.scores.s,
                })
                .collect()),
        }
    }
}

impl Ranker for SpatialModel {
    fn rank(&self, q: &QuestionInstance, universe: &[&Entity], catalog: &Catalog) -> Result<Vec<Ranked>> {
        self.rank_universe(q, universe, catalog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Negatives drawn per question per epoch.
    pub negatives: usize,
    pub margin: f64,
    pub hard_frac: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub patience: usize,
    /// Dev questions used for early stopping; `None` uses all of them.
    pub dev_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            negatives: 5,
            margin: 1.0,
            hard_frac: 0.35,
            adam: AdamConfig::default(),
            seed: 1,
            patience: 5,
            dev_limit: Some(500),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.hard_frac) {
            return Err(Error::Config(format!("hard_frac must be in [0, 1], got {}", self.hard_frac)));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// Hinge on a score pair: `max(0, margin − s_pos + s_neg)`.
pub fn margin_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

/// Draws `k` negatives from the stored pool, `round(k · hard_frac)` of them
/// hard. A short stratum is topped up from the other one.
pub fn sample_training_negatives<'a>(
    q: &'a QuestionInstance,
    k: usize,
    hard_frac: f64,
    rng: &mut Rng,
) -> Vec<&'a str> {
    let hard: Vec<&str> = q
        .negatives
        .iter()
        .filter(|n| n.hardness == Hardness::Hard)
        .map(|n| n.entity_id.as_str())
        .collect();
    let soft: Vec<&str> = q
        .negatives
        .iter()
        .filter(|n| n.hardness == Hardness::Soft)
        .map(|n| n.entity_id.as_str())
        .collect();
    let k = k.min(hard.len() + soft.len());
    let want_hard = ((k as f64) * hard_frac).round() as usize;
    let n_hard = want_hard.min(hard.len()).max(k.saturating_sub(soft.len()));
    let n_soft = k - n_hard;
    let mut out: Vec<&str> = hard.choose_multiple(rng, n_hard).copied().collect();
    out.extend(soft.choose_multiple(rng, n_soft).copied());
    out
}

/// Optimizer state for every parameter group of a model.
#[derive(Debug, Clone)]
pub struct Optimizers {
    spatial: Adam,
    joint: Adam,
}

impl Optimizers {
    pub fn new(config: AdamConfig) -> Self {
        Optimizers {
            spatial: Adam::new(config),
            joint: Adam::new(config),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub steps: usize,
    pub skipped: usize,
}

/// One pass over `questions` in an order shuffled from `rng`, with one Adam
/// step per question on the mean hinge over its sampled pairs.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Optimizers,
    questions: &[QuestionInstance],
    catalog: &Catalog,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..questions.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut stats = EpochStats {
        mean_loss: 0.0,
        steps: 0,
        skipped: 0,
    };
    if config.negatives == 0 {
        return Ok(stats);
    }
    for &i in &order {
        let q = &questions[i];
        let negs = sample_training_negatives(q, config.negatives, config.hard_frac, rng);
        if negs.is_empty() {
            stats.skipped += 1;
            continue;
        }
        let mut entities = vec![catalog.entity(&q.gold_id)?];
        for id in &negs {
            entities.push(catalog.entity(id)?);
        }

        let mut tape = Tape::new();
        let scores = model.score_for_training(&mut tape, q, &entities, catalog)?;
        let pos = tape.slice_rows(scores, 0..1)?;
        let neg = tape.slice_rows(scores, 1..entities.len())?;
        let diff = tape.sub(neg, pos)?;
        let shifted = tape.add_scalar(diff, config.margin);
        let hinge = tape.relu(shifted);
        let sum = tape.sum(hinge);
        let loss = tape.scale(sum, 1.0 / negs.len() as f64);
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss on question {}", q.qid)));
        }
        let grads = tape.backward(loss)?.by_param(&tape);
        apply(model, opt, grads)?;
        total += value;
        stats.steps += 1;
    }
    if stats.skipped > 0 {
        warn!("{} questions without negatives were skipped", stats.skipped);
    }
    stats.mean_loss = if stats.steps > 0 { total / stats.steps as f64 } else { 0.0 };
    Ok(stats)
}

/// Tape name prefixes of the two parameter groups of a joint model.
pub const SPATIAL_PREFIX: &str = "spatial.";
pub const JOINT_PREFIX: &str = "joint.";

fn strip(grads: &BTreeMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    grads
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}

fn apply(model: &mut Model, opt: &mut Optimizers, grads: BTreeMap<String, Tensor>) -> Result<()> {
    match model {
        Model::Spatial(m) => opt.spatial.step(&mut m.params, &grads),
        Model::Joint(j) => {
            opt.spatial.step(&mut j.spatial.params, &strip(&grads, SPATIAL_PREFIX))?;
            opt.joint.step(&mut j.params, &strip(&grads, JOINT_PREFIX))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub dev_acc3: f64,
    pub dev_mrr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_epoch: usize,
    pub best_dev_acc3: f64,
    pub history: Vec<EpochRecord>,
}

fn dev_metrics(model: &Model, dev: &[QuestionInstance], catalog: &Catalog) -> Result<MetricsReport> {
    evaluate(model, dev, catalog)
}

/// Trains with early stopping on dev Acc@3. Epoch 0 is the untrained model,
/// so the result is never worse than the starting point on dev.
pub fn train(
    mut model: Model,
    train_split: &[QuestionInstance],
    dev_split: &[QuestionInstance],
    catalog: &Catalog,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dev = match config.dev_limit {
        Some(n) => &dev_split[..n.min(dev_split.len())],
        None => dev_split,
    };
    let mut opt = Optimizers::new(config.adam);
    let base = dev_metrics(&model, dev, catalog)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        dev_acc3: base.acc3,
        dev_mrr: base.mrr,
    }];
    let mut best = (model.clone(), 0, base.acc3);
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut rng = rng_from(&[config.seed, 0xE90C, epoch as u64]);
        let stats = train_epoch(&mut model, &mut opt, train_split, catalog, config, &mut rng)?;
        let m = dev_metrics(&model, dev, catalog)?;
        info!(
            "epoch {epoch}: loss {:.4}, dev acc@3 {:.4}, mrr {:.4}",
            stats.mean_loss, m.acc3, m.mrr
        );
        history.push(EpochRecord {
            epoch,
            train_loss: Some(stats.mean_loss),
            dev_acc3: m.acc3,
            dev_mrr: m.mrr,
        });
        if m.acc3 > best.2 {
            best = (model.clone(), epoch, m.acc3);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_dev_acc3: best.2,
        history,
    })
}
