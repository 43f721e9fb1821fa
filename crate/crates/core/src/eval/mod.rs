//! Ranking metrics, sliced reports, baselines and the distance-weight probe.
//!
//! ```
//! use spatial_qa::eval::{acc_at_n, mrr};
//! use spatial_qa::rank::rank_by_score;
//!
//! let ranked = rank_by_score([("x".to_string(), 0.9), ("gold".to_string(), 0.4)]);
//! assert_eq!(acc_at_n(&ranked, "gold", 1), 0.0);
//! assert_eq!(acc_at_n(&ranked, "gold", 3), 1.0);
//! assert_eq!(mrr(&ranked, "gold").unwrap(), 0.5);
//! ```

mod baselines;
mod probe;

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{question_universe, size_bucket, template, QuestionInstance, SIZE_BUCKETS};
use crate::error::{Error, Result};
use crate::geo::{manhattan_km, Catalog};
use crate::rank::{rank_of, Ranked, Ranker};
use crate::rng::rng_from;

pub use baselines::{LexicalRanker, SortByDistance};
pub use probe::{probe_weights, write_probe_csv, ProbeRecord};

/// 1 if `gold` is among the first `n` entries, else 0.
pub fn acc_at_n(ranked: &[Ranked], gold: &str, n: usize) -> f64 {
    if ranked.iter().take(n).any(|r| r.entity_id == gold) {
        1.0
    } else {
        0.0
    }
}

/// Reciprocal of the 1-based gold rank.
pub fn mrr(ranked: &[Ranked], gold: &str) -> Result<f64> {
    rank_of(ranked, gold)
        .map(|r| 1.0 / r as f64)
        .ok_or_else(|| Error::GoldNotRanked {
            qid: String::new(),
            gold: gold.to_string(),
        })
}

/// Mean distance in km from the gold entity to the top three candidates
/// (fewer if the ranking is shorter).
pub fn dist_g(ranked: &[Ranked], gold: &str, catalog: &Catalog) -> Result<f64> {
    let g = catalog.entity(gold)?.location;
    let top: Vec<&Ranked> = ranked.iter().take(3).collect();
    if top.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for r in &top {
        sum += manhattan_km(&catalog.entity(&r.entity_id)?.location, &g);
    }
    Ok(sum / top.len() as f64)
}

/// Per-question evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub qid: String,
    pub template_id: u32,
    pub category: String,
    pub has_distractor: bool,
    pub universe_size: usize,
    pub mentions: usize,
    pub reasoned_mentions: usize,
    pub rank: usize,
    pub dist_g: f64,
}

impl Outcome {
    pub fn hit(&self, n: usize) -> bool {
        self.rank <= n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub key: String,
    pub count: usize,
    pub acc1: f64,
    pub acc3: f64,
    pub acc5: f64,
    pub acc30: f64,
    pub mrr: f64,
    pub dist_g: f64,
}

impl SliceMetrics {
    pub fn from_outcomes<'a>(key: impl Into<String>, outcomes: impl IntoIterator<Item = &'a Outcome>) -> Self {
        let mut m = SliceMetrics {
            key: key.into(),
            count: 0,
            acc1: 0.0,
            acc3: 0.0,
            acc5: 0.0,
            acc30: 0.0,
            mrr: 0.0,
            dist_g: 0.0,
        };
        for o in outcomes {
            m.count += 1;
            m.acc1 += f64::from(u8::from(o.hit(1)));
            m.acc3 += f64::from(u8::from(o.hit(3)));
            m.acc5 += f64::from(u8::from(o.hit(5)));
            m.acc30 += f64::from(u8::from(o.hit(30)));
            m.mrr += 1.0 / o.rank as f64;
            m.dist_g += o.dist_g;
        }
        if m.count > 0 {
            let n = m.count as f64;
            for v in [&mut m.acc1, &mut m.acc3, &mut m.acc5, &mut m.acc30, &mut m.mrr, &mut m.dist_g] {
                *v /= n;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub acc1: f64,
    pub acc3: f64,
    pub acc5: f64,
    pub acc30: f64,
    pub mrr: f64,
    /// Macro average: per-question mean over the top three, then mean over questions.
    pub dist_g: f64,
    pub by_category: Vec<SliceMetrics>,
    pub by_distractor: Vec<SliceMetrics>,
    pub by_universe_size: Vec<SliceMetrics>,
    /// Every tagged mention, distractors included.
    pub by_mentions: Vec<SliceMetrics>,
    /// Mentions that constrain the answer.
    pub by_reasoned_mentions: Vec<SliceMetrics>,
}

impl MetricsReport {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let all = SliceMetrics::from_outcomes("all", outcomes);
        let slice = |key: &str, pred: &dyn Fn(&Outcome) -> bool| {
            SliceMetrics::from_outcomes(key, outcomes.iter().filter(|o| pred(o)))
        };
        let by_category = ["close", "far", "combination"]
            .iter()
            .map(|c| slice(c, &|o| o.category == *c))
            .collect();
        let by_distractor = vec![
            slice("with", &|o| o.has_distractor),
            slice("without", &|o| !o.has_distractor),
        ];
        let by_universe_size = SIZE_BUCKETS
            .iter()
            .map(|(_, _, k)| slice(k, &|o| size_bucket(o.universe_size) == *k))
            .collect();
        let by_mentions = (1..=3)
            .map(|n| slice(&n.to_string(), &|o| o.mentions == n))
            .collect();
        let by_reasoned_mentions = (0..=2)
            .map(|n| slice(&n.to_string(), &|o| o.reasoned_mentions == n))
            .collect();
        MetricsReport {
            count: all.count,
            acc1: all.acc1,
            acc3: all.acc3,
            acc5: all.acc5,
            acc30: all.acc30,
            mrr: all.mrr,
            dist_g: all.dist_g,
            by_category,
            by_distractor,
            by_universe_size,
            by_mentions,
            by_reasoned_mentions,
        }
    }

    pub fn slice(&self, group: &str, key: &str) -> Option<&SliceMetrics> {
        let list = match group {
            "category" => &self.by_category,
            "distractor" => &self.by_distractor,
            "universe_size" => &self.by_universe_size,
            "mentions" => &self.by_mentions,
            "reasoned_mentions" => &self.by_reasoned_mentions,
            _ => return None,
        };
        list.iter().find(|s| s.key == key)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = format!(
            "{:<24} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}",
            "slice", "n", "acc@1", "acc@3", "acc@5", "acc@30", "mrr", "dist_g"
        );
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        let row = |out: &mut String, name: String, s: &SliceMetrics| {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>9.3}",
                name, s.count, s.acc1, s.acc3, s.acc5, s.acc30, s.mrr, s.dist_g
            );
        };
        let all = SliceMetrics {
            key: "all".into(),
            count: self.count,
            acc1: self.acc1,
            acc3: self.acc3,
            acc5: self.acc5,
            acc30: self.acc30,
            mrr: self.mrr,
            dist_g: self.dist_g,
        };
        row(&mut out, "all".into(), &all);
        for (group, list) in [
            ("category", &self.by_category),
            ("distractor", &self.by_distractor),
            ("universe", &self.by_universe_size),
            ("mentions", &self.by_mentions),
            ("reasoned", &self.by_reasoned_mentions),
        ] {
            for s in list {
                row(&mut out, format!("{group}={}", s.key), s);
            }
        }
        out
    }
}

/// Ranks one question over its universe and records the outcome.
pub fn evaluate_question(ranker: &dyn Ranker, q: &QuestionInstance, catalog: &Catalog) -> Result<Outcome> {
    let universe = question_universe(catalog, q);
    let ranked = ranker.rank(q, &universe, catalog)?;
    let rank = rank_of(&ranked, &q.gold_id).ok_or_else(|| Error::GoldNotRanked {
        qid: q.qid.clone(),
        gold: q.gold_id.clone(),
    })?;
    let category = template(q.template_id)
        .map(|t| t.category.as_str().to_string())
        .unwrap_or_default();
    Ok(Outcome {
        qid: q.qid.clone(),
        template_id: q.template_id,
        category,
        has_distractor: q.has_distractor(),
        universe_size: universe.len(),
        mentions: q.mentions.len(),
        reasoned_mentions: q.reasoned_mentions(),
        rank,
        dist_g: dist_g(&ranked, &q.gold_id, catalog)?,
    })
}

pub fn evaluate_outcomes(ranker: &dyn Ranker, questions: &[QuestionInstance], catalog: &Catalog) -> Result<Vec<Outcome>> {
    questions
        .iter()
        .map(|q| evaluate_question(ranker, q, catalog))
        .collect()
}

pub fn evaluate(ranker: &dyn Ranker, questions: &[QuestionInstance], catalog: &Catalog) -> Result<MetricsReport> {
    Ok(MetricsReport::from_outcomes(&evaluate_outcomes(ranker, questions, catalog)?))
}

/// Paired bootstrap over per-question scores: the share of resamples in
/// which the mean of `a` exceeds the mean of `b`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], samples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Config(format!(
            "paired bootstrap needs two equal non-empty samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut rng = rng_from(&[seed, 0xB007]);
    let n = a.len();
    let mut wins = 0;
    for _ in 0..samples {
        let mut diff = 0.0;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            diff += a[i] - b[i];
        }
        if diff > 0.0 {
            wins += 1;
        }
    }
    Ok(wins as f64 / samples.max(1) as f64)
}
