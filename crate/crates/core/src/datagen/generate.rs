use serde::{Deserialize, Serialize};

use rand::seq::index::sample;
use rand::Rng as _;

use crate::datagen::question::{tokenize, BioTag, Hardness, Mention, Negative, QuestionInstance};
use crate::datagen::templates::{
    metonym, template_bank, ConstraintSign, TemplateCategory, TemplateSpec, ENTITY_SLOT,
    LOCATION_SLOT,
};
use crate::error::{Error, Result};
use crate::geo::{manhattan_km, Catalog, Entity, GeoPoint, PoiType};
use crate::rng::{hash_str, rng_from, Rng};

/// Minimum gap between the best and second-best gold scores, in km.
pub const GOLD_TIE_EPS: f64 = 1e-9;

/// Fraction of non-gold candidates (by gold score) that count as hard negatives.
pub const HARD_QUANTILE: f64 = 0.05;

const MAX_CITY_ATTEMPTS: usize = 10_000;
const MAX_PLACEMENT_ATTEMPTS: usize = 20;

/// Keyword vocabulary for the hybrid spatio-textual variant.
pub const KEYWORDS: [&str; 20] = [
    "sushi", "vegan", "jazz", "rooftop", "wifi", "parking", "seafood", "brunch", "karaoke",
    "pool", "garden", "spa", "gelato", "tapas", "ramen", "vinyl", "sauna", "barbecue", "cocktails",
    "bakery",
];

/// Keyword attached to an entity in hybrid mode.
pub fn entity_keyword(entity_id: &str) -> &'static str {
    KEYWORDS[(hash_str(entity_id) % KEYWORDS.len() as u64) as usize]
}

/// Signed distance score of a candidate: Near mentions subtract their
/// distance, Far mentions add it, distractors are ignored.
pub fn gold_score(candidate: &GeoPoint, mentions: &[(ConstraintSign, GeoPoint)]) -> f64 {
    mentions
        .iter()
        .filter(|(s, _)| *s != ConstraintSign::Distractor)
        .map(|(s, p)| s.weight() * manhattan_km(candidate, p))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestionOptions {
    pub hybrid: bool,
    pub negatives: usize,
    pub hard_frac: f64,
}

impl Default for QuestionOptions {
    fn default() -> Self {
        QuestionOptions {
            hybrid: false,
            negatives: 500,
            hard_frac: 0.35,
        }
    }
}

/// Instantiates `template` in a random city. Cities too small for the
/// template are skipped; placements with a tied gold are redrawn.
pub fn generate_question(
    catalog: &Catalog,
    template: &TemplateSpec,
    rng: &mut Rng,
    opts: &QuestionOptions,
    qid: &str,
) -> Result<QuestionInstance> {
    let cities = catalog.city_ids();
    if cities.is_empty() {
        return Err(Error::Config("catalog has no cities".into()));
    }
    let n_slots = template.n_slots();

    for _ in 0..MAX_CITY_ATTEMPTS {
        let city = &cities[rng.random_range(0..cities.len())];
        let poi_type = PoiType::ALL[rng.random_range(0..3)];
        let universe = catalog.universe(city, poi_type);
        if universe.len() < n_slots + 2 {
            continue;
        }
        let phrase = metonym(poi_type, rng);

        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let picks: Vec<usize> = sample(rng, universe.len(), n_slots).into_vec();
            let locations: Vec<&Entity> = picks.iter().map(|&i| universe[i]).collect();
            let points: Vec<(ConstraintSign, GeoPoint)> = template
                .slot_signs
                .iter()
                .zip(&locations)
                .map(|(s, e)| (*s, e.location))
                .collect();
            let candidates: Vec<&Entity> = universe
                .iter()
                .enumerate()
                .filter(|(i, _)| !picks.contains(i))
                .map(|(_, e)| *e)
                .collect();

            let keyword = if opts.hybrid {
                let anchor = candidates[rng.random_range(0..candidates.len())];
                Some(entity_keyword(&anchor.id))
            } else {
                None
            };
            let eligible = candidates
                .iter()
                .filter(|e| keyword.is_none_or(|k| entity_keyword(&e.id) == k));
            let Some(gold) = unique_argmax(eligible.copied(), &points) else {
                continue;
            };

            let (tokens, bio_tags, spans) = render(template, phrase, keyword, &locations);
            let mentions = spans
                .into_iter()
                .zip(&locations)
                .zip(&template.slot_signs)
                .map(|((span, e), sign)| Mention {
                    span,
                    entity_id: e.id.clone(),
                    sign: *sign,
                })
                .collect();
            let mention_ids: Vec<&str> = locations.iter().map(|e| e.id.as_str()).collect();
            let negatives = sample_negatives(
                &gold.id,
                &mention_ids,
                &points,
                &universe,
                rng,
                opts.negatives,
                opts.hard_frac,
            );
            return Ok(QuestionInstance {
                qid: qid.to_string(),
                city_id: city.clone(),
                poi_type,
                template_id: template.id,
                tokens,
                bio_tags,
                mentions,
                gold_id: gold.id.clone(),
                negatives,
                keyword: keyword.map(str::to_string),
            });
        }
    }
    Err(Error::Config(format!(
        "no city could host template {} after {MAX_CITY_ATTEMPTS} attempts",
        template.id
    )))
}

/// The best-scoring entity, or `None` when the top two are within [`GOLD_TIE_EPS`].
fn unique_argmax<'a>(
    candidates: impl Iterator<Item = &'a Entity>,
    points: &[(ConstraintSign, GeoPoint)],
) -> Option<&'a Entity> {
    let mut best: Option<(&Entity, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for e in candidates {
        let s = gold_score(&e.location, points);
        match best {
            Some((_, b)) if s <= b => second = second.max(s),
            Some((_, b)) => {
                second = b;
                best = Some((e, s));
            }
            None => best = Some((e, s)),
        }
    }
    let (e, b) = best?;
    (b - second >= GOLD_TIE_EPS).then_some(e)
}

/// Builds tokens, tags and mention spans for a filled template.
fn render(
    template: &TemplateSpec,
    phrase: &str,
    keyword: Option<&str>,
    locations: &[&Entity],
) -> (Vec<String>, Vec<BioTag>, Vec<[usize; 2]>) {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut spans = Vec::new();
    let mut next_location = locations.iter();

    let mut rest = template.text;
    loop {
        let e_pos = rest.find(ENTITY_SLOT);
        let l_pos = rest.find(LOCATION_SLOT);
        let (pos, is_entity) = match (e_pos, l_pos) {
            (Some(e), Some(l)) if e < l => (e, true),
            (Some(e), None) => (e, true),
            (_, Some(l)) => (l, false),
            (None, None) => break,
        };
        for t in tokenize(&rest[..pos]) {
            tokens.push(t);
            tags.push(BioTag::O);
        }
        if is_entity {
            let mut filler = phrase.to_string();
            if let Some(k) = keyword {
                filler.push_str(" serving ");
                filler.push_str(k);
            }
            for t in tokenize(&filler) {
                tokens.push(t);
                tags.push(BioTag::O);
            }
            rest = &rest[pos + ENTITY_SLOT.len()..];
        } else {
            let entity = next_location.next().expect("one entity per slot");
            let start = tokens.len();
            for (i, t) in tokenize(&entity.name).into_iter().enumerate() {
                tokens.push(t);
                tags.push(if i == 0 { BioTag::B } else { BioTag::I });
            }
            spans.push([start, tokens.len()]);
            rest = &rest[pos + LOCATION_SLOT.len()..];
        }
    }
    for t in tokenize(rest) {
        tokens.push(t);
        tags.push(BioTag::O);
    }
    (tokens, tags, spans)
}

/// Draws up to `n` negatives from the universe, excluding gold and mentions.
///
/// Hard negatives come from the top [`HARD_QUANTILE`] of the remaining
/// candidates ranked by gold score; soft negatives from everything below.
pub fn sample_negatives(
    gold_id: &str,
    mention_ids: &[&str],
    mentions: &[(ConstraintSign, GeoPoint)],
    universe: &[&Entity],
    rng: &mut Rng,
    n: usize,
    hard_frac: f64,
) -> Vec<Negative> {
    let mut pool: Vec<(f64, &Entity)> = universe
        .iter()
        .filter(|e| e.id != gold_id && !mention_ids.contains(&e.id.as_str()))
        .map(|e| (gold_score(&e.location, mentions), *e))
        .collect();
    if pool.is_empty() || n == 0 {
        return Vec::new();
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));

    let total = n.min(pool.len());
    let hard_region = hard_region_size(pool.len());
    let soft_region = pool.len() - hard_region;
    let mut n_hard = ((total as f64 * hard_frac).round() as usize).min(hard_region);
    if total - n_hard > soft_region {
        n_hard = total - soft_region;
    }
    let n_soft = total - n_hard;

    let mut out = Vec::with_capacity(total);
    for i in sample(rng, hard_region, n_hard) {
        out.push(Negative {
            entity_id: pool[i].1.id.clone(),
            hardness: Hardness::Hard,
        });
    }
    for i in sample(rng, soft_region, n_soft) {
        out.push(Negative {
            entity_id: pool[hard_region + i].1.id.clone(),
            hardness: Hardness::Soft,
        });
    }
    out
}

/// Number of top-ranked candidates eligible as hard negatives.
pub fn hard_region_size(pool_len: usize) -> usize {
    if pool_len == 0 {
        0
    } else {
        ((pool_len as f64 * HARD_QUANTILE).ceil() as usize).clamp(1, pool_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub questions: Vec<QuestionInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
}

impl Dataset {
    pub fn splits(&self) -> [&DatasetSplit; 3] {
        [&self.train, &self.dev, &self.test]
    }

    pub fn questions(&self) -> impl Iterator<Item = &QuestionInstance> {
        self.splits().into_iter().flat_map(|s| s.questions.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub sizes: [usize; 3],
    pub seed: u64,
    pub question: QuestionOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sizes: [6000, 1500, 1500],
            seed: 13,
            question: QuestionOptions::default(),
        }
    }
}

/// Generates train/dev/test splits. Question `i` of a split uses template
/// category `i mod 3`, so categories stay balanced to within one question.
pub fn generate_dataset(catalog: &Catalog, config: &DatasetConfig) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&config.question.hard_frac) {
        return Err(Error::Config(format!(
            "hard_frac {} outside [0, 1]",
            config.question.hard_frac
        )));
    }
    let bank = template_bank();
    let by_category: Vec<Vec<&TemplateSpec>> = TemplateCategory::ALL
        .iter()
        .map(|c| bank.iter().filter(|t| t.category == *c).collect())
        .collect();

    let mut splits = Vec::with_capacity(3);
    for (si, name) in SplitName::ALL.into_iter().enumerate() {
        let mut questions = Vec::with_capacity(config.sizes[si]);
        for i in 0..config.sizes[si] {
            let mut rng = rng_from(&[config.seed, si as u64, i as u64]);
            let pool = &by_category[i % 3];
            let template = pool[rng.random_range(0..pool.len())];
            let qid = format!("{}-{i:05}", name.as_str());
            questions.push(generate_question(
                catalog,
                template,
                &mut rng,
                &config.question,
                &qid,
            )?);
        }
        splits.push(DatasetSplit { name, questions });
    }
    let mut it = splits.into_iter();
    Ok(Dataset {
        train: it.next().expect("train"),
        dev: it.next().expect("dev"),
        test: it.next().expect("test"),
    })
}

/// Candidate set a question is ranked against: its city/type universe minus
/// the mentioned entities.
pub fn question_universe<'a>(catalog: &'a Catalog, q: &QuestionInstance) -> Vec<&'a Entity> {
    catalog
        .universe(&q.city_id, q.poi_type)
        .into_iter()
        .filter(|e| !q.is_mention(&e.id))
        .collect()
}
