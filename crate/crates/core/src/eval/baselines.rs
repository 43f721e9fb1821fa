use log::warn;

use crate::datagen::QuestionInstance;
use crate::error::{Error, Result};
use crate::geo::{manhattan_km, Catalog, Entity, GeoPoint};
use crate::joint::{LexicalScorer, TextualScorer};
use crate::rank::{rank_by_score, Ranked, Ranker};

/// Ranks candidates by their smallest distance to any tagged mention,
/// distractors included.
#[derive(Debug, Clone, Copy, Default)]
pub struct SortByDistance;

impl Ranker for SortByDistance {
    fn rank(&self, q: &QuestionInstance, universe: &[&Entity], catalog: &Catalog) -> Result<Vec<Ranked>> {
        if universe.is_empty() {
            return Err(Error::EmptyUniverse(q.qid.clone()));
        }
        if q.mentions.is_empty() {
            warn!("question {} has no mentions; falling back to id order", q.qid);
        }
        let points: Vec<GeoPoint> = q
            .mentions
            .iter()
            .map(|m| Ok(catalog.entity(&m.entity_id)?.location))
            .collect::<Result<_>>()?;
        Ok(rank_by_score(universe.iter().map(|e| {
            let d = points
                .iter()
                .map(|p| manhattan_km(&e.location, p))
                .fold(f64::INFINITY, f64::min);
            (e.id.clone(), if d.is_finite() { -d } else { 0.0 })
        })))
    }
}

/// Ranks by the textual scorer alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalRanker;

impl Ranker for LexicalRanker {
    fn rank(&self, q: &QuestionInstance, universe: &[&Entity], _catalog: &Catalog) -> Result<Vec<Ranked>> {
        if universe.is_empty() {
            return Err(Error::EmptyUniverse(q.qid.clone()));
        }
        Ok(rank_by_score(
            universe
                .iter()
                .map(|e| (e.id.clone(), LexicalScorer.score_text(q, e))),
        ))
    }
}
