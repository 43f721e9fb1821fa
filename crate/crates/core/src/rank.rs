use serde::{Deserialize, Serialize};

use crate::datagen::QuestionInstance;
use crate::error::Result;
use crate::geo::{Catalog, Entity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub entity_id: String,
    pub score: f64,
}

/// Anything that orders a question's candidate universe.
pub trait Ranker {
    fn rank(&self, q: &QuestionInstance, universe: &[&Entity], catalog: &Catalog) -> Result<Vec<Ranked>>;
}

/// Sorts by score descending, breaking ties by entity id ascending.
pub fn rank_by_score(scored: impl IntoIterator<Item = (String, f64)>) -> Vec<Ranked> {
    let mut out: Vec<Ranked> = scored
        .into_iter()
        .map(|(entity_id, score)| Ranked { entity_id, score })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    out
}

/// 1-based position of `entity_id`.
pub fn rank_of(ranked: &[Ranked], entity_id: &str) -> Option<usize> {
    ranked.iter().position(|r| r.entity_id == entity_id).map(|p| p + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn higher_first_then_id() {
        let r = rank_by_score([("a".into(), 1.0), ("b".into(), 2.0)]);
        assert_eq!(r[0].entity_id, "b");
        let r = rank_by_score([("c".into(), 0.0), ("a".into(), 0.0), ("b".into(), 0.0)]);
        let ids: Vec<_> = r.iter().map(|x| x.entity_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(rank_of(&r, "c"), Some(3));
    }
}
