use std::collections::BTreeSet;

use crate::datagen::{entity_keyword, QuestionInstance};
use crate::geo::{Entity, PoiType};

/// Textual relevance of a candidate to a question.
pub trait TextualScorer {
    fn score_text(&self, q: &QuestionInstance, candidate: &Entity) -> f64;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "at", "by", "de", "for", "from", "in", "la", "le", "of", "on", "the", "to",
];

/// Noun shared by every candidate of a type.
pub fn type_noun(poi_type: PoiType) -> &'static str {
    match poi_type {
        PoiType::R => "restaurant",
        PoiType::A => "attraction",
        PoiType::H => "hotel",
    }
}

/// Token-overlap scorer used in place of a review-reading model.
///
/// A candidate's bag holds its non-stopword name tokens, its type noun and,
/// for questions that carry a keyword, the candidate's own keyword. The score
/// is the share of the bag found in the question, minus the share explained
/// by the type noun alone, which every candidate of the universe shares.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub fn bag(&self, q: &QuestionInstance, candidate: &Entity) -> BTreeSet<String> {
        let mut bag: BTreeSet<String> = candidate
            .name_tokens()
            .filter(|t| !STOPWORDS.contains(&t.as_str()))
            .collect();
        bag.insert(type_noun(candidate.poi_type).to_string());
        if q.keyword.is_some() {
            bag.insert(entity_keyword(&candidate.id).to_string());
        }
        bag
    }
}

impl TextualScorer for LexicalScorer {
    fn score_text(&self, q: &QuestionInstance, candidate: &Entity) -> f64 {
        let bag = self.bag(q, candidate);
        if bag.is_empty() {
            return 0.0;
        }
        let question: BTreeSet<&str> = q.tokens.iter().map(String::as_str).collect();
        let hits = bag.iter().filter(|t| question.contains(t.as_str())).count();
        let base = usize::from(question.contains(type_noun(candidate.poi_type)));
        (hits as f64 - base as f64) / bag.len() as f64
    }
}
