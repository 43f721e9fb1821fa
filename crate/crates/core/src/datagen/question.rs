use serde::{Deserialize, Serialize};

use crate::datagen::templates::ConstraintSign;
use crate::error::{Error, Result};
use crate::geo::{Catalog, GeoPoint, PoiType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioTag {
    B,
    I,
    O,
}

impl BioTag {
    /// Position of this tag in the one-hot encoding fed to the encoder.
    pub fn one_hot_index(self) -> usize {
        match self {
            BioTag::B => 0,
            BioTag::I => 1,
            BioTag::O => 2,
        }
    }
}

/// A tagged location mention. `span` is the half-open token range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub span: [usize; 2],
    pub entity_id: String,
    pub sign: ConstraintSign,
}

impl Mention {
    pub fn begin(&self) -> usize {
        self.span[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hardness {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Negative {
    pub entity_id: String,
    pub hardness: Hardness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub qid: String,
    pub city_id: String,
    pub poi_type: PoiType,
    pub template_id: u32,
    pub tokens: Vec<String>,
    pub bio_tags: Vec<BioTag>,
    pub mentions: Vec<Mention>,
    pub gold_id: String,
    pub negatives: Vec<Negative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<String>,
}

impl QuestionInstance {
    pub fn is_mention(&self, entity_id: &str) -> bool {
        self.mentions.iter().any(|m| m.entity_id == entity_id)
    }

    pub fn has_distractor(&self) -> bool {
        self.mentions
            .iter()
            .any(|m| m.sign == ConstraintSign::Distractor)
    }

    /// Mentions that constrain the answer (everything but distractors).
    pub fn reasoned_mentions(&self) -> usize {
        self.mentions
            .iter()
            .filter(|m| m.sign != ConstraintSign::Distractor)
            .count()
    }

    pub fn mention_text(&self, m: &Mention) -> String {
        self.tokens[m.span[0]..m.span[1]].join(" ")
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Signs and coordinates of every mention, in mention order.
    pub fn mention_points(&self, catalog: &Catalog) -> Result<Vec<(ConstraintSign, GeoPoint)>> {
        self.mentions
            .iter()
            .map(|m| Ok((m.sign, catalog.entity(&m.entity_id)?.location)))
            .collect()
    }

    /// Structural checks that need no catalog.
    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("question {}", self.qid);
        if self.tokens.len() != self.bio_tags.len() {
            return Err(Error::schema(
                ctx(),
                "bio_tags",
                format!(
                    "{} tags for {} tokens",
                    self.bio_tags.len(),
                    self.tokens.len()
                ),
            ));
        }
        check_bio(&self.bio_tags).map_err(|m| Error::schema(ctx(), "bio_tags", m))?;

        let n_begin = self.bio_tags.iter().filter(|t| **t == BioTag::B).count();
        if n_begin != self.mentions.len() {
            return Err(Error::schema(
                ctx(),
                "mentions",
                format!("{} mentions but {n_begin} B tags", self.mentions.len()),
            ));
        }
        for m in &self.mentions {
            let [s, e] = m.span;
            if s >= e || e > self.tokens.len() {
                return Err(Error::schema(ctx(), "mentions", format!("bad span {s}..{e}")));
            }
            let well_tagged = self.bio_tags[s] == BioTag::B
                && self.bio_tags[s + 1..e].iter().all(|t| *t == BioTag::I)
                && self.bio_tags.get(e) != Some(&BioTag::I);
            if !well_tagged {
                return Err(Error::schema(
                    ctx(),
                    "mentions",
                    format!("span {s}..{e} does not match its tags"),
                ));
            }
        }
        for (i, a) in self.mentions.iter().enumerate() {
            if self.mentions[..i].iter().any(|b| b.entity_id == a.entity_id) {
                return Err(Error::schema(
                    ctx(),
                    "mentions",
                    format!("entity {} mentioned twice", a.entity_id),
                ));
            }
        }
        if self.is_mention(&self.gold_id) {
            return Err(Error::schema(ctx(), "gold_id", "gold is a mention entity"));
        }
        if self.negatives.iter().any(|n| n.entity_id == self.gold_id) {
            return Err(Error::schema(ctx(), "negatives", "gold listed as a negative"));
        }
        Ok(())
    }

    /// Checks that every referenced entity exists in the question's universe.
    pub fn validate_against(&self, catalog: &Catalog) -> Result<()> {
        let ids = self
            .mentions
            .iter()
            .map(|m| m.entity_id.as_str())
            .chain(std::iter::once(self.gold_id.as_str()))
            .chain(self.negatives.iter().map(|n| n.entity_id.as_str()));
        for id in ids {
            let e = catalog.entity(id)?;
            if e.city_id != self.city_id || e.poi_type != self.poi_type {
                return Err(Error::schema(
                    format!("question {}", self.qid),
                    "entity",
                    format!("{id} is not a {} in {}", self.poi_type, self.city_id),
                ));
            }
        }
        Ok(())
    }
}

/// `I` may only follow `B` or `I`.
pub fn check_bio(tags: &[BioTag]) -> std::result::Result<(), String> {
    let mut prev = BioTag::O;
    for (i, &t) in tags.iter().enumerate() {
        if t == BioTag::I && prev == BioTag::O {
            return Err(format!("I without preceding B at token {i}"));
        }
        prev = t;
    }
    Ok(())
}

/// Lowercases and splits on whitespace and punctuation. Apostrophes survive
/// only between two alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || (c == '\''
                && !cur.is_empty()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if keep {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use BioTag::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Hello! Could anyone's   idea, 'Be Live' work?"),
            vec!["hello", "could", "anyone's", "idea", "be", "live", "work"]
        );
        assert_eq!(tokenize("..."), Vec::<String>::new());
    }

    #[test]
    fn bio_rules() {
        assert!(check_bio(&[O, B, I, I, O, B]).is_ok());
        assert!(check_bio(&[B, B, I]).is_ok());
        let err = check_bio(&[O, I, O]).unwrap_err();
        assert!(err.contains("I without preceding B"));
        assert!(check_bio(&[I]).is_err());
    }
}
