use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::datagen::QuestionInstance;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

/// Token index built from training questions. Index 0 is [`UNK`]; the rest
/// are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(questions: impl IntoIterator<Item = &'a QuestionInstance>) -> Vocab {
        let set: BTreeSet<&str> = questions
            .into_iter()
            .flat_map(|q| q.tokens.iter().map(String::as_str))
            .filter(|t| *t != UNK)
            .collect();
        let tokens = std::iter::once(UNK)
            .chain(set)
            .map(str::to_string)
            .collect();
        Vocab::from_tokens(tokens).expect("built vocab is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Checkpoint(format!("vocab must start with {UNK}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Index of `token`, or 0 for unseen tokens.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
