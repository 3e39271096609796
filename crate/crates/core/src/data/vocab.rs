use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::conll::LabeledSequence;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word ids in first-seen order after the reserved `PAD` and `UNK`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_words(words: Vec<String>) -> Self {
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

/// Words seen at least `min_count` times get ids; the rest map to `UNK`.
pub fn build_vocab(corpus: &[LabeledSequence], min_count: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order = Vec::new();
    for s in corpus {
        for t in &s.tokens {
            let c = counts.entry(t.as_str()).or_insert_with(|| {
                order.push(t.as_str());
                0
            });
            *c += 1;
        }
    }
    let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    words.extend(
        order
            .into_iter()
            .filter(|w| counts[w] >= min_count && *w != PAD_TOKEN && *w != UNK_TOKEN)
            .map(str::to_string),
    );
    Vocab::from_words(words)
}
