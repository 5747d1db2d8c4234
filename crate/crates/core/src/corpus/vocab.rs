use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Dense token ids; `<pad>` is 0, `<unk>` is 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Maps every token seen at least `min_count` times, most frequent first
    /// (ties broken lexicographically).
    pub fn build(corpus: &Corpus, min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in corpus.iter() {
            for t in &ex.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect::<Vec<_>>();
        Ok(tokens.into())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Inverse of [`encode`](Self::encode) for in-vocabulary tokens; PAD ids
    /// are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().filter(|&&i| i != PAD_ID).map(|&i| self.token(i).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Corpus {
        texts
            .iter()
            .map(|t| Example::new(t.split_whitespace().map(String::from).collect(), 0))
            .collect()
    }

    #[test]
    fn min_count_filters() {
        let v = Vocabulary::build(&corpus(&["a a b"]), 2).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.contains("a") && !v.contains("b"));
        assert_eq!(v.id("b"), UNK_ID);
        let all = Vocabulary::build(&corpus(&["a a b"]), 1).unwrap();
        assert!(all.contains("a") && all.contains("b"));
        assert_eq!(all.id("zzz"), UNK_ID);
        assert_eq!(all.id("<pad>"), PAD_ID);
        assert!(Vocabulary::build(&Corpus::default(), 1).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(words in prop::collection::vec("[a-e]{1,3}", 1..30)) {
            let c = corpus(&[&words.join(" ")]);
            let v = Vocabulary::build(&c, 1).unwrap();
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids), words.clone());
            prop_assert_eq!(v.encode(&v.decode(&ids)), ids);
        }
    }
}
