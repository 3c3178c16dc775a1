//! Closed-vocabulary word tokenizer.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{file_err, Error, Result};
use crate::masks::StructureId;
use crate::metrics::tokenize_words;
use crate::prompt::{INSTRUCTION, LATERAL_INTRO, MASK_SENTENCE, PRIOR_CLAUSE, PRIOR_INTRO, SYSTEM_TEXT};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TokenizerFile", into = "TokenizerFile")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: Vec<String>,
}

impl From<Tokenizer> for TokenizerFile {
    fn from(t: Tokenizer) -> Self {
        Self { vocab: t.vocab }
    }
}

impl TryFrom<TokenizerFile> for Tokenizer {
    type Error = Error;

    fn try_from(f: TokenizerFile) -> Result<Self> {
        if f.vocab.len() < SPECIALS.len() || f.vocab[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Contract(
                "tokenizer file does not start with the special tokens".into(),
            ));
        }
        let index: HashMap<String, usize> = f.vocab.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        if index.len() != f.vocab.len() {
            return Err(Error::Contract("tokenizer vocabulary has duplicate entries".into()));
        }
        Ok(Self { vocab: f.vocab, index })
    }
}

/// Every fixed string the prompt builder and SoM listing can emit.
pub fn template_texts() -> Vec<String> {
    let mut t: Vec<String> = [SYSTEM_TEXT, LATERAL_INTRO, PRIOR_INTRO, INSTRUCTION, PRIOR_CLAUSE]
        .map(String::from)
        .to_vec();
    t.push(MASK_SENTENCE.replace("{positive structures}", "and"));
    t.extend(StructureId::ALL.iter().map(|s| format!("prior {} mask", s.name())));
    t.push("INDICATION: TECHNIQUE: COMPARISON: PRIOR REPORT:".into());
    t.push((1..=9).map(|k| format!("mark {k}:")).collect::<Vec<_>>().join(" "));
    t
}

impl Tokenizer {
    /// Specials first, then every word of `texts` and the templates, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts
            .into_iter()
            .map(str::to_string)
            .chain(template_texts())
            .flat_map(|t| tokenize_words(&t))
            .collect();
        words.sort();
        words.dedup();
        let vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(words).collect();
        Self::try_from(TokenizerFile { vocab }).expect("sorted unique words after specials")
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.vocab.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize_words(text).iter().map(|w| self.id(w)).collect()
    }

    /// Space-joined words; special tokens are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= SPECIALS.len())
            .filter_map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(file_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_have_low_ids_and_round_trip() {
        let t = Tokenizer::build(["the heart is enlarged ."]);
        assert_eq!(t.word(PAD), Some("<pad>"));
        assert_eq!(t.word(EOS), Some("<eos>"));
        let ids = t.encode("The heart is enlarged.");
        assert!(ids.iter().all(|&i| i > UNK));
        assert_eq!(t.decode(&ids), "the heart is enlarged .");
        assert_eq!(t.encode("zebra"), vec![UNK]);
        let mut with_specials = vec![BOS];
        with_specials.extend(&ids);
        with_specials.push(EOS);
        assert_eq!(t.decode(&with_specials), "the heart is enlarged .");
    }

    #[test]
    fn templates_are_fully_covered() {
        let t = Tokenizer::build([]);
        for text in template_texts() {
            assert!(!t.encode(&text).contains(&UNK), "{text}");
        }
        assert!(!t.encode("mark 3: endotracheal tube").contains(&UNK));
    }

    #[test]
    fn vocabulary_is_a_bijection_and_persists() {
        let t = Tokenizer::build(["b a c a", "c d"]);
        for i in 0..t.vocab_size() {
            assert_eq!(t.id(t.word(i).unwrap()), i);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tok.json");
        t.save(&p).unwrap();
        assert_eq!(Tokenizer::load(&p).unwrap(), t);
        std::fs::write(&p, r#"{"vocab":["a","b"]}"#).unwrap();
        assert!(Tokenizer::load(&p).is_err());
    }
}
