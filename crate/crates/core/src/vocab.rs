//! Token vocabulary shared by the detector and the editor.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const MASK: usize = 4;
pub const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<sos>", "<eos>", "<mask>"];
pub const UNKNOWN_CATEGORY: &str = "unknown";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub fn category_token(category: &str) -> String {
    format!("<cat:{}>", category.to_lowercase())
}

impl Vocab {
    /// Specials, then one token per category (plus "unknown"), then the
    /// `cap` most frequent words; frequency ties go to the alphabetically first.
    pub fn build<'a, I, C>(sentences: I, categories: C, cap: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
        C: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_str()).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut cats: Vec<String> = categories.into_iter().map(category_token).collect();
        cats.push(category_token(UNKNOWN_CATEGORY));
        cats.sort();
        cats.dedup();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(cats)
            .chain(words.into_iter().take(cap).map(|(w, _)| w.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary has unique tokens")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Config(format!(
                    "vocabulary must start with {SPECIALS:?}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Id of the category token, falling back to the "unknown" category.
    pub fn category_id(&self, category: &str) -> usize {
        self.get(&category_token(category))
            .or_else(|| self.get(&category_token(UNKNOWN_CATEGORY)))
            .unwrap_or(UNK)
    }

    pub fn categories(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter_map(|t| t.strip_prefix("<cat:").and_then(|t| t.strip_suffix('>')))
            .map(String::from)
            .collect()
    }

    /// Ids that are never a real word: specials and category tokens.
    pub fn reserved_ids(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| i < SPECIALS.len() || self.tokens[i].starts_with("<cat:"))
            .collect()
    }

    /// Maps a source sentence to vocabulary ids and to extended ids, where
    /// each distinct out-of-vocabulary word gets its own id past the end of
    /// the vocabulary so the decoder can copy it.
    pub fn encode_source<S: AsRef<str>>(&self, words: &[S]) -> SourceIds {
        let mut oovs: Vec<String> = Vec::new();
        let mut ids = Vec::with_capacity(words.len());
        let mut ext = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            match self.get(w) {
                Some(id) => {
                    ids.push(id);
                    ext.push(id);
                }
                None => {
                    ids.push(UNK);
                    let k = oovs.iter().position(|o| o == w).unwrap_or_else(|| {
                        oovs.push(w.to_string());
                        oovs.len() - 1
                    });
                    ext.push(self.len() + k);
                }
            }
        }
        SourceIds { ids, ext, oovs }
    }

    /// Target ids in the extended space of `src`: OOV target words that occur
    /// in the source map to their copy id, others to UNK.
    pub fn encode_target<S: AsRef<str>>(&self, words: &[S], src: &SourceIds) -> Vec<usize> {
        words
            .iter()
            .map(|w| {
                let w = w.as_ref();
                self.get(w).unwrap_or_else(|| {
                    src.oovs
                        .iter()
                        .position(|o| o == w)
                        .map_or(UNK, |k| self.len() + k)
                })
            })
            .collect()
    }

    /// Inverse of the extended mapping.
    pub fn decode_ext(&self, id: usize, src: &SourceIds) -> String {
        if id < self.len() {
            self.tokens[id].clone()
        } else {
            src.oovs
                .get(id - self.len())
                .cloned()
                .unwrap_or_else(|| SPECIALS[UNK].to_string())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceIds {
    pub ids: Vec<usize>,
    pub ext: Vec<usize>,
    pub oovs: Vec<String>,
}
