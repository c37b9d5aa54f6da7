//! Tokenization, edit distances, token diffs and BLEU.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Lowercased surface; every comparison in the crate uses this field.
    pub norm: String,
}

impl Token {
    pub fn new(surface: &str) -> Self {
        Self {
            surface: surface.to_string(),
            norm: surface.to_lowercase(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub raw: String,
}

impl Sentence {
    /// Builds a sentence from already-split words, joining them with spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyInput);
        }
        let tokens: Vec<Token> = words.iter().map(|w| Token::new(w.as_ref())).collect();
        let raw = words
            .iter()
            .map(|w| w.as_ref())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Self { tokens, raw })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn norms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.norm.as_str()).collect()
    }

    pub fn norm_strings(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.norm.clone()).collect()
    }

    /// Normalized tokens joined by single spaces.
    pub fn normalized_text(&self) -> String {
        self.norms().join(" ")
    }
}

/// Splits on whitespace, then splits every non-alphanumeric character into a
/// token of its own.
pub fn tokenize(raw: &str) -> Result<Sentence> {
    let mut tokens = Vec::new();
    for word in raw.split_whitespace() {
        let mut run = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                run.push(ch);
            } else {
                if !run.is_empty() {
                    tokens.push(Token::new(&run));
                    run.clear();
                }
                tokens.push(Token::new(ch.encode_utf8(&mut [0; 4])));
            }
        }
        if !run.is_empty() {
            tokens.push(Token::new(&run));
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Sentence {
        tokens,
        raw: raw.trim().to_string(),
    })
}

pub fn levenshtein_chars(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Equal,
    Delete,
    Insert,
    Replace,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: OpKind,
    pub src: Range<usize>,
    pub tgt: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    pub fn source_len(&self) -> usize {
        self.ops.last().map_or(0, |op| op.src.end)
    }

    pub fn target_len(&self) -> usize {
        self.ops.last().map_or(0, |op| op.tgt.end)
    }

    pub fn changed(&self) -> impl Iterator<Item = &EditOp> {
        self.ops.iter().filter(|op| op.kind != OpKind::Equal)
    }

    /// Rebuilds the target by copying equal spans from `src` and every
    /// inserted or replacing span from `tgt`.
    pub fn apply<S: AsRef<str>>(&self, src: &[S], tgt: &[S]) -> Vec<String> {
        let mut out = Vec::new();
        for op in &self.ops {
            match op.kind {
                OpKind::Equal => {
                    out.extend(src[op.src.clone()].iter().map(|s| s.as_ref().to_string()))
                }
                OpKind::Delete => {}
                OpKind::Insert | OpKind::Replace => {
                    out.extend(tgt[op.tgt.clone()].iter().map(|s| s.as_ref().to_string()))
                }
            }
        }
        out
    }
}

/// Longest-common-subsequence diff of normalized tokens. Each maximal run of
/// non-matching tokens becomes one op: a replace when it both removes and adds
/// tokens, otherwise a delete or an insert.
pub fn token_diff(s: &Sentence, t: &Sentence) -> EditScript {
    diff_words(&s.norms(), &t.norms())
}

pub fn diff_words<S: AsRef<str> + PartialEq>(a: &[S], b: &[S]) -> EditScript {
    let (n, m) = (a.len(), b.len());
    // lcs[i][j] = LCS length of a[i..] and b[j..]
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i].as_ref() == b[j].as_ref() {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut ops: Vec<EditOp> = Vec::new();
    let push = |ops: &mut Vec<EditOp>, kind: OpKind, i: usize, j: usize, di: usize, dj: usize| {
        let merged_kind = |prev: OpKind| match (prev, kind) {
            (OpKind::Equal, OpKind::Equal) => Some(OpKind::Equal),
            (OpKind::Equal, _) | (_, OpKind::Equal) => None,
            (p, k) if p == k => Some(k),
            _ => Some(OpKind::Replace),
        };
        if let Some(last) = ops.last_mut() {
            if let Some(k) = merged_kind(last.kind) {
                last.kind = k;
                last.src.end = i + di;
                last.tgt.end = j + dj;
                return;
            }
        }
        ops.push(EditOp {
            kind,
            src: i..i + di,
            tgt: j..j + dj,
        });
    };
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i].as_ref() == b[j].as_ref() {
            push(&mut ops, OpKind::Equal, i, j, 1, 1);
            i += 1;
            j += 1;
        } else if j == m || (i < n && lcs[i + 1][j] >= lcs[i][j + 1]) {
            push(&mut ops, OpKind::Delete, i, j, 1, 0);
            i += 1;
        } else {
            push(&mut ops, OpKind::Insert, i, j, 0, 1);
            j += 1;
        }
    }
    EditScript { ops }
}

/// 1 for every source position inside a delete or replace span.
pub fn labels_from_diff(script: &EditScript, n: usize) -> Result<Vec<u8>> {
    if script.source_len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: script.source_len(),
        });
    }
    let mut labels = vec![0u8; n];
    for op in &script.ops {
        if matches!(op.kind, OpKind::Delete | OpKind::Replace) {
            labels[op.src.clone()].iter_mut().for_each(|l| *l = 1);
        }
    }
    Ok(labels)
}

/// Clipped n-gram matches and candidate n-gram totals for orders `1..=max_n`,
/// plus candidate and reference lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> Self {
        let mut matches = Vec::with_capacity(max_n);
        let mut totals = Vec::with_capacity(max_n);
        for n in 1..=max_n {
            let cand = ngram_counts(candidate, n);
            let refs = ngram_counts(reference, n);
            matches.push(
                cand.iter()
                    .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
                    .sum(),
            );
            totals.push(candidate.len().saturating_sub(n - 1));
        }
        Self {
            matches,
            totals,
            cand_len: candidate.len(),
            ref_len: reference.len(),
        }
    }

    /// Pools another pair's counts into these.
    pub fn add(&mut self, other: &BleuStats) {
        if self.matches.is_empty() {
            *self = other.clone();
            return;
        }
        for k in 0..self.matches.len() {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }
}

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *counts
                .entry(w.iter().map(|s| s.as_ref()).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU over normalized tokens. Unigram precision is unsmoothed, so
/// zero unigram overlap scores 0; higher orders use add-one smoothing.
pub fn sentence_bleu(candidate: &Sentence, reference: &Sentence, max_n: usize) -> f64 {
    bleu_words(&candidate.norms(), &reference.norms(), max_n)
}

pub fn bleu_words<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> f64 {
    let stats = BleuStats::new(candidate, reference, max_n);
    if stats.totals.first().copied().unwrap_or(0) == 0 || stats.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = (stats.matches[0] as f64 / stats.totals[0] as f64).ln();
    for k in 1..max_n {
        log_sum += ((stats.matches[k] + 1) as f64 / (stats.totals[k] + 1) as f64).ln();
    }
    stats.brevity_penalty() * (log_sum / max_n as f64).exp()
}

/// Corpus BLEU-4 with counts and lengths pooled over all pairs, unsmoothed.
/// Orders for which no candidate has any n-gram are left out of the mean.
pub fn corpus_bleu(pairs: &[(Sentence, Sentence)]) -> Result<f64> {
    let words: Vec<(Vec<&str>, Vec<&str>)> =
        pairs.iter().map(|(c, r)| (c.norms(), r.norms())).collect();
    corpus_bleu_words(&words, 4)
}

pub fn corpus_bleu_words<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], max_n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut pooled = BleuStats::default();
    for (c, r) in pairs {
        pooled.add(&BleuStats::new(c, r, max_n));
    }
    Ok(pooled.corpus_score())
}

impl BleuStats {
    /// Unsmoothed BLEU of pooled counts; orders without any candidate n-gram
    /// are left out of the mean.
    pub fn corpus_score(&self) -> f64 {
        let mut log_sum = 0.0;
        let mut orders = 0;
        for k in 0..self.totals.len() {
            if self.totals[k] == 0 {
                continue;
            }
            if self.matches[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        self.brevity_penalty() * (log_sum / orders as f64).exp()
    }
}

/// Capitalized, not sentence-initial, and not a lone capital letter.
pub fn is_proper_noun_like(tok: &Token, position: usize) -> bool {
    let mut chars = tok.surface.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    position > 0 && first.is_uppercase() && chars.next().is_some()
}
