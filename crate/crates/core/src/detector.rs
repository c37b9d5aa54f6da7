//! Per-token subjectivity detection from contextual embeddings and lexicon
//! features.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use npov_autograd::encoder::{ContextualEncoder, EncoderConfig};
use npov_autograd::nn::{Linear, INIT_SCALE};
use npov_autograd::optim::Adam;
use npov_autograd::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::train::{train_batch, Batches, OptimConfig};
use crate::vocab::Vocab;
use crate::{Error, Result};

/// Probability clamp inside the detection loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub name: String,
    pub terms: BTreeSet<String>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(name: &str, terms: &[S]) -> Self {
        Self {
            name: name.to_string(),
            terms: terms
                .iter()
                .map(|t| t.as_ref().trim().to_lowercase())
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.terms.contains(word)
    }
}

/// Reads one lexicon per file (one term per line), named by file stem and
/// sorted by name.
pub fn load_lexicons(dir: &Path) -> Result<Vec<Lexicon>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut lexicons: Vec<Lexicon> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Lexicon(format!("bad file name {}", path.display())))?
            .to_string();
        if lexicons.iter().any(|l| l.name == name) {
            return Err(Error::Lexicon(format!("duplicate lexicon name {name:?}")));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let terms: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if terms.is_empty() {
            return Err(Error::Lexicon(format!("{} is empty", path.display())));
        }
        lexicons.push(Lexicon::new(&name, &terms));
    }
    if lexicons.is_empty() {
        log::warn!("no lexicons found in {}", dir.display());
    }
    lexicons.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(lexicons)
}

/// The seed lexicons shipped with the crate.
pub fn bundled_lexicons() -> Vec<Lexicon> {
    let files = [
        (
            "assertives",
            include_str!("../data/lexicons/assertives.txt"),
        ),
        ("factives", include_str!("../data/lexicons/factives.txt")),
        ("hedges", include_str!("../data/lexicons/hedges.txt")),
        (
            "implicatives",
            include_str!("../data/lexicons/implicatives.txt"),
        ),
        (
            "subjectives",
            include_str!("../data/lexicons/subjectives.txt"),
        ),
    ];
    files
        .iter()
        .map(|(name, text)| {
            let terms: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            Lexicon::new(name, &terms)
        })
        .collect()
}

pub fn feature_dim(lexicons: usize) -> usize {
    3 * lexicons + 2
}

/// Binary features per token: membership of the token, its left neighbor and
/// its right neighbor in each lexicon, then sentence-initial and -final bits.
pub fn extract_features<S: AsRef<str>>(words: &[S], lexicons: &[Lexicon]) -> Vec<Vec<f32>> {
    let l = lexicons.len();
    let n = words.len();
    let member = |i: usize, k: usize| lexicons[k].contains(words[i].as_ref());
    (0..n)
        .map(|i| {
            let mut f = vec![0.0; feature_dim(l)];
            for k in 0..l {
                if member(i, k) {
                    f[k] = 1.0;
                }
                if i > 0 && member(i - 1, k) {
                    f[l + k] = 1.0;
                }
                if i + 1 < n && member(i + 1, k) {
                    f[2 * l + k] = 1.0;
                }
            }
            if i == 0 {
                f[3 * l] = 1.0;
            }
            if i + 1 == n {
                f[3 * l + 1] = 1.0;
            }
            f
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Contextual embedding size `b`.
    pub dim: usize,
    /// Width of the lexicon-feature projection.
    pub feature_hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            feature_hidden: 64,
            layers: 2,
            dropout: 0.1,
            max_len: 128,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub encoder: ContextualEncoder,
    pub w_in: Linear,
    pub w_b: ParamId,
    pub w_e: ParamId,
    pub bias: ParamId,
    pub feature_dim: usize,
}

/// Token ids (category token first) and the flattened feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorInput {
    pub ids: Vec<usize>,
    pub features: Vec<f32>,
}

impl DetectorInput {
    pub fn new<S: AsRef<str>>(
        vocab: &Vocab,
        lexicons: &[Lexicon],
        words: &[S],
        category: &str,
    ) -> Self {
        let mut ids = Vec::with_capacity(words.len() + 1);
        ids.push(vocab.category_id(category));
        ids.extend(vocab.encode(words));
        let features = extract_features(words, lexicons).concat();
        Self { ids, features }
    }

    pub fn len(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct DetectorOutput {
    /// `[n, 1]` pre-sigmoid scores, category position excluded.
    pub logits: Var,
    /// `[n, b]` contextual states of the tokens.
    pub states: Var,
}

impl Detector {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        feature_dim: usize,
        cfg: &DetectorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut enc_cfg = EncoderConfig::new(vocab, cfg.dim);
        enc_cfg.layers = cfg.layers;
        enc_cfg.dropout = cfg.dropout;
        enc_cfg.max_len = cfg.max_len + 1;
        Ok(Self {
            encoder: ContextualEncoder::new(store, &format!("{name}.enc"), enc_cfg, rng)?,
            w_in: Linear::new(
                store,
                &format!("{name}.w_in"),
                feature_dim,
                cfg.feature_hidden,
                false,
                rng,
            )?,
            w_b: store.add_uniform(format!("{name}.w_b"), &[cfg.dim, 1], INIT_SCALE, rng)?,
            w_e: store.add_uniform(
                format!("{name}.w_e"),
                &[cfg.feature_hidden, 1],
                INIT_SCALE,
                rng,
            )?,
            bias: store.add_uniform(format!("{name}.bias"), &[1, 1], INIT_SCALE, rng)?,
            feature_dim,
        })
    }

    /// `logit_i = b_i · W_b + ReLU(f_i · W_in) · W_e + bias`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        input: &DetectorInput,
    ) -> Result<DetectorOutput> {
        let n = input.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let encoded = self.encoder.encode(g, &input.ids)?;
        let states = g.slice(encoded, 0, 1, n)?;
        let feats = Tensor::new(
            &[n, self.feature_dim],
            input.features.iter().map(|&v| T::of(v as f64)).collect(),
        )?;
        let feats = g.constant(feats);
        let e = self.w_in.forward(g, feats)?;
        let e = g.relu(e);
        let (w_b, w_e, bias) = (g.param(self.w_b), g.param(self.w_e), g.param(self.bias));
        let from_b = g.matmul(states, w_b)?;
        let from_e = g.matmul(e, w_e)?;
        let logits = g.add(from_b, from_e)?;
        let logits = g.add(logits, bias)?;
        Ok(DetectorOutput { logits, states })
    }

    /// Token probabilities under inference mode.
    pub fn detect(&self, store: &ParamStore<f32>, input: &DetectorInput) -> Result<Vec<f64>> {
        let mut g = Graph::inference(store);
        let out = self.forward(&mut g, input)?;
        let p = g.sigmoid(out.logits);
        Ok(g.value(p).to_f64_vec())
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
pub fn detection_loss<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let n = g.shape(logits)[0];
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let p = g.sigmoid(logits);
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let y = Tensor::new(&[n, 1], labels.iter().map(|&l| T::of(l as f64)).collect())?;
    let y = g.constant(y);
    let log_p = g.log(p);
    let q = g.one_minus(p);
    let log_q = g.log(q);
    let pos = g.mul(y, log_p)?;
    let not_y = g.one_minus(y);
    let neg = g.mul(not_y, log_q)?;
    let ll = g.add(pos, neg)?;
    let m = g.mean(ll);
    Ok(g.neg(m))
}

/// The same loss evaluated directly on probabilities.
pub fn bce(p: &[f64], labels: &[u8]) -> Result<f64> {
    if p.len() != labels.len() || p.is_empty() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: p.len(),
        });
    }
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-total / p.len() as f64)
}

/// Index of the highest probability; the lowest index wins ties.
pub fn select_top_word(p: &[f64]) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(npov_autograd::encoder::argmax(p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub input: DetectorInput,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct DetectorReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains on labeled examples for `epochs` passes; `on_epoch` runs after each.
pub fn train_detector<F>(
    store: &mut ParamStore<f32>,
    detector: &Detector,
    data: &[LabeledExample],
    epochs: usize,
    cfg: &OptimConfig,
    mut on_epoch: F,
) -> Result<DetectorReport>
where
    F: FnMut(usize, &ParamStore<f32>) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut adam = Adam::new(cfg.lr);
    let mut batches = Batches::new(data.len(), cfg.seed);
    let mut report = DetectorReport::default();
    let mut step = 0u64;
    for epoch in 0..epochs {
        let mut sum = 0.0;
        let mut count = 0;
        for batch in batches.epoch(cfg.batch) {
            let loss = train_batch(store, &mut adam, &batch, cfg, step, |g, i| {
                let out = detector.forward(g, &data[i].input)?;
                detection_loss(g, out.logits, &data[i].labels)
            })?;
            sum += loss * batch.len() as f64;
            count += batch.len();
            step += 1;
        }
        report.epoch_losses.push(sum / count as f64);
        on_epoch(epoch, store)?;
    }
    Ok(report)
}

/// Mean detection loss over `data` in inference mode.
pub fn evaluate_loss(
    store: &ParamStore<f32>,
    detector: &Detector,
    data: &[LabeledExample],
) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        let p = detector.detect(store, &ex.input)?;
        total += bce(&p, &ex.labels)?;
    }
    Ok(total / data.len().max(1) as f64)
}
