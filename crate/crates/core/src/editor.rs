//! Bi-LSTM encoder and attentional LSTM decoder with copy and coverage,
//! denoising pretraining, and the token-weighted editing loss.

use std::collections::HashSet;

use npov_autograd::nn::{BiLstm, Linear, LstmCell, LstmState, INIT_SCALE};
use npov_autograd::optim::Adam;
use npov_autograd::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beam::{beam_search, BeamConfig, Hypothesis, StepModel};
use crate::train::{train_batch, Batches, OptimConfig};
use crate::vocab::{SourceIds, Vocab, EOS, SOS, UNK, UNKNOWN_CATEGORY};
use crate::{Error, Result};

/// Default Adam step size for denoising pretraining.
pub const PRETRAIN_LR: f64 = 3e-3;

/// Floor applied to probabilities before taking logs.
pub const MIN_PROB: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditorConfig {
    pub embed: usize,
    pub hidden: usize,
    /// Dropout on every LSTM input during training.
    pub dropout: f64,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self {
            embed: 64,
            hidden: 64,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight on target words that do not occur in the source.
    pub alpha: f64,
    pub coverage_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.3,
            coverage_weight: 1.0,
        }
    }
}

/// Encoder output the decoder attends over.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[n, h]`
    pub states: Var,
    pub init: LstmState,
}

/// Attentional LSTM decoder with input feeding, a copy gate and coverage.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub embedding: ParamId,
    pub lstm: LstmCell,
    pub attn: ParamId,
    pub combine: Linear,
    pub out: Linear,
    pub gate: Linear,
    pub vocab: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub lstm: LstmState,
    /// Attentional vector of the previous step, fed back as input.
    pub feed: Var,
    /// `[1, n]` sum of earlier attention maps.
    pub coverage: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `[1, vocab + oovs]` final distribution.
    pub dist: Var,
    /// `[1, n]`
    pub attention: Var,
    /// Scalar `Σ_i min(a_i, coverage_i)`.
    pub coverage_penalty: Var,
    pub p_gen: Var,
    pub state: DecoderState,
}

/// Per-source data the decoder needs at every step.
#[derive(Clone, Debug)]
pub struct CopySource {
    /// Extended id of each attendable position.
    pub ext: Vec<usize>,
    pub oovs: usize,
}

impl From<&SourceIds> for CopySource {
    fn from(s: &SourceIds) -> Self {
        Self {
            ext: s.ext.clone(),
            oovs: s.oovs.len(),
        }
    }
}

impl Decoder {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        embedding: ParamId,
        embed: usize,
        hidden: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            embedding,
            lstm: LstmCell::new(store, &format!("{name}.lstm"), embed + hidden, hidden, rng)?,
            attn: store.add_uniform(format!("{name}.attn"), &[hidden, hidden], INIT_SCALE, rng)?,
            combine: Linear::new(
                store,
                &format!("{name}.combine"),
                2 * hidden,
                hidden,
                true,
                rng,
            )?,
            out: Linear::new(store, &format!("{name}.out"), hidden, vocab, true, rng)?,
            gate: Linear::new(
                store,
                &format!("{name}.gate"),
                2 * hidden + embed,
                1,
                true,
                rng,
            )?,
            vocab,
            hidden,
        })
    }

    pub fn initial_state<T: Real>(&self, g: &mut Graph<T>, enc: &Encoded) -> DecoderState {
        let n = g.shape(enc.states)[0];
        DecoderState {
            lstm: enc.init,
            feed: g.constant(Tensor::zeros(&[1, self.hidden])),
            coverage: g.constant(Tensor::zeros(&[1, n])),
        }
    }

    /// One decoding step after emitting `prev` (an extended id; copied
    /// out-of-vocabulary words are fed back as UNK).
    #[allow(clippy::too_many_arguments)]
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        enc: &Encoded,
        src: &CopySource,
        prev: usize,
        state: &DecoderState,
        dropout: f64,
        force_p_gen: Option<f64>,
    ) -> Result<StepOutput> {
        let prev = if prev < self.vocab { prev } else { UNK };
        let table = g.param(self.embedding);
        let emb = g.embedding(table, &[prev])?;
        let x = g.concat(&[emb, state.feed], 1)?;
        let x = g.dropout(x, dropout);
        let lstm = self.lstm.step(g, x, state.lstm)?;
        let h = lstm.h;
        // general attention: score_i = h W_a H_i^T
        let w_a = g.param(self.attn);
        let q = g.matmul(h, w_a)?;
        let keys = g.transpose(enc.states)?;
        let scores = g.matmul(q, keys)?;
        let attention = g.softmax(scores);
        let context = g.matmul(attention, enc.states)?;
        let ctx_h = g.concat(&[context, h], 1)?;
        let att = self.combine.forward(g, ctx_h)?;
        let att = g.tanh(att);
        let logits = self.out.forward(g, att)?;
        let p_vocab = g.softmax(logits);
        let p_gen = match force_p_gen {
            Some(v) => g.constant(Tensor::full(&[1, 1], T::of(v))),
            None => {
                let gate_in = g.concat(&[context, h, emb], 1)?;
                let gate = self.gate.forward(g, gate_in)?;
                g.sigmoid(gate)
            }
        };
        let width = self.vocab + src.oovs;
        let gen = g.mul(p_vocab, p_gen)?;
        let gen = if src.oovs > 0 {
            let pad = g.constant(Tensor::zeros(&[1, src.oovs]));
            g.concat(&[gen, pad], 1)?
        } else {
            gen
        };
        let copy = g.scatter_add(attention, &src.ext, width)?;
        let p_copy = g.one_minus(p_gen);
        let copy = g.mul(copy, p_copy)?;
        let dist = g.add(gen, copy)?;
        let overlap = g.minimum(attention, state.coverage)?;
        let coverage_penalty = g.sum(overlap);
        let coverage = g.add(state.coverage, attention)?;
        Ok(StepOutput {
            dist,
            attention,
            coverage_penalty,
            p_gen,
            state: DecoderState {
                lstm,
                feed: att,
                coverage,
            },
        })
    }

    /// `-Σ_t w_t log p(y_t) + coverage_weight · Σ_t penalty_t` under teacher
    /// forcing. `targets` are extended ids and must end with EOS; `weights`
    /// has one entry per target.
    #[allow(clippy::too_many_arguments)]
    pub fn sequence_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        enc: &Encoded,
        src: &CopySource,
        targets: &[usize],
        weights: &[f64],
        coverage_weight: f64,
        dropout: f64,
    ) -> Result<Var> {
        if targets.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: targets.len(),
                found: weights.len(),
            });
        }
        let mut state = self.initial_state(g, enc);
        let mut picks = Vec::with_capacity(targets.len());
        let mut penalties = Vec::with_capacity(targets.len());
        let mut prev = SOS;
        for &y in targets {
            let out = self.step(g, enc, src, prev, &state, dropout, None)?;
            picks.push(g.slice(out.dist, 1, y, 1)?);
            penalties.push(out.coverage_penalty);
            state = out.state;
            prev = y;
        }
        let probs = g.concat(&picks, 1)?;
        let probs = g.clamp(probs, MIN_PROB, 1.0);
        let logp = g.log(probs);
        let w = Tensor::new(
            &[1, weights.len()],
            weights.iter().map(|&v| T::of(v)).collect(),
        )?;
        let w = g.constant(w);
        let weighted = g.mul(logp, w)?;
        let nll = g.sum(weighted);
        let nll = g.neg(nll);
        let cov = g.concat(&penalties, 0)?;
        let cov = g.sum(cov);
        let cov = g.scale(cov, coverage_weight);
        Ok(g.add(nll, cov)?)
    }
}

/// The editing module: shared embeddings, bi-LSTM encoder projected to the
/// decoder size, and the attentional decoder.
#[derive(Clone, Debug)]
pub struct Editor {
    pub embedding: ParamId,
    pub encoder: BiLstm,
    pub project: Linear,
    pub init_h: Linear,
    pub init_c: Linear,
    pub decoder: Decoder,
    pub config: EditorConfig,
}

impl Editor {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        config: &EditorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (e, h) = (config.embed, config.hidden);
        let embedding =
            store.add_uniform(format!("{name}.embedding"), &[vocab, e], INIT_SCALE, rng)?;
        Ok(Self {
            embedding,
            encoder: BiLstm::new(store, &format!("{name}.encoder"), e, h, rng)?,
            project: Linear::new(store, &format!("{name}.project"), 2 * h, h, true, rng)?,
            init_h: Linear::new(store, &format!("{name}.init_h"), 2 * h, h, true, rng)?,
            init_c: Linear::new(store, &format!("{name}.init_c"), 2 * h, h, true, rng)?,
            decoder: Decoder::new(
                store,
                &format!("{name}.decoder"),
                embedding,
                e,
                h,
                vocab,
                rng,
            )?,
            config: config.clone(),
        })
    }

    /// One `h`-dimensional state per source id, plus the decoder's initial state.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        ids: &[usize],
        dropout: f64,
    ) -> Result<Encoded> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let table = g.param(self.embedding);
        let xs = g.embedding(table, ids)?;
        let bi = self.encoder.encode(g, xs, dropout)?;
        let states = self.project.forward(g, bi.states)?;
        let hs = g.concat(&[bi.forward_final.h, bi.backward_final.h], 1)?;
        let cs = g.concat(&[bi.forward_final.c, bi.backward_final.c], 1)?;
        let h0 = self.init_h.forward(g, hs)?;
        let h0 = g.tanh(h0);
        let c0 = self.init_c.forward(g, cs)?;
        Ok(Encoded {
            states,
            init: LstmState { h: h0, c: c0 },
        })
    }
}

/// Per-target weights: `alpha` for words absent from the source, else 1.
pub fn lambda_weights<S: AsRef<str>>(source: &[S], target: &[S], alpha: f64) -> Vec<f64> {
    let src: HashSet<&str> = source.iter().map(|s| s.as_ref()).collect();
    target
        .iter()
        .map(|w| if src.contains(w.as_ref()) { 1.0 } else { alpha })
        .collect()
}

/// Weights for [`target_ids`]: the lambda weights plus 1 for the end token.
pub fn step_weights<S: AsRef<str>>(source: &[S], target: &[S], alpha: f64) -> Vec<f64> {
    let mut w = lambda_weights(source, target, alpha);
    w.push(1.0);
    w
}

/// Target ids in the extended space, terminated by EOS.
pub fn target_ids<S: AsRef<str>>(vocab: &Vocab, target: &[S], src: &SourceIds) -> Vec<usize> {
    let mut ids = vocab.encode_target(target, src);
    ids.push(EOS);
    ids
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Maximum displacement of any token.
    pub k: usize,
    pub p_drop: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { k: 3, p_drop: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corruption<T> {
    pub tokens: Vec<T>,
    /// `order[j]` is the original index of the token at shuffled position `j`.
    pub order: Vec<usize>,
    /// Survival of each shuffled position.
    pub kept: Vec<bool>,
}

/// Shuffles by sorting on `i + U[0, k]` (so no token moves more than `k`
/// places) and then drops each token with probability `p_drop`, redrawing the
/// drops if nothing survives.
pub fn corrupt<T: Clone, R: Rng>(x: &[T], cfg: &NoiseConfig, rng: &mut R) -> Corruption<T> {
    let mut keyed: Vec<(f64, usize)> = (0..x.len())
        .map(|i| (i as f64 + rng.gen::<f64>() * cfg.k as f64, i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let order: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    let mut kept = vec![true; x.len()];
    if cfg.p_drop > 0.0 && !x.is_empty() {
        loop {
            kept.iter_mut()
                .for_each(|k| *k = rng.gen::<f64>() >= cfg.p_drop);
            if kept.iter().any(|&k| k) {
                break;
            }
        }
    }
    let tokens = order
        .iter()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(&i, _)| x[i].clone())
        .collect();
    Corruption {
        tokens,
        order,
        kept,
    }
}

#[derive(Clone, Debug, Default)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
}

/// A model that encodes a source sentence for the attentional decoder.
pub trait Seq2Seq {
    fn decoder(&self) -> &Decoder;

    /// Training-time dropout.
    fn dropout(&self) -> f64;

    fn encode_source<T: Real>(
        &self,
        g: &mut Graph<T>,
        vocab: &Vocab,
        src: &SourceIds,
        category: &str,
        dropout: f64,
    ) -> Result<(Encoded, CopySource)>;
}

impl Seq2Seq for Editor {
    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn dropout(&self) -> f64 {
        self.config.dropout
    }

    fn encode_source<T: Real>(
        &self,
        g: &mut Graph<T>,
        _: &Vocab,
        src: &SourceIds,
        _: &str,
        dropout: f64,
    ) -> Result<(Encoded, CopySource)> {
        Ok((self.encode(g, &src.ids, dropout)?, CopySource::from(src)))
    }
}

fn category_at(categories: &[String], i: usize) -> &str {
    categories.get(i).map_or(UNKNOWN_CATEGORY, String::as_str)
}

/// Denoising autoencoder training: reconstruct each sentence from its
/// corrupted copy. `categories` is either empty or aligned with `corpus`.
/// Runs `steps` minibatches.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_autoencoder<M: Seq2Seq, F>(
    store: &mut ParamStore<f32>,
    model: &M,
    vocab: &Vocab,
    corpus: &[Vec<String>],
    categories: &[String],
    noise: &NoiseConfig,
    loss: &LossConfig,
    steps: usize,
    cfg: &OptimConfig,
    mut on_step: F,
) -> Result<PretrainReport>
where
    F: FnMut(usize, f64, &ParamStore<f32>) -> Result<()>,
{
    use rand::SeedableRng;
    if corpus.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
    let mut adam = Adam::new(cfg.lr);
    let mut batches = Batches::new(corpus.len(), cfg.seed);
    let mut report = PretrainReport::default();
    let dropout = model.dropout();
    for step in 0..steps {
        let batch = batches.next_batch(cfg.batch);
        let mut noisy = batch
            .iter()
            .map(|&i| corrupt(&corpus[i], noise, &mut rng).tokens)
            .collect::<Vec<_>>()
            .into_iter();
        let l = train_batch(store, &mut adam, &batch, cfg, step as u64, |g, i| {
            let x = &corpus[i];
            let src = vocab.encode_source(&noisy.next().unwrap_or_default());
            let tgt = target_ids(vocab, x, &src);
            let weights = vec![1.0; tgt.len()];
            let (enc, copy) =
                model.encode_source(g, vocab, &src, category_at(categories, i), dropout)?;
            model.decoder().sequence_loss(
                g,
                &enc,
                &copy,
                &tgt,
                &weights,
                loss.coverage_weight,
                dropout,
            )
        })?;
        report.losses.push(l);
        on_step(step, l, store)?;
    }
    Ok(report)
}

/// Fraction of target tokens (end token included) whose teacher-forced
/// argmax is correct when the model reads each sentence uncorrupted.
pub fn reconstruction_accuracy<M: Seq2Seq>(
    store: &ParamStore<f32>,
    model: &M,
    vocab: &Vocab,
    corpus: &[Vec<String>],
    categories: &[String],
) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, x) in corpus.iter().enumerate() {
        let mut g = Graph::inference(store);
        let src = vocab.encode_source(x);
        let tgt = target_ids(vocab, x, &src);
        let (enc, copy) =
            model.encode_source(&mut g, vocab, &src, category_at(categories, i), 0.0)?;
        let decoder = model.decoder();
        let mut state = decoder.initial_state(&mut g, &enc);
        let mut prev = SOS;
        for &y in &tgt {
            let out = decoder.step(&mut g, &enc, &copy, prev, &state, 0.0, None)?;
            let best = npov_autograd::encoder::argmax(g.value(out.dist).data());
            hit += usize::from(best == y);
            total += 1;
            state = out.state;
            prev = y;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// Adapts a decoder over a fixed encoding to the beam-search interface.
pub struct DecodeSession<'a, 'p> {
    pub g: &'a mut Graph<'p, f32>,
    pub decoder: &'a Decoder,
    pub enc: Encoded,
    pub src: CopySource,
}

impl StepModel for DecodeSession<'_, '_> {
    type State = DecoderState;

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(Vec<f64>, DecoderState)> {
        let out = self
            .decoder
            .step(self.g, &self.enc, &self.src, prev, state, 0.0, None)?;
        let logp = self
            .g
            .value(out.dist)
            .data()
            .iter()
            .map(|&p| (p as f64).max(MIN_PROB).ln())
            .collect();
        Ok((logp, out.state))
    }
}

/// Beam-decodes from an encoding.
pub fn beam_decode(
    g: &mut Graph<'_, f32>,
    decoder: &Decoder,
    enc: Encoded,
    src: CopySource,
    cfg: &BeamConfig,
) -> Result<Hypothesis<DecoderState>> {
    let init = decoder.initial_state(g, &enc);
    let mut session = DecodeSession {
        g,
        decoder,
        enc,
        src,
    };
    beam_search(&mut session, init, cfg)
}
