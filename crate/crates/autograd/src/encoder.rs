//! Small self-attentive contextual encoder and its masked-token pretraining.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Linear, SelfAttentionLayer, INIT_SCALE};
use crate::optim::{clip_gradients, Adam};
use crate::{Error, Graph, ParamId, ParamStore, Real, Result, Tensor, Var};

/// How token order enters the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positions {
    /// None: the encoder is permutation-equivariant.
    None,
    Learned,
    /// Fixed sine/cosine features of the position.
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub positions: Positions,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn new(vocab: usize, dim: usize) -> Self {
        Self {
            vocab,
            dim,
            layers: 2,
            ff_dim: 2 * dim,
            max_len: 128,
            positions: Positions::Learned,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ContextualEncoder {
    pub config: EncoderConfig,
    pub tokens: ParamId,
    pub positions: Option<ParamId>,
    pub layers: Vec<SelfAttentionLayer>,
}

impl ContextualEncoder {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let tokens = store.add_uniform(
            format!("{name}.tok"),
            &[config.vocab, config.dim],
            INIT_SCALE,
            rng,
        )?;
        let positions = if config.positions == Positions::Learned {
            Some(store.add_uniform(
                format!("{name}.pos"),
                &[config.max_len, config.dim],
                INIT_SCALE,
                rng,
            )?)
        } else {
            None
        };
        let layers = (0..config.layers)
            .map(|l| {
                SelfAttentionLayer::new(
                    store,
                    &format!("{name}.layer{l}"),
                    config.dim,
                    config.ff_dim,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            tokens,
            positions,
            layers,
        })
    }

    /// Contextual vectors `[ids.len(), dim]`, one per input id.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, ids: &[usize]) -> Result<Var> {
        if ids.len() > self.config.max_len {
            return Err(Error::Index {
                op: "contextual_encode",
                index: ids.len(),
                size: self.config.max_len,
            });
        }
        let table = g.param(self.tokens);
        let mut x = g.embedding(table, ids)?;
        if let Some(pos) = self.positions {
            let pos = g.param(pos);
            let p = g.slice(pos, 0, 0, ids.len())?;
            x = g.add(x, p)?;
        } else if self.config.positions == Positions::Sinusoidal {
            let p = g.constant(sinusoids(ids.len(), self.config.dim));
            x = g.add(x, p)?;
        }
        let dropout = self.config.dropout;
        for layer in &self.layers {
            x = layer.forward(g, x, dropout)?;
        }
        Ok(x)
    }
}

/// `[n, dim]` table with `sin(t / 10000^(2i/dim))` in even columns and the
/// matching cosine in odd ones.
pub fn sinusoids<T: Real>(n: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * dim);
    for t in 0..n {
        for j in 0..dim {
            let rate = 10000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
            let angle = t as f64 * rate;
            data.push(T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(&[n, dim], data).expect("shape matches data")
}

#[derive(Clone, Debug)]
pub struct MlmConfig {
    pub mask_prob: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub mask_id: usize,
    /// Ids never selected for masking (specials, category tags).
    pub protected: Vec<usize>,
}

/// Output projection from contextual vectors back to the vocabulary.
#[derive(Clone, Debug)]
pub struct MlmHead {
    pub proj: Linear,
}

impl MlmHead {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(store, name, dim, vocab, true, rng)?,
        })
    }
}

/// Picks masked positions; redraws up to a bound when nothing got masked.
fn draw_mask<R: Rng>(ids: &[usize], cfg: &MlmConfig, rng: &mut R) -> Result<Vec<usize>> {
    if cfg.mask_prob <= 0.0 {
        return Err(Error::NoMaskedPositions(cfg.mask_prob));
    }
    let eligible: Vec<usize> = (0..ids.len())
        .filter(|&i| !cfg.protected.contains(&ids[i]))
        .collect();
    if eligible.is_empty() {
        return Ok(Vec::new());
    }
    for _ in 0..100 {
        let picked: Vec<usize> = eligible
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() < cfg.mask_prob)
            .collect();
        if !picked.is_empty() {
            return Ok(picked);
        }
    }
    Err(Error::NoMaskedPositions(cfg.mask_prob))
}

fn mlm_loss<T: Real>(
    g: &mut Graph<T>,
    encoder: &ContextualEncoder,
    head: &MlmHead,
    ids: &[usize],
    masked: &[usize],
    mask_id: usize,
) -> Result<(Var, usize)> {
    let mut input = ids.to_vec();
    for &i in masked {
        input[i] = mask_id;
    }
    let enc = encoder.encode(g, &input)?;
    let logits = head.proj.forward(g, enc)?;
    let logp = g.log_softmax(logits);
    let vocab = g.shape(logp)[1];
    let mut picks = Vec::with_capacity(masked.len());
    for &i in masked {
        let row = g.row(logp, i)?;
        let target = ids[i];
        if target >= vocab {
            return Err(Error::Index {
                op: "mlm_loss",
                index: target,
                size: vocab,
            });
        }
        picks.push(g.slice(row, 1, target, 1)?);
    }
    let all = g.concat(&picks, 1)?;
    let total = g.sum(all);
    Ok((g.neg(total), masked.len()))
}

#[derive(Clone, Debug, Default)]
pub struct MlmReport {
    /// Mean masked-token cross-entropy per step.
    pub losses: Vec<f64>,
}

/// Trains `encoder` and `head` to recover masked tokens of `corpus`.
pub fn masked_lm_pretrain(
    store: &mut ParamStore<f32>,
    encoder: &ContextualEncoder,
    head: &MlmHead,
    corpus: &[Vec<usize>],
    cfg: &MlmConfig,
) -> Result<MlmReport> {
    if corpus.is_empty() {
        return Err(Error::Config("empty pretraining corpus".into()));
    }
    if cfg.mask_prob <= 0.0 {
        return Err(Error::NoMaskedPositions(cfg.mask_prob));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut report = MlmReport::default();
    for step in 0..cfg.steps {
        store.zero_grad();
        let mut step_loss = 0.0;
        let mut count = 0usize;
        for _ in 0..cfg.batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ids = &corpus[order[cursor]];
            cursor += 1;
            let masked = draw_mask(ids, cfg, &mut rng)?;
            if masked.is_empty() {
                continue;
            }
            let grads = {
                let mut g =
                    Graph::new(store).train_mode(cfg.seed ^ ((step as u64) << 20) ^ count as u64);
                let (loss, n) = mlm_loss(&mut g, encoder, head, ids, &masked, cfg.mask_id)?;
                step_loss += g.value(loss).item() as f64;
                count += n;
                g.backward(loss)?
            };
            store.accumulate(&grads);
        }
        if count == 0 {
            continue;
        }
        store.scale_grads(1.0 / count as f64);
        clip_gradients(store, cfg.max_grad_norm);
        adam.step(store);
        report.losses.push(step_loss / count as f64);
    }
    Ok(report)
}

/// Fraction of masked tokens recovered by argmax, over one masking draw per sentence.
pub fn masked_recovery(
    store: &ParamStore<f32>,
    encoder: &ContextualEncoder,
    head: &MlmHead,
    corpus: &[Vec<usize>],
    cfg: &MlmConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (mut hit, mut total) = (0usize, 0usize);
    for ids in corpus {
        let masked = draw_mask(ids, cfg, &mut rng)?;
        let mut input = ids.clone();
        for &i in &masked {
            input[i] = cfg.mask_id;
        }
        let mut g = Graph::inference(store);
        let enc = encoder.encode(&mut g, &input)?;
        let logits = head.proj.forward(&mut g, enc)?;
        let v = g.value(logits);
        let vocab = v.shape()[1];
        for &i in &masked {
            let row = &v.data()[i * vocab..(i + 1) * vocab];
            let best = argmax(row);
            hit += usize::from(best == ids[i]);
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
