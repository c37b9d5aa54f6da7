//! Minibatch gradient steps shared by every training loop.

use npov_autograd::optim::{clip_gradients, Adam};
use npov_autograd::{Graph, ParamStore, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            max_grad_norm: 3.0,
            seed: 0,
        }
    }
}

/// One optimizer step: averages the per-example losses built by `loss` over
/// `batch`, clips, and applies Adam. Returns the mean loss.
pub fn train_batch<F>(
    store: &mut ParamStore<f32>,
    adam: &mut Adam,
    batch: &[usize],
    cfg: &OptimConfig,
    step: u64,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&mut Graph<f32>, usize) -> Result<Var>,
{
    store.zero_grad();
    let mut total = 0.0;
    for (k, &item) in batch.iter().enumerate() {
        let seed = cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 48);
        let grads = {
            let mut g = Graph::new(store).train_mode(seed);
            let l = loss(&mut g, item)?;
            total += g.value(l).item() as f64;
            g.backward(l)?
        };
        store.accumulate(&grads);
    }
    let n = batch.len().max(1);
    store.scale_grads(1.0 / n as f64);
    clip_gradients(store, cfg.max_grad_norm);
    adam.step(store);
    Ok(total / n as f64)
}

/// Endless epoch-shuffled stream of dataset indices.
pub struct Batches {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            order: (0..len).collect(),
            cursor: len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size && !self.order.is_empty() {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Batches covering one pass over the data (the last may be short).
    pub fn epoch(&mut self, size: usize) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.cursor = self.order.len();
        self.order
            .chunks(size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}
