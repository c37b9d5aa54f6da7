//! Length-capped beam search over any step-wise scorer.

use crate::{Error, Result};

/// A left-to-right model that scores the next token given a state and the
/// previously emitted token.
pub trait StepModel {
    type State: Clone;

    /// Log-probabilities over the output space and the state after `prev`.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum generated tokens, the end token included.
    pub max_len: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Generated tokens; the last one is the end token unless the length cap
    /// stopped the hypothesis.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub state: S,
    pub finished: bool,
}

impl<S> Hypothesis<S> {
    /// Tokens without the trailing end token.
    pub fn content(&self, end: usize) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == end => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Each step expands every live hypothesis and walks the candidates from best
/// to worst (ties: earlier hypothesis, then lower token id), keeping up to
/// `width` non-final ones. End-token candidates met before the beam fills are
/// finished; those ranked below are discarded. At the length cap every kept
/// candidate is finished. Search stops once the best finished score is at
/// least the best live score, since scores never increase. The result is the
/// highest-scoring finished hypothesis, earliest finished on ties.
pub fn beam_search<M: StepModel>(
    model: &mut M,
    init: M::State,
    cfg: &BeamConfig,
) -> Result<Hypothesis<M::State>> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(Error::Config(
            "beam width and max length must be positive".into(),
        ));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        state: init,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();
    for t in 0..cfg.max_len {
        let last_step = t + 1 == cfg.max_len;
        let mut expanded = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(cfg.start);
            let (logp, state) = model.step(&hyp.state, prev)?;
            cands.extend(
                logp.iter()
                    .enumerate()
                    .map(|(v, &lp)| (hyp.logprob + lp, h, v)),
            );
            expanded.push(state);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.width);
        for (score, h, v) in cands {
            if next.len() == cfg.width {
                break;
            }
            if score == f64::NEG_INFINITY {
                break;
            }
            let mut tokens = live[h].tokens.clone();
            tokens.push(v);
            let hyp = Hypothesis {
                tokens,
                logprob: score,
                state: expanded[h].clone(),
                finished: v == cfg.end || last_step,
            };
            if v == cfg.end {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        if last_step {
            for mut hyp in next.drain(..) {
                hyp.finished = true;
                finished.push(hyp);
            }
        }
        live = next;
        let best_live = live
            .iter()
            .map(|h| h.logprob)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished
            .iter()
            .map(|h| h.logprob)
            .fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || (!finished.is_empty() && best_done >= best_live) {
            break;
        }
    }
    let mut best: Option<Hypothesis<M::State>> = None;
    for hyp in finished {
        if best.as_ref().is_none_or(|b| hyp.logprob > b.logprob) {
            best = Some(hyp);
        }
    }
    best.ok_or_else(|| Error::Config("beam search produced no hypothesis".into()))
}

/// Picks the most probable token at every step (lowest id on ties).
pub fn greedy<M: StepModel>(
    model: &mut M,
    init: M::State,
    cfg: &BeamConfig,
) -> Result<Hypothesis<M::State>> {
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    let mut state = init;
    for _ in 0..cfg.max_len {
        let prev = tokens.last().copied().unwrap_or(cfg.start);
        let (logp, next) = model.step(&state, prev)?;
        let v = npov_autograd::encoder::argmax(&logp);
        logprob += logp[v];
        tokens.push(v);
        state = next;
        if v == cfg.end {
            break;
        }
    }
    Ok(Hypothesis {
        tokens,
        logprob,
        state,
        finished: true,
    })
}

/// First-order Markov model over a small token set, used to check the search
/// against exhaustive enumeration.
#[derive(Clone, Debug)]
pub struct MarkovModel {
    /// `table[prev][next]` log-probabilities; row `start` is the initial
    /// distribution.
    pub table: Vec<Vec<f64>>,
}

impl StepModel for MarkovModel {
    type State = ();

    fn step(&mut self, _: &(), prev: usize) -> Result<(Vec<f64>, ())> {
        let row = self.table.get(prev).ok_or(Error::LengthMismatch {
            expected: self.table.len(),
            found: prev,
        })?;
        Ok((row.clone(), ()))
    }
}
