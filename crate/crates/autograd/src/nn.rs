//! Layers used by the detector, the editor and the contextual encoder.
//!
//! Layers only hold [`ParamId`]s; values live in the [`ParamStore`] the graph
//! borrows, so one layer definition serves training and inference alike.

use rand::Rng;

use crate::{Graph, ParamId, ParamStore, Real, Result, Tensor, Var};

/// Every weight starts uniform in `[-INIT_SCALE, INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), &[input, output], INIT_SCALE, rng)?;
        let b = if bias {
            Some(store.add_uniform(format!("{name}.b"), &[1, output], INIT_SCALE, rng)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            input,
            output,
        })
    }

    /// `x · W + b` for `x` of shape `[rows, input]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single LSTM cell with gates laid out as `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_ih: store.add_uniform(
                format!("{name}.w_ih"),
                &[input, 4 * hidden],
                INIT_SCALE,
                rng,
            )?,
            w_hh: store.add_uniform(
                format!("{name}.w_hh"),
                &[hidden, 4 * hidden],
                INIT_SCALE,
                rng,
            )?,
            bias: store.add_uniform(format!("{name}.b"), &[1, 4 * hidden], INIT_SCALE, rng)?,
            input,
            hidden,
        })
    }

    pub fn zero_state<T: Real>(&self, g: &mut Graph<T>, rows: usize) -> LstmState {
        LstmState {
            h: g.constant(Tensor::zeros(&[rows, self.hidden])),
            c: g.constant(Tensor::zeros(&[rows, self.hidden])),
        }
    }

    pub fn step<T: Real>(&self, g: &mut Graph<T>, x: Var, state: LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let (w_ih, w_hh, b) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        let xi = g.matmul(x, w_ih)?;
        let hh = g.matmul(state.h, w_hh)?;
        let pre = g.add(xi, hh)?;
        let pre = g.add(pre, b)?;
        let i = g.slice(pre, 1, 0, h)?;
        let f = g.slice(pre, 1, h, h)?;
        let c_hat = g.slice(pre, 1, 2 * h, h)?;
        let o = g.slice(pre, 1, 3 * h, h)?;
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let c_hat = g.tanh(c_hat);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, c_hat)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

pub struct BiLstmOutput {
    /// `[n, 2 * hidden]`, forward state then backward state per position.
    pub states: Var,
    pub forward_final: LstmState,
    pub backward_final: LstmState,
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    /// Runs both directions over the rows of `xs` (`[n, input]`), applying
    /// `dropout` to every cell input.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, xs: Var, dropout: f64) -> Result<BiLstmOutput> {
        let n = g.shape(xs)[0];
        let mut inputs = Vec::with_capacity(n);
        for t in 0..n {
            let x = g.row(xs, t)?;
            inputs.push(g.dropout(x, dropout));
        }
        let mut fwd = Vec::with_capacity(n);
        let mut state = self.forward.zero_state(g, 1);
        for x in &inputs {
            state = self.forward.step(g, *x, state)?;
            fwd.push(state.h);
        }
        let forward_final = state;
        let mut bwd = vec![fwd[0]; n];
        let mut state = self.backward.zero_state(g, 1);
        for t in (0..n).rev() {
            state = self.backward.step(g, inputs[t], state)?;
            bwd[t] = state.h;
        }
        let backward_final = state;
        let mut rows = Vec::with_capacity(n);
        for t in 0..n {
            rows.push(g.concat(&[fwd[t], bwd[t]], 1)?);
        }
        let states = g.concat(&rows, 0)?;
        Ok(BiLstmOutput {
            states,
            forward_final,
            backward_final,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], T::one()))?,
            bias: store.add_zeros(format!("{name}.bias"), &[1, dim])?,
            eps: 1e-5,
        })
    }

    /// Normalizes each row of `x`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mean = g.mean_axis(x, 1)?;
        let centered = g.sub(x, mean)?;
        let sq = g.mul(centered, centered)?;
        let var = g.mean_axis(sq, 1)?;
        let var = g.add_scalar(var, self.eps);
        let inv = g.powf(var, -0.5);
        let normed = g.mul(centered, inv)?;
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        let y = g.mul(normed, gain)?;
        g.add(y, bias)
    }
}

/// Single-head self-attention block followed by a ReLU feed-forward block,
/// each wrapped in a residual connection and layer norm.
#[derive(Clone, Debug)]
pub struct SelfAttentionLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
    pub dim: usize,
}

impl SelfAttentionLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            key: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng)?,
            value: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            out: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            ff_in: Linear::new(store, &format!("{name}.ff1"), dim, ff_dim, true, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff2"), ff_dim, dim, true, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
            dim,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var, dropout: f64) -> Result<Var> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let attn = g.softmax(scores);
        let mixed = g.matmul(attn, v)?;
        let o = self.out.forward(g, mixed)?;
        let o = g.dropout(o, dropout);
        let r = g.add(x, o)?;
        let x1 = self.norm1.forward(g, r)?;
        let f = self.ff_in.forward(g, x1)?;
        let f = g.relu(f);
        let f = self.ff_out.forward(g, f)?;
        let f = g.dropout(f, dropout);
        let r = g.add(x1, f)?;
        self.norm2.forward(g, r)
    }
}
