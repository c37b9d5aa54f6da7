//! Central finite-difference gradient checks, run in `f64`.

use crate::{Graph, ParamStore, Result, Tensor, Var};

/// Relative error with a floor on the denominator so that gradients near zero
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Checks the gradient of `f` with respect to every entry of every input.
/// Returns the largest relative error found.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_inputs_with(&ParamStore::new(), inputs, eps, f)
}

/// Like [`check_inputs`], with `store` available to the graph as constants.
pub fn check_inputs_with<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    eps: f64,
    f: F,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone(), true)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(x.shape());
        let analytic = grads.get(vars[k]).unwrap_or(&zeros);
        for i in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Checks the gradient of `f` with respect to every stored parameter.
pub fn check_params<F>(store: &ParamStore<f64>, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let zeros = Tensor::zeros(p.value.shape());
        let analytic = grads.param(id).unwrap_or(&zeros).clone();
        for i in 0..p.value.numel() {
            let mut plus = store.clone();
            plus.get_mut(id).value.data_mut()[i] += eps;
            let mut minus = store.clone();
            minus.get_mut(id).value.data_mut()[i] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{ContextualEncoder, EncoderConfig};
use crate::nn::{BiLstm, LayerNorm, Linear, LstmCell, SelfAttentionLayer};

fn random_shape<R: Rng>(rng: &mut R) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Uniform in `[lo, hi]` with sign flipped at random: keeps samples away from 0.
fn away_from_zero<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// `sum(out ⊙ weights)`: a scalar that depends on every output entry.
fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// Shape of `shape` with random axes collapsed to 1, for broadcasting.
fn broadcast_partner<R: Rng>(shape: &[usize], rng: &mut R) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .map(|&d| if rng.gen_bool(0.3) { 1 } else { d })
        .collect();
    if s.len() > 1 && rng.gen_bool(0.3) {
        s.remove(0);
    }
    s
}

type OpCase = (&'static str, f64);

/// Finite-difference checks of every differentiable graph op on random shapes
/// drawn from `seed`. Returns the worst relative error per op.
pub fn check_ops(seed: u64, eps: f64) -> Result<Vec<OpCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (name, kind) in [
        ("add", 0),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
        ("minimum", 4),
    ] {
        let sa = random_shape(&mut rng);
        let sb = broadcast_partner(&sa, &mut rng);
        let a = random_tensor(&sa, &mut rng);
        let b = if kind == 3 {
            away_from_zero(&sb, 0.5, 1.5, &mut rng)
        } else {
            random_tensor(&sb, &mut rng)
        };
        let w = random_tensor(&sa, &mut rng);
        let err = check_inputs(&[a, b], eps, |g, v| {
            let y = match kind {
                0 => g.add(v[0], v[1])?,
                1 => g.sub(v[0], v[1])?,
                2 => g.mul(v[0], v[1])?,
                3 => g.div(v[0], v[1])?,
                _ => g.minimum(v[0], v[1])?,
            };
            weighted_sum(g, y, &w)
        })?;
        out.push((name, err));
    }

    let (m, k, n) = (
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    );
    let a = random_tensor(&[m, k], &mut rng);
    let b = random_tensor(&[k, n], &mut rng);
    let w = random_tensor(&[m, n], &mut rng);
    out.push((
        "matmul",
        check_inputs(&[a, b], eps, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, &w)
        })?,
    ));

    let unary: [(&'static str, usize); 10] = [
        ("sigmoid", 0),
        ("tanh", 1),
        ("relu", 2),
        ("exp", 3),
        ("log", 4),
        ("powf", 5),
        ("scale", 6),
        ("add_scalar", 7),
        ("clamp", 8),
        ("one_minus", 9),
    ];
    for (name, kind) in unary {
        let s = random_shape(&mut rng);
        let x = match kind {
            4 | 5 => away_from_zero(&s, 0.5, 2.0, &mut rng),
            2 | 8 => away_from_zero(&s, 0.05, 1.0, &mut rng),
            _ => random_tensor(&s, &mut rng),
        };
        let x = if kind == 4 || kind == 5 {
            let d = x.data().iter().map(|v| v.abs()).collect();
            Tensor::new(&s, d)?
        } else {
            x
        };
        let w = random_tensor(&s, &mut rng);
        out.push((
            name,
            check_inputs(&[x], eps, |g, v| {
                let y = match kind {
                    0 => g.sigmoid(v[0]),
                    1 => g.tanh(v[0]),
                    2 => g.relu(v[0]),
                    3 => g.exp(v[0]),
                    4 => g.log(v[0]),
                    5 => g.powf(v[0], -0.5),
                    6 => g.scale(v[0], 1.7),
                    7 => g.add_scalar(v[0], 0.3),
                    8 => g.clamp(v[0], -0.5, 0.5),
                    _ => g.one_minus(v[0]),
                };
                weighted_sum(g, y, &w)
            })?,
        ));
    }

    for (name, log) in [("softmax", false), ("log_softmax", true)] {
        let s = random_shape(&mut rng);
        let x = random_tensor(&s, &mut rng);
        let w = random_tensor(&s, &mut rng);
        out.push((
            name,
            check_inputs(&[x], eps, |g, v| {
                let y = if log {
                    g.log_softmax(v[0])
                } else {
                    g.softmax(v[0])
                };
                weighted_sum(g, y, &w)
            })?,
        ));
    }

    let s = random_shape(&mut rng);
    let x = random_tensor(&s, &mut rng);
    out.push((
        "sum",
        check_inputs(std::slice::from_ref(&x), eps, |g, v| Ok(g.sum(v[0])))?,
    ));
    out.push((
        "mean",
        check_inputs(std::slice::from_ref(&x), eps, |g, v| Ok(g.mean(v[0])))?,
    ));
    let axis = rng.gen_range(0..s.len());
    let mut reduced = s.clone();
    reduced[axis] = 1;
    let w = random_tensor(&reduced, &mut rng);
    out.push((
        "sum_axis",
        check_inputs(std::slice::from_ref(&x), eps, |g, v| {
            let y = g.sum_axis(v[0], axis)?;
            weighted_sum(g, y, &w)
        })?,
    ));

    let axis = rng.gen_range(0..s.len());
    let mut other = s.clone();
    other[axis] = rng.gen_range(1..=3);
    let y = random_tensor(&other, &mut rng);
    let mut joined = s.clone();
    joined[axis] += other[axis];
    let w = random_tensor(&joined, &mut rng);
    out.push((
        "concat",
        check_inputs(&[x.clone(), y], eps, |g, v| {
            let c = g.concat(&[v[0], v[1]], axis)?;
            weighted_sum(g, c, &w)
        })?,
    ));

    let len = rng.gen_range(1..=s[axis]);
    let start = rng.gen_range(0..=s[axis] - len);
    let mut sliced = s.clone();
    sliced[axis] = len;
    let w = random_tensor(&sliced, &mut rng);
    out.push((
        "slice",
        check_inputs(std::slice::from_ref(&x), eps, |g, v| {
            let c = g.slice(v[0], axis, start, len)?;
            weighted_sum(g, c, &w)
        })?,
    ));

    let total: usize = s.iter().product();
    let w = random_tensor(&[total], &mut rng);
    out.push((
        "reshape",
        check_inputs(&[x], eps, |g, v| {
            let c = g.reshape(v[0], &[total])?;
            weighted_sum(g, c, &w)
        })?,
    ));

    let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let x = random_tensor(&[r, c], &mut rng);
    let w = random_tensor(&[c, r], &mut rng);
    out.push((
        "transpose",
        check_inputs(&[x], eps, |g, v| {
            let t = g.transpose(v[0])?;
            weighted_sum(g, t, &w)
        })?,
    ));

    let (vocab, dim) = (rng.gen_range(2..=6), rng.gen_range(1..=4));
    let table = random_tensor(&[vocab, dim], &mut rng);
    let ids: Vec<usize> = (0..rng.gen_range(1..=5))
        .map(|_| rng.gen_range(0..vocab))
        .collect();
    let w = random_tensor(&[ids.len(), dim], &mut rng);
    out.push((
        "embedding",
        check_inputs(&[table], eps, |g, v| {
            let e = g.embedding(v[0], &ids)?;
            weighted_sum(g, e, &w)
        })?,
    ));

    let (rows, n) = (rng.gen_range(1..=3), rng.gen_range(1..=5));
    let width = rng.gen_range(1..=6);
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..width)).collect();
    let x = random_tensor(&[rows, n], &mut rng);
    let w = random_tensor(&[rows, width], &mut rng);
    out.push((
        "scatter_add",
        check_inputs(&[x], eps, |g, v| {
            let y = g.scatter_add(v[0], &ids, width)?;
            weighted_sum(g, y, &w)
        })?,
    ));

    let s = random_shape(&mut rng);
    let x = random_tensor(&s, &mut rng);
    let w = random_tensor(&s, &mut rng);
    let store = ParamStore::<f64>::new();
    let mask_seed = rng.gen::<u64>();
    let dropout_err = {
        // Each evaluation re-seeds the graph so every pass draws the same mask.
        let eval = |x: &Tensor<f64>| -> Result<(f64, Option<Tensor<f64>>)> {
            let mut g = Graph::new(&store).train_mode(mask_seed);
            let v = g.input(x.clone(), true);
            let y = g.dropout(v, 0.3);
            let l = weighted_sum(&mut g, y, &w)?;
            let grads = g.backward(l)?;
            Ok((g.value(l).item(), grads.get(v).cloned()))
        };
        let (_, analytic) = eval(&x)?;
        let analytic = analytic.unwrap_or_else(|| Tensor::zeros(&s));
        let mut worst = 0.0f64;
        for i in 0..x.numel() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut q = x.clone();
            q.data_mut()[i] -= eps;
            let numeric = (eval(&p)?.0 - eval(&q)?.0) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        worst
    };
    out.push(("dropout", dropout_err));

    Ok(out)
}

/// Finite-difference checks of the composed layers with random parameters.
pub fn check_blocks(seed: u64, eps: f64) -> Result<Vec<OpCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (inp, hid) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", inp, hid, true, &mut rng)?;
    let x = random_tensor(&[3, inp], &mut rng);
    let w = random_tensor(&[3, hid], &mut rng);
    out.push((
        "linear",
        check_params(&store, eps, |g| {
            let xv = g.constant(x.clone());
            let y = lin.forward(g, xv)?;
            weighted_sum(g, y, &w)
        })?,
    ));

    let mut store = ParamStore::<f64>::new();
    let cell = LstmCell::new(&mut store, "cell", inp, hid, &mut rng)?;
    let steps = rng.gen_range(1..=3);
    let xs = random_tensor(&[steps, inp], &mut rng);
    let w = random_tensor(&[1, hid], &mut rng);
    out.push((
        "lstm_step",
        check_params(&store, eps, |g| {
            let xv = g.constant(xs.clone());
            let mut st = cell.zero_state(g, 1);
            for t in 0..steps {
                let row = g.row(xv, t)?;
                st = cell.step(g, row, st)?;
            }
            let hc = g.add(st.h, st.c)?;
            weighted_sum(g, hc, &w)
        })?,
    ));

    let mut store = ParamStore::<f64>::new();
    let bi = BiLstm::new(&mut store, "bi", inp, hid, &mut rng)?;
    let n = rng.gen_range(1..=3);
    let xs = random_tensor(&[n, inp], &mut rng);
    let w = random_tensor(&[n, 2 * hid], &mut rng);
    out.push((
        "bilstm",
        check_params(&store, eps, |g| {
            let xv = g.constant(xs.clone());
            let o = bi.encode(g, xv, 0.0)?;
            weighted_sum(g, o.states, &w)
        })?,
    ));

    let dim = rng.gen_range(2..=4);
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut store, "ln", dim)?;
    // Random gain/bias so the check is not at the identity point.
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.value(id).shape().to_vec();
        store.get_mut(id).value = random_tensor(&shape, &mut rng);
    }
    let x = random_tensor(&[3, dim], &mut rng);
    let w = random_tensor(&[3, dim], &mut rng);
    let ln_params = check_params(&store, eps, |g| {
        let xv = g.constant(x.clone());
        let y = ln.forward(g, xv)?;
        weighted_sum(g, y, &w)
    })?;
    let ln_inputs = check_inputs_with(&store, &[x], eps, |g, v| {
        let y = ln.forward(g, v[0])?;
        weighted_sum(g, y, &w)
    })?;
    out.push(("layer_norm", ln_params.max(ln_inputs)));

    let mut store = ParamStore::<f64>::new();
    let layer = SelfAttentionLayer::new(&mut store, "attn", dim, 2 * dim, &mut rng)?;
    let n = rng.gen_range(1..=3);
    let x = random_tensor(&[n, dim], &mut rng);
    let w = random_tensor(&[n, dim], &mut rng);
    out.push((
        "self_attention",
        check_params(&store, eps, |g| {
            let xv = g.constant(x.clone());
            let y = layer.forward(g, xv, 0.0)?;
            weighted_sum(g, y, &w)
        })?,
    ));

    let mut store = ParamStore::<f64>::new();
    let mut cfg = EncoderConfig::new(5, dim);
    cfg.layers = 1;
    cfg.max_len = 4;
    cfg.dropout = 0.0;
    let enc = ContextualEncoder::new(&mut store, "enc", cfg, &mut rng)?;
    let ids: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
    let w = random_tensor(&[3, dim], &mut rng);
    out.push((
        "contextual_encoder",
        check_params(&store, eps, |g| {
            let y = enc.encode(g, &ids)?;
            weighted_sum(g, y, &w)
        })?,
    ));

    Ok(out)
}
