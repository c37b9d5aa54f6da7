use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, ParamId, ParamStore, Real, Result, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Powf(f64),
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    MatMul(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ScatterAdd { src: Var, ids: Vec<usize> },
    Dropout { src: Var, mask: Vec<f64> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for one forward pass and differentiates them.
///
/// Parameters are read from the borrowed [`ParamStore`]; each parameter enters
/// the graph once and is reused on later lookups.
pub struct Graph<'p, T: Real = f32> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
    training: bool,
    rng: ChaCha8Rng,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.grads[*n].as_ref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(id, n)| self.grads[*n].as_ref().map(|g| (*id, g)))
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index it reads in `inp`.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..inp.len()).rev() {
        let oi = i + rank - inp.len();
        strides[oi] = if inp[i] == 1 { 0 } else { s };
        s *= inp[i];
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += strides[d];
            if counter[d] < out[d] {
                break;
            }
            offset -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// (outer, axis length, inner) view of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

impl<'p, T: Real> Graph<'p, T> {
    /// A graph that records gradients, in evaluation mode (dropout off).
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// A graph that only computes values; nothing is kept for backward.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        let mut g = Self::new(store);
        g.grad_enabled = false;
        g
    }

    /// Switches dropout on, drawing masks from a generator seeded with `seed`.
    pub fn train_mode(mut self, seed: u64) -> Self {
        self.training = true;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, parents: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf tensor. `requires_grad` leaves receive gradients in backward.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// The graph node bound to a stored parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let p = self.store.get(id);
        let requires_grad = self.grad_enabled && !p.frozen;
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Leaf,
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// A copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
            BinaryKind::Min => {
                if x <= y {
                    x
                } else {
                    y
                }
            }
        };
        let data: Vec<T> = if sa == sb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(av[i], bv[j])).collect()
        };
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b, "div")
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Min, a, b, "minimum")
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Sigmoid => {
                    if v >= T::zero() {
                        T::one() / (T::one() + (-v).exp())
                    } else {
                        let e = v.exp();
                        e / (T::one() + e)
                    }
                }
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => v.max(T::zero()),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Log => v.ln(),
                UnaryKind::Powf(e) => v.powf(T::of(e)),
                UnaryKind::Scale(c) => v * T::of(c),
                UnaryKind::AddScalar(c) => v + T::of(c),
                UnaryKind::Clamp(lo, hi) => v.max(T::of(lo)).min(T::of(hi)),
            })
            .collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Unary(kind, a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        self.unary(UnaryKind::Powf(e), a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(UnaryKind::AddScalar(c), a)
    }

    /// `1 - a`, used for complementary gates.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(UnaryKind::Clamp(lo, hi), a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = last_dim(x.shape());
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = last_dim(x.shape());
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: T = x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sums over `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(Error::Index {
                op: "sum_axis",
                index: axis,
                size: x.rank(),
            });
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::SumAxis(a, axis), &[a]))
    }

    /// Mean over `axis`, keeping it with length 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = self.shape(a).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Index {
            op: "concat",
            index: 0,
            size: 0,
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Index {
                op: "concat",
                index: axis,
                size: base.len(),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(Error::Index {
                op: "slice",
                index: start + len,
                size: x.shape().get(axis).copied().unwrap_or(0),
            });
        }
        let (outer, full, inner) = axis_split(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[from..from + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Slice {
                src: a,
                axis,
                start,
            },
            &[a],
        ))
    }

    /// Row `i` of a matrix as a `1 × d` tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, 0, i, 1)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = match x.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Rank {
                    op: "transpose",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        let xd = x.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Gathers rows of `table` (`[vocab, dim]`) into `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "embedding",
                    index: id,
                    size: v,
                });
            }
            out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Scatters the last axis of `src` (`[r, n]`) into `[r, width]`, adding
    /// `src[.., i]` at column `ids[i]`.
    pub fn scatter_add(&mut self, src: Var, ids: &[usize], width: usize) -> Result<Var> {
        let x = self.value(src);
        let (r, n) = x.dims2()?;
        if ids.len() != n {
            return Err(Error::ShapeMismatch {
                op: "scatter_add",
                lhs: x.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= width) {
            return Err(Error::Index {
                op: "scatter_add",
                index: bad,
                size: width,
            });
        }
        let mut out = vec![T::zero(); r * width];
        for row in 0..r {
            for (i, &id) in ids.iter().enumerate() {
                out[row * width + id] += x.data()[row * n + i];
            }
        }
        let value = Tensor::new(&[r, width], out)?;
        Ok(self.push(
            value,
            Op::ScatterAdd {
                src,
                ids: ids.to_vec(),
            },
            &[src],
        ))
    }

    /// Inverted dropout: identity outside training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * T::of(m))
            .collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Dropout { src: a, mask }, &[a])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(ls, T::one()));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .map(|(id, v)| (*id, v.0))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate<F>(&self, grads: &mut [Option<Tensor<T>>], target: Var, f: F)
    where
        F: FnOnce(&mut [T]),
    {
        let node = &self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let out_shape = node.value.shape();
                let av = self.value(*a);
                let bv = self.value(*b);
                let same_a = av.shape() == out_shape;
                let same_b = bv.shape() == out_shape;
                let ma = if same_a {
                    None
                } else {
                    Some(broadcast_map(out_shape, av.shape()))
                };
                let mb = if same_b {
                    None
                } else {
                    Some(broadcast_map(out_shape, bv.shape()))
                };
                let ia = |o: usize| ma.as_ref().map_or(o, |m| m[o]);
                let ib = |o: usize| mb.as_ref().map_or(o, |m| m[o]);
                let (ad, bd) = (av.data(), bv.data());
                self.accumulate(grads, *a, |ga| {
                    for (o, &go) in gd.iter().enumerate() {
                        let (x, z) = (ad[ia(o)], bd[ib(o)]);
                        ga[ia(o)] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => go,
                            BinaryKind::Mul => go * z,
                            BinaryKind::Div => go / z,
                            BinaryKind::Min => {
                                if x <= z {
                                    go
                                } else {
                                    T::zero()
                                }
                            }
                        };
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (o, &go) in gd.iter().enumerate() {
                        let (x, z) = (ad[ia(o)], bd[ib(o)]);
                        gb[ib(o)] += match kind {
                            BinaryKind::Add => go,
                            BinaryKind::Sub => -go,
                            BinaryKind::Mul => go * x,
                            BinaryKind::Div => -go * x / (z * z),
                            BinaryKind::Min => {
                                if x <= z {
                                    T::zero()
                                } else {
                                    go
                                }
                            }
                        };
                    }
                });
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..gd.len() {
                        ga[i] += gd[i]
                            * match *kind {
                                UnaryKind::Sigmoid => y[i] * (T::one() - y[i]),
                                UnaryKind::Tanh => T::one() - y[i] * y[i],
                                UnaryKind::Relu => {
                                    if x[i] > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                UnaryKind::Exp => y[i],
                                UnaryKind::Log => T::one() / x[i],
                                UnaryKind::Powf(e) => T::of(e) * x[i].powf(T::of(e - 1.0)),
                                UnaryKind::Scale(c) => T::of(c),
                                UnaryKind::AddScalar(_) => T::one(),
                                UnaryKind::Clamp(lo, hi) => {
                                    if x[i] >= T::of(lo) && x[i] <= T::of(hi) {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                            };
                    }
                });
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let (ad, bd) = (av.data(), bv.data());
                // dA = dC · Bᵀ
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut s = T::zero();
                            for (x, y) in grow.iter().zip(brow) {
                                s += *x * *y;
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ · dC
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            let brow = &mut gb[p * n..(p + 1) * n];
                            for (o, &go) in brow.iter_mut().zip(grow) {
                                *o += x * go;
                            }
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let d = last_dim(node.value.shape());
                self.accumulate(grads, *a, |ga| {
                    for ((gr, yr), out) in gd.chunks(d).zip(y.chunks(d)).zip(ga.chunks_mut(d)) {
                        let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                        for j in 0..d {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let d = last_dim(node.value.shape());
                self.accumulate(grads, *a, |ga| {
                    for ((gr, yr), out) in gd.chunks(d).zip(y.chunks(d)).zip(ga.chunks_mut(d)) {
                        let total: T = gr.iter().copied().sum();
                        for j in 0..d {
                            out[j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let go = gd[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|v| *v += go));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let go = gd[0] / T::of(n as f64);
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|v| *v += go));
            }
            Op::SumAxis(a, axis) => {
                let (outer, len, inner) = axis_split(self.value(*a).shape(), *axis);
                self.accumulate(grads, *a, |ga| {
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for i in 0..inner {
                                ga[base + i] += gd[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    self.accumulate(grads, *p, |gp| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for i in 0..len * inner {
                                gp[dst + i] += gd[src + i];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let (outer, full, inner) = axis_split(self.value(*src).shape(), *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *src, |gs| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let from = o * len * inner;
                        for i in 0..len * inner {
                            gs[dst + i] += gd[from + i];
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (c, r) = (node.value.shape()[0], node.value.shape()[1]);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| {
                    for (o, &v) in ga.iter_mut().zip(gd) {
                        *o += v;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = last_dim(node.value.shape());
                self.accumulate(grads, *table, |gt| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += gd[row * d + j];
                        }
                    }
                });
            }
            Op::ScatterAdd { src, ids } => {
                let width = last_dim(node.value.shape());
                let n = ids.len();
                let rows = node.value.shape()[0];
                self.accumulate(grads, *src, |gs| {
                    for r in 0..rows {
                        for (i, &id) in ids.iter().enumerate() {
                            gs[r * n + i] += gd[r * width + id];
                        }
                    }
                });
            }
            Op::Dropout { src, mask } => {
                self.accumulate(grads, *src, |gs| {
                    for i in 0..gs.len() {
                        gs[i] += gd[i] * T::of(mask[i]);
                    }
                });
            }
        }
    }
}
