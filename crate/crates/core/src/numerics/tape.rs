//! Reverse-mode differentiation tape.
//!
//! Operations are recorded in execution order, so node ids are already a
//! topological order; backward walks them in descending id order and visits
//! each node at most once. A tape is single-threaded (`!Sync`): use one tape
//! per worker.

use std::cell::RefCell;
use std::sync::Arc;

use super::linalg::{gemm, gemm_nt, gemm_tn, transpose};
use super::{Precision, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// Backward rule for an operation implemented outside this module.
///
/// The forward value is computed by the caller and handed to [`Tape::custom`];
/// only the vector-Jacobian product lives here.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (same order as recorded), `None` for
    /// inputs that receive no gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Exp,
    Softplus,
    Sigmoid,
    Silu,
    Relu,
    Abs,
    Tanh,
}

pub(crate) enum Op<T: Real> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Unary {
        x: Var,
        kind: Unary,
    },
    LayerNorm {
        x: Var,
        rstd: Vec<T>,
    },
    Softmax {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    GatherRows {
        x: Var,
        index: Arc<[usize]>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Transpose {
        x: Var,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomOp<T>>,
    },
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Tape<T: Real> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        // Inputs that don't need gradients don't need a backward rule either.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id }
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.id].requires_grad)
    }

    /// Records an externally computed value with a custom backward rule.
    pub fn custom(&self, inputs: &[Var], output: Tensor<T>, rule: impl CustomOp<T> + 'static) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule: Box::new(rule),
            },
            rg,
        )
    }

    /// Propagates d`loss` back to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut acc: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        acc[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = acc[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            for (input, grad) in backward_rule(&nodes, id, &g)? {
                if !nodes[input.id].requires_grad {
                    continue;
                }
                match &mut acc[input.id] {
                    Some(existing) => {
                        for (e, v) in existing.iter_mut().zip(&grad) {
                            *e += *v;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Sums `g` over the repeats of a leading-dim broadcast back to `len` elements.
fn reduce_broadcast<T: Real>(g: &[T], len: usize) -> Vec<T> {
    if g.len() == len {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); len];
    for chunk in g.chunks(len) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn backward_rule<T: Real>(nodes: &[Node<T>], id: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
    let node = &nodes[id];
    let val = |v: Var| &nodes[v.id].value;
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let (m, k) = val(*a).dims2()?;
            let bv = val(*b);
            let n = if *trans_b { bv.dims2()?.0 } else { bv.dims2()?.1 };
            // dA = G · Bᵀ (or G · B when B was transposed)
            let da = if *trans_b {
                gemm(g, bv.data(), m, n, k)
            } else {
                gemm_nt(g, bv.data(), m, n, k)
            };
            // dB = Aᵀ · G (or Gᵀ · A)
            let db = if *trans_b {
                gemm_tn(g, val(*a).data(), m, n, k)
            } else {
                gemm_tn(val(*a).data(), g, m, k, n)
            };
            out.push((*a, da));
            out.push((*b, db));
        }
        Op::Add { a, b } => {
            out.push((*a, g.to_vec()));
            out.push((*b, reduce_broadcast(g, val(*b).len())));
        }
        Op::Sub { a, b } => {
            out.push((*a, g.to_vec()));
            let neg: Vec<T> = g.iter().map(|&v| -v).collect();
            out.push((*b, reduce_broadcast(&neg, val(*b).len())));
        }
        Op::Mul { a, b } => {
            let av = val(*a).data();
            let bv = val(*b).data();
            let bl = bv.len();
            let ga: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * bv[i % bl]).collect();
            let gb_full: Vec<T> = g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect();
            out.push((*a, ga));
            out.push((*b, reduce_broadcast(&gb_full, bl)));
        }
        Op::Scale { x, factor } => {
            out.push((*x, g.iter().map(|&v| v * *factor).collect()));
        }
        Op::Unary { x, kind } => {
            let xv = val(*x).data();
            let yv = node.value.data();
            let dx: Vec<T> = g
                .iter()
                .zip(xv.iter().zip(yv))
                .map(|(&gi, (&xi, &yi))| {
                    let d = match kind {
                        Unary::Exp => yi,
                        Unary::Softplus => sigmoid(xi),
                        Unary::Sigmoid => yi * (T::one() - yi),
                        Unary::Silu => {
                            let s = sigmoid(xi);
                            s * (T::one() + xi * (T::one() - s))
                        }
                        Unary::Relu => {
                            if xi > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Abs => {
                            if xi > T::zero() {
                                T::one()
                            } else if xi < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Tanh => T::one() - yi * yi,
                    };
                    gi * d
                })
                .collect();
            out.push((*x, dx));
        }
        Op::LayerNorm { x, rstd } => {
            let (rows, cols) = val(*x).rows_cols();
            let y = node.value.data();
            let cn = T::lit(cols as f64);
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let gr = &g[r * cols..(r + 1) * cols];
                let yr = &y[r * cols..(r + 1) * cols];
                let mut mean_g = T::zero();
                let mut mean_gy = T::zero();
                for c in 0..cols {
                    mean_g += gr[c];
                    mean_gy += gr[c] * yr[c];
                }
                mean_g /= cn;
                mean_gy /= cn;
                for c in 0..cols {
                    dx[r * cols + c] = rstd[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                }
            }
            out.push((*x, dx));
        }
        Op::Softmax { x } => {
            let (rows, cols) = val(*x).rows_cols();
            let y = node.value.data();
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let mut dot = T::zero();
                for c in 0..cols {
                    dot += g[r * cols + c] * y[r * cols + c];
                }
                for c in 0..cols {
                    let i = r * cols + c;
                    dx[i] = y[i] * (g[i] - dot);
                }
            }
            out.push((*x, dx));
        }
        Op::Sum { x } => {
            out.push((*x, vec![g[0]; val(*x).len()]));
        }
        Op::Mean { x } => {
            let n = val(*x).len();
            out.push((*x, vec![g[0] / T::lit(n as f64); n]));
        }
        Op::GatherRows { x, index } => {
            let (rows, cols) = val(*x).rows_cols();
            let mut dx = vec![T::zero(); rows * cols];
            for (o, &src) in index.iter().enumerate() {
                let gr = &g[o * cols..(o + 1) * cols];
                for (d, &v) in dx[src * cols..(src + 1) * cols].iter_mut().zip(gr) {
                    *d += v;
                }
            }
            out.push((*x, dx));
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for p in parts {
                let n = val(*p).len();
                out.push((*p, g[offset..offset + n].to_vec()));
                offset += n;
            }
        }
        Op::ConcatCols { parts } => {
            let (rows, total) = node.value.dims2()?;
            let mut start = 0;
            for p in parts {
                let (_, c) = val(*p).dims2()?;
                let mut d = Vec::with_capacity(rows * c);
                for r in 0..rows {
                    d.extend_from_slice(&g[r * total + start..r * total + start + c]);
                }
                out.push((*p, d));
                start += c;
            }
        }
        Op::SliceCols { x, start } => {
            let (rows, cols) = val(*x).dims2()?;
            let (_, width) = node.value.dims2()?;
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                dx[r * cols + start..r * cols + start + width].copy_from_slice(&g[r * width..(r + 1) * width]);
            }
            out.push((*x, dx));
        }
        Op::Reshape { x } => {
            out.push((*x, g.to_vec()));
        }
        Op::Transpose { x } => {
            let (rows, cols) = val(*x).dims2()?;
            out.push((*x, transpose(g, cols, rows)));
        }
        Op::Custom { inputs, rule } => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
            let grads = rule.backward(&ins, &node.value, g)?;
            if grads.len() != inputs.len() {
                return Err(Error::Contract(format!(
                    "custom op {} returned {} gradients for {} inputs",
                    rule.name(),
                    grads.len(),
                    inputs.len()
                )));
            }
            for (v, gi) in inputs.iter().zip(grads) {
                if let Some(gi) = gi {
                    out.push((*v, gi));
                }
            }
        }
    }
    Ok(out)
}
