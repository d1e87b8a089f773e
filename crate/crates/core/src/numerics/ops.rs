//! Differentiable primitives recorded on a [`Tape`].
//!
//! Binary elementwise ops accept equal shapes, or a right operand whose shape
//! is a trailing suffix of the left one (broadcast along leading dimensions).
//! Nothing else broadcasts.

use std::sync::Arc;

use super::linalg::{gemm, gemm_nt, transpose};
use super::tape::{sigmoid, softplus, Op, Unary};
use super::{flops, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

const LAYERNORM_EPS: f64 = 1e-6;

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl<T: Real> Tape<T> {
    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let bv = &nodes[b.id].value;
            if !broadcast_ok(av.shape(), bv.shape()) {
                return Err(Error::shape(name, format!("{:?} with {:?}", av.shape(), bv.shape())));
            }
            let bd = bv.data();
            let bl = bd.len().max(1);
            let data = av.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % bl])).collect();
            (
                Tensor::new(av.shape().to_vec(), data)?,
                nodes[a.id].requires_grad || nodes[b.id].requires_grad,
            )
        };
        Ok(self.push(value, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })?;
        flops::record(self.nodes.borrow()[v.id].value.len() as u64);
        Ok(v)
    }

    pub fn scale(&self, x: Var, factor: T) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[x.id].value.map(|v| v * factor), nodes[x.id].requires_grad)
        };
        flops::record(value.len() as u64);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    fn unary(&self, x: Var, kind: Unary) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let value = match kind {
                Unary::Exp => xv.map(|v| v.exp()),
                Unary::Softplus => xv.map(softplus),
                Unary::Sigmoid => xv.map(sigmoid),
                Unary::Silu => {
                    flops::record(xv.len() as u64);
                    xv.map(|v| v * sigmoid(v))
                }
                Unary::Relu => xv.map(|v| v.max(T::zero())),
                Unary::Abs => xv.map(|v| v.abs()),
                Unary::Tanh => xv.map(|v| v.tanh()),
            };
            (value, nodes[x.id].requires_grad)
        };
        self.push(value, Op::Unary { x, kind }, rg)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    /// `x · sigmoid(x)`
    pub fn silu(&self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.id].value;
            let bv = &nodes[b.id].value;
            let (m, k) = av.dims2()?;
            let (br, bc) = bv.dims2()?;
            let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
            if k != kb {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}{}", av.shape(), bv.shape(), if trans_b { "ᵀ" } else { "" }),
                ));
            }
            flops::record((m * k * n) as u64);
            let data = if trans_b {
                gemm_nt(av.data(), bv.data(), m, k, n)
            } else {
                gemm(av.data(), bv.data(), m, k, n)
            };
            (
                Tensor::new(vec![m, n], data)?,
                nodes[a.id].requires_grad || nodes[b.id].requires_grad,
            )
        };
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, rg))
    }

    /// Normalizes each row (last dimension) to zero mean and unit variance. No affine.
    pub fn layernorm(&self, x: Var) -> Var {
        let (value, rstd, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let (rows, cols) = xv.rows_cols();
            let cn = T::lit(cols as f64);
            let eps = T::lit(LAYERNORM_EPS);
            let d = xv.data();
            let mut out = vec![T::zero(); d.len()];
            let mut rstd = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &d[r * cols..(r + 1) * cols];
                let mut mean = T::zero();
                for &v in row {
                    mean += v;
                }
                mean /= cn;
                let mut var = T::zero();
                for &v in row {
                    var += (v - mean) * (v - mean);
                }
                var /= cn;
                let rs = T::one() / (var + eps).sqrt();
                for c in 0..cols {
                    out[r * cols + c] = (row[c] - mean) * rs;
                }
                rstd.push(rs);
            }
            flops::record(2 * d.len() as u64);
            (
                Tensor::new(xv.shape().to_vec(), out).expect("same shape"),
                rstd,
                nodes[x.id].requires_grad,
            )
        };
        self.push(value, Op::LayerNorm { x, rstd }, rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&self, x: Var) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let (rows, cols) = xv.rows_cols();
            let d = xv.data();
            let mut out = vec![T::zero(); d.len()];
            for r in 0..rows {
                let row = &d[r * cols..(r + 1) * cols];
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut total = T::zero();
                for c in 0..cols {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    total += e;
                }
                for c in 0..cols {
                    out[r * cols + c] /= total;
                }
            }
            flops::record(d.len() as u64);
            (
                Tensor::new(xv.shape().to_vec(), out).expect("same shape"),
                nodes[x.id].requires_grad,
            )
        };
        self.push(value, Op::Softmax { x }, rg)
    }

    pub fn sum(&self, x: Var) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let mut s = T::zero();
            for &v in nodes[x.id].value.data() {
                s += v;
            }
            (Tensor::scalar(s), nodes[x.id].requires_grad)
        };
        self.push(value, Op::Sum { x }, rg)
    }

    pub fn mean(&self, x: Var) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let mut s = T::zero();
            for &v in xv.data() {
                s += v;
            }
            (Tensor::scalar(s / T::lit(xv.len() as f64)), nodes[x.id].requires_grad)
        };
        self.push(value, Op::Mean { x }, rg)
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let (rows, cols) = xv.dims2()?;
            if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {bad} out of range for {rows} rows"),
                ));
            }
            let d = xv.data();
            let mut out = Vec::with_capacity(index.len() * cols);
            for &i in index.iter() {
                out.extend_from_slice(&d[i * cols..(i + 1) * cols]);
            }
            (Tensor::new(vec![index.len(), cols], out)?, nodes[x.id].requires_grad)
        };
        Ok(self.push(value, Op::GatherRows { x, index }, rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let index: Arc<[usize]> = (start..start + len).collect();
        self.gather_rows(x, index)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].id].value.dims2()?.1;
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let (r, c) = nodes[p.id].value.dims2()?;
                if c != cols {
                    return Err(Error::shape("concat_rows", format!("column count {c} != {cols}")));
                }
                rows += r;
                data.extend_from_slice(nodes[p.id].value.data());
            }
            (
                Tensor::new(vec![rows, cols], data)?,
                parts.iter().any(|p| nodes[p.id].requires_grad),
            )
        };
        Ok(self.push(value, Op::ConcatRows { parts: parts.to_vec() }, rg))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.dims2()?.0;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, c) = nodes[p.id].value.dims2()?;
                if r != rows {
                    return Err(Error::shape("concat_cols", format!("row count {r} != {rows}")));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &c) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[p.id].value.data()[r * c..(r + 1) * c]);
                }
            }
            (
                Tensor::new(vec![rows, total], data)?,
                parts.iter().any(|p| nodes[p.id].requires_grad),
            )
        };
        Ok(self.push(value, Op::ConcatCols { parts: parts.to_vec() }, rg))
    }

    pub fn slice_cols(&self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let (rows, cols) = xv.dims2()?;
            if start + width > cols {
                return Err(Error::shape(
                    "slice_cols",
                    format!("{start}..{} out of {cols}", start + width),
                ));
            }
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                data.extend_from_slice(&xv.data()[r * cols + start..r * cols + start + width]);
            }
            (Tensor::new(vec![rows, width], data)?, nodes[x.id].requires_grad)
        };
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    pub fn reshape(&self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[x.id].value.reshape(shape)?, nodes[x.id].requires_grad)
        };
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let (r, c) = xv.dims2()?;
            (
                Tensor::new(vec![c, r], transpose(xv.data(), r, c))?,
                nodes[x.id].requires_grad,
            )
        };
        Ok(self.push(value, Op::Transpose { x }, rg))
    }

    /// `x · w + b` for `x[L×in]`, `w[in×out]`, `b[out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }
}
