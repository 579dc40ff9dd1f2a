//! Eagerly evaluated Wengert tape over vector-valued nodes.
//!
//! Every recording call computes the node value immediately, so callers can
//! inspect intermediate values while building the rest of the computation.
//! [`Tape::backward`] then walks the nodes in reverse and accumulates
//! adjoints. Parameters are read straight from a borrowed `&[f64]` slice and
//! never carry a tangent; their gradients are accumulated into a caller
//! supplied buffer so that a whole batch can share one accumulator.

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

#[derive(Clone, Copy, Debug)]
enum Op {
    Constant,
    /// Copy of `inputs[start..start + len]`.
    Input { start: usize },
    /// Copy of `params[start..start + len]`.
    Param { start: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Dot(Var, Var),
    /// `W x + b` with `W` stored row-major in the parameter slice.
    Affine {
        x: Var,
        w: usize,
        b: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p [f64],
    nodes: Vec<Node>,
    values: Vec<S>,
}

/// Adjoints of every node after a backward pass.
pub struct Adjoints<S: Scalar> {
    nodes: Vec<Node>,
    adj: Vec<S>,
}

impl<S: Scalar> Adjoints<S> {
    /// Adjoint of an arbitrary node.
    pub fn wrt(&self, v: Var) -> &[S] {
        let n = self.nodes[v.0 as usize];
        &self.adj[n.off..n.off + n.len]
    }

    /// Gradient with respect to the bound input vector of length `n`,
    /// summing the contributions of every input leaf.
    pub fn input_gradient(&self, n: usize) -> Vec<S> {
        let mut g = vec![S::zero(); n];
        for node in &self.nodes {
            if let Op::Input { start } = node.op {
                for k in 0..node.len {
                    g[start + k] += self.adj[node.off + k];
                }
            }
        }
        g
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn with_capacity(params: &'p [f64], nodes: usize, values: usize) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(values),
        }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        let n = self.nodes[v.0 as usize];
        &self.values[n.off..n.off + n.len]
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v)[0]
    }

    fn node(&self, v: Var) -> Node {
        self.nodes[v.0 as usize]
    }

    fn push(&mut self, op: Op, vals: impl IntoIterator<Item = S>) -> Var {
        let off = self.values.len();
        self.values.extend(vals);
        let len = self.values.len() - off;
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { op, off, len });
        Var(id)
    }

    pub fn constant(&mut self, vals: &[f64]) -> Var {
        self.push(Op::Constant, vals.iter().map(|&v| S::from_f64(v)))
    }

    pub fn constant_s(&mut self, vals: &[S]) -> Var {
        self.push(Op::Constant, vals.iter().copied())
    }

    /// Leaf bound to `inputs[start..start + vals.len()]`.
    pub fn input(&mut self, start: usize, vals: &[S]) -> Var {
        self.push(Op::Input { start }, vals.iter().copied())
    }

    pub fn param(&mut self, start: usize, len: usize) -> Result<Var> {
        let p = self.params;
        if start + len > p.len() {
            return Err(Error::UnboundSlot(format!(
                "parameter range {start}..{} exceeds store of length {}",
                start + len,
                p.len()
            )));
        }
        Ok(self.push(
            Op::Param { start },
            p[start..start + len].iter().map(|&v| S::from_f64(v)),
        ))
    }

    fn broadcast_len(&self, a: Var, b: Var) -> Result<usize> {
        let (la, lb) = (self.node(a).len, self.node(b).len);
        if la == lb || lb == 1 {
            Ok(la)
        } else if la == 1 {
            Ok(lb)
        } else {
            Err(Error::DimensionMismatch {
                expected: la,
                got: lb,
            })
        }
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Var> {
        let n = self.broadcast_len(a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = self.values[na.off + if na.len == 1 { 0 } else { i }];
            let y = self.values[nb.off + if nb.len == 1 { 0 } else { i }];
            out.push(f(x, y));
        }
        Ok(self.push(op, out))
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(S) -> S) -> Var {
        let na = self.node(a);
        let out: Vec<S> = self.values[na.off..na.off + na.len]
            .iter()
            .map(|&x| f(x))
            .collect();
        self.push(op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(z) = self.value(b).iter().find(|v| v.re() == 0.0) {
            return Err(Error::Domain(format!("division by {:?}", z.re())));
        }
        self.binary(Op::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Op::Neg(a), a, |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a, |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(z) = self.value(a).iter().find(|v| !(v.re() > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive {:?}", z.re())));
        }
        Ok(self.unary(Op::Log(a), a, |x| x.ln()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square(a), a, |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let mut acc = S::zero();
        for &v in &self.values[na.off..na.off + na.len] {
            acc += v;
        }
        self.push(Op::Sum(a), [acc])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.len != nb.len {
            return Err(Error::DimensionMismatch {
                expected: na.len,
                got: nb.len,
            });
        }
        let mut acc = S::zero();
        for i in 0..na.len {
            acc += self.values[na.off + i] * self.values[nb.off + i];
        }
        Ok(self.push(Op::Dot(a, b), [acc]))
    }

    /// `W x + b` where `W` (`rows × cols`, row-major) starts at parameter
    /// offset `w` and `b` (length `rows`) at offset `b`.
    pub fn affine(&mut self, x: Var, w: usize, b: usize, rows: usize, cols: usize) -> Result<Var> {
        let nx = self.node(x);
        if nx.len != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: nx.len,
            });
        }
        let p = self.params;
        if w + rows * cols > p.len() || b + rows > p.len() {
            return Err(Error::UnboundSlot(format!(
                "affine weights {w}+{rows}x{cols} / bias {b}+{rows} exceed store of length {}",
                p.len()
            )));
        }
        let xs = &self.values[nx.off..nx.off + cols];
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &p[w + i * cols..w + (i + 1) * cols];
            let mut acc = S::from_f64(p[b + i]);
            for (wij, &xj) in row.iter().zip(xs) {
                acc += xj.scale(*wij);
            }
            out.push(acc);
        }
        Ok(self.push(
            Op::Affine {
                x,
                w,
                b,
                rows,
                cols,
            },
            out,
        ))
    }

    /// Reverse sweep from the scalar node `out`. Parameter gradients are
    /// added into `param_grad`, which must have the length of the parameter
    /// slice the tape was built over.
    pub fn backward(&self, out: Var, param_grad: &mut [S]) -> Adjoints<S> {
        assert_eq!(param_grad.len(), self.params.len());
        self.sweep(out, Some(param_grad))
    }

    /// Reverse sweep that skips parameter gradients entirely.
    pub fn backward_inputs(&self, out: Var) -> Adjoints<S> {
        self.sweep(out, None)
    }

    fn sweep(&self, out: Var, mut param_grad: Option<&mut [S]>) -> Adjoints<S> {
        assert_eq!(self.node(out).len, 1, "backward needs a scalar output");
        let mut adj = vec![S::zero(); self.values.len()];
        adj[self.node(out).off] = S::from_f64(1.0);
        let vals = &self.values;
        let p = self.params;

        for idx in (0..=out.0 as usize).rev() {
            let node = self.nodes[idx];
            let (lo, hi) = adj.split_at_mut(node.off);
            let g = &hi[..node.len];
            if g.iter().all(|v| v.is_zero()) {
                continue;
            }
            let y = &vals[node.off..node.off + node.len];
            match node.op {
                Op::Constant | Op::Input { .. } => {}
                Op::Param { start } => {
                    if let Some(pg) = param_grad.as_deref_mut() {
                        for k in 0..node.len {
                            pg[start + k] += g[k];
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = matches!(node.op, Op::Sub(..));
                    let (na, nb) = (self.node(a), self.node(b));
                    for i in 0..node.len {
                        lo[na.off + bi(na.len, i)] += g[i];
                        if sign {
                            lo[nb.off + bi(nb.len, i)] -= g[i];
                        } else {
                            lo[nb.off + bi(nb.len, i)] += g[i];
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (na, nb) = (self.node(a), self.node(b));
                    for i in 0..node.len {
                        let (ia, ib) = (na.off + bi(na.len, i), nb.off + bi(nb.len, i));
                        let (va, vb) = (vals[ia], vals[ib]);
                        lo[ia] += g[i] * vb;
                        lo[ib] += g[i] * va;
                    }
                }
                Op::Div(a, b) => {
                    let (na, nb) = (self.node(a), self.node(b));
                    for i in 0..node.len {
                        let (ia, ib) = (na.off + bi(na.len, i), nb.off + bi(nb.len, i));
                        let vb = vals[ib];
                        let ga = g[i] / vb;
                        lo[ia] += ga;
                        lo[ib] -= ga * y[i];
                    }
                }
                Op::Neg(a) => {
                    let na = self.node(a);
                    for i in 0..node.len {
                        lo[na.off + i] -= g[i];
                    }
                }
                Op::Exp(a) => {
                    let na = self.node(a);
                    for i in 0..node.len {
                        lo[na.off + i] += g[i] * y[i];
                    }
                }
                Op::Log(a) => {
                    let na = self.node(a);
                    for i in 0..node.len {
                        lo[na.off + i] += g[i] / vals[na.off + i];
                    }
                }
                Op::Tanh(a) => {
                    let na = self.node(a);
                    let one = S::from_f64(1.0);
                    for i in 0..node.len {
                        lo[na.off + i] += g[i] * (one - y[i] * y[i]);
                    }
                }
                Op::Square(a) => {
                    let na = self.node(a);
                    for i in 0..node.len {
                        lo[na.off + i] += (g[i] * vals[na.off + i]).scale(2.0);
                    }
                }
                Op::Sum(a) => {
                    let na = self.node(a);
                    for i in 0..na.len {
                        lo[na.off + i] += g[0];
                    }
                }
                Op::Dot(a, b) => {
                    let (na, nb) = (self.node(a), self.node(b));
                    for i in 0..na.len {
                        let (va, vb) = (vals[na.off + i], vals[nb.off + i]);
                        lo[na.off + i] += g[0] * vb;
                        lo[nb.off + i] += g[0] * va;
                    }
                }
                Op::Affine {
                    x,
                    w,
                    b,
                    rows,
                    cols,
                } => {
                    let nx = self.node(x);
                    let xs = &vals[nx.off..nx.off + cols];
                    let gx = &mut lo[nx.off..nx.off + cols];
                    for i in 0..rows {
                        let gi = g[i];
                        if gi.is_zero() {
                            continue;
                        }
                        let row = &p[w + i * cols..w + (i + 1) * cols];
                        for (gxj, wij) in gx.iter_mut().zip(row) {
                            *gxj += gi.scale(*wij);
                        }
                        if let Some(pg) = param_grad.as_deref_mut() {
                            pg[b + i] += gi;
                            let grow = &mut pg[w + i * cols..w + (i + 1) * cols];
                            for (gw, &xj) in grow.iter_mut().zip(xs) {
                                *gw += gi * xj;
                            }
                        }
                    }
                }
            }
        }

        Adjoints {
            nodes: self.nodes.clone(),
            adj,
        }
    }
}

#[inline]
fn bi(len: usize, i: usize) -> usize {
    if len == 1 {
        0
    } else {
        i
    }
}
