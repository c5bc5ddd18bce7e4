//! Dynamic reverse-mode differentiation tape.
//!
//! A [`Tape`] records every primitive operation of a forward pass in
//! creation order; [`Tape::backward`] replays the record in reverse and
//! accumulates chain-rule gradients on every node. Tapes are rebuilt per
//! forward pass and confined to one thread; independent tapes may run in
//! parallel.
//!
//! Elementwise binary operations broadcast along trailing axes only: two
//! shapes conform when they are equal or when one is a suffix of the other
//! (the scalar shape `[]` is a suffix of everything). Anything else is
//! rejected with an error naming both shapes.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input node (parameter or constant); no inputs to propagate into.
    Input,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Matmul(ValueId, ValueId),
    ConcatLast(Vec<ValueId>),
    BroadcastTo(ValueId),
    Mean(ValueId),
    Sum(ValueId),
    Square(ValueId),
    Exp(ValueId),
    Ln(ValueId),
    Silu(ValueId),
    Relu(ValueId),
    Scale(ValueId, f64),
    AddScalar(ValueId),
    GatherRows(ValueId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Accumulated over backward calls; separate scratch space is used per
    /// call so that calling backward twice exactly doubles these.
    grad: Vec<f64>,
    op: Op,
}

/// Ordered record of primitive operations with their input/output references.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// How two elementwise operands line up after trailing-axis alignment.
enum Layout {
    Same,
    /// Right operand is the smaller one, tiled `reps` times.
    RightSmall { reps: usize, m: usize },
    /// Left operand is the smaller one.
    LeftSmall { reps: usize, m: usize },
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> ValueId {
        debug_assert_eq!(numel(&shape), values.len());
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    /// Records an input node from a tensor's current values.
    ///
    /// Used both for parameters (whose gradients are read back after
    /// backward) and for data constants; the tape treats them identically.
    pub fn input(&mut self, t: &Tensor) -> ValueId {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Input)
    }

    /// Records an input node directly from a shape and values.
    pub fn input_from(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<ValueId> {
        if numel(&shape) != values.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                values.len()
            )));
        }
        Ok(self.push(shape, values, Op::Input))
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    /// Gradient accumulated by `backward` calls so far.
    pub fn grad(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    fn layout(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<Layout> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Layout::Same)
        } else if is_suffix(sb, sa) {
            let m = numel(sb);
            Ok(Layout::RightSmall {
                reps: numel(sa) / m.max(1),
                m: m.max(1),
            })
        } else if is_suffix(sa, sb) {
            let m = numel(sa);
            Ok(Layout::LeftSmall {
                reps: numel(sb) / m.max(1),
                m: m.max(1),
            })
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let out = match self.layout(name, a, b)? {
            Layout::Same => self
                .values(a)
                .iter()
                .zip(self.values(b))
                .map(|(&x, &y)| f(x, y))
                .collect::<Vec<_>>(),
            Layout::RightSmall { reps, m } => {
                let small = self.values(b);
                let mut out = Vec::with_capacity(reps * m);
                for chunk in self.values(a).chunks_exact(m) {
                    out.extend(chunk.iter().zip(small).map(|(&x, &y)| f(x, y)));
                }
                out
            }
            Layout::LeftSmall { reps, m } => {
                let small = self.values(a);
                let mut out = Vec::with_capacity(reps * m);
                for chunk in self.values(b).chunks_exact(m) {
                    out.extend(small.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
                }
                out
            }
        };
        let shape = if self.shape(a).len() >= self.shape(b).len() {
            self.shape(a).to_vec()
        } else {
            self.shape(b).to_vec()
        };
        Ok(self.push(shape, out, op))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// 2-d matrix product `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_values(self.values(a), self.values(b), n, k, m);
        Ok(self.push(vec![n, m], out, Op::Matmul(a, b)))
    }

    /// Concatenation along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let first = *parts.first().ok_or_else(|| {
            Error::InvalidArgument("concat_last needs at least one input".into())
        })?;
        let lead = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut total_last = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            total_last += s[s.len() - 1];
        }
        let rows = numel(&lead);
        let mut out = Vec::with_capacity(rows * total_last);
        for r in 0..rows {
            for &p in parts {
                let s = self.shape(p);
                let d = s[s.len() - 1];
                out.extend_from_slice(&self.values(p)[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead;
        shape.push(total_last);
        Ok(self.push(shape, out, Op::ConcatLast(parts.to_vec())))
    }

    /// Tiles `a` to `shape`, which must have `a`'s shape as a trailing suffix.
    pub fn broadcast_to(&mut self, a: ValueId, shape: &[usize]) -> Result<ValueId> {
        if !is_suffix(self.shape(a), shape) {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let m = self.values(a).len().max(1);
        let reps = numel(shape) / m;
        let mut out = Vec::with_capacity(reps * m);
        for _ in 0..reps {
            out.extend_from_slice(self.values(a));
        }
        Ok(self.push(shape.to_vec(), out, Op::BroadcastTo(a)))
    }

    /// Mean over all elements; yields a scalar.
    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let v = self.values(a);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![], vec![mean], Op::Mean(a))
    }

    /// Sum over all elements; yields a scalar.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let s = self.values(a).iter().sum::<f64>();
        self.push(vec![], vec![s], Op::Sum(a))
    }

    fn unary(&mut self, a: ValueId, f: impl Fn(f64) -> f64, op: Op) -> ValueId {
        let out: Vec<f64> = self.values(a).iter().map(|&x| f(x)).collect();
        self.push(self.shape(a).to_vec(), out, op)
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: ValueId) -> ValueId {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn silu(&mut self, a: ValueId) -> ValueId {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: ValueId, c: f64) -> ValueId {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Selects rows of a 2-d table: output row `i` is `table[indices[i]]`.
    /// Gradients scatter-add back into the selected rows.
    pub fn gather_rows(&mut self, table: ValueId, indices: &[usize]) -> Result<ValueId> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: s.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&self.values(table)[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![indices.len(), d],
            out,
            Op::GatherRows(table, indices.to_vec()),
        ))
    }

    /// Propagates `d loss / d node` into every node reachable from `loss`,
    /// adding onto whatever previous backward calls accumulated.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::NonScalarLoss {
                len: self.nodes[loss.0].values.len(),
            });
        }
        // Fresh scratch gradients per call; merged at the end so repeated
        // backward calls accumulate rather than compound.
        let mut work: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        work[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if work[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut work[i]);
            self.propagate(i, &g, &mut work);
            work[i] = g;
        }
        for (node, w) in self.nodes.iter_mut().zip(&work) {
            for (acc, &delta) in node.grad.iter_mut().zip(w) {
                *acc += delta;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], work: &mut [Vec<f64>]) {
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Add(a, b) => {
                self.spread(*a, g, 1.0, work);
                self.spread(*b, g, 1.0, work);
            }
            Op::Sub(a, b) => {
                self.spread(*a, g, 1.0, work);
                self.spread(*b, g, -1.0, work);
            }
            Op::Mul(a, b) => {
                // d(a*b)/da = b tiled to the output layout, and vice versa.
                let gb = self.tiled_values(*b, g.len());
                let ga = self.tiled_values(*a, g.len());
                let into_a: Vec<f64> = g.iter().zip(&gb).map(|(&x, &y)| x * y).collect();
                let into_b: Vec<f64> = g.iter().zip(&ga).map(|(&x, &y)| x * y).collect();
                self.spread(*a, &into_a, 1.0, work);
                self.spread(*b, &into_b, 1.0, work);
            }
            Op::Matmul(a, b) => {
                let (n, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let m = self.nodes[b.0].shape[1];
                let av = &self.nodes[a.0].values;
                let bv = &self.nodes[b.0].values;
                // dA = g · Bᵀ
                let da = &mut work[a.0];
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            da[i * k + kk] += gij * bv[kk * m + j];
                        }
                    }
                }
                // dB = Aᵀ · g
                let db = &mut work[b.0];
                for i in 0..n {
                    for kk in 0..k {
                        let aik = av[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let row = &g[i * m..(i + 1) * m];
                        let dst = &mut db[kk * m..(kk + 1) * m];
                        for (d, &gj) in dst.iter_mut().zip(row) {
                            *d += aik * gj;
                        }
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let out_last = *self.nodes[i].shape.last().unwrap();
                let rows = self.nodes[i].values.len() / out_last;
                let mut offset = 0;
                for &p in parts {
                    let s = &self.nodes[p.0].shape;
                    let d = s[s.len() - 1];
                    let dst = &mut work[p.0];
                    for r in 0..rows {
                        let src = &g[r * out_last + offset..r * out_last + offset + d];
                        for (dv, &gv) in dst[r * d..(r + 1) * d].iter_mut().zip(src) {
                            *dv += gv;
                        }
                    }
                    offset += d;
                }
            }
            Op::BroadcastTo(a) => {
                let m = self.nodes[a.0].values.len().max(1);
                let dst = &mut work[a.0];
                for (j, &gv) in g.iter().enumerate() {
                    dst[j % m] += gv;
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].values.len() as f64;
                let gv = g[0] / n;
                for d in work[a.0].iter_mut() {
                    *d += gv;
                }
            }
            Op::Sum(a) => {
                let gv = g[0];
                for d in work[a.0].iter_mut() {
                    *d += gv;
                }
            }
            Op::Square(a) => {
                let xs = &self.nodes[a.0].values;
                for ((d, &x), &gv) in work[a.0].iter_mut().zip(xs).zip(g) {
                    *d += 2.0 * x * gv;
                }
            }
            Op::Exp(a) => {
                let ys = &self.nodes[i].values;
                for ((d, &y), &gv) in work[a.0].iter_mut().zip(ys).zip(g) {
                    *d += y * gv;
                }
            }
            Op::Ln(a) => {
                let xs = &self.nodes[a.0].values;
                for ((d, &x), &gv) in work[a.0].iter_mut().zip(xs).zip(g) {
                    *d += gv / x;
                }
            }
            Op::Silu(a) => {
                let xs = &self.nodes[a.0].values;
                for ((d, &x), &gv) in work[a.0].iter_mut().zip(xs).zip(g) {
                    let s = sigmoid(x);
                    *d += gv * s * (1.0 + x * (1.0 - s));
                }
            }
            Op::Relu(a) => {
                let xs = &self.nodes[a.0].values;
                for ((d, &x), &gv) in work[a.0].iter_mut().zip(xs).zip(g) {
                    if x > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Scale(a, c) => {
                for (d, &gv) in work[a.0].iter_mut().zip(g) {
                    *d += c * gv;
                }
            }
            Op::AddScalar(a) => {
                for (d, &gv) in work[a.0].iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::GatherRows(table, indices) => {
                let d = self.nodes[table.0].shape[1];
                let dst = &mut work[table.0];
                for (r, &idx) in indices.iter().enumerate() {
                    let src = &g[r * d..(r + 1) * d];
                    for (dv, &gv) in dst[idx * d..(idx + 1) * d].iter_mut().zip(src) {
                        *dv += gv;
                    }
                }
            }
        }
    }

    /// Upstream gradient of a broadcast binary op, reduced onto operand `a`.
    fn spread(&self, a: ValueId, g: &[f64], sign: f64, work: &mut [Vec<f64>]) {
        let m = self.nodes[a.0].values.len().max(1);
        let dst = &mut work[a.0];
        if g.len() == dst.len() {
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d += sign * gv;
            }
        } else {
            for (j, &gv) in g.iter().enumerate() {
                dst[j % m] += sign * gv;
            }
        }
    }

    /// Values of `a` tiled up to `len` (identity when already that long).
    fn tiled_values(&self, a: ValueId, len: usize) -> Vec<f64> {
        let v = &self.nodes[a.0].values;
        if v.len() == len {
            v.clone()
        } else {
            let m = v.len().max(1);
            (0..len).map(|j| v[j % m]).collect()
        }
    }
}

pub(crate) fn matmul_values(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}
