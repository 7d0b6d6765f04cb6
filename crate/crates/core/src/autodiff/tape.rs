//! Tape-based reverse-mode automatic differentiation.
//!
//! Every recorded value is a dense `f64` vector stored in one contiguous
//! arena; scalars are vectors of length one. A [`Var`] is a plain index into
//! the tape, so it is `Copy` and cheap to pass around. Operations are
//! recorded through methods on [`Tape`], which keeps the whole graph in
//! topological order by construction: an operation can only consume nodes
//! that already exist.
//!
//! ```
//! use reactor_grid::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(&[3.0]);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.scalar(y), 9.0);
//! assert_eq!(grads.wrt(x), &[6.0]);
//! ```

use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

/// Primitive operations. Binary elementwise operations broadcast an operand
/// of length one against the other operand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Param,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Max(Var, Var),
    Min(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var, f64),
    Powf(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    /// Identity inside `[lo, hi]`, constant outside, with zero gradient there.
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    /// Row-major `rows x cols` matrix times a vector of length `cols`.
    MatVec { m: Var, v: Var, rows: u32 },
    /// Zero-mean, unit-variance standardization of a vector. A constant
    /// input maps to exact zeros.
    Standardize(Var, f64),
    /// Concatenation of the vars stored in `links[start..start + count]`.
    Concat { start: u32, count: u32 },
    /// Element `index` of a vector, as a scalar.
    Index(Var, u32),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Max(..) => "max",
            Op::Min(..) => "min",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Powf(..) => "pow",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MatVec { .. } => "matvec",
            Op::Standardize(..) => "standardize",
            Op::Concat { .. } => "concat",
            Op::Index(..) => "index",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    offset: u32,
    len: u32,
    requires_grad: bool,
}

/// Recording tape. Reuse one tape across iterations with [`Tape::clear`] to
/// keep its allocations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    links: Vec<Var>,
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
    spans: Vec<(u32, u32)>,
}

impl Gradients {
    /// Adjoint of `v`. Nodes unreachable from the output have zero adjoint.
    pub fn wrt(&self, v: Var) -> &[f64] {
        let (offset, len) = self.spans[v.id()];
        &self.adjoints[offset as usize..(offset + len) as usize]
    }

    /// Adjoints of every node as (node id, adjoint) pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.spans.iter().enumerate().map(|(id, &(offset, len))| {
            (id, &self.adjoints[offset as usize..(offset + len) as usize])
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

fn bcast(a: &[f64], b: &[f64], i: usize) -> (f64, f64) {
    let x = if a.len() == 1 { a[0] } else { a[i] };
    let y = if b.len() == 1 { b[0] } else { b[i] };
    (x, y)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, values: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(values),
            links: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.links.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.id()];
        &self.values[n.offset as usize..(n.offset + n.len) as usize]
    }

    /// First element of `v`; the value itself for scalars.
    pub fn scalar(&self, v: Var) -> f64 {
        self.values[self.nodes[v.id()].offset as usize]
    }

    pub fn op(&self, v: Var) -> Op {
        self.nodes[v.id()].op
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.id()].len as usize
    }

    fn push_leaf(&mut self, op: Op, data: &[f64], requires_grad: bool) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            op,
            offset: self.values.len() as u32,
            len: data.len() as u32,
            requires_grad,
        });
        self.values.extend_from_slice(data);
        Var(id)
    }

    /// Learnable leaf; gradients flow into it.
    pub fn param(&mut self, data: &[f64]) -> Var {
        self.push_leaf(Op::Param, data, true)
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, data: &[f64]) -> Var {
        self.push_leaf(Op::Const, data, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.push_leaf(Op::Const, &[x], false)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Param | Op::Const => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Max(a, b)
            | Op::Min(a, b) => vec![a, b],
            Op::MatVec { m, v, .. } => vec![m, v],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Powf(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Standardize(a, _)
            | Op::Index(a, _) => vec![a],
            Op::Concat { start, count } => {
                self.links[start as usize..(start + count) as usize].to_vec()
            }
        }
    }

    fn out_len(&self, op: &Op) -> Result<usize> {
        let len = |v: Var| self.nodes[v.id()].len as usize;
        match *op {
            Op::Param | Op::Const => unreachable!("leaves are pushed directly"),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Max(a, b)
            | Op::Min(a, b) => {
                let (la, lb) = (len(a), len(b));
                if la == lb || lb == 1 {
                    Ok(la)
                } else if la == 1 {
                    Ok(lb)
                } else {
                    Err(AutodiffError::Shape(format!(
                        "{}: operand lengths {la} and {lb} do not broadcast",
                        op.name()
                    )))
                }
            }
            Op::Sum(_) | Op::Mean(_) | Op::Index(..) => Ok(1),
            Op::MatVec { m, v, rows } => {
                let rows = rows as usize;
                let cols = len(v);
                if rows == 0 || len(m) != rows * cols {
                    Err(AutodiffError::Shape(format!(
                        "matvec: matrix of {} entries is not {rows}x{cols}",
                        len(m)
                    )))
                } else {
                    Ok(rows)
                }
            }
            Op::Concat { start, count } => Ok(self.links
                [start as usize..(start + count) as usize]
                .iter()
                .map(|&v| len(v))
                .sum()),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Powf(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Clamp(a, _, _)
            | Op::Standardize(a, _) => Ok(len(a)),
        }
    }

    fn span(&self, v: Var) -> std::ops::Range<usize> {
        let n = &self.nodes[v.id()];
        n.offset as usize..(n.offset + n.len) as usize
    }

    /// Computes the value of `op` from `src` (values of earlier nodes) into
    /// `out`.
    fn eval(&self, op: &Op, src: &[f64], out: &mut [f64]) -> Result<()> {
        let val = |v: Var| &src[self.span(v)];
        let domain = |detail: String| AutodiffError::Domain {
            op: op.name(),
            detail,
        };
        match *op {
            Op::Param | Op::Const => unreachable!("leaves are never re-evaluated"),
            Op::Add(a, b) => {
                let (a, b) = (val(a), val(b));
                for (i, o) in out.iter_mut().enumerate() {
                    let (x, y) = bcast(a, b, i);
                    *o = x + y;
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (val(a), val(b));
                for (i, o) in out.iter_mut().enumerate() {
                    let (x, y) = bcast(a, b, i);
                    *o = x - y;
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (val(a), val(b));
                for (i, o) in out.iter_mut().enumerate() {
                    let (x, y) = bcast(a, b, i);
                    *o = x * y;
                }
            }
            Op::Div(a, b) => {
                let (a, b) = (val(a), val(b));
                if b.iter().any(|&y| y == 0.0) {
                    return Err(domain("division by zero".into()));
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let (x, y) = bcast(a, b, i);
                    *o = x / y;
                }
            }
            Op::Max(a, b) => {
                let (a, b) = (val(a), val(b));
                for (i, o) in out.iter_mut().enumerate() {
                    let (x, y) = bcast(a, b, i);
                    *o = if x >= y { x } else { y };
                }
            }
            Op::Min(a, b) => {
                let (a, b) = (val(a), val(b));
                for (i, o) in out.iter_mut().enumerate() {
                    let (x, y) = bcast(a, b, i);
                    *o = if x <= y { x } else { y };
                }
            }
            Op::Neg(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = -x;
                }
            }
            Op::Scale(a, c) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = c * x;
                }
            }
            Op::Shift(a, c) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = x + c;
                }
            }
            Op::Powf(a, p) => {
                let integer = p.fract() == 0.0;
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    if (x < 0.0 && !integer) || (x == 0.0 && p < 1.0) {
                        return Err(domain(format!("{x}^{p}")));
                    }
                    *o = if integer { x.powi(p as i32) } else { x.powf(p) };
                }
            }
            Op::Exp(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = x.exp();
                }
            }
            Op::Log(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    if x <= 0.0 {
                        return Err(domain(format!("log of {x}")));
                    }
                    *o = x.ln();
                }
            }
            Op::Tanh(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = x.tanh();
                }
            }
            Op::Sigmoid(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = sigmoid(x);
                }
            }
            Op::Relu(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = if x > 0.0 { x } else { 0.0 };
                }
            }
            Op::Softplus(a) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = softplus(x);
                }
            }
            Op::Clamp(a, lo, hi) => {
                for (o, &x) in out.iter_mut().zip(val(a)) {
                    *o = x.clamp(lo, hi);
                }
            }
            Op::Sum(a) => out[0] = val(a).iter().sum(),
            Op::Mean(a) => {
                let a = val(a);
                out[0] = a.iter().sum::<f64>() / a.len() as f64;
            }
            Op::MatVec { m, v, .. } => {
                let (m, v) = (val(m), val(v));
                let cols = v.len();
                for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
                    *o = row.iter().zip(v).map(|(w, x)| w * x).sum();
                }
            }
            Op::Standardize(a, eps) => {
                let a = val(a);
                let first = a[0];
                if a.iter().all(|&x| x == first) {
                    out.fill(0.0);
                } else {
                    let n = a.len() as f64;
                    let mean = a.iter().sum::<f64>() / n;
                    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    for (o, &x) in out.iter_mut().zip(a) {
                        *o = (x - mean) * inv;
                    }
                }
            }
            Op::Concat { start, count } => {
                let mut k = 0;
                for &v in &self.links[start as usize..(start + count) as usize] {
                    let part = val(v);
                    out[k..k + part.len()].copy_from_slice(part);
                    k += part.len();
                }
            }
            Op::Index(a, i) => out[0] = val(a)[i as usize],
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(domain("non-finite result".into()));
        }
        Ok(())
    }

    /// Records `op`, computing its value. Returns a domain error (and
    /// records nothing) when the value is undefined.
    pub fn record(&mut self, op: Op) -> Result<Var> {
        if matches!(op, Op::Param | Op::Const) {
            return Err(AutodiffError::Usage(
                "leaves are created with param/constant".into(),
            ));
        }
        let n = self.out_len(&op)?;
        let requires_grad = self
            .inputs(&op)
            .iter()
            .any(|v| self.nodes[v.id()].requires_grad);
        let offset = self.values.len();
        self.values.resize(offset + n, 0.0);
        let mut values = std::mem::take(&mut self.values);
        let (src, dst) = values.split_at_mut(offset);
        let res = self.eval(&op, src, dst);
        self.values = values;
        if let Err(e) = res {
            self.values.truncate(offset);
            return Err(e);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            op,
            offset: offset as u32,
            len: n as u32,
            requires_grad,
        });
        Ok(Var(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div(a, b))
    }
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Max(a, b))
    }
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Min(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Shift(a, c))
    }
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.record(Op::Powf(a, p))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log(a))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid(a))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Softplus(a))
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(AutodiffError::Usage(format!("clamp bounds {lo} > {hi}")));
        }
        self.record(Op::Clamp(a, lo, hi))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean(a))
    }
    pub fn matvec(&mut self, m: Var, v: Var, rows: usize) -> Result<Var> {
        self.record(Op::MatVec {
            m,
            v,
            rows: rows as u32,
        })
    }
    pub fn standardize(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.record(Op::Standardize(a, eps))
    }
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        if i >= self.len_of(a) {
            return Err(AutodiffError::Shape(format!(
                "index {i} out of range for length {}",
                self.len_of(a)
            )));
        }
        self.record(Op::Index(a, i as u32))
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::Shape("concat of nothing".into()));
        }
        let start = self.links.len() as u32;
        self.links.extend_from_slice(parts);
        let res = self.record(Op::Concat {
            start,
            count: parts.len() as u32,
        });
        if res.is_err() {
            self.links.truncate(start as usize);
        }
        res
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.shift(n, 1.0)
    }

    /// One reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.id()];
        if out.len != 1 {
            return Err(AutodiffError::Usage(format!(
                "backward needs a scalar output, got length {}",
                out.len
            )));
        }
        let mut adj = vec![0.0; self.values.len()];
        adj[out.offset as usize] = 1.0;
        let vals = &self.values;
        for id in (0..=output.id()).rev() {
            let node = self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let o = node.offset as usize..(node.offset + node.len) as usize;
            if adj[o.clone()].iter().all(|&g| g == 0.0) {
                continue;
            }
            // Inputs always live strictly before this node in the arena.
            let (lower, upper) = adj.split_at_mut(o.start);
            let g = &upper[..o.len()];
            let y = &vals[o.clone()];
            self.propagate(&node.op, g, y, vals, lower);
        }
        Ok(Gradients {
            adjoints: adj,
            spans: self.nodes.iter().map(|n| (n.offset, n.len)).collect(),
        })
    }

    fn propagate(&self, op: &Op, g: &[f64], y: &[f64], vals: &[f64], adj: &mut [f64]) {
        let needs = |v: Var| self.nodes[v.id()].requires_grad;
        let span = |v: Var| self.span(v);
        // Accumulates d(out_i)/d(in) * g_i into the adjoint of an operand,
        // summing over the broadcast dimension when the operand is a scalar.
        fn accum(adj: &mut [f64], r: std::ops::Range<usize>, i: usize, d: f64) {
            if r.len() == 1 {
                adj[r.start] += d;
            } else {
                adj[r.start + i] += d;
            }
        }
        match *op {
            Op::Param | Op::Const => {}
            Op::Add(a, b) => {
                let (ra, rb) = (span(a), span(b));
                for (i, &gi) in g.iter().enumerate() {
                    if needs(a) {
                        accum(adj, ra.clone(), i, gi);
                    }
                    if needs(b) {
                        accum(adj, rb.clone(), i, gi);
                    }
                }
            }
            Op::Sub(a, b) => {
                let (ra, rb) = (span(a), span(b));
                for (i, &gi) in g.iter().enumerate() {
                    if needs(a) {
                        accum(adj, ra.clone(), i, gi);
                    }
                    if needs(b) {
                        accum(adj, rb.clone(), i, -gi);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ra, rb) = (span(a), span(b));
                for (i, &gi) in g.iter().enumerate() {
                    let (x, w) = bcast(&vals[ra.clone()], &vals[rb.clone()], i);
                    if needs(a) {
                        accum(adj, ra.clone(), i, gi * w);
                    }
                    if needs(b) {
                        accum(adj, rb.clone(), i, gi * x);
                    }
                }
            }
            Op::Div(a, b) => {
                let (ra, rb) = (span(a), span(b));
                for (i, &gi) in g.iter().enumerate() {
                    let (_, w) = bcast(&vals[ra.clone()], &vals[rb.clone()], i);
                    if needs(a) {
                        accum(adj, ra.clone(), i, gi / w);
                    }
                    if needs(b) {
                        accum(adj, rb.clone(), i, -gi * y[i] / w);
                    }
                }
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let is_max = matches!(op, Op::Max(..));
                let (ra, rb) = (span(a), span(b));
                for (i, &gi) in g.iter().enumerate() {
                    let (x, w) = bcast(&vals[ra.clone()], &vals[rb.clone()], i);
                    let pick_a = if is_max { x >= w } else { x <= w };
                    if pick_a {
                        if needs(a) {
                            accum(adj, ra.clone(), i, gi);
                        }
                    } else if needs(b) {
                        accum(adj, rb.clone(), i, gi);
                    }
                }
            }
            Op::Neg(a) => {
                let r = span(a);
                for (d, &gi) in adj[r].iter_mut().zip(g) {
                    *d -= gi;
                }
            }
            Op::Scale(a, c) => {
                let r = span(a);
                for (d, &gi) in adj[r].iter_mut().zip(g) {
                    *d += c * gi;
                }
            }
            Op::Shift(a, _) => {
                let r = span(a);
                for (d, &gi) in adj[r].iter_mut().zip(g) {
                    *d += gi;
                }
            }
            Op::Powf(a, p) => {
                let r = span(a);
                let x = &vals[r.clone()];
                for ((d, &gi), &xi) in adj[r].iter_mut().zip(g).zip(x) {
                    let dp = if p == 1.0 { 1.0 } else { p * xi.powf(p - 1.0) };
                    *d += gi * dp;
                }
            }
            Op::Exp(a) => {
                let r = span(a);
                for ((d, &gi), &yi) in adj[r].iter_mut().zip(g).zip(y) {
                    *d += gi * yi;
                }
            }
            Op::Log(a) => {
                let r = span(a);
                let x = &vals[r.clone()];
                for ((d, &gi), &xi) in adj[r].iter_mut().zip(g).zip(x) {
                    *d += gi / xi;
                }
            }
            Op::Tanh(a) => {
                let r = span(a);
                for ((d, &gi), &yi) in adj[r].iter_mut().zip(g).zip(y) {
                    *d += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                let r = span(a);
                for ((d, &gi), &yi) in adj[r].iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
            Op::Relu(a) => {
                let r = span(a);
                let x = &vals[r.clone()];
                for ((d, &gi), &xi) in adj[r].iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Softplus(a) => {
                let r = span(a);
                let x = &vals[r.clone()];
                for ((d, &gi), &xi) in adj[r].iter_mut().zip(g).zip(x) {
                    *d += gi * sigmoid(xi);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let r = span(a);
                let x = &vals[r.clone()];
                for ((d, &gi), &xi) in adj[r].iter_mut().zip(g).zip(x) {
                    if xi >= lo && xi <= hi {
                        *d += gi;
                    }
                }
            }
            Op::Sum(a) => {
                for d in &mut adj[span(a)] {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let r = span(a);
                let s = g[0] / r.len() as f64;
                for d in &mut adj[r] {
                    *d += s;
                }
            }
            Op::MatVec { m, v, .. } => {
                let (rm, rv) = (span(m), span(v));
                let cols = rv.len();
                if needs(m) {
                    let x = &vals[rv.clone()];
                    for (row, &gi) in adj[rm.clone()].chunks_exact_mut(cols).zip(g) {
                        for (d, &xj) in row.iter_mut().zip(x) {
                            *d += gi * xj;
                        }
                    }
                }
                if needs(v) {
                    let w = &vals[rm];
                    let dv = &mut adj[rv];
                    for (row, &gi) in w.chunks_exact(cols).zip(g) {
                        for (d, &wj) in dv.iter_mut().zip(row) {
                            *d += gi * wj;
                        }
                    }
                }
            }
            Op::Standardize(a, eps) => {
                let r = span(a);
                let x = &vals[r.clone()];
                let first = x[0];
                if x.iter().all(|&xi| xi == first) {
                    return;
                }
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|xi| (xi - mean).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                let g_mean = g.iter().sum::<f64>() / n;
                let gy_mean = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum::<f64>() / n;
                for ((d, &gi), &yi) in adj[r].iter_mut().zip(g).zip(y) {
                    *d += inv * (gi - g_mean - yi * gy_mean);
                }
            }
            Op::Concat { start, count } => {
                let mut k = 0;
                for &v in &self.links[start as usize..(start + count) as usize] {
                    let r = span(v);
                    let n = r.len();
                    if needs(v) {
                        for (d, &gi) in adj[r].iter_mut().zip(&g[k..k + n]) {
                            *d += gi;
                        }
                    }
                    k += n;
                }
            }
            Op::Index(a, i) => {
                adj[span(a).start + i as usize] += g[0];
            }
        }
    }

    /// Recomputes every non-leaf value from the recorded operations and the
    /// stored leaves.
    pub fn replay(&self) -> Result<Vec<f64>> {
        let mut values = vec![0.0; self.values.len()];
        for node in &self.nodes {
            let r = node.offset as usize..(node.offset + node.len) as usize;
            if matches!(node.op, Op::Param | Op::Const) {
                values[r.clone()].copy_from_slice(&self.values[r]);
            } else {
                let (src, dst) = values.split_at_mut(r.start);
                self.eval(&node.op, src, &mut dst[..r.len()])?;
            }
        }
        Ok(values)
    }

    /// Raw value arena, in node order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Verifies structural invariants: every operand precedes its consumer.
    pub fn check_topology(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(id, n)| self.inputs(&n.op).iter().all(|v| v.id() < id))
    }
}
