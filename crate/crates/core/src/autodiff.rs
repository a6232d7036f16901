//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation evaluates its
//! value eagerly, appends a [`Node`] and remembers enough to apply its local
//! derivative rule when [`Tape::backward`] walks the tape in reverse.
//!
//! Binary elementwise operations broadcast a `1 x 1` operand against any
//! shape. Nondifferentiable points use fixed one-sided rules:
//!
//! * `min`/`max` send the whole adjoint to the first operand on a tie,
//! * `relu` has derivative 0 at 0,
//! * `sqrt` has derivative 0 at 0,
//! * `interp` uses the segment to the right of an interior knot.
//!
//! Every branch decision is folded into a digest so callers can detect when a
//! perturbation moved the evaluation onto a different piece (see
//! [`grad_check`]).

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of the operation that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpTag {
    Param,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Sqrt,
    Square,
    Neg,
    Relu,
    Softplus,
    Affine,
    Mean,
    Sum,
    Interp,
}

impl OpTag {
    pub fn name(self) -> &'static str {
        match self {
            OpTag::Param => "param",
            OpTag::Constant => "constant",
            OpTag::Add => "add",
            OpTag::Sub => "sub",
            OpTag::Mul => "mul",
            OpTag::Div => "div",
            OpTag::Min => "min",
            OpTag::Max => "max",
            OpTag::Sqrt => "sqrt",
            OpTag::Square => "square",
            OpTag::Neg => "neg",
            OpTag::Relu => "relu",
            OpTag::Softplus => "softplus",
            OpTag::Affine => "affine",
            OpTag::Mean => "mean",
            OpTag::Sum => "sum",
            OpTag::Interp => "interp",
        }
    }
}

/// Knots of a piecewise-linear function, strictly increasing in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Knots {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Knots {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::structural(format!(
                "interpolation needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::structural("interpolation abscissae must be strictly increasing"));
        }
        Ok(Knots {
            xs: points.iter().map(|p| p.0).collect(),
            ys: points.iter().map(|p| p.1).collect(),
        })
    }

    /// Returns `(value, slope, segment, on_interior_knot)`.
    ///
    /// Inputs outside the knot range clamp to the end values with slope 0.
    fn locate(&self, x: f64) -> (f64, f64, usize, bool) {
        let n = self.xs.len();
        if x <= self.xs[0] {
            let slope = if x == self.xs[0] { self.slope(0) } else { 0.0 };
            return (self.ys[0], slope, 0, false);
        }
        if x >= self.xs[n - 1] {
            let slope = if x == self.xs[n - 1] { self.slope(n - 2) } else { 0.0 };
            return (self.ys[n - 1], slope, n, false);
        }
        // first knot strictly greater than x
        let upper = self.xs.partition_point(|&k| k <= x);
        let seg = upper - 1;
        let slope = self.slope(seg);
        let value = self.ys[seg] + slope * (x - self.xs[seg]);
        (value, slope, seg + 1, x == self.xs[seg])
    }

    fn slope(&self, seg: usize) -> f64 {
        (self.ys[seg + 1] - self.ys[seg]) / (self.xs[seg + 1] - self.xs[seg])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.locate(x).0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Min(usize, usize),
    Max(usize, usize),
    Sqrt(usize),
    Square(usize),
    Neg(usize),
    Relu(usize),
    Softplus(usize),
    Affine { w: usize, x: usize, b: usize },
    Mean(usize),
    Sum(usize),
    Interp(usize, Arc<Knots>),
}

impl Op {
    fn parents(&self) -> ([usize; 3], usize) {
        match *self {
            Op::Leaf => ([0; 3], 0),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Min(a, b)
            | Op::Max(a, b) => ([a, b, 0], 2),
            Op::Sqrt(a)
            | Op::Square(a)
            | Op::Neg(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::Interp(a, _) => ([a, 0, 0], 1),
            Op::Affine { w, x, b } => ([w, x, b], 3),
        }
    }
}

/// A value in the computation graph.
#[derive(Debug, Clone)]
pub struct Node {
    value: Tensor,
    adjoint: Option<Tensor>,
    op: Op,
    tag: OpTag,
    requires_grad: bool,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Adjoint filled in by the last [`Tape::backward`] call, if this node
    /// was on a path to the output.
    pub fn adjoint(&self) -> Option<&Tensor> {
        self.adjoint.as_ref()
    }

    pub fn op_tag(&self) -> OpTag {
        self.tag
    }

    pub fn parents(&self) -> Vec<Var> {
        let (p, n) = self.op.parents();
        p[..n].iter().map(|&i| Var(i)).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Adjoints of the parameter leaves after a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    entries: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.entries
            .binary_search_by_key(&var, |e| e.0)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.entries.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradients in parameter creation order.
    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|e| e.1).collect()
    }
}

struct Evaluated {
    value: Tensor,
    ties: usize,
    digest: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fold(digest: u64, word: u64) -> u64 {
    (digest ^ word).wrapping_mul(FNV_PRIME)
}

#[inline]
fn at(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.as_slice()[0]
    } else {
        t.as_slice()[i]
    }
}

fn broadcast_shape(tag: OpTag, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape())
    } else if a.is_scalar() {
        Ok(b.shape())
    } else {
        Err(Error::structural(format!(
            "shape mismatch in `{}`: {}x{} vs {}x{}",
            tag.name(),
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )))
    }
}

fn zip_with(
    tag: OpTag,
    a: &Tensor,
    b: &Tensor,
    mut f: impl FnMut(f64, f64) -> f64,
) -> Result<Tensor> {
    let (r, c) = broadcast_shape(tag, a, b)?;
    let data = (0..r * c).map(|i| f(at(a, i), at(b, i))).collect();
    Tensor::from_vec(r, c, data)
}

fn evaluate(op: &Op, tag: OpTag, values: &[&Tensor]) -> Result<Evaluated> {
    let mut ties = 0;
    let mut digest = FNV_OFFSET;
    let value = match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::Add(..) => zip_with(tag, values[0], values[1], |x, y| x + y)?,
        Op::Sub(..) => zip_with(tag, values[0], values[1], |x, y| x - y)?,
        Op::Mul(..) => zip_with(tag, values[0], values[1], |x, y| x * y)?,
        Op::Div(..) => {
            let (num, den) = (values[0], values[1]);
            let (r, c) = broadcast_shape(tag, num, den)?;
            if let Some(i) = (0..r * c).find(|&i| at(den, i) == 0.0) {
                return Err(Error::domain("div", &[at(num, i), at(den, i)]));
            }
            zip_with(tag, num, den, |x, y| x / y)?
        }
        Op::Min(..) | Op::Max(..) => {
            let is_min = matches!(op, Op::Min(..));
            zip_with(tag, values[0], values[1], |x, y| {
                if x == y {
                    ties += 1;
                }
                let first = if is_min { x <= y } else { x >= y };
                digest = fold(digest, first as u64);
                if first {
                    x
                } else {
                    y
                }
            })?
        }
        Op::Sqrt(_) => {
            let x = values[0];
            if let Some(&bad) = x.as_slice().iter().find(|v| **v < 0.0) {
                return Err(Error::domain("sqrt", &[bad]));
            }
            x.map(libm::sqrt)
        }
        Op::Square(_) => values[0].map(|v| v * v),
        Op::Neg(_) => values[0].map(|v| -v),
        Op::Relu(_) => {
            let x = values[0];
            let mut out = x.clone();
            for v in out.as_mut_slice() {
                if *v == 0.0 {
                    ties += 1;
                }
                let on = *v > 0.0;
                digest = fold(digest, on as u64);
                if !on {
                    *v = 0.0;
                }
            }
            out
        }
        Op::Softplus(_) => values[0].map(softplus),
        Op::Affine { .. } => affine_forward(values[0], values[1], values[2])?,
        Op::Mean(_) => {
            let x = values[0];
            Tensor::scalar(x.sum() / x.len() as f64)
        }
        Op::Sum(_) => Tensor::scalar(values[0].sum()),
        Op::Interp(_, knots) => {
            let mut out = values[0].clone();
            for v in out.as_mut_slice() {
                let (y, _, seg, on_knot) = knots.locate(*v);
                if on_knot {
                    ties += 1;
                }
                digest = fold(digest, seg as u64);
                *v = y;
            }
            out
        }
    };
    Ok(Evaluated {
        value,
        ties,
        digest,
    })
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn affine_forward(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (out_dim, in_dim) = w.shape();
    if x.rows() != in_dim || b.shape() != (out_dim, 1) {
        return Err(Error::structural(format!(
            "shape mismatch in `affine`: W {}x{}, x {}x{}, b {}x{}",
            out_dim,
            in_dim,
            x.rows(),
            x.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = x.cols();
    let mut out = vec![0.0; out_dim * n];
    let (ws, xs, bs) = (w.as_slice(), x.as_slice(), b.as_slice());
    for o in 0..out_dim {
        let row = &mut out[o * n..(o + 1) * n];
        row.fill(bs[o]);
        for i in 0..in_dim {
            let wv = ws[o * in_dim + i];
            if wv == 0.0 {
                continue;
            }
            let xr = &xs[i * n..(i + 1) * n];
            for (r, xv) in row.iter_mut().zip(xr) {
                *r += wv * xv;
            }
        }
    }
    Tensor::from_vec(out_dim, n, out)
}

/// Sum `contrib` into the adjoint slot of node `idx`, reducing a broadcast
/// contribution when the node is a scalar.
fn accumulate(adjoints: &mut [Option<Tensor>], shapes: &[(usize, usize)], idx: usize, contrib: Tensor) {
    let contrib = if shapes[idx] == (1, 1) && !contrib.is_scalar() {
        Tensor::scalar(contrib.sum())
    } else {
        contrib
    };
    match &mut adjoints[idx] {
        Some(existing) => existing.add_assign(&contrib),
        slot => *slot = Some(contrib),
    }
}

/// Ordered record of the nodes of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
    rng: ChaCha8Rng,
    ties: usize,
    digest: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// A tape whose RNG handle is seeded with `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            ties: 0,
            digest: FNV_OFFSET,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, var: Var) -> &Node {
        &self.nodes[var.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Number of exact ties met by `min`, `max`, `relu` and `interp`.
    pub fn ties(&self) -> usize {
        self.ties
    }

    /// Digest of every branch decision taken so far.
    pub fn branch_digest(&self) -> u64 {
        self.digest
    }

    /// Parameter leaves in creation order.
    pub fn params(&self) -> Vec<Var> {
        self.params.iter().map(|&i| Var(i)).collect()
    }

    fn push_leaf(&mut self, value: Tensor, is_param: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            adjoint: None,
            op: Op::Leaf,
            tag: if is_param { OpTag::Param } else { OpTag::Constant },
            requires_grad: is_param,
        });
        if is_param {
            self.params.push(idx);
        }
        Var(idx)
    }

    /// A learnable leaf whose adjoint is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push(&mut self, op: Op, tag: OpTag) -> Result<Var> {
        let (parents, n) = op.parents();
        let evaluated = {
            let values: Vec<&Tensor> = parents[..n].iter().map(|&p| &self.nodes[p].value).collect();
            evaluate(&op, tag, &values)?
        };
        let requires_grad = parents[..n].iter().any(|&p| self.nodes[p].requires_grad);
        self.ties += evaluated.ties;
        if evaluated.digest != FNV_OFFSET {
            self.digest = fold(self.digest, evaluated.digest);
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value: evaluated.value,
            adjoint: None,
            op,
            tag,
            requires_grad,
        });
        Ok(Var(idx))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a.0, b.0), OpTag::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a.0, b.0), OpTag::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a.0, b.0), OpTag::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a.0, b.0), OpTag::Div)
    }

    /// Elementwise minimum; ties propagate to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Min(a.0, b.0), OpTag::Min)
    }

    /// Elementwise maximum; ties propagate to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Max(a.0, b.0), OpTag::Max)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a.0), OpTag::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Square(a.0), OpTag::Square)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a.0), OpTag::Neg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a.0), OpTag::Relu)
    }

    /// `ln(1 + e^x)`, strictly positive.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softplus(a.0), OpTag::Softplus)
    }

    /// `W x + b` with `W: out x in`, `x: in x n`, `b: out x 1`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        self.push(
            Op::Affine {
                w: w.0,
                x: x.0,
                b: b.0,
            },
            OpTag::Affine,
        )
    }

    /// Mean over all elements, as a `1 x 1` node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a.0), OpTag::Mean)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a.0), OpTag::Sum)
    }

    /// Elementwise piecewise-linear interpolation through `knots`.
    pub fn interp(&mut self, a: Var, knots: Arc<Knots>) -> Result<Var> {
        self.push(Op::Interp(a.0, knots), OpTag::Interp)
    }

    /// Multiply by a constant scalar.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let c = self.scalar(factor);
        self.mul(a, c)
    }

    /// Add a constant scalar.
    pub fn shift(&mut self, a: Var, offset: f64) -> Result<Var> {
        let c = self.scalar(offset);
        self.add(a, c)
    }

    /// Propagate adjoints from the scalar `output` back to every node.
    ///
    /// Adjoints are summed at fan-out nodes and stored on the nodes; the
    /// returned map holds one entry per parameter leaf (zeros when the
    /// parameter does not influence `output`).
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        let out_shape = self.nodes[output.0].value.shape();
        if out_shape != (1, 1) {
            return Err(Error::structural(format!(
                "backward needs a scalar output, got {}x{}",
                out_shape.0, out_shape.1
            )));
        }
        let shapes: Vec<(usize, usize)> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = adjoints[idx].take() else { continue };
            self.propagate(idx, &g, &shapes, &mut adjoints);
            adjoints[idx] = Some(g);
        }

        for (node, adj) in self.nodes.iter_mut().zip(adjoints) {
            node.adjoint = adj;
        }
        let entries = self
            .params
            .iter()
            .map(|&p| {
                let node = &self.nodes[p];
                let (r, c) = node.value.shape();
                let grad = node.adjoint.clone().unwrap_or_else(|| Tensor::zeros(r, c));
                (Var(p), grad)
            })
            .collect();
        Ok(Gradients { entries })
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor,
        shapes: &[(usize, usize)],
        adjoints: &mut [Option<Tensor>],
    ) {
        let node = &self.nodes[idx];
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].requires_grad;
        let (r, c) = g.shape();
        let elementwise = |f: &dyn Fn(usize) -> f64| {
            Tensor::from_vec(r, c, (0..r * c).map(f).collect()).expect("adjoint shape")
        };

        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if wants(a) {
                    accumulate(adjoints, shapes, a, g.clone());
                }
                if wants(b) {
                    accumulate(adjoints, shapes, b, g.clone());
                }
            }
            &Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(adjoints, shapes, a, g.clone());
                }
                if wants(b) {
                    accumulate(adjoints, shapes, b, g.map(|v| -v));
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                if wants(a) {
                    accumulate(adjoints, shapes, a, elementwise(&|i| at(g, i) * at(vb, i)));
                }
                if wants(b) {
                    accumulate(adjoints, shapes, b, elementwise(&|i| at(g, i) * at(va, i)));
                }
            }
            &Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                if wants(a) {
                    accumulate(adjoints, shapes, a, elementwise(&|i| at(g, i) / at(vb, i)));
                }
                if wants(b) {
                    accumulate(
                        adjoints,
                        shapes,
                        b,
                        elementwise(&|i| {
                            let d = at(vb, i);
                            -at(g, i) * at(va, i) / (d * d)
                        }),
                    );
                }
            }
            &Op::Min(a, b) | &Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (va, vb) = (val(a), val(b));
                let first = |i: usize| {
                    if is_min {
                        at(va, i) <= at(vb, i)
                    } else {
                        at(va, i) >= at(vb, i)
                    }
                };
                if wants(a) {
                    accumulate(
                        adjoints,
                        shapes,
                        a,
                        elementwise(&|i| if first(i) { at(g, i) } else { 0.0 }),
                    );
                }
                if wants(b) {
                    accumulate(
                        adjoints,
                        shapes,
                        b,
                        elementwise(&|i| if first(i) { 0.0 } else { at(g, i) }),
                    );
                }
            }
            &Op::Sqrt(a) => {
                let y = &node.value;
                accumulate(
                    adjoints,
                    shapes,
                    a,
                    elementwise(&|i| {
                        let s = at(y, i);
                        if s > 0.0 {
                            at(g, i) * 0.5 / s
                        } else {
                            0.0
                        }
                    }),
                );
            }
            &Op::Square(a) => {
                let x = val(a);
                accumulate(adjoints, shapes, a, elementwise(&|i| 2.0 * at(x, i) * at(g, i)));
            }
            &Op::Neg(a) => accumulate(adjoints, shapes, a, g.map(|v| -v)),
            &Op::Relu(a) => {
                let x = val(a);
                accumulate(
                    adjoints,
                    shapes,
                    a,
                    elementwise(&|i| if at(x, i) > 0.0 { at(g, i) } else { 0.0 }),
                );
            }
            &Op::Softplus(a) => {
                let x = val(a);
                accumulate(adjoints, shapes, a, elementwise(&|i| at(g, i) * sigmoid(at(x, i))));
            }
            &Op::Affine { w, x, b } => self.affine_backward(w, x, b, g, shapes, adjoints),
            &Op::Mean(a) | &Op::Sum(a) => {
                let (ar, ac) = shapes[a];
                let scale = if matches!(node.op, Op::Mean(_)) {
                    1.0 / (ar * ac) as f64
                } else {
                    1.0
                };
                accumulate(adjoints, shapes, a, Tensor::filled(ar, ac, g.item() * scale));
            }
            Op::Interp(a, knots) => {
                let x = val(*a);
                accumulate(
                    adjoints,
                    shapes,
                    *a,
                    elementwise(&|i| at(g, i) * knots.locate(at(x, i)).1),
                );
            }
        }
    }

    fn affine_backward(
        &self,
        w: usize,
        x: usize,
        b: usize,
        g: &Tensor,
        shapes: &[(usize, usize)],
        adjoints: &mut [Option<Tensor>],
    ) {
        let wv = &self.nodes[w].value;
        let xv = &self.nodes[x].value;
        let (out_dim, in_dim) = wv.shape();
        let n = xv.cols();
        let (ws, xs, gs) = (wv.as_slice(), xv.as_slice(), g.as_slice());

        if self.nodes[w].requires_grad {
            let mut dw = vec![0.0; out_dim * in_dim];
            for o in 0..out_dim {
                let grow = &gs[o * n..(o + 1) * n];
                for i in 0..in_dim {
                    let xrow = &xs[i * n..(i + 1) * n];
                    dw[o * in_dim + i] = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                }
            }
            let dw = Tensor::from_vec(out_dim, in_dim, dw).expect("dW shape");
            accumulate(adjoints, shapes, w, dw);
        }
        if self.nodes[x].requires_grad {
            let mut dx = vec![0.0; in_dim * n];
            for o in 0..out_dim {
                let grow = &gs[o * n..(o + 1) * n];
                for i in 0..in_dim {
                    let wv = ws[o * in_dim + i];
                    for (d, gv) in dx[i * n..(i + 1) * n].iter_mut().zip(grow) {
                        *d += wv * gv;
                    }
                }
            }
            let dx = Tensor::from_vec(in_dim, n, dx).expect("dx shape");
            accumulate(adjoints, shapes, x, dx);
        }
        if self.nodes[b].requires_grad {
            let db = (0..out_dim).map(|o| gs[o * n..(o + 1) * n].iter().sum()).collect();
            accumulate(adjoints, shapes, b, Tensor::column(db));
        }
    }

    /// Recompute every node from the recorded leaves, in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Leaf => node.value.clone(),
                op => {
                    let (p, n) = op.parents();
                    let inputs: Vec<&Tensor> = p[..n].iter().map(|&i| &values[i]).collect();
                    evaluate(op, node.tag, &inputs)?.value
                }
            };
            values.push(value);
        }
        Ok(values)
    }
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |AD - CD| / max(1, |CD|)` over all checked parameter elements.
    pub max_rel_error: f64,
    /// Number of parameter elements compared.
    pub checked: usize,
    /// `(block, element)` pairs whose difference stencil crossed a
    /// nondifferentiable point, excluded from `max_rel_error`.
    pub flagged: Vec<(usize, usize)>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn eval_scalar<F>(f: &mut F, theta: &[Tensor]) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::structural("grad_check needs a scalar-valued function"));
    }
    Ok((v.item(), tape.branch_digest()))
}

/// Compare [`Tape::backward`] against central finite differences.
///
/// Each element `θ_e` is perturbed by `h * max(1, |θ_e|)`. When either side
/// of the stencil lands on a different branch of a `min`/`max`/`relu`/
/// `interp` than the unperturbed point, the check is retried with a step a
/// thousand times smaller; if the branch still changes the element is
/// flagged as nondifferentiable rather than compared.
pub fn grad_check<F>(mut f: F, theta: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base_digest = tape.branch_digest();
    let grads = tape.backward(out)?.into_tensors();

    let mut point: Vec<Tensor> = theta.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        flagged: Vec::new(),
    };
    for (block, grad) in grads.iter().enumerate() {
        for e in 0..grad.len() {
            let origin = theta[block].as_slice()[e];
            let mut step = h * origin.abs().max(1.0);
            let mut estimate = None;
            for _ in 0..2 {
                point[block].as_mut_slice()[e] = origin + step;
                let (fp, dp) = eval_scalar(&mut f, &point)?;
                point[block].as_mut_slice()[e] = origin - step;
                let (fm, dm) = eval_scalar(&mut f, &point)?;
                point[block].as_mut_slice()[e] = origin;
                if dp == base_digest && dm == base_digest {
                    estimate = Some((fp - fm) / (2.0 * step));
                    break;
                }
                step *= 1e-3;
            }
            match estimate {
                Some(cd) => {
                    let ad = grad.as_slice()[e];
                    let err = (ad - cd).abs() / cd.abs().max(1.0);
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.checked += 1;
                }
                None => report.flagged.push((block, e)),
            }
        }
    }
    Ok(report)
}
