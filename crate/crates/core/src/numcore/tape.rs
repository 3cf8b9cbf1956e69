//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every differentiable computation in the crate is written against [`Var`]
//! handles. Values are computed eagerly when an op is recorded; calling
//! [`Tape::backward`] walks the recording in reverse and accumulates
//! gradients for every node that depends on a gradient-requiring leaf.
//!
//! Rotation matrices on the tape are `[n, 9]` tensors holding each 3x3
//! matrix column by column (entries `0..3` are the first column).

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use super::attention::{attention_backward, attention_forward, AttnShape};
use super::tensor::gemm;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    DivCol(usize, usize),
    TileRows(usize, usize),
    RepeatRows(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    SliceCols(usize, usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    SumAll(usize),
    SumCols(usize),
    Square(usize),
    Sqrt(usize),
    Exp(usize),
    Sin(usize),
    Cos(usize),
    Tanh(usize),
    Silu(usize),
    Atan2(usize, usize),
    Clamp(usize, f64, f64),
    LayerNorm(usize, f64),
    Cross(usize, usize),
    Mat3Mul(usize, usize),
    Mat3Vec(usize, usize),
    GemanMcClure(usize, f64),
    Attention(Box<AttnNode>),
}

#[derive(Debug, Clone)]
struct AttnNode {
    q: usize,
    k: usize,
    v: usize,
    bias: Option<usize>,
    shape: AttnShape,
    probs: Vec<f64>,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::DivCol(..) => "div_col",
            Op::TileRows(..) => "tile_rows",
            Op::RepeatRows(..) => "repeat_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Reshape(..) => "reshape",
            Op::SumAll(..) => "sum",
            Op::SumCols(..) => "sum_cols",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Tanh(..) => "tanh",
            Op::Silu(..) => "silu",
            Op::Atan2(..) => "atan2",
            Op::Clamp(..) => "clamp",
            Op::LayerNorm(..) => "layer_norm",
            Op::Cross(..) => "cross",
            Op::Mat3Mul(..) => "mat3_mul",
            Op::Mat3Vec(..) => "mat3_vec",
            Op::GemanMcClure(..) => "geman_mcclure",
            Op::Attention(..) => "attention",
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    grad: bool,
}

/// Recording of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<&'static str>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    /// Gradient of `v`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.grads[v.id].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }
}

fn rc(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first primitive that produced a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.first_non_finite.get()
    }

    /// Fails with a numeric error naming the first primitive that produced a
    /// non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite.get() {
            Some(primitive) => Err(Error::Numeric { primitive }),
            None => Ok(()),
        }
    }

    fn push(&self, value: Tensor, op: Op, grad: bool) -> Var<'_> {
        self.push_arc(Arc::new(value), op, grad)
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, grad: bool) -> Var<'_> {
        if self.first_non_finite.get().is_none() && !value.is_finite() {
            self.first_non_finite.set(Some(op.name()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Leaf whose gradient is tracked.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf sharing storage with an existing tensor.
    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push_arc(value, Op::Leaf, requires_grad)
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].grad
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar output, got shape {:?}", out.value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::filled(out.value.shape(), 1.0));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        shapes.truncate(output.id + 1);
        grads.resize(nodes.len(), None);
        shapes.extend(nodes[output.id + 1..].iter().map(|n| n.value.shape().to_vec()));
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn unary(nodes: &[Node], a: usize, g: &Tensor, f: impl Fn(f64, f64, f64) -> f64, out: &Tensor) -> Tensor {
    // f(input, output, upstream) -> local contribution
    let x = &nodes[a].value;
    let data = x.data().iter().zip(out.data()).zip(g.data()).map(|((&xi, &yi), &gi)| f(xi, yi, gi)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            accumulate(grads, nodes, *a, g.zip_map(val(*b), |gi, bi| gi * bi));
            accumulate(grads, nodes, *b, g.zip_map(val(*a), |gi, ai| gi * ai));
        }
        Op::Div(a, b) => {
            accumulate(grads, nodes, *a, g.zip_map(val(*b), |gi, bi| gi / bi));
            let gb = g.zip_map(out, |gi, oi| gi * oi).zip_map(val(*b), |x, bi| -x / bi);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.scale(*s)),
        Op::Offset(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::MatMul(a, b) => {
            let (m, k) = rc(val(*a));
            let n = val(*b).cols();
            if nodes[*a].grad {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g.data(), false, val(*b).data(), true, 0.0, &mut ga);
                accumulate(grads, nodes, *a, Tensor::from_vec(m, k, ga));
            }
            if nodes[*b].grad {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, 1.0, val(*a).data(), true, g.data(), false, 0.0, &mut gb);
                accumulate(grads, nodes, *b, Tensor::from_vec(k, n, gb));
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::AddRow(a, r) => {
            accumulate(grads, nodes, *a, g.clone());
            if nodes[*r].grad {
                let (n, d) = rc(g);
                let mut gr = vec![0.0; d];
                for i in 0..n {
                    for (acc, x) in gr.iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                accumulate(grads, nodes, *r, Tensor::from_vec(1, d, gr));
            }
        }
        Op::MulRow(a, r) => {
            let (n, d) = rc(g);
            let row = val(*r).data();
            if nodes[*a].grad {
                let mut ga = g.clone();
                for i in 0..n {
                    for (x, w) in ga.data_mut()[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *x *= w;
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*r].grad {
                let av = val(*a);
                let mut gr = vec![0.0; d];
                for i in 0..n {
                    for ((acc, x), y) in gr.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                        *acc += x * y;
                    }
                }
                accumulate(grads, nodes, *r, Tensor::from_vec(1, d, gr));
            }
        }
        Op::MulCol(a, c) | Op::DivCol(a, c) => {
            let divide = matches!(nodes[id].op, Op::DivCol(..));
            let (n, d) = rc(g);
            let col = val(*c).data();
            if nodes[*a].grad {
                let mut ga = g.clone();
                for i in 0..n {
                    let s = if divide { 1.0 / col[i] } else { col[i] };
                    for x in &mut ga.data_mut()[i * d..(i + 1) * d] {
                        *x *= s;
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*c].grad {
                let av = val(*a);
                let mut gc = vec![0.0; n];
                for i in 0..n {
                    let dot: f64 = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                    gc[i] = if divide { -dot / (col[i] * col[i]) } else { dot };
                }
                accumulate(grads, nodes, *c, Tensor::from_vec(n, 1, gc));
            }
        }
        Op::TileRows(a, k) => {
            let (n, d) = rc(val(*a));
            let mut ga = vec![0.0; n * d];
            for rep in 0..*k {
                for (acc, x) in ga.iter_mut().zip(&g.data()[rep * n * d..(rep + 1) * n * d]) {
                    *acc += x;
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, d, ga));
        }
        Op::RepeatRows(a, k) => {
            let (b, d) = rc(val(*a));
            let mut ga = vec![0.0; b * d];
            for r in 0..b * k {
                let dst = r / k;
                for (acc, x) in ga[dst * d..(dst + 1) * d].iter_mut().zip(g.row(r)) {
                    *acc += x;
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(b, d, ga));
        }
        Op::GatherRows(a, idx) => {
            if nodes[*a].grad {
                let (n, d) = rc(val(*a));
                let mut ga = vec![0.0; n * d];
                for (r, &src) in idx.iter().enumerate() {
                    for (acc, x) in ga[src * d..(src + 1) * d].iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, nodes, *a, Tensor::from_vec(n, d, ga));
            }
        }
        Op::SliceCols(a, s, e) => {
            let (n, d) = rc(val(*a));
            let w = e - s;
            let mut ga = vec![0.0; n * d];
            for i in 0..n {
                ga[i * d + s..i * d + e].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, d, ga));
        }
        Op::ConcatCols(parts) => {
            let (n, total) = rc(g);
            let mut off = 0;
            for &p in parts {
                let w = val(p).cols();
                if nodes[p].grad {
                    let mut gp = vec![0.0; n * w];
                    for i in 0..n {
                        gp[i * w..(i + 1) * w].copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    accumulate(grads, nodes, p, Tensor::from_vec(n, w, gp));
                }
                off += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for &p in parts {
                let r = val(p).rows();
                if nodes[p].grad {
                    accumulate(grads, nodes, p, g.slice_rows(start, start + r));
                }
                start += r;
            }
        }
        Op::Reshape(a) => {
            let ga = g.reshape(val(*a).shape()).expect("reshape back");
            accumulate(grads, nodes, *a, ga);
        }
        Op::SumAll(a) => {
            let s = g.item();
            accumulate(grads, nodes, *a, Tensor::filled(val(*a).shape(), s));
        }
        Op::SumCols(a) => {
            let (n, d) = rc(val(*a));
            let mut ga = vec![0.0; n * d];
            for i in 0..n {
                ga[i * d..(i + 1) * d].fill(g.data()[i]);
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, d, ga));
        }
        Op::Square(a) => accumulate(grads, nodes, *a, unary(nodes, *a, g, |x, _, gi| 2.0 * x * gi, out)),
        Op::Sqrt(a) => accumulate(grads, nodes, *a, unary(nodes, *a, g, |_, y, gi| gi * 0.5 / y, out)),
        Op::Exp(a) => accumulate(grads, nodes, *a, unary(nodes, *a, g, |_, y, gi| gi * y, out)),
        Op::Sin(a) => accumulate(grads, nodes, *a, unary(nodes, *a, g, |x, _, gi| gi * x.cos(), out)),
        Op::Cos(a) => accumulate(grads, nodes, *a, unary(nodes, *a, g, |x, _, gi| -gi * x.sin(), out)),
        Op::Tanh(a) => accumulate(grads, nodes, *a, unary(nodes, *a, g, |_, y, gi| gi * (1.0 - y * y), out)),
        Op::Silu(a) => accumulate(
            grads,
            nodes,
            *a,
            unary(
                nodes,
                *a,
                g,
                |x, _, gi| {
                    let s = 1.0 / (1.0 + (-x).exp());
                    gi * (s + x * s * (1.0 - s))
                },
                out,
            ),
        ),
        Op::Atan2(y, x) => {
            let (yv, xv) = (val(*y), val(*x));
            let r2 = yv.zip_map(xv, |a, b| a * a + b * b);
            let gy = g.zip_map(xv, |gi, b| gi * b).zip_map(&r2, |a, r| a / r);
            let gx = g.zip_map(yv, |gi, a| -gi * a).zip_map(&r2, |a, r| a / r);
            accumulate(grads, nodes, *y, gy);
            accumulate(grads, nodes, *x, gx);
        }
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            accumulate(grads, nodes, *a, unary(nodes, *a, g, |x, _, gi| if x < lo || x > hi { 0.0 } else { gi }, out));
        }
        Op::LayerNorm(a, eps) => {
            let x = val(*a);
            let (n, d) = rc(x);
            let mut ga = vec![0.0; n * d];
            for i in 0..n {
                let row = x.row(i);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let gr = g.row(i);
                let yr = out.row(i);
                let gmean = gr.iter().sum::<f64>() / d as f64;
                let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    ga[i * d + j] = inv * (gr[j] - gmean - yr[j] * gy);
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, d, ga));
        }
        Op::Cross(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.rows();
            let mut ga = vec![0.0; n * 3];
            let mut gb = vec![0.0; n * 3];
            for i in 0..n {
                let (x, y, gi) = (av.row(i), bv.row(i), g.row(i));
                let bg = cross3(y, gi);
                let ga_i = cross3(gi, x);
                ga[i * 3..i * 3 + 3].copy_from_slice(&bg);
                gb[i * 3..i * 3 + 3].copy_from_slice(&ga_i);
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, 3, ga));
            accumulate(grads, nodes, *b, Tensor::from_vec(n, 3, gb));
        }
        Op::Mat3Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.rows();
            let mut ga = vec![0.0; n * 9];
            let mut gb = vec![0.0; n * 9];
            for i in 0..n {
                let (am, bm, gm) = (av.row(i), bv.row(i), g.row(i));
                for r in 0..3 {
                    for k in 0..3 {
                        // dA[r][k] = sum_c dC[r][c] B[k][c]
                        ga[i * 9 + k * 3 + r] = (0..3).map(|c| gm[c * 3 + r] * bm[c * 3 + k]).sum();
                        // dB[r][k] = sum_c A[c][r] dC[c][k]
                        gb[i * 9 + k * 3 + r] = (0..3).map(|c| am[r * 3 + c] * gm[k * 3 + c]).sum();
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, 9, ga));
            accumulate(grads, nodes, *b, Tensor::from_vec(n, 9, gb));
        }
        Op::Mat3Vec(a, v) => {
            let (av, vv) = (val(*a), val(*v));
            let n = av.rows();
            let mut ga = vec![0.0; n * 9];
            let mut gv = vec![0.0; n * 3];
            for i in 0..n {
                let (am, x, gi) = (av.row(i), vv.row(i), g.row(i));
                for r in 0..3 {
                    for k in 0..3 {
                        ga[i * 9 + k * 3 + r] = gi[r] * x[k];
                    }
                }
                for k in 0..3 {
                    gv[i * 3 + k] = (0..3).map(|r| am[k * 3 + r] * gi[r]).sum();
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_vec(n, 9, ga));
            accumulate(grads, nodes, *v, Tensor::from_vec(n, 3, gv));
        }
        Op::GemanMcClure(a, sigma) => {
            let s2 = sigma * sigma;
            accumulate(
                grads,
                nodes,
                *a,
                unary(
                    nodes,
                    *a,
                    g,
                    |r, _, gi| {
                        let den = r * r + s2;
                        gi * 2.0 * r * s2 * s2 / (den * den)
                    },
                    out,
                ),
            );
        }
        Op::Attention(node) => {
            let need =
                [nodes[node.q].grad, nodes[node.k].grad, nodes[node.v].grad, node.bias.is_some_and(|b| nodes[b].grad)];
            let res = attention_backward(&node.shape, val(node.q), val(node.k), val(node.v), &node.probs, g, need);
            if let Some(gq) = res.dq {
                accumulate(grads, nodes, node.q, gq);
            }
            if let Some(gk) = res.dk {
                accumulate(grads, nodes, node.k, gk);
            }
            if let Some(gv) = res.dv {
                accumulate(grads, nodes, node.v, gv);
            }
            if let (Some(b), Some(gb)) = (node.bias, res.dbias) {
                accumulate(grads, nodes, b, gb);
            }
        }
    }
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes: Ref<'_, Vec<Node>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.with_value(|t| t.rows())
    }

    pub fn cols(&self) -> usize {
        self.with_value(|t| t.cols())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.grad_of(self.id)
    }

    fn emit(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let grad = inputs.iter().any(|&i| self.tape.grad_of(i));
        self.tape.push(value, op, grad)
    }

    fn map_unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.with_value(|t| t.map(f));
        self.emit(v, op, &[self.id])
    }

    pub fn add(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.add(b)));
        self.emit(v, Op::Add(self.id, o.id), &[self.id, o.id])
    }

    pub fn sub(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.sub(b)));
        self.emit(v, Op::Sub(self.id, o.id), &[self.id, o.id])
    }

    pub fn mul(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.zip_map(b, |x, y| x * y)));
        self.emit(v, Op::Mul(self.id, o.id), &[self.id, o.id])
    }

    pub fn div(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.zip_map(b, |x, y| x / y)));
        self.emit(v, Op::Div(self.id, o.id), &[self.id, o.id])
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.map_unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn offset(&self, c: f64) -> Var<'t> {
        self.map_unary(Op::Offset(self.id), |x| x + c)
    }

    pub fn matmul(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| o.with_value(|b| a.matmul(b)));
        self.emit(v, Op::MatMul(self.id, o.id), &[self.id, o.id])
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.with_value(|a| a.transpose());
        self.emit(v, Op::Transpose(self.id), &[self.id])
    }

    /// `[n, d] + [1, d]` broadcast over rows.
    pub fn add_row(&self, row: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| {
            row.with_value(|r| {
                assert_eq!(r.len(), a.cols(), "add_row width");
                let mut out = a.clone();
                for chunk in out.data_mut().chunks_mut(r.len()) {
                    for (x, y) in chunk.iter_mut().zip(r.data()) {
                        *x += y;
                    }
                }
                out
            })
        });
        self.emit(v, Op::AddRow(self.id, row.id), &[self.id, row.id])
    }

    /// `[n, d] * [1, d]` broadcast over rows.
    pub fn mul_row(&self, row: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| {
            row.with_value(|r| {
                assert_eq!(r.len(), a.cols(), "mul_row width");
                let mut out = a.clone();
                for chunk in out.data_mut().chunks_mut(r.len()) {
                    for (x, y) in chunk.iter_mut().zip(r.data()) {
                        *x *= y;
                    }
                }
                out
            })
        });
        self.emit(v, Op::MulRow(self.id, row.id), &[self.id, row.id])
    }

    fn col_op(&self, col: Var<'t>, divide: bool) -> Var<'t> {
        let v = self.with_value(|a| {
            col.with_value(|c| {
                assert_eq!(c.len(), a.rows(), "column broadcast height");
                let d = a.cols();
                let mut out = a.clone();
                for (i, chunk) in out.data_mut().chunks_mut(d).enumerate() {
                    let s = c.data()[i];
                    for x in chunk {
                        if divide {
                            *x /= s
                        } else {
                            *x *= s
                        }
                    }
                }
                out
            })
        });
        let op = if divide { Op::DivCol(self.id, col.id) } else { Op::MulCol(self.id, col.id) };
        self.emit(v, op, &[self.id, col.id])
    }

    /// `[n, d] * [n, 1]` broadcast over columns.
    pub fn mul_col(&self, col: Var<'t>) -> Var<'t> {
        self.col_op(col, false)
    }

    /// `[n, d] / [n, 1]` broadcast over columns.
    pub fn div_col(&self, col: Var<'t>) -> Var<'t> {
        self.col_op(col, true)
    }

    /// `[n, d] -> [k * n, d]`, the whole block repeated `k` times.
    pub fn tile_rows(&self, k: usize) -> Var<'t> {
        let v = self.with_value(|a| {
            let mut data = Vec::with_capacity(a.len() * k);
            for _ in 0..k {
                data.extend_from_slice(a.data());
            }
            Tensor::from_vec(a.rows() * k, a.cols(), data)
        });
        self.emit(v, Op::TileRows(self.id, k), &[self.id])
    }

    /// `[b, d] -> [b * k, d]`, each row repeated `k` times in place.
    pub fn repeat_rows(&self, k: usize) -> Var<'t> {
        let v = self.with_value(|a| {
            let mut data = Vec::with_capacity(a.len() * k);
            for i in 0..a.rows() {
                for _ in 0..k {
                    data.extend_from_slice(a.row(i));
                }
            }
            Tensor::from_vec(a.rows() * k, a.cols(), data)
        });
        self.emit(v, Op::RepeatRows(self.id, k), &[self.id])
    }

    pub fn gather_rows(&self, idx: Vec<usize>) -> Var<'t> {
        let v = self.with_value(|a| {
            let d = a.cols();
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in &idx {
                data.extend_from_slice(a.row(i));
            }
            Tensor::from_vec(idx.len(), d, data)
        });
        self.emit(v, Op::GatherRows(self.id, Rc::new(idx)), &[self.id])
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Var<'t> {
        let v = self.with_value(|a| {
            let d = a.cols();
            assert!(start < end && end <= d, "slice_cols {start}..{end} of {d}");
            let mut data = Vec::with_capacity(a.rows() * (end - start));
            for i in 0..a.rows() {
                data.extend_from_slice(&a.data()[i * d + start..i * d + end]);
            }
            Tensor::from_vec(a.rows(), end - start, data)
        });
        self.emit(v, Op::SliceCols(self.id, start, end), &[self.id])
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let n = parts[0].rows();
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            p.with_value(|t| {
                assert_eq!(t.rows(), n, "concat_cols height");
                for i in 0..n {
                    data[i * total + off..i * total + off + w].copy_from_slice(t.row(i));
                }
            });
            off += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        parts[0].emit(Tensor::from_vec(n, total, data), Op::ConcatCols(ids.clone()), &ids)
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat_rows(&refs);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        parts[0].emit(v, Op::ConcatRows(ids.clone()), &ids)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = self.with_value(|a| a.reshape(shape).expect("reshape size"));
        self.emit(v, Op::Reshape(self.id), &[self.id])
    }

    /// Sum of all entries as a `[1, 1]` tensor.
    pub fn sum(&self) -> Var<'t> {
        let v = self.with_value(|a| Tensor::scalar(a.sum()));
        self.emit(v, Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.with_value(|a| a.len()) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row sums, `[n, d] -> [n, 1]`.
    pub fn sum_cols(&self) -> Var<'t> {
        let v = self.with_value(|a| {
            let data = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
            Tensor::from_vec(a.rows(), 1, data)
        });
        self.emit(v, Op::SumCols(self.id), &[self.id])
    }

    pub fn square(&self) -> Var<'t> {
        self.map_unary(Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.map_unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn exp(&self) -> Var<'t> {
        self.map_unary(Op::Exp(self.id), f64::exp)
    }

    pub fn sin(&self) -> Var<'t> {
        self.map_unary(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(&self) -> Var<'t> {
        self.map_unary(Op::Cos(self.id), f64::cos)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.map_unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn silu(&self) -> Var<'t> {
        self.map_unary(Op::Silu(self.id), |x| x / (1.0 + (-x).exp()))
    }

    /// Elementwise `atan2(self, x)`.
    pub fn atan2(&self, x: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| x.with_value(|b| a.zip_map(b, f64::atan2)));
        self.emit(v, Op::Atan2(self.id, x.id), &[self.id, x.id])
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.map_unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let v = self.with_value(|a| {
            let d = a.cols();
            let mut out = a.clone();
            for chunk in out.data_mut().chunks_mut(d) {
                let mean = chunk.iter().sum::<f64>() / d as f64;
                let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for x in chunk {
                    *x = (*x - mean) * inv;
                }
            }
            out
        });
        self.emit(v, Op::LayerNorm(self.id, eps), &[self.id])
    }

    /// Row-wise cross product of `[n, 3]` tensors.
    pub fn cross(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| {
            o.with_value(|b| {
                let mut data = Vec::with_capacity(a.len());
                for i in 0..a.rows() {
                    data.extend_from_slice(&cross3(a.row(i), b.row(i)));
                }
                Tensor::from_vec(a.rows(), 3, data)
            })
        });
        self.emit(v, Op::Cross(self.id, o.id), &[self.id, o.id])
    }

    /// Row-wise 3x3 matrix products of `[n, 9]` column-major matrices.
    pub fn mat3_mul(&self, o: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| {
            o.with_value(|b| {
                let n = a.rows();
                let mut data = vec![0.0; n * 9];
                for i in 0..n {
                    let (am, bm) = (a.row(i), b.row(i));
                    for r in 0..3 {
                        for c in 0..3 {
                            data[i * 9 + c * 3 + r] = (0..3).map(|k| am[k * 3 + r] * bm[c * 3 + k]).sum();
                        }
                    }
                }
                Tensor::from_vec(n, 9, data)
            })
        });
        self.emit(v, Op::Mat3Mul(self.id, o.id), &[self.id, o.id])
    }

    /// Row-wise matrix-vector products: `[n, 9]` column-major times `[n, 3]`.
    pub fn mat3_vec(&self, x: Var<'t>) -> Var<'t> {
        let v = self.with_value(|a| {
            x.with_value(|b| {
                let n = a.rows();
                let mut data = vec![0.0; n * 3];
                for i in 0..n {
                    let (am, bv) = (a.row(i), b.row(i));
                    for r in 0..3 {
                        data[i * 3 + r] = (0..3).map(|k| am[k * 3 + r] * bv[k]).sum();
                    }
                }
                Tensor::from_vec(n, 3, data)
            })
        });
        self.emit(v, Op::Mat3Vec(self.id, x.id), &[self.id, x.id])
    }

    /// Elementwise Geman-McClure penalty `r^2 s^2 / (r^2 + s^2)`.
    pub fn geman_mcclure(&self, sigma: f64) -> Var<'t> {
        let s2 = sigma * sigma;
        self.map_unary(Op::GemanMcClure(self.id, sigma), move |r| r * r * s2 / (r * r + s2))
    }

    /// Batched multi-head attention. `self` holds queries `[B * nq, D]`;
    /// keys and values are `[B * nk, D]`. `bias`, when given, is
    /// `[nq * nk, heads]` and shared across the batch. Masked keys
    /// (`key_mask[b * nk + j] == false`) receive zero weight.
    pub fn attention(
        &self,
        k: Var<'t>,
        v: Var<'t>,
        bias: Option<Var<'t>>,
        heads: usize,
        nq: usize,
        nk: usize,
        key_mask: Option<Rc<Vec<bool>>>,
    ) -> Var<'t> {
        let qv = self.value();
        let kv = k.value();
        let vv = v.value();
        let bv = bias.map(|b| b.value());
        let shape = AttnShape::new(qv.rows() / nq, nq, nk, qv.cols(), heads);
        let (out, probs) = attention_forward(&shape, &qv, &kv, &vv, bv.as_deref(), key_mask.as_deref().map(|m| &m[..]));
        let mut inputs = vec![self.id, k.id, v.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        let node = AttnNode { q: self.id, k: k.id, v: v.id, bias: bias.map(|b| b.id), shape, probs };
        self.emit(out, Op::Attention(Box::new(node)), &inputs)
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        Var::add(&self, o)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        Var::sub(&self, o)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        Var::mul(&self, o)
    }
}
