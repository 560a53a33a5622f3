//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! The computation graph is a dynamic tape rebuilt on every forward pass.
//! All values are `f64`; any op that produces a non-finite value errors
//! immediately instead of letting NaNs propagate.

use crate::error::{Error, Result};

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// matrix [r,c] times vector [c]
    Matvec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// scalar (len 1) times vector, elementwise
    Smul(Var, Var),
    /// inner product of two equal-length vectors -> scalar
    Dot(Var, Var),
    Concat(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    /// a*x + b, elementwise with constant coefficients; b only affects
    /// the forward values, which are computed when the node is pushed
    Affine(Var, f64),
    Abs(Var),
    /// elementwise max; ties route the gradient to the first argument
    EMax(Var, Var),
    Sum(Var),
    /// single element extraction -> scalar
    Pick(Var, usize),
    /// contiguous range extraction from a vector
    Slice(Var, usize),
}

#[derive(Debug)]
struct Node {
    values: Vec<f64>,
    shape: Vec<usize>,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Dynamically built computation graph. Tape order is topological, so
/// backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    fn push(&mut self, values: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        if values.iter().any(|x| !x.is_finite()) {
            let name = match op {
                Op::Leaf => "leaf",
                Op::Matvec(..) => "matvec",
                Op::Add(..) => "add",
                Op::Sub(..) => "sub",
                Op::Mul(..) => "mul",
                Op::Smul(..) => "smul",
                Op::Dot(..) => "dot",
                Op::Concat(..) => "concat",
                Op::Sigmoid(_) => "sigmoid",
                Op::Tanh(_) => "tanh",
                Op::Softmax(_) => "softmax",
                Op::LogSoftmax(_) => "log_softmax",
                Op::Affine(..) => "affine",
                Op::Abs(_) => "abs",
                Op::EMax(..) => "emax",
                Op::Sum(_) => "sum",
                Op::Pick(..) => "pick",
                Op::Slice(..) => "slice",
            };
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            values,
            shape,
            grad: Vec::new(),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {:?} does not hold {} values", shape, values.len()),
            ));
        }
        self.push(values, shape, Op::Leaf, requires_grad)
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Result<Var> {
        let n = values.len();
        self.leaf(values, vec![n], false)
    }

    pub fn zeros(&mut self, len: usize) -> Result<Var> {
        self.leaf(vec![0.0; len], vec![len], false)
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (ms, xs) = (self.shape(m).to_vec(), self.shape(x).to_vec());
        if ms.len() != 2 || xs.len() != 1 || ms[1] != xs[0] {
            return Err(Error::shape(
                "matvec",
                format!("matrix {:?} incompatible with vector {:?}", ms, xs),
            ));
        }
        let (r, c) = (ms[0], ms[1]);
        let mv = self.values(m);
        let xv = self.values(x);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            out[i] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        let rg = self.rg(m) || self.rg(x);
        self.push(out, vec![r], Op::Matvec(m, x), rg)
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op_name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, shape, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, shape, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, shape, Op::Mul(a, b), rg)
    }

    /// Scalar (length-1 tensor) times vector.
    pub fn smul(&mut self, s: Var, v: Var) -> Result<Var> {
        if self.values(s).len() != 1 {
            return Err(Error::shape("smul", format!("scalar has shape {:?}", self.shape(s))));
        }
        let sv = self.values(s)[0];
        let out: Vec<f64> = self.values(v).iter().map(|x| sv * x).collect();
        let shape = self.shape(v).to_vec();
        let rg = self.rg(s) || self.rg(v);
        self.push(out, shape, Op::Smul(s, v), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.values(a).len() != self.values(b).len() {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let s: f64 = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x * y).sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(vec![s], vec![1], Op::Dot(a, b), rg)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(b).len() != 1 {
            return Err(Error::shape(
                "concat",
                format!("expected vectors, got {:?} and {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = self.values(a).to_vec();
        out.extend_from_slice(self.values(b));
        let n = out.len();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, vec![n], Op::Concat(a, b), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self
            .values(x)
            .iter()
            .map(|&v| {
                // split on sign to avoid exp overflow
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.values(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, Op::Tanh(x), rg)
    }

    fn softmax_values(&self, x: Var) -> Vec<f64> {
        let xv = self.values(x);
        let m = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.values(x).is_empty() {
            return Err(Error::shape("softmax", "empty input".to_string()));
        }
        let out = self.softmax_values(x);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        if self.values(x).is_empty() {
            return Err(Error::shape("log_softmax", "empty input".to_string()));
        }
        let xv = self.values(x);
        let m = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xv.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let out: Vec<f64> = xv.iter().map(|v| v - lse).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, Op::LogSoftmax(x), rg)
    }

    /// Elementwise a*x + b.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Result<Var> {
        let out: Vec<f64> = self.values(x).iter().map(|v| a * v + b).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, Op::Affine(x, a), rg)
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Result<Var> {
        self.affine(x, a, 0.0)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.values(x).iter().map(|v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, Op::Abs(x), rg)
    }

    pub fn emax(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("emax", a, b)?;
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x.max(*y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, shape, Op::EMax(a, b), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.values(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![s], vec![1], Op::Sum(x), rg)
    }

    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let xv = self.values(x);
        if i >= xv.len() {
            return Err(Error::shape(
                "pick",
                format!("index {} out of range for length {}", i, xv.len()),
            ));
        }
        let v = xv[i];
        let rg = self.rg(x);
        self.push(vec![v], vec![1], Op::Pick(x, i), rg)
    }

    /// Contiguous sub-vector `x[start..start+len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.values(x);
        if start + len > xv.len() {
            return Err(Error::shape(
                "slice",
                format!("range {}..{} out of bounds for length {}", start, start + len, xv.len()),
            ));
        }
        let out = xv[start..start + len].to_vec();
        let rg = self.rg(x);
        self.push(out, vec![len], Op::Slice(x, start), rg)
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// across all uses of a tensor.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        for node in &mut self.nodes {
            node.grad = vec![0.0; node.values.len()];
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if self.nodes[idx].grad.iter().all(|g| *g == 0.0) {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let g = self.nodes[idx].grad.clone();
            match op {
                Op::Leaf => {}
                Op::Matvec(m, x) => {
                    let c = self.nodes[x.0].values.len();
                    let r = g.len();
                    if self.rg(m) {
                        let xv = self.nodes[x.0].values.clone();
                        let mg = &mut self.nodes[m.0].grad;
                        for i in 0..r {
                            for j in 0..c {
                                mg[i * c + j] += g[i] * xv[j];
                            }
                        }
                    }
                    if self.rg(x) {
                        let mv = self.nodes[m.0].values.clone();
                        let xg = &mut self.nodes[x.0].grad;
                        for i in 0..r {
                            for j in 0..c {
                                xg[j] += g[i] * mv[i * c + j];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        for (ga, gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                            *ga += gi;
                        }
                    }
                    if self.rg(b) {
                        for (gb, gi) in self.nodes[b.0].grad.iter_mut().zip(&g) {
                            *gb += gi;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        for (ga, gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                            *ga += gi;
                        }
                    }
                    if self.rg(b) {
                        for (gb, gi) in self.nodes[b.0].grad.iter_mut().zip(&g) {
                            *gb -= gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let bv = self.nodes[b.0].values.clone();
                        for ((ga, gi), bi) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(&bv) {
                            *ga += gi * bi;
                        }
                    }
                    if self.rg(b) {
                        let av = self.nodes[a.0].values.clone();
                        for ((gb, gi), ai) in self.nodes[b.0].grad.iter_mut().zip(&g).zip(&av) {
                            *gb += gi * ai;
                        }
                    }
                }
                Op::Smul(s, v) => {
                    if self.rg(s) {
                        let vv = self.nodes[v.0].values.clone();
                        let acc: f64 = g.iter().zip(&vv).map(|(gi, vi)| gi * vi).sum();
                        self.nodes[s.0].grad[0] += acc;
                    }
                    if self.rg(v) {
                        let sv = self.nodes[s.0].values[0];
                        for (gv, gi) in self.nodes[v.0].grad.iter_mut().zip(&g) {
                            *gv += gi * sv;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let gi = g[0];
                    if self.rg(a) {
                        let bv = self.nodes[b.0].values.clone();
                        for (ga, bi) in self.nodes[a.0].grad.iter_mut().zip(&bv) {
                            *ga += gi * bi;
                        }
                    }
                    if self.rg(b) {
                        let av = self.nodes[a.0].values.clone();
                        for (gb, ai) in self.nodes[b.0].grad.iter_mut().zip(&av) {
                            *gb += gi * ai;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let p = self.nodes[a.0].values.len();
                    if self.rg(a) {
                        for (ga, gi) in self.nodes[a.0].grad.iter_mut().zip(&g[..p]) {
                            *ga += gi;
                        }
                    }
                    if self.rg(b) {
                        for (gb, gi) in self.nodes[b.0].grad.iter_mut().zip(&g[p..]) {
                            *gb += gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if self.rg(x) {
                        let yv = self.nodes[idx].values.clone();
                        for ((gx, gi), y) in self.nodes[x.0].grad.iter_mut().zip(&g).zip(&yv) {
                            *gx += gi * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if self.rg(x) {
                        let yv = self.nodes[idx].values.clone();
                        for ((gx, gi), y) in self.nodes[x.0].grad.iter_mut().zip(&g).zip(&yv) {
                            *gx += gi * (1.0 - y * y);
                        }
                    }
                }
                Op::Softmax(x) => {
                    if self.rg(x) {
                        let yv = self.nodes[idx].values.clone();
                        let dot: f64 = g.iter().zip(&yv).map(|(gi, yi)| gi * yi).sum();
                        for ((gx, gi), yi) in self.nodes[x.0].grad.iter_mut().zip(&g).zip(&yv) {
                            *gx += yi * (gi - dot);
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    if self.rg(x) {
                        let yv = self.nodes[idx].values.clone();
                        let gsum: f64 = g.iter().sum();
                        for ((gx, gi), yi) in self.nodes[x.0].grad.iter_mut().zip(&g).zip(&yv) {
                            *gx += gi - yi.exp() * gsum;
                        }
                    }
                }
                Op::Affine(x, a) => {
                    if self.rg(x) {
                        for (gx, gi) in self.nodes[x.0].grad.iter_mut().zip(&g) {
                            *gx += a * gi;
                        }
                    }
                }
                Op::Abs(x) => {
                    if self.rg(x) {
                        let xv = self.nodes[x.0].values.clone();
                        for ((gx, gi), xi) in self.nodes[x.0].grad.iter_mut().zip(&g).zip(&xv) {
                            // subgradient at 0 is 0
                            *gx += gi * if *xi > 0.0 {
                                1.0
                            } else if *xi < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                        }
                    }
                }
                Op::EMax(a, b) => {
                    let av = self.nodes[a.0].values.clone();
                    let bv = self.nodes[b.0].values.clone();
                    if self.rg(a) {
                        for (((ga, gi), ai), bi) in
                            self.nodes[a.0].grad.iter_mut().zip(&g).zip(&av).zip(&bv)
                        {
                            if ai >= bi {
                                *ga += gi;
                            }
                        }
                    }
                    if self.rg(b) {
                        for (((gb, gi), ai), bi) in
                            self.nodes[b.0].grad.iter_mut().zip(&g).zip(&av).zip(&bv)
                        {
                            if bi > ai {
                                *gb += gi;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.rg(x) {
                        let gi = g[0];
                        for gx in self.nodes[x.0].grad.iter_mut() {
                            *gx += gi;
                        }
                    }
                }
                Op::Pick(x, i) => {
                    if self.rg(x) {
                        self.nodes[x.0].grad[i] += g[0];
                    }
                }
                Op::Slice(x, start) => {
                    if self.rg(x) {
                        for (k, gi) in g.iter().enumerate() {
                            self.nodes[x.0].grad[start + k] += gi;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
