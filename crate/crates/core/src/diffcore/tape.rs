//! Define-by-run reverse-mode tape.
//!
//! Every primitive appends a node whose inputs are strictly earlier nodes, so
//! walking the node list backwards is a valid reverse topological order.

use rand::{Rng, RngCore};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Relu(Var),
    Tanh(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Concat { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst { x: Var, c: Vec<f64> },
    Square(Var),
    RowSum(Var),
    SumAll(Var),
    MeanAll(Var),
    BceWithLogits { z: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite value in {what}")))
    }
}

/// `c += a · b` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m x k), `b` (k x n)
    // and `c` (m x n, row-major) as checked by the callers' shape logic.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, rg: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::Usage("tape already consumed by backward".into()));
        }
        debug_assert_eq!(rows * cols, value.len());
        check_finite("forward pass", &value)?;
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: Vec::new(),
            requires_grad: rg,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf_impl(&mut self, t: &Tensor, rg: bool) -> Result<Var> {
        self.push(t.rows(), t.cols(), t.values().to_vec(), Op::Leaf, rg)
    }

    /// Records a differentiable input (parameter or input of interest).
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf_impl(t, true)
    }

    /// Records a constant: no gradient is propagated into it.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf_impl(t, false)
    }

    pub fn constant_rows(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if rows * cols != values.len() || rows == 0 || cols == 0 {
            return Err(Error::config(format!(
                "constant of shape ({rows}, {cols}) given {} values",
                values.len()
            )));
        }
        self.push(rows, cols, values, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Gradient accumulated by the last [`Tape::backward`]; zeros for nodes
    /// that do not require a gradient.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.node(v).grad
    }

    /// Copies a node out as a tensor, gradient included.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        let mut t = Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shape");
        if !n.grad.is_empty() {
            t.grad_mut().copy_from_slice(&n.grad);
        }
        t
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::config(format!("{what}: shape {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    /// `x (b×i) · w (i×o)`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, i) = self.shape(x);
        let (wi, o) = self.shape(w);
        if i != wi {
            return Err(Error::config(format!(
                "matmul: input width {i} does not match weight rows {wi}"
            )));
        }
        let mut out = vec![0.0; b * o];
        gemm_acc(b, i, o, self.value(x), i, 1, self.value(w), o, 1, &mut out, 0.0);
        let rg = self.rg(x) || self.rg(w);
        self.push(b, o, out, Op::MatMul { x, w }, rg)
    }

    /// Adds a `1×o` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(Error::config(format!(
                "add_bias: bias shape {:?} for width {c}",
                self.shape(bias)
            )));
        }
        let bv = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(r, c, out, Op::AddBias { x, b: bias }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(r, c, out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.rg(x);
        self.push(r, c, out, Op::Tanh(x), rg)
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    /// A zero rate records nothing and returns `x`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(x);
        self.push(r, c, out, Op::Dropout { x, mask }, rg)
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::config(format!("concat: {ra} rows vs {rb} rows")));
        }
        let c = ca + cb;
        let mut out = Vec::with_capacity(ra * c);
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..ra {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(ra, c, out, Op::Concat { a, b }, rg)
    }

    fn zip_op(&mut self, a: Var, b: Var, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(r, c, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v * k).collect();
        let rg = self.rg(x);
        self.push(r, c, out, Op::Scale(x, k), rg)
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        let (r, cols) = self.shape(x);
        if c.len() != r * cols {
            return Err(Error::config("mul_const: constant has the wrong length"));
        }
        let out = self.value(x).iter().zip(&c).map(|(v, k)| v * k).collect();
        let rg = self.rg(x);
        self.push(r, cols, out, Op::MulConst { x, c }, rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v * v).collect();
        let rg = self.rg(x);
        self.push(r, c, out, Op::Square(x), rg)
    }

    /// Sums each row, giving an `r×1` column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let out = self.value(x).chunks(c).map(|row| row.iter().sum()).collect();
        let rg = self.rg(x);
        self.push(r, 1, out, Op::RowSum(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = vec![self.value(x).iter().sum()];
        let rg = self.rg(x);
        self.push(1, 1, out, Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = vec![v.iter().sum::<f64>() / v.len() as f64];
        let rg = self.rg(x);
        self.push(1, 1, out, Op::MeanAll(x), rg)
    }

    /// Numerically stable elementwise binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, z: Var, targets: Vec<f64>) -> Result<Var> {
        let (r, c) = self.shape(z);
        if targets.len() != r * c {
            return Err(Error::config("bce_with_logits: target length mismatch"));
        }
        let out = self
            .value(z)
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .collect();
        let rg = self.rg(z);
        self.push(r, c, out, Op::BceWithLogits { z, targets }, rg)
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `output`) back to every node that requires a gradient. A tape may be
    /// differentiated once.
    pub fn backward(&mut self, output: Var, seed: &[f64]) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("tape already consumed by backward".into()));
        }
        let (r, c) = self.shape(output);
        if seed.len() != r * c {
            return Err(Error::config(format!(
                "seed has {} values for output of shape ({r}, {c})",
                seed.len()
            )));
        }
        self.consumed = true;
        for n in &mut self.nodes {
            n.grad = vec![0.0; n.value.len()];
        }
        self.nodes[output.0].grad.copy_from_slice(seed);

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut self.nodes[i].grad);
            if g.iter().all(|&v| v == 0.0) {
                self.nodes[i].grad = g;
                continue;
            }
            self.backprop_node(i, &g);
            self.nodes[i].grad = g;
        }
        for n in &self.nodes {
            check_finite("backward pass", &n.grad)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Inputs always precede `i`, so splitting here gives disjoint borrows.
        let (before, rest) = self.nodes.split_at_mut(i);
        let node = &rest[0];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w } => {
                let (xi, wi) = (x.0, w.0);
                let inner = before[xi].cols;
                if before[xi].requires_grad {
                    // dx (b×i) += g (b×o) · wᵀ (o×i)
                    let wv = std::mem::take(&mut before[wi].value);
                    gemm_acc(rows, cols, inner, g, cols, 1, &wv, 1, cols, &mut before[xi].grad, 1.0);
                    before[wi].value = wv;
                }
                if before[wi].requires_grad {
                    // dw (i×o) += xᵀ (i×b) · g (b×o)
                    let xv = std::mem::take(&mut before[xi].value);
                    gemm_acc(inner, rows, cols, &xv, 1, inner, g, cols, 1, &mut before[wi].grad, 1.0);
                    before[xi].value = xv;
                }
            }
            Op::AddBias { x, b } => {
                if before[x.0].requires_grad {
                    add_into(&mut before[x.0].grad, g);
                }
                if before[b.0].requires_grad {
                    let bg = &mut before[b.0].grad;
                    for row in g.chunks(cols) {
                        add_into(bg, row);
                    }
                }
            }
            Op::Relu(x) => {
                let xn = &mut before[x.0];
                for ((gx, &v), &gy) in xn.grad.iter_mut().zip(&xn.value).zip(g) {
                    if v > 0.0 {
                        *gx += gy;
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                for ((gx, &yv), &gy) in before[x.0].grad.iter_mut().zip(y).zip(g) {
                    *gx += gy * (1.0 - yv * yv);
                }
            }
            Op::Dropout { x, mask } => {
                for ((gx, &m), &gy) in before[x.0].grad.iter_mut().zip(mask).zip(g) {
                    *gx += gy * m;
                }
            }
            Op::Concat { a, b } => {
                let ca = before[a.0].cols;
                let cb = cols - ca;
                for (r, grow) in g.chunks(cols).enumerate() {
                    if before[a.0].requires_grad {
                        add_into(&mut before[a.0].grad[r * ca..(r + 1) * ca], &grow[..ca]);
                    }
                    if before[b.0].requires_grad {
                        add_into(&mut before[b.0].grad[r * cb..(r + 1) * cb], &grow[ca..]);
                    }
                }
            }
            Op::Add(a, b) => {
                if before[a.0].requires_grad {
                    add_into(&mut before[a.0].grad, g);
                }
                if before[b.0].requires_grad {
                    add_into(&mut before[b.0].grad, g);
                }
            }
            Op::Sub(a, b) => {
                if before[a.0].requires_grad {
                    add_into(&mut before[a.0].grad, g);
                }
                if before[b.0].requires_grad {
                    before[b.0].grad.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (ai, bi) = (a.0, b.0);
                if before[ai].requires_grad {
                    let bv = std::mem::take(&mut before[bi].value);
                    for ((d, &y), &s) in before[ai].grad.iter_mut().zip(&bv).zip(g) {
                        *d += s * y;
                    }
                    before[bi].value = bv;
                }
                if before[bi].requires_grad {
                    let av = std::mem::take(&mut before[ai].value);
                    for ((d, &x), &s) in before[bi].grad.iter_mut().zip(&av).zip(g) {
                        *d += s * x;
                    }
                    before[ai].value = av;
                }
            }
            Op::Scale(x, k) => {
                before[x.0].grad.iter_mut().zip(g).for_each(|(d, s)| *d += s * k);
            }
            Op::MulConst { x, c } => {
                for ((d, &k), &s) in before[x.0].grad.iter_mut().zip(c).zip(g) {
                    *d += s * k;
                }
            }
            Op::Square(x) => {
                let xn = &mut before[x.0];
                for ((d, &v), &s) in xn.grad.iter_mut().zip(&xn.value).zip(g) {
                    *d += 2.0 * v * s;
                }
            }
            Op::RowSum(x) => {
                let xc = before[x.0].cols;
                for (row, &s) in before[x.0].grad.chunks_mut(xc).zip(g) {
                    row.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SumAll(x) => {
                let s = g[0];
                before[x.0].grad.iter_mut().for_each(|d| *d += s);
            }
            Op::MeanAll(x) => {
                let n = before[x.0].value.len() as f64;
                let s = g[0] / n;
                before[x.0].grad.iter_mut().for_each(|d| *d += s);
            }
            Op::BceWithLogits { z, targets } => {
                let zn = &mut before[z.0];
                for (((d, &zv), &t), &s) in zn.grad.iter_mut().zip(&zn.value).zip(targets).zip(g) {
                    let sig = 1.0 / (1.0 + (-zv).exp());
                    *d += s * (sig - t);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
