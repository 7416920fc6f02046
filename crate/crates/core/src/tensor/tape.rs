use super::{c, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    BroadcastRows(Var),
    LogSumExpRows(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
}

struct Node<F> {
    value: Option<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

/// Dynamic reverse-mode tape.
///
/// Parameters are borrowed from the caller rather than copied, so one tape
/// per scene can be built against a shared, frozen parameter slice.
pub struct Tape<'p, F: Real> {
    nodes: Vec<Node<F>>,
    params: &'p [Tensor<F>],
    param_vars: Vec<Option<Var>>,
    param_grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Default for Tape<'static, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<'static, F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: &[], param_vars: Vec::new(), param_grads: Vec::new() }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// Outer, axis, inner extents of `shape` split around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn with_params(params: &'p [Tensor<F>]) -> Self {
        Tape {
            nodes: Vec::new(),
            params,
            param_vars: vec![None; params.len()],
            param_grads: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor<F>,
        op: Op<F>,
        requires_grad: bool,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires_grad))
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable parameter `index` of the borrowed parameter slice; recorded once per tape.
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(index), requires_grad: true, grad: None });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v).data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn param_grad(&self, index: usize) -> Option<&[F]> {
        self.param_grads[index].as_deref()
    }

    pub fn take_param_grads(&mut self) -> Vec<Option<Vec<F>>> {
        std::mem::replace(&mut self.param_grads, vec![None; self.params.len()])
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        for g in &mut self.param_grads {
            *g = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- forward ops ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            F::zero(),
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul", Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor { shape: ta.shape().to_vec(), data };
        let rg = self.rg(&[a, b]);
        self.push_checked(name, t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor { shape: ta.shape().to_vec(), data: ta.data().iter().map(|&x| f(x)).collect() };
        let rg = self.rg(&[a]);
        self.push_checked(name, t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var> {
        self.map("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -F::one())
    }

    pub fn add_scalar(&mut self, a: Var, s: F) -> Result<Var> {
        self.map("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        self.push_checked(
            "concat",
            Tensor { shape, data },
            Op::Concat { parts: parts.to_vec(), axis },
            rg,
        )
    }

    /// `input[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::shape("slice", format!("{start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let width = (end - start) * inner;
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            data.extend_from_slice(&src[base..base + width]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(&[input]);
        self.push_checked("slice", Tensor { shape, data }, Op::Slice { input, axis, start }, rg)
    }

    /// Same values under a new shape with an equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: F = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: F = t.data().iter().copied().sum::<F>() / c::<F>(t.len() as f64);
        let rg = self.rg(&[a]);
        self.push_checked("mean", Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum over the leading axis of a matrix: `[r, c] -> [c]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::shape("sum_rows", format!("{:?}", t.shape())));
        }
        let (r, cols) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![F::zero(); cols];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&t.data()[i * cols..(i + 1) * cols]) {
                *o = *o + x;
            }
        }
        let rg = self.rg(&[a]);
        self.push_checked("sum_rows", Tensor::vector(out), Op::SumRows(a), rg)
    }

    /// Repeats a vector `[c]` (or `[1, c]`) into `rows` rows: `[rows, c]`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        let cols = match t.shape() {
            [n] => *n,
            [1, n] => *n,
            s => return Err(Error::shape("broadcast", format!("{s:?} is not a row vector"))),
        };
        if rows == 0 {
            return Err(Error::shape("broadcast", "zero rows"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(&[a]);
        self.push_checked(
            "broadcast",
            Tensor { shape: vec![rows, cols], data },
            Op::BroadcastRows(a),
            rg,
        )
    }

    /// Column-wise `log(sum_i exp(x[i, j]))`, shifted by the column maximum.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::shape("logsumexp_rows", format!("{:?}", t.shape())));
        }
        let (r, cols) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let mut out = vec![F::zero(); cols];
        for (j, o) in out.iter_mut().enumerate() {
            let mx = (0..r).map(|i| d[i * cols + j]).fold(F::neg_infinity(), F::max);
            let s: F = (0..r).map(|i| (d[i * cols + j] - mx).exp()).sum();
            *o = mx + s.ln();
        }
        let rg = self.rg(&[a]);
        self.push_checked("logsumexp_rows", Tensor::vector(out), Op::LogSumExpRows(a), rg)
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates `d loss / d x` into every reachable leaf and parameter.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Detached);
        }
        let mut adj: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => accumulate(&mut self.nodes[i].grad, &g),
                Op::Param(p) => accumulate(&mut self.param_grads[p], &g),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    if self.nodes[a.0].requires_grad {
                        let buf = slot(&mut adj, a, m * k);
                        // dA = dC . B^T
                        F::gemm(
                            m,
                            n,
                            k,
                            &g,
                            n as isize,
                            1,
                            self.value(b).data(),
                            1,
                            n as isize,
                            F::one(),
                            buf,
                        );
                    }
                    if self.nodes[b.0].requires_grad {
                        let buf = slot(&mut adj, b, k * n);
                        // dB = A^T . dC
                        F::gemm(
                            k,
                            m,
                            n,
                            self.value(a).data(),
                            1,
                            k as isize,
                            &g,
                            n as isize,
                            1,
                            F::one(),
                            buf,
                        );
                    }
                }
                Op::Add(a, b) => {
                    self.send(&mut adj, a, &g, |x, _| x);
                    self.send(&mut adj, b, &g, |x, _| x);
                }
                Op::Sub(a, b) => {
                    self.send(&mut adj, a, &g, |x, _| x);
                    self.send(&mut adj, b, &g, |x, _| -x);
                }
                Op::Mul(a, b) => {
                    let vb = self.value(b).data().to_vec();
                    let va = self.value(a).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x * vb[j]);
                    self.send(&mut adj, b, &g, |x, j| x * va[j]);
                }
                Op::Reshape(a) => self.send(&mut adj, a, &g, |x, _| x),
                Op::Scale(a, s) => self.send(&mut adj, a, &g, |x, _| x * s),
                Op::AddScalar(a) => self.send(&mut adj, a, &g, |x, _| x),
                Op::Tanh(a) => {
                    let y = self.value(Var(i)).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x * (F::one() - y[j] * y[j]));
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i)).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x * y[j] * (F::one() - y[j]));
                }
                Op::Softplus(a) => {
                    let xin = self.value(a).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x * sigmoid(xin[j]));
                }
                Op::Exp(a) => {
                    let y = self.value(Var(i)).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x * y[j]);
                }
                Op::Log(a) => {
                    let xin = self.value(a).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x / xin[j]);
                }
                Op::Square(a) => {
                    let xin = self.value(a).data().to_vec();
                    self.send(&mut adj, a, &g, |x, j| x * (xin[j] + xin[j]));
                }
                Op::Sum(a) => {
                    let gv = g[0];
                    self.send_fill(&mut adj, a, |_| gv);
                }
                Op::Mean(a) => {
                    let n = c::<F>(self.value(a).len() as f64);
                    let gv = g[0] / n;
                    self.send_fill(&mut adj, a, |_| gv);
                }
                Op::SumRows(a) => {
                    let cols = g.len();
                    self.send_fill(&mut adj, a, |j| g[j % cols]);
                }
                Op::BroadcastRows(a) => {
                    if self.nodes[a.0].requires_grad {
                        let cols = self.value(a).len();
                        let buf = slot(&mut adj, a, cols);
                        for row in g.chunks(cols) {
                            for (o, &x) in buf.iter_mut().zip(row) {
                                *o = *o + x;
                            }
                        }
                    }
                }
                Op::LogSumExpRows(a) => {
                    let out = self.value(Var(i)).data().to_vec();
                    let xin = self.value(a).data().to_vec();
                    let cols = out.len();
                    self.send_fill(&mut adj, a, |j| g[j % cols] * (xin[j] - out[j % cols]).exp());
                }
                Op::Concat { parts, axis } => {
                    let shape = self.shape(Var(i)).to_vec();
                    let (outer, total, inner) = split_axis(&shape, axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.shape(p)[axis];
                        if self.nodes[p.0].requires_grad {
                            let chunk = len * inner;
                            let buf = slot(&mut adj, p, outer * chunk);
                            for o in 0..outer {
                                let src = &g[o * total * inner + offset * inner..][..chunk];
                                for (d, &x) in buf[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *d = *d + x;
                                }
                            }
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    if self.nodes[input.0].requires_grad {
                        let in_shape = self.shape(input).to_vec();
                        let out_len = self.shape(Var(i))[axis];
                        let (outer, len, inner) = split_axis(&in_shape, axis);
                        let width = out_len * inner;
                        let buf = slot(&mut adj, input, outer * len * inner);
                        for o in 0..outer {
                            let base = o * len * inner + start * inner;
                            for (d, &x) in
                                buf[base..base + width].iter_mut().zip(&g[o * width..(o + 1) * width])
                            {
                                *d = *d + x;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn send(&self, adj: &mut [Option<Vec<F>>], to: Var, g: &[F], f: impl Fn(F, usize) -> F) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        let n = self.value(to).len();
        let buf = slot(adj, to, n);
        for (j, (o, &x)) in buf.iter_mut().zip(g).enumerate() {
            *o = *o + f(x, j);
        }
    }

    fn send_fill(&self, adj: &mut [Option<Vec<F>>], to: Var, f: impl Fn(usize) -> F) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        let n = self.value(to).len();
        let buf = slot(adj, to, n);
        for (j, o) in buf.iter_mut().enumerate() {
            *o = *o + f(j);
        }
    }
}

fn slot<F: Real>(adj: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut [F] {
    adj[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn accumulate<F: Real>(dst: &mut Option<Vec<F>>, g: &[F]) {
    match dst {
        Some(d) => {
            for (o, &x) in d.iter_mut().zip(g) {
                *o = *o + x;
            }
        }
        None => *dst = Some(g.to_vec()),
    }
}
