//! Reverse-mode differentiation over the tensor kernels.
//!
//! A `Tape` records every operation of one forward pass as a dynamic graph;
//! the graph is input-dependent because cell weights are regenerated at every
//! time step, so nothing is compiled ahead of time. One tape serves one
//! training step and is confined to a single thread; distinct tapes are
//! independent.

use crate::error::{Error, Result};
use crate::tensor::{self, Shape, Tensor};

/// Handle to a node on a tape. Only meaningful for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input value: parameter or constant.
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Tensor scaled by a scalar (shape-[1]) node.
    Scale(Var, Var),
    /// Tensor scaled by a compile-time constant.
    ScaleConst(Var, f64),
    Dot(Var, Var),
    Matvec(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Slice { input: Var, start: usize },
    Reshape(Var),
    Concat(Vec<Var>),
    AvgPool1d { input: Var, kernel: usize },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of one forward computation.
#[derive(Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input (a learnable parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable input (data, targets, fixed masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::add(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::sub(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::mul(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    /// Every element of `a` multiplied by the scalar node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let value = tensor::scale(self.value(a), sv);
        let rg = self.needs(a) || self.needs(s);
        Ok(self.push(Op::Scale(a, s), value, rg))
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let value = tensor::scale(self.value(a), c);
        let rg = self.needs(a);
        self.push(Op::ScaleConst(a, c), value, rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::scalar(tensor::dot(self.value(a), self.value(b))?);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Dot(a, b), value, rg))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let value = tensor::matvec(self.value(m), self.value(v))?;
        let rg = self.needs(m) || self.needs(v);
        Ok(self.push(Op::Matvec(m, v), value, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = tensor::sigmoid(self.value(a));
        let rg = self.needs(a);
        self.push(Op::Sigmoid(a), value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = tensor::tanh(self.value(a));
        let rg = self.needs(a);
        self.push(Op::Tanh(a), value, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = tensor::exp(self.value(a));
        let rg = self.needs(a);
        self.push(Op::Exp(a), value, rg)
    }

    /// Contiguous sub-range of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::dim(format!(
                "slice: expected rank-1, got {}",
                t.shape()
            )));
        }
        if start + len > t.len() {
            return Err(Error::dim(format!(
                "slice: [{}, {}) out of range for {}",
                start,
                start + len,
                t.shape()
            )));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec())?;
        let rg = self.needs(a);
        Ok(self.push(Op::Slice { input: a, start }, value, rg))
    }

    /// Split a rank-1 tensor into `parts` equal chunks, in order.
    pub fn chunk(&mut self, a: Var, parts: usize) -> Result<Vec<Var>> {
        let n = self.value(a).len();
        if parts == 0 || n % parts != 0 {
            return Err(Error::dim(format!(
                "chunk: {} does not divide length {}",
                parts, n
            )));
        }
        let size = n / parts;
        (0..parts).map(|p| self.slice(a, p * size, size)).collect()
    }

    pub fn reshape_to_matrix(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let value = tensor::reshape_to_matrix(self.value(a), r, c)?;
        let rg = self.needs(a);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = tensor::concat(&tensors)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    pub fn avg_pool_1d(&mut self, a: Var, kernel: usize) -> Result<Var> {
        let value = tensor::avg_pool_1d(self.value(a), kernel)?;
        let rg = self.needs(a);
        Ok(self.push(Op::AvgPool1d { input: a, kernel }, value, rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = tensor::softmax(self.value(a))?;
        let rg = self.needs(a);
        Ok(self.push(Op::Softmax(a), value, rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = tensor::log_softmax(self.value(a))?;
        let rg = self.needs(a);
        Ok(self.push(Op::LogSoftmax(a), value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(tensor::sum(self.value(a)));
        let rg = self.needs(a);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(tensor::mean(self.value(a)));
        let rg = self.needs(a);
        self.push(Op::Mean(a), value, rg)
    }

    /// Reverse pass from a scalar loss. Returns one gradient per node that
    /// requires grad and lies on a path to the loss; anything else reads back
    /// as zero through [`Gradients::wrt`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().clone())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        // Gradients accumulate (+=) because a node can feed several consumers
        // (s_{t-1} enters both the cell update and the attention scores).
        // Accumulation happens in place into each node's gradient buffer; the
        // buffers dominate backward memory traffic, so no temporaries.
        macro_rules! with_slot {
            ($v:expr, |$dst:ident| $body:expr) => {
                if self.nodes[$v.0].requires_grad {
                    let $dst: &mut [f64] = grads[$v.0]
                        .get_or_insert_with(|| {
                            Tensor::zeros(self.nodes[$v.0].value.shape().clone())
                        })
                        .data_mut();
                    $body
                }
            };
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                with_slot!(*a, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o += gi;
                });
                with_slot!(*b, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o += gi;
                });
            }
            Op::Sub(a, b) => {
                with_slot!(*a, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o += gi;
                });
                with_slot!(*b, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o -= gi;
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                with_slot!(*a, |dst| for ((o, &gi), &x) in
                    dst.iter_mut().zip(g.data()).zip(bv.data())
                {
                    *o += gi * x;
                });
                with_slot!(*b, |dst| for ((o, &gi), &x) in
                    dst.iter_mut().zip(g.data()).zip(av.data())
                {
                    *o += gi * x;
                });
            }
            Op::Scale(a, s) => {
                let sv = self.value(*s).item()?;
                let av = self.value(*a);
                with_slot!(*a, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o += gi * sv;
                });
                with_slot!(*s, |dst| dst[0] += tensor::dot(g, av)?);
            }
            Op::ScaleConst(a, c) => {
                with_slot!(*a, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o += gi * c;
                });
            }
            Op::Dot(a, b) => {
                let g0 = g.item()?;
                let (av, bv) = (self.value(*a), self.value(*b));
                with_slot!(*a, |dst| for (o, &x) in dst.iter_mut().zip(bv.data()) {
                    *o += g0 * x;
                });
                with_slot!(*b, |dst| for (o, &x) in dst.iter_mut().zip(av.data()) {
                    *o += g0 * x;
                });
            }
            Op::Matvec(m, v) => {
                let (mv, vv) = (self.value(*m), self.value(*v));
                let cols = vv.len();
                // dm[i, j] += g[i] * v[j], accumulated row by row.
                with_slot!(*m, |dst| for (i, &gi) in g.data().iter().enumerate() {
                    if gi != 0.0 {
                        let row = &mut dst[i * cols..(i + 1) * cols];
                        for (o, &vj) in row.iter_mut().zip(vv.data()) {
                            *o += gi * vj;
                        }
                    }
                });
                // dv[j] += sum_i m[i, j] * g[i].
                with_slot!(*v, |dst| for (i, &gi) in g.data().iter().enumerate() {
                    if gi != 0.0 {
                        let row = &mv.data()[i * cols..(i + 1) * cols];
                        for (o, &mij) in dst.iter_mut().zip(row) {
                            *o += gi * mij;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                with_slot!(*a, |dst| for ((o, &gi), &s) in
                    dst.iter_mut().zip(g.data()).zip(y.data())
                {
                    *o += gi * s * (1.0 - s);
                });
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                with_slot!(*a, |dst| for ((o, &gi), &t) in
                    dst.iter_mut().zip(g.data()).zip(y.data())
                {
                    *o += gi * (1.0 - t * t);
                });
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                with_slot!(*a, |dst| for ((o, &gi), &e) in
                    dst.iter_mut().zip(g.data()).zip(y.data())
                {
                    *o += gi * e;
                });
            }
            Op::Slice { input, start } => {
                with_slot!(*input, |dst| for (o, &gi) in
                    dst[*start..*start + g.len()].iter_mut().zip(g.data())
                {
                    *o += gi;
                });
            }
            Op::Reshape(a) => {
                // Same element order, different shape.
                with_slot!(*a, |dst| for (o, &gi) in dst.iter_mut().zip(g.data()) {
                    *o += gi;
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    with_slot!(p, |dst| for (o, &gi) in
                        dst.iter_mut().zip(&g.data()[offset..offset + len])
                    {
                        *o += gi;
                    });
                    offset += len;
                }
            }
            Op::AvgPool1d { input, kernel } => {
                let x = self.value(*input);
                let (d, t) = (x.rows()?, x.cols()?);
                let tk = t / kernel;
                let inv = 1.0 / *kernel as f64;
                with_slot!(*input, |dst| for r in 0..d {
                    for j in 0..tk {
                        let gi = g.data()[r * tk + j] * inv;
                        for o in &mut dst[r * t + j * kernel..r * t + (j + 1) * kernel] {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let dot = tensor::dot(y, g)?;
                with_slot!(*a, |dst| for ((o, &gi), &s) in
                    dst.iter_mut().zip(g.data()).zip(y.data())
                {
                    *o += s * (gi - dot);
                });
            }
            Op::LogSoftmax(a) => {
                let y = &self.nodes[i].value; // y = log softmax(x); softmax = exp(y)
                let g_sum: f64 = g.data().iter().sum();
                with_slot!(*a, |dst| for ((o, &gi), &ls) in
                    dst.iter_mut().zip(g.data()).zip(y.data())
                {
                    *o += gi - ls.exp() * g_sum;
                });
            }
            Op::Sum(a) => {
                let g0 = g.item()?;
                with_slot!(*a, |dst| for o in dst.iter_mut() {
                    *o += g0;
                });
            }
            Op::Mean(a) => {
                let g0 = g.item()? / self.value(*a).len() as f64;
                with_slot!(*a, |dst| for o in dst.iter_mut() {
                    *o += g0;
                });
            }
        }
        Ok(())
    }

    /// Recompute every node's value from the recorded operations and leaf
    /// values. Used by tests to confirm the record is complete.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Add(a, b) => tensor::add(&values[a.0], &values[b.0])?,
                Op::Sub(a, b) => tensor::sub(&values[a.0], &values[b.0])?,
                Op::Mul(a, b) => tensor::mul(&values[a.0], &values[b.0])?,
                Op::Scale(a, s) => tensor::scale(&values[a.0], values[s.0].item()?),
                Op::ScaleConst(a, c) => tensor::scale(&values[a.0], *c),
                Op::Dot(a, b) => Tensor::scalar(tensor::dot(&values[a.0], &values[b.0])?),
                Op::Matvec(m, v) => tensor::matvec(&values[m.0], &values[v.0])?,
                Op::Sigmoid(a) => tensor::sigmoid(&values[a.0]),
                Op::Tanh(a) => tensor::tanh(&values[a.0]),
                Op::Exp(a) => tensor::exp(&values[a.0]),
                Op::Slice { input, start } => {
                    let len = node.value.len();
                    Tensor::vector(values[input.0].data()[*start..*start + len].to_vec())?
                }
                Op::Reshape(a) => values[a.0].reshape(node.value.shape().clone())?,
                Op::Concat(parts) => {
                    let tensors: Vec<&Tensor> = parts.iter().map(|p| &values[p.0]).collect();
                    tensor::concat(&tensors)?
                }
                Op::AvgPool1d { input, kernel } => tensor::avg_pool_1d(&values[input.0], *kernel)?,
                Op::Softmax(a) => tensor::softmax(&values[a.0])?,
                Op::LogSoftmax(a) => tensor::log_softmax(&values[a.0])?,
                Op::Sum(a) => Tensor::scalar(tensor::sum(&values[a.0])),
                Op::Mean(a) => Tensor::scalar(tensor::mean(&values[a.0])),
            };
            values.push(v);
        }
        Ok(values)
    }
}

/// Gradient of the loss with respect to every node, indexable by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of the loss w.r.t. `v`; zero if `v` has no path to the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

/// Per-parameter outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn print(&self) {
        for p in &self.per_param {
            println!("  {:<24} max_rel_err={:.3e}", p.name, p.max_rel_err);
        }
        println!(
            "gradcheck {}: max_rel_err={:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_rel_err
        );
    }
}

/// Compare analytic gradients of a scalar function against central finite
/// differences, coordinate by coordinate. `build` must construct the loss on
/// the tape it is given from the parameter vars it is handed, in order.
pub fn grad_check<F>(
    build: F,
    params: &[(String, Tensor)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0 && tol > 0.0);

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    // Analytic gradients from one tape.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::contract("grad_check: loss must be scalar"));
    }
    let grads = tape.backward(loss)?;

    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        pass: true,
        per_param: Vec::new(),
    };

    for (pi, (name, tensor)) in params.iter().enumerate() {
        let analytic = grads.wrt(vars[pi]);
        let mut param_max = 0.0f64;
        for ci in 0..tensor.len() {
            let mut plus = base.clone();
            plus[pi].data_mut()[ci] += h;
            let f_plus = eval(&plus)?;
            let mut minus = base.clone();
            minus[pi].data_mut()[ci] -= h;
            let f_minus = eval(&minus)?;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::numeric(format!(
                    "grad_check: non-finite loss perturbing {}[{}]",
                    name, ci
                )));
            }
            let fd = (f_plus - f_minus) / (2.0 * h);
            let a = analytic.data()[ci];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            param_max = param_max.max(rel);
        }
        report.max_rel_err = report.max_rel_err.max(param_max);
        report.per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: param_max,
        });
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_add_and_tape_growth() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.param(Tensor::scalar(3.0));
        let before = tape.len();
        let z = tape.add(x, y).unwrap();
        assert_eq!(tape.len(), before + 1);
        assert_eq!(tape.value(z).item().unwrap(), 5.0);
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tape = Tape::new();
        let m = tape.param(
            Tensor::new(
                Shape::matrix(3, 4),
                (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
        );
        let v = tape.param(
            Tensor::new(
                Shape::vector(4),
                (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
        );
        let mv = tape.matvec(m, v).unwrap();
        let s = tape.sigmoid(mv);
        let t = tape.tanh(s);
        let sm = tape.softmax(t).unwrap();
        let _loss = tape.mean(sm);
        let replayed = tape.replay().unwrap();
        for (i, value) in replayed.iter().enumerate() {
            assert_eq!(value, tape.value(Var(i)));
        }
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = tape.mul(x, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn backward_unreachable_is_zero() {
        let mut tape = Tape::new();
        let y = tape.param(Tensor::scalar(4.0));
        let z = tape.param(Tensor::scalar(0.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let s = tape.sigmoid(z);
        let loss = tape.mul(s, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(y).item().unwrap(), 0.0);
        assert!(grads.get(y).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = tape.sigmoid(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_is_deterministic_across_passes() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap());
        let s = tape.tanh(x);
        let loss = tape.mean(s);
        let g1 = tape.backward(loss).unwrap().wrt(x);
        let g2 = tape.backward(loss).unwrap().wrt(x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn gradient_shape_matches_parameter_shape() {
        let mut tape = Tape::new();
        let m = tape.param(Tensor::zeros(Shape::matrix(3, 2)));
        let v = tape.param(Tensor::vector(vec![1.0, -1.0]).unwrap());
        let mv = tape.matvec(m, v).unwrap();
        let loss = tape.sum(mv);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(m).shape(), &Shape::matrix(3, 2));
        assert_eq!(grads.wrt(v).shape(), &Shape::vector(2));
    }

    /// Random three-layer composition checked against central differences.
    #[test]
    fn composed_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = vec![
            (
                "w1".to_string(),
                Tensor::new(
                    Shape::matrix(4, 3),
                    (0..12).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                )
                .unwrap(),
            ),
            (
                "w2".to_string(),
                Tensor::new(
                    Shape::matrix(2, 4),
                    (0..8).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                )
                .unwrap(),
            ),
            (
                "b".to_string(),
                Tensor::new(
                    Shape::vector(2),
                    (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                )
                .unwrap(),
            ),
        ];
        let x = Tensor::vector(vec![0.4, -1.2, 0.9]).unwrap();
        let weights = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let report = grad_check(
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let h1 = tape.matvec(vars[0], xv)?;
                let a1 = tape.tanh(h1);
                let h2 = tape.matvec(vars[1], a1)?;
                let z = tape.add(h2, vars[2])?;
                let s = tape.sigmoid(z);
                let sm = tape.softmax(s)?;
                let w = tape.constant(weights.clone());
                tape.dot(sm, w)
            },
            &params,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "max_rel_err={}", report.max_rel_err);
    }

    #[test]
    fn grad_check_quadratic() {
        let params = vec![("x".to_string(), Tensor::scalar(2.0))];
        let report = grad_check(
            |tape, vars| tape.mul(vars[0], vars[0]),
            &params,
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(report.pass);
        assert!(report.max_rel_err < 1e-7);
    }

    #[test]
    fn grad_check_constant_function() {
        let params = vec![("x".to_string(), Tensor::vector(vec![1.0, -2.0]).unwrap())];
        let report = grad_check(
            |tape, vars| {
                let _ = vars;
                let c = tape.constant(Tensor::scalar(3.5));
                Ok(tape.sum(c))
            },
            &params,
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_err, 0.0);
    }

    /// grad(a*f + b*g) = a*grad(f) + b*grad(g).
    #[test]
    fn gradients_are_linear_in_the_loss() {
        let x0 = Tensor::vector(vec![0.5, -0.25, 1.5]).unwrap();
        let grad_of = |a: f64, b: f64| -> Tensor {
            let mut tape = Tape::new();
            let x = tape.param(x0.clone());
            let f = {
                let t = tape.tanh(x);
                tape.sum(t)
            };
            let g = {
                let s = tape.sigmoid(x);
                tape.mean(s)
            };
            let fa = tape.scale_const(f, a);
            let gb = tape.scale_const(g, b);
            let loss = tape.add(fa, gb).unwrap();
            tape.backward(loss).unwrap().wrt(x)
        };
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let combined = grad_of(2.0, -3.0);
        for i in 0..3 {
            let expect = 2.0 * gf.data()[i] - 3.0 * gg.data()[i];
            assert!((combined.data()[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn slice_and_concat_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let parts = tape.chunk(x, 2).unwrap();
        let doubled = tape.scale_const(parts[1], 2.0);
        let joined = tape.concat(&[parts[0], doubled]).unwrap();
        let loss = tape.sum(joined);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn avg_pool_gradient_spreads_evenly() {
        let mut tape = Tape::new();
        let x = tape.param(
            Tensor::matrix(vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]).unwrap(),
        );
        let pooled = tape.avg_pool_1d(x, 2).unwrap();
        let s = tape.sum(pooled);
        let grads = tape.backward(s).unwrap();
        assert!(grads.wrt(x).data().iter().all(|&g| (g - 0.5).abs() <= 1e-15));
    }

    #[test]
    fn reshape_on_tape_needs_rank_one() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = tape.reshape_to_matrix(x, 2, 2).unwrap();
        assert_eq!(tape.value(m).shape(), &Shape::matrix(2, 2));
        assert!(tape.reshape_to_matrix(x, 3, 2).is_err());
    }
}
