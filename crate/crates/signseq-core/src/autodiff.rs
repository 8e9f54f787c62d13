//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass as an append-only
//! node list in topological order; [`Tape::backward`] walks it once in
//! reverse, accumulating gradients into named [`Parameter`]s. The op set is
//! deliberately small and auditable: what a recurrent attention model needs
//! and nothing more. Gradients for parameters used many times per step
//! (recurrence) accumulate by summation.
//!
//! [`finite_diff_check`] is the built-in verifier: central finite
//! differences of a scalar loss against the analytic gradients, reported
//! per parameter.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter { name: name.into(), value, grad }
    }
}

/// Ordered collection of parameters addressed by name path.
///
/// Insertion order is deterministic and drives optimizer iteration and
/// checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter::new(name, value));
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::Tape(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(Error::Tape(format!("unknown parameter {name}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn entry_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Leaf bound to a named parameter; backward writes its gradient out.
    Param(String),
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Matrix plus a row vector added to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Row-wise softmax over the last axis, max-subtracted.
    SoftmaxLast(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Columns [start, start+len) of every row.
    SliceCols { input: Var, start: usize, len: usize },
    /// Row lookup into an embedding table.
    Embed { table: Var, row: usize },
    Mean(Var),
    Log(Var),
    Neg(Var),
    Scale(Var, f64),
    /// Same data, different shape.
    Reshape(Var),
    /// Identity forward, upstream gradient multiplied by -lambda.
    GradReverse(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients keyed by parameter name, as produced by one backward pass.
pub type GradMap = HashMap<String, Tensor>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record a constant input. No gradient flows out of it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    /// Record a parameter by copying its current value in. After
    /// `backward`, the gradient for this use is accumulated under the
    /// parameter's name.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store.get(name)?;
        self.nodes.push(Node { value: p.value.clone(), op: Op::Param(p.name.clone()) });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        self.push(out, Op::Matmul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = ta.clone();
        out.add_assign(tb)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "sub",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// The only broadcast in the op set: a 1 x n row vector added to each
    /// row of an m x n matrix.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(matrix), self.value(row));
        if tr.rows() != 1 || tm.cols() != tr.cols() {
            return Err(Error::Shape {
                op: "add_row",
                detail: format!("{:?} + row {:?}", tm.shape(), tr.shape()),
            });
        }
        let n = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tr.data()[i % n])
            .collect();
        let out = Tensor::new(tm.shape().to_vec(), data)?;
        self.push(out, Op::AddRow(matrix, row), "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "mul",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    /// Softmax along the last axis of each row, computed with
    /// max-subtraction.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(out, Op::SoftmaxLast(a), "softmax")
    }

    /// Stack same-width rows into one matrix.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "concat_rows", detail: "no operands".into() });
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in parts {
            let t = self.value(v);
            if t.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    detail: format!("column mismatch {} vs {}", t.cols(), cols),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Concatenate same-height blocks along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "concat_cols", detail: "no operands".into() });
        }
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &v in parts {
            let t = self.value(v);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: format!("row mismatch {} vs {}", t.rows(), rows),
                });
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in parts.iter().zip(&widths) {
                let t = self.value(v);
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Columns [start, start+len) of every row.
    pub fn slice_cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        let (rows, cols) = (t.rows(), t.cols());
        if start + len > cols || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                detail: format!("[{start}, {}) of width {cols}", start + len),
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        self.push(out, Op::SliceCols { input, start, len }, "slice_cols")
    }

    /// Row `row` of an embedding table as a 1 x width vector.
    pub fn embed(&mut self, table: Var, row: usize) -> Result<Var> {
        let t = self.value(table);
        if row >= t.rows() {
            return Err(Error::Shape {
                op: "embed",
                detail: format!("row {row} out of {}", t.rows()),
            });
        }
        let w = t.cols();
        let data = t.data()[row * w..(row + 1) * w].to_vec();
        let out = Tensor::new(vec![1, w], data)?;
        self.push(out, Op::Embed { table, row }, "embed")
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), "mean")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a), "neg")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c), "scale")
    }

    /// Same data viewed under a new shape; element count must match.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Gradient reversal: identity in the forward pass, upstream gradient
    /// multiplied by -lambda in the backward pass.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Result<Var> {
        let out = self.value(a).clone();
        self.push(out, Op::GradReverse(a, lambda), "grad_reverse")
    }

    /// Reverse pass from a scalar loss. Returns gradients keyed by
    /// parameter name, accumulated over every use of each parameter.
    pub fn backward(&mut self, loss: Var) -> Result<GradMap> {
        if self.consumed {
            return Err(Error::Tape("tape already consumed by backward".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = GradMap::new();

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(name) => {
                    match out.get_mut(name.as_str()) {
                        Some(acc) => acc.add_assign(&g)?,
                        None => {
                            out.insert(name.clone(), g);
                        }
                    }
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = matmul_nt(&g, &self.nodes[b.0].value)?;
                    let gb = matmul_tn(&self.nodes[a.0].value, &g)?;
                    accumulate(&mut grads, a, ga)?;
                    accumulate(&mut grads, b, gb)?;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone())?;
                    accumulate(&mut grads, b, g)?;
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, g.clone())?;
                    accumulate(&mut grads, b, g.map(|x| -x))?;
                }
                Op::AddRow(m, r) => {
                    let (m, r) = (*m, *r);
                    let n = g.cols();
                    let mut row_grad = vec![0.0; n];
                    for (j, &v) in g.data().iter().enumerate() {
                        row_grad[j % n] += v;
                    }
                    accumulate(&mut grads, m, g)?;
                    accumulate(&mut grads, r, Tensor::row(row_grad))?;
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = elementwise(&g, &self.nodes[b.0].value, |u, v| u * v);
                    let gb = elementwise(&g, &self.nodes[a.0].value, |u, v| u * v);
                    accumulate(&mut grads, a, ga)?;
                    accumulate(&mut grads, b, gb)?;
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let ga = elementwise(&g, &self.nodes[i].value, |u, y| u * (1.0 - y * y));
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let ga = elementwise(&g, &self.nodes[i].value, |u, y| u * y * (1.0 - y));
                    accumulate(&mut grads, a, ga)?;
                }
                Op::SoftmaxLast(a) => {
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let n = y.cols();
                    let mut data = Vec::with_capacity(y.numel());
                    for (g_row, y_row) in g.data().chunks(n).zip(y.data().chunks(n)) {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(u, s)| u * s).sum();
                        data.extend(g_row.iter().zip(y_row).map(|(u, s)| s * (u - dot)));
                    }
                    accumulate(&mut grads, a, Tensor::new(y.shape().to_vec(), data)?)?;
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let cols = g.cols();
                    let mut offset = 0;
                    for v in parts {
                        let rows = self.nodes[v.0].value.rows();
                        let chunk = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads, v, Tensor::new(vec![rows, cols], chunk)?)?;
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for v in parts {
                        let w = self.nodes[v.0].value.cols();
                        let mut chunk = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            chunk.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        accumulate(&mut grads, v, Tensor::new(vec![rows, w], chunk)?)?;
                        offset += w;
                    }
                }
                Op::SliceCols { input, start, len } => {
                    let (input, start, len) = (*input, *start, *len);
                    let t = &self.nodes[input.0].value;
                    let (rows, cols) = (t.rows(), t.cols());
                    let mut data = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for j in 0..len {
                            data[r * cols + start + j] = g.data()[r * len + j];
                        }
                    }
                    accumulate(&mut grads, input, Tensor::new(vec![rows, cols], data)?)?;
                }
                Op::Embed { table, row } => {
                    let (table, row) = (*table, *row);
                    let t = &self.nodes[table.0].value;
                    let (rows, w) = (t.rows(), t.cols());
                    let mut data = vec![0.0; rows * w];
                    data[row * w..(row + 1) * w].copy_from_slice(g.data());
                    accumulate(&mut grads, table, Tensor::new(vec![rows, w], data)?)?;
                }
                Op::Mean(a) => {
                    let a = *a;
                    let t = &self.nodes[a.0].value;
                    let c = g.data()[0] / t.numel() as f64;
                    accumulate(&mut grads, a, Tensor::full(t.shape().to_vec(), c))?;
                }
                Op::Log(a) => {
                    let a = *a;
                    let ga = elementwise(&g, &self.nodes[a.0].value, |u, x| u / x);
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Neg(a) => {
                    let a = *a;
                    accumulate(&mut grads, a, g.map(|x| -x))?;
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    accumulate(&mut grads, a, g.map(|x| c * x))?;
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, a, g.reshaped(shape)?)?;
                }
                Op::GradReverse(a, lambda) => {
                    let (a, lambda) = (*a, *lambda);
                    accumulate(&mut grads, a, g.map(|x| -lambda * x))?;
                }
            }
        }
        Ok(out)
    }

    /// Backward pass that adds gradients into the store's parameters.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        apply_grads(store, &grads)
    }
}

/// Add a gradient map into the parameters' grad accumulators.
pub fn apply_grads(store: &mut ParamStore, grads: &GradMap) -> Result<()> {
    for (name, g) in grads {
        store.get_mut(name)?.grad.add_assign(g)?;
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same-shape elementwise")
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub checks: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl FiniteDiffReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Verify analytic gradients of a scalar loss against central finite
/// differences, per parameter entry.
///
/// `build` must assemble the loss on the given tape from the store's
/// current values; it is invoked many times with perturbed parameters.
/// A repeated baseline evaluation guards against non-deterministic loss
/// functions.
pub fn finite_diff_check<F>(
    build: F,
    store: &mut ParamStore,
    step: f64,
    tolerance: f64,
) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::GradCheck("step must be positive".into()));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        tape.value(loss).scalar_value()
    };

    let base = eval(store)?;
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::GradCheck(format!(
            "loss is not deterministic: {base} vs {again}"
        )));
    }

    let analytic = {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        tape.backward(loss)?
    };

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut checks = Vec::with_capacity(names.len());
    for name in names {
        let numel = store.get(&name)?.value.numel();
        let mut max_rel = 0.0f64;
        for k in 0..numel {
            let orig = store.get(&name)?.value.data()[k];
            store.get_mut(&name)?.value.data_mut()[k] = orig + step;
            let plus = eval(store)?;
            store.get_mut(&name)?.value.data_mut()[k] = orig - step;
            let minus = eval(store)?;
            store.get_mut(&name)?.value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        checks.push(ParamCheck { name, max_rel_err: max_rel, pass: max_rel < tolerance });
    }
    Ok(FiniteDiffReport { checks, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShiftStar;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.0, 0.0, 0.0]));
        let s = tape.softmax_last(x).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_probability_vector_and_shift_invariant() {
        let mut rng = XorShiftStar::new(9);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.next_normal() * 3.0).collect();
            let shifted: Vec<f64> = logits.iter().map(|v| v + 100.0).collect();
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::row(logits));
            let b = tape.leaf(Tensor::row(shifted));
            let sa = tape.softmax_last(a).unwrap();
            let sb = tape.softmax_last(b).unwrap();
            let sum: f64 = tape.value(sa).data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
                assert!((0.0..=1.0).contains(x));
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tanh_odd_at_origin() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::row(vec![1.0, -2.0, 3.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let m = tape.mean(p).unwrap();
        let s = tape.scale(m, 3.0).unwrap(); // sum = mean * numel
        tape.backward_into(s, &mut store).unwrap();
        assert_eq!(store.get("p").unwrap().grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_dot_with_self_is_2p() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::row(vec![1.5, -0.5, 2.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let q = tape.param(&store, "p").unwrap();
        let prod = tape.mul(p, q).unwrap();
        let m = tape.mean(prod).unwrap();
        let loss = tape.scale(m, 3.0).unwrap();
        tape.backward_into(loss, &mut store).unwrap();
        let grad = store.get("p").unwrap().grad.data().to_vec();
        for (g, v) in grad.iter().zip([1.5, -0.5, 2.0]) {
            assert!((g - 2.0 * v).abs() < 1e-12, "{g} vs {}", 2.0 * v);
        }
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn tape_consumed_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.neg(x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn finite_diff_square_at_three() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(3.0));
        let report = finite_diff_check(
            |tape, store| {
                let x = tape.param(store, "x")?;
                let sq = tape.mul(x, x)?;
                tape.mean(sq)
            },
            &mut store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err());
        // analytic gradient is 6 exactly
        let mut store2 = ParamStore::new();
        store2.insert("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let x = tape.param(&store2, "x").unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.mean(sq).unwrap();
        tape.backward_into(loss, &mut store2).unwrap();
        assert!((store2.get("x").unwrap().grad.data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn finite_diff_flags_corrupted_rule() {
        // grad_reverse is, from the checker's point of view, an op whose
        // backward rule disagrees with its forward map; the check must fail
        // and name the offending parameter.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row(vec![0.3, -0.7]));
        let report = finite_diff_check(
            |tape, store| {
                let w = tape.param(store, "w")?;
                let r = tape.grad_reverse(w, 0.5)?;
                let sq = tape.mul(r, r)?;
                tape.mean(sq)
            },
            &mut store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.pass());
        assert!(report.failures().any(|c| c.name == "w"));
    }

    #[test]
    fn finite_diff_all_ops_randomized() {
        let mut rng = XorShiftStar::new(31);
        for trial in 0..3 {
            let mut store = ParamStore::new();
            store.insert("a", Tensor::randn(vec![3, 4], 0.8, &mut rng));
            store.insert("b", Tensor::randn(vec![4, 2], 0.8, &mut rng));
            store.insert("bias", Tensor::randn(vec![1, 2], 0.8, &mut rng));
            store.insert("table", Tensor::randn(vec![5, 4], 0.8, &mut rng));
            let report = finite_diff_check(
                |tape, store| {
                    let a = tape.param(store, "a")?;
                    let b = tape.param(store, "b")?;
                    let bias = tape.param(store, "bias")?;
                    let table = tape.param(store, "table")?;
                    let e = tape.embed(table, 2)?;
                    let m = tape.matmul(a, b)?;
                    let m = tape.add_row(m, bias)?;
                    let t = tape.tanh(m)?;
                    let s = tape.sigmoid(t)?;
                    let sm = tape.softmax_last(s)?;
                    let top = tape.slice_cols(sm, 0, 1)?;
                    let top_row = tape.reshape(top, vec![1, 3])?;
                    let eb = tape.matmul(top_row, a)?; // 1x4
                    let joined = tape.concat_cols(&[eb, e])?; // 1x8
                    let stacked = tape.concat_rows(&[joined, joined])?;
                    // sigmoid keeps values in (0,1) so log stays finite
                    let shifted = tape.sigmoid(stacked)?;
                    let lg = tape.log(shifted)?;
                    let n = tape.neg(lg)?;
                    let sc = tape.scale(n, 0.5)?;
                    tape.mean(sc)
                },
                &mut store,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(
                report.pass(),
                "trial {trial}: max rel err {}",
                report.max_rel_err()
            );
        }
    }
}
