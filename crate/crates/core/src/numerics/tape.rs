//! Wengert tape for reverse-mode automatic differentiation.
//!
//! Operations are evaluated eagerly and recorded as nodes; node ids are
//! assigned in creation order, so every input id precedes its consumers and
//! a single reverse pass over the node list visits each node exactly once.
//! Gradient accumulation is plain summation in that fixed order, which makes
//! backward passes deterministic for a given graph.

use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tensor::{self, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Record {
    /// Input or constant; no gradient is reported for it.
    Leaf,
    /// Named parameter leaf; gradients are collected per path.
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    MatVec(Var, Var),
    Silu(Var),
    Exp(Var),
    Div(Var, Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
}

struct Node {
    value: Tensor,
    record: Record,
}

/// Gradients of a scalar loss with respect to the tape's parameters.
///
/// Parameters that the loss does not reach get an exact zero gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: ParamSet,
}

impl Gradients {
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Drop every node recorded after the first `len` nodes. Vars handed out
    /// beyond `len` become invalid; callers use this to reuse one tape with a
    /// fixed prefix (e.g. parameters recorded once) across many evaluations.
    pub fn truncate(&mut self, len: usize) {
        debug_assert!(
            self.params.values().all(|v| v.0 < len),
            "truncating away registered parameters"
        );
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, record: Record) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, record });
        Var(id)
    }

    /// Record an input or constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Record::Leaf)
    }

    /// Record a named parameter leaf. Paths must be unique per tape.
    pub fn param(&mut self, path: &str, value: Tensor) -> Result<Var, TensorError> {
        if self.params.contains_key(path) {
            return Err(TensorError::DuplicateParam(path.to_string()));
        }
        let var = self.push(value, Record::Param);
        self.params.insert(path.to_string(), var);
        Ok(var)
    }

    /// Register every entry of a parameter set, returning path -> Var.
    pub fn register_params(&mut self, params: &ParamSet) -> Result<BTreeMap<String, Var>, TensorError> {
        for (path, tensor) in params.iter() {
            self.param(path, tensor.clone())?;
        }
        Ok(self.params.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Matmul(a, b)))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, TensorError> {
        let value = tensor::matvec(self.value(w), self.value(x))?;
        Ok(self.push(value, Record::MatVec(w, x)))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = tensor::silu(self.value(a))?;
        Ok(self.push(value, Record::Silu(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = tensor::exp(self.value(a))?;
        Ok(self.push(value, Record::Exp(a)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = tensor::div(self.value(a), self.value(b))?;
        Ok(self.push(value, Record::Div(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = tensor::sum(self.value(a))?;
        Ok(self.push(value, Record::Sum(a)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = tensor::concat(&tensors)?;
        Ok(self.push(value, Record::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let value = tensor::slice(self.value(src), start, len)?;
        Ok(self.push(value, Record::Slice { src, start }))
    }

    /// Reverse pass from a scalar loss node.
    ///
    /// Every node is visited exactly once in reverse creation order; each
    /// parameter's gradient is the fixed-order sum of the contributions that
    /// reach it. Unreachable parameters report exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: loss_value.shape().to_vec(),
            });
        }

        let mut accum: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        accum[loss.0] = Some(Tensor::ones(loss_value.shape()));

        for id in (0..=loss.0).rev() {
            let Some(grad) = accum[id].take() else {
                continue;
            };
            self.backward_node(id, &grad, &mut accum)?;
            accum[id] = Some(grad);
        }

        let mut params = ParamSet::new();
        for (path, var) in &self.params {
            let g = match &accum[var.0] {
                Some(t) => t.clone(),
                None => Tensor::zeros(self.value(*var).shape()),
            };
            params.insert(path.clone(), g)?;
        }
        Ok(Gradients { params })
    }

    fn accumulate(
        &self,
        accum: &mut [Option<Tensor>],
        target: Var,
        contribution: &Tensor,
    ) -> Result<(), TensorError> {
        // A scalar-broadcast operand receives the reduced (summed) gradient.
        let reduced = if self.value(target).is_scalar() && !contribution.is_scalar() {
            tensor::sum(contribution)?
        } else {
            contribution.clone()
        };
        match &mut accum[target.0] {
            Some(existing) => *existing = tensor::add(existing, &reduced)?,
            slot @ None => *slot = Some(reduced),
        }
        Ok(())
    }

    fn backward_node(
        &self,
        id: usize,
        grad: &Tensor,
        accum: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        match &self.nodes[id].record {
            Record::Leaf | Record::Param => {}
            Record::Add(a, b) => {
                self.accumulate(accum, *a, grad)?;
                self.accumulate(accum, *b, grad)?;
            }
            Record::Sub(a, b) => {
                self.accumulate(accum, *a, grad)?;
                let neg = tensor::scale(grad, -1.0)?;
                self.accumulate(accum, *b, &neg)?;
            }
            Record::Mul(a, b) => {
                let da = tensor::mul(grad, self.value(*b))?;
                let db = tensor::mul(grad, self.value(*a))?;
                self.accumulate(accum, *a, &da)?;
                self.accumulate(accum, *b, &db)?;
            }
            Record::Matmul(a, b) => {
                // dA = dC * B^T, dB = A^T * dC
                let da = matmul_nt(grad, self.value(*b))?;
                let db = matmul_tn(self.value(*a), grad)?;
                self.accumulate(accum, *a, &da)?;
                self.accumulate(accum, *b, &db)?;
            }
            Record::MatVec(w, x) => {
                // y = W x: dW = dy ⊗ x, dx = W^T dy
                let dw = outer(grad, self.value(*x))?;
                let dx = matvec_t(self.value(*w), grad)?;
                self.accumulate(accum, *w, &dw)?;
                self.accumulate(accum, *x, &dx)?;
            }
            Record::Silu(a) => {
                let x = self.value(*a);
                let data: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&xi, &g)| {
                        let s = 1.0 / (1.0 + (-xi).exp());
                        g * (s + xi * s * (1.0 - s))
                    })
                    .collect();
                let da = Tensor::new(x.shape().to_vec(), data)?;
                self.accumulate(accum, *a, &da)?;
            }
            Record::Exp(a) => {
                let da = tensor::mul(grad, &self.nodes[id].value)?;
                self.accumulate(accum, *a, &da)?;
            }
            Record::Div(a, b) => {
                // out = a / b: da = g / b, db = -g * out / b
                let da = tensor::div(grad, self.value(*b))?;
                let g_out = tensor::mul(grad, &self.nodes[id].value)?;
                let db = tensor::scale(&tensor::div(&g_out, self.value(*b))?, -1.0)?;
                self.accumulate(accum, *a, &da)?;
                self.accumulate(accum, *b, &db)?;
            }
            Record::Sum(a) => {
                let g = grad.item()?;
                let shape = self.value(*a).shape().to_vec();
                let len = self.value(*a).len();
                let da = Tensor::new(shape, vec![g; len])?;
                self.accumulate(accum, *a, &da)?;
            }
            Record::Concat(parts) => {
                let mut offset = 0;
                for part in parts {
                    let len = self.value(*part).len();
                    let piece = tensor::slice(grad, offset, len)?;
                    self.accumulate(accum, *part, &piece)?;
                    offset += len;
                }
            }
            Record::Slice { src, start } => {
                let src_len = self.value(*src).len();
                let mut data = vec![0.0; src_len];
                data[*start..*start + grad.len()].copy_from_slice(grad.data());
                let da = Tensor::new(vec![src_len], data)?;
                self.accumulate(accum, *src, &da)?;
            }
        }
        Ok(())
    }
}

fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    // a [m,n] * b^T where b is [k,n] -> [m,k]
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let k = b.shape()[0];
    debug_assert_eq!(b.shape()[1], n);
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let arow = &a.data()[i * n..(i + 1) * n];
            let brow = &b.data()[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, k], out)
}

fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    // a^T * b where a is [m,k], b is [m,n] -> [k,n]
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(b.shape()[0], m);
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![k, n], out)
}

fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = (a.len(), b.len());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = a.data()[i] * b.data()[j];
        }
    }
    Tensor::new(vec![m, n], out)
}

fn matvec_t(w: &Tensor, dy: &Tensor) -> Result<Tensor, TensorError> {
    // W^T dy where W is [m,k] -> [k]
    let (m, k) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; k];
    for i in 0..m {
        let g = dy.data()[i];
        if g == 0.0 {
            continue;
        }
        let row = &w.data()[i * k..(i + 1) * k];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += g * wv;
        }
    }
    Tensor::new(vec![k], out)
}
