//! Dense row-major tensors over `f64`.
//!
//! A [`Tensor`] is an immutable value: no operation mutates its inputs, and
//! every exported operation verifies that its result is finite, so a tensor
//! obtained from this module never carries NaN or infinity.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{op} requires a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: index out of bounds ({detail})")]
    OutOfBounds { op: &'static str, detail: String },
    #[error("zero-extent dimension in shape {shape:?}")]
    ZeroExtent { shape: Vec<usize> },
    #[error("duplicate parameter path {0:?}")]
    DuplicateParam(String),
}

/// n-dimensional array of `f64` in row-major order.
///
/// Rank-0 tensors (empty shape, one element) act as scalars; binary
/// operations broadcast a rank-0 operand against any shape, and nothing
/// else broadcasts.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                got: data.len(),
                shape,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Result<Self, TensorError> {
        Tensor::new(vec![], vec![v])
    }

    /// Rank-1 tensor from a plain vector.
    pub fn from_vec(v: Vec<f64>) -> Result<Self, TensorError> {
        let n = v.len();
        Tensor::new(vec![n], v)
    }

    /// Rank-2 tensor from rows (all rows must share a length).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![r, c],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = 1.0);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// True for rank-0 tensors, the only shape that broadcasts.
    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                op: "item",
                shape: self.shape.clone(),
            })
        }
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> Result<&[f64], TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "row",
                lhs: self.shape.clone(),
                rhs: vec![2],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        if i >= r {
            return Err(TensorError::OutOfBounds {
                op: "row",
                detail: format!("row {i} of {r}"),
            });
        }
        Ok(&self.data[i * c..(i + 1) * c])
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Elementwise binary operations exposed by the tensor layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOpKind {
    Add,
    Sub,
    Mul,
}

impl BinaryOpKind {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOpKind::Add => "add",
            BinaryOpKind::Sub => "sub",
            BinaryOpKind::Mul => "mul",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOpKind::Add => a + b,
            BinaryOpKind::Sub => a - b,
            BinaryOpKind::Mul => a * b,
        }
    }
}

fn finite_checked(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(TensorError::NonFinite { op });
    }
    Ok(Tensor { shape, data })
}

/// Elementwise binary op. Shapes must match exactly, or one operand must be
/// rank-0 (scalar broadcast); no other broadcasting is performed.
pub fn tensor_binary(kind: BinaryOpKind, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let op = kind.name();
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| kind.apply(x, y))
            .collect();
        return finite_checked(op, a.shape.clone(), data);
    }
    if b.is_scalar() {
        let s = b.data[0];
        let data = a.data.iter().map(|&x| kind.apply(x, s)).collect();
        return finite_checked(op, a.shape.clone(), data);
    }
    if a.is_scalar() {
        let s = a.data[0];
        let data = b.data.iter().map(|&y| kind.apply(s, y)).collect();
        return finite_checked(op, b.shape.clone(), data);
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    tensor_binary(BinaryOpKind::Add, a, b)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    tensor_binary(BinaryOpKind::Sub, a, b)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    tensor_binary(BinaryOpKind::Mul, a, b)
}

/// Multiply every element by a constant.
pub fn scale(a: &Tensor, k: f64) -> Result<Tensor, TensorError> {
    let data = a.data.iter().map(|&x| x * k).collect();
    finite_checked("scale", a.shape.clone(), data)
}

/// Matrix product of rank-2 tensors: `[m,k] x [k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    finite_checked("matmul", vec![m, n], out)
}

/// Matrix-vector product: `[m,k] x [k] -> [m]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor, TensorError> {
    if w.rank() != 2 || x.rank() != 1 || w.shape[1] != x.shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matvec",
            lhs: w.shape.clone(),
            rhs: x.shape.clone(),
        });
    }
    let (m, k) = (w.shape[0], w.shape[1]);
    let out: Vec<f64> = (0..m)
        .map(|i| {
            let row = &w.data[i * k..(i + 1) * k];
            row.iter().zip(&x.data).map(|(&a, &b)| a * b).sum()
        })
        .collect();
    finite_checked("matvec", vec![m], out)
}

pub(crate) fn silu_scalar(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// SiLU activation `x * sigmoid(x)`, elementwise.
pub fn silu(a: &Tensor) -> Result<Tensor, TensorError> {
    let data = a.data.iter().map(|&x| silu_scalar(x)).collect();
    finite_checked("silu", a.shape.clone(), data)
}

/// Elementwise exponential.
pub fn exp(a: &Tensor) -> Result<Tensor, TensorError> {
    let data = a.data.iter().map(|&x| x.exp()).collect();
    finite_checked("exp", a.shape.clone(), data)
}

/// Elementwise division; the denominator may be rank-0.
pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x / y).collect();
        return finite_checked("div", a.shape.clone(), data);
    }
    if b.is_scalar() {
        let s = b.data[0];
        let data = a.data.iter().map(|&x| x / s).collect();
        return finite_checked("div", a.shape.clone(), data);
    }
    Err(TensorError::ShapeMismatch {
        op: "div",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })
}

/// Sum of all elements as a rank-0 tensor.
pub fn sum(a: &Tensor) -> Result<Tensor, TensorError> {
    finite_checked("sum", vec![], vec![a.data.iter().sum()])
}

/// Concatenate rank-1 tensors into one rank-1 tensor.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: p.shape.clone(),
                rhs: vec![1],
            });
        }
        data.extend_from_slice(&p.data);
    }
    let n = data.len();
    finite_checked("concat", vec![n], data)
}

/// Contiguous slice `[start, start+len)` of a rank-1 tensor.
pub fn slice(a: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
    if a.rank() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "slice",
            lhs: a.shape.clone(),
            rhs: vec![1],
        });
    }
    if start + len > a.len() || len == 0 {
        return Err(TensorError::OutOfBounds {
            op: "slice",
            detail: format!("[{start}, {}) of {}", start + len, a.len()),
        });
    }
    Ok(Tensor {
        shape: vec![len],
        data: a.data[start..start + len].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn binary_elementwise_examples() {
        assert_eq!(add(&t1(&[1.0, 2.0]), &t1(&[3.0, 4.0])).unwrap().data(), &[4.0, 6.0]);
        let zero = Tensor::scalar(0.0).unwrap();
        assert_eq!(mul(&t1(&[1.0, 2.0]), &zero).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(sub(&t1(&[5.0]), &t1(&[5.0])).unwrap().data(), &[0.0]);
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let s = Tensor::scalar(2.0).unwrap();
        assert_eq!(add(&s, &t1(&[1.0, 2.0])).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(sub(&s, &t1(&[1.0, 2.0])).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(sub(&t1(&[1.0, 2.0]), &s).unwrap().data(), &[-1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = add(&t1(&[1.0, 2.0]), &t1(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "add", .. }));
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(Tensor::from_vec(vec![f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_examples() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);

        // hand dot product: [1,2]*[3;4] = 11
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);

        let z = Tensor::zeros(&[2, 3]);
        let any = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64).collect()).unwrap();
        let prod = matmul(&z, &any).unwrap();
        assert_eq!(prod.shape(), &[2, 4]);
        assert!(prod.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn slice_and_concat_roundtrip() {
        let v = t1(&[1.0, 2.0, 3.0, 4.0]);
        let a = slice(&v, 0, 2).unwrap();
        let b = slice(&v, 2, 2).unwrap();
        assert_eq!(concat(&[&a, &b]).unwrap(), v);
    }

    #[test]
    fn tensor_binary_dispatch_matches_named_ops() {
        let a = t1(&[1.0, -2.0]);
        let b = t1(&[0.5, 3.0]);
        assert_eq!(tensor_binary(BinaryOpKind::Add, &a, &b).unwrap(), add(&a, &b).unwrap());
        assert_eq!(tensor_binary(BinaryOpKind::Sub, &a, &b).unwrap(), sub(&a, &b).unwrap());
        assert_eq!(tensor_binary(BinaryOpKind::Mul, &a, &b).unwrap(), mul(&a, &b).unwrap());
    }
}
