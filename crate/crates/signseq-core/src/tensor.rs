//! Dense row-major tensors of 64-bit reals.
//!
//! File formats carry 32-bit floats; everything in the compute core is
//! promoted to f64 so finite-difference gradient checks have headroom.

use crate::error::{Error, Result};
use crate::rng::XorShiftStar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("zero dimension in shape {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    /// Row vector 1 x n.
    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor { shape: vec![1, n], data: values }
    }

    /// Matrix rows x cols from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Zero-mean normal entries with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut XorShiftStar) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.next_normal() * std).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Shape {
                op: "scalar_value",
                detail: format!("tensor of shape {:?} is not a scalar", self.shape),
            })
        }
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns (last axis length).
    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, node: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { node: node.to_string() })
        }
    }

    /// Same data, new shape. Element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add_assign",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// C[m,n] = A[m,k] * B[k,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    if a.shape.len() != 2 || b.shape.len() != 2 || k != kb {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape, b.shape),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// C[m,n] += upstream[m,k] * B^T where B is [n,k]; used by backward rules.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (n, kb) = (b.rows(), b.cols());
    if k != kb {
        return Err(Error::Shape {
            op: "matmul_nt",
            detail: format!("{:?} x {:?}^T", a.shape, b.shape),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// C[k,n] = A^T * B where A is [m,k], B is [m,n]; used by backward rules.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (mb, n) = (b.rows(), b.cols());
    if m != mb {
        return Err(Error::Shape {
            op: "matmul_tn",
            detail: format!("{:?}^T x {:?}", a.shape, b.shape),
        });
    }
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let b_row = &b.data[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![k, n], out)
}
