//! Dense row-major `f64` tensors and the primitive operations the autodiff
//! tape records.
//!
//! Every primitive is a pure function of its inputs. Reductions accumulate
//! sequentially in row-major order, so the same inputs always produce the
//! same bits.

use std::fmt;

use crate::error::{Error, Result};
use crate::kernels;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    /// Builds a tensor from literal data, rejecting non-finite entries.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {expected} values, got {}", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {pos} is {}", data[pos])));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for results of arithmetic: shape is trusted and
    /// finiteness is not re-checked.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    /// A 1-row matrix (rank 1) from a slice.
    pub fn vector(values: &[f64]) -> Result<Self> {
        Tensor::new(vec![values.len()], values.to_vec())
    }

    /// Stacks equally sized rows into an `n x d` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("from_rows", format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor (1 for rank 1 and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Width of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Selects rows of a rank-2 tensor by index.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(vec![idx.len(), c], data)
    }

    /// Repeats a single row `n` times.
    pub fn tile_row(row: &[f64], n: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Tensor::from_parts(vec![n, row.len()], data)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], data))
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }
}

/// The primitive operations recorded by the tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    /// `[n, m] + [m]`: a row vector added to every row.
    BroadcastAdd,
    Mul,
    ScalarMul(f64),
    /// Concatenation of two matrices along the last axis.
    Concat,
    Tanh,
    Silu,
    Sum,
    Mean,
    /// Sum of squared differences, a scalar.
    SquaredError,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::BroadcastAdd => "broadcast-add",
            OpKind::Mul => "elementwise-mul",
            OpKind::ScalarMul(_) => "scalar-mul",
            OpKind::Concat => "concat-last-axis",
            OpKind::Tanh => "tanh",
            OpKind::Silu => "silu",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SquaredError => "squared-error",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::BroadcastAdd | OpKind::Mul | OpKind::Concat | OpKind::SquaredError => 2,
            _ => 1,
        }
    }
}

/// Evaluates one primitive on concrete tensors.
pub fn forward_primitive(kind: OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() != kind.arity() {
        return Err(Error::shape(
            kind.name(),
            format!("expected {} inputs, got {}", kind.arity(), inputs.len()),
        ));
    }
    let a = inputs[0];
    match kind {
        OpKind::MatMul => matmul(a, inputs[1]),
        OpKind::Add => zip_same(kind, a, inputs[1], |x, y| x + y),
        OpKind::Mul => zip_same(kind, a, inputs[1], |x, y| x * y),
        OpKind::BroadcastAdd => broadcast_add(a, inputs[1]),
        OpKind::ScalarMul(c) => Ok(a.map(|v| c * v)),
        OpKind::Concat => concat_cols(a, inputs[1]),
        OpKind::Tanh => Ok(a.map(f64::tanh)),
        OpKind::Silu => Ok(silu_parts(a).0),
        OpKind::Sum => Ok(Tensor::scalar(sum(a.data()))),
        OpKind::Mean => {
            if a.is_empty() {
                return Err(Error::shape("mean", "empty tensor"));
            }
            Ok(Tensor::scalar(sum(a.data()) / a.len() as f64))
        }
        OpKind::SquaredError => {
            let b = inputs[1];
            check_same(kind, a, b)?;
            let mut acc = 0.0;
            for (x, y) in a.data.iter().zip(&b.data) {
                let d = x - y;
                acc += d * d;
            }
            Ok(Tensor::scalar(acc))
        }
    }
}

/// SiLU output and the sigmoid of the input.
pub(crate) fn silu_parts(a: &Tensor) -> (Tensor, Tensor) {
    let mut y = vec![0.0; a.len()];
    let mut s = vec![0.0; a.len()];
    kernels::silu(&a.data, &mut y, &mut s);
    (Tensor::from_parts(a.shape.clone(), y), Tensor::from_parts(a.shape.clone(), s))
}

pub(crate) fn sum(values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in values {
        acc += v;
    }
    acc
}

fn check_same(kind: OpKind, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(kind.name(), format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn zip_same(kind: OpKind, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    check_same(kind, a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, Operand::plain(&a.data, k), Operand::plain(&b.data, n), &mut out, false);
    Ok(Tensor::from_parts(vec![m, n], out))
}

fn broadcast_add(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2("broadcast-add")?;
    if row.len() != c || row.rank() > 1 {
        return Err(Error::shape("broadcast-add", format!("{:?} + {:?}", a.shape, row.shape)));
    }
    let mut data = a.data.clone();
    for i in 0..r {
        for (v, b) in data[i * c..(i + 1) * c].iter_mut().zip(&row.data) {
            *v += b;
        }
    }
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.dims2("concat-last-axis")?;
    let (rb, cb) = b.dims2("concat-last-axis")?;
    if ra != rb {
        return Err(Error::shape("concat-last-axis", format!("{:?} ++ {:?}", a.shape, b.shape)));
    }
    let mut data = Vec::with_capacity(ra * (ca + cb));
    for i in 0..ra {
        data.extend_from_slice(&a.data[i * ca..(i + 1) * ca]);
        data.extend_from_slice(&b.data[i * cb..(i + 1) * cb]);
    }
    Ok(Tensor::from_parts(vec![ra, ca + cb], data))
}

/// A matrix operand for [`gemm`]: data plus row/column strides, so
/// transposes are free.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> Operand<'a> {
    /// Row-major matrix with `cols` columns.
    pub(crate) fn plain(data: &'a [f64], cols: usize) -> Self {
        Operand { data, row_stride: cols, col_stride: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub(crate) fn transposed(data: &'a [f64], cols: usize) -> Self {
        Operand { data, row_stride: 1, col_stride: cols }
    }
}

/// `out (m x n) = a (m x k) * b (k x n)`, or `out += ...` when `accumulate`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, out: &mut [f64], accumulate: bool) {
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let max_a = (m - 1) * a.row_stride + (k - 1) * a.col_stride;
    let max_b = (k - 1) * b.row_stride + (n - 1) * b.col_stride;
    assert!(max_a < a.data.len() && max_b < b.data.len(), "gemm operand out of bounds");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the bounds of both operands were checked above and `out` is an
    // exclusively borrowed m x n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
