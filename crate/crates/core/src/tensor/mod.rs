//! Dense 64-bit tensors, a reverse-mode differentiation tape and the DFT pair.
//!
//! [`Tensor`] is plain row-major storage. Gradient bookkeeping (the
//! `requires_grad` flag, the accumulated gradient and the node id) lives on
//! the [`Tape`] node that owns a tensor once it enters a computation, which
//! keeps values immutable while a graph is alive.

pub mod fft;
mod gemm;
mod gradcheck;
mod tape;

pub use gemm::gemm;
pub use gradcheck::grad_check;
pub use tape::{ComplexVar, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len().max(1)],
            data: if data.is_empty() { vec![0.0] } else { data },
        }
    }

    /// Builds a rank-2 tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of range for extent {d}");
                acc * d + i
            })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A complex tensor stored as separate real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Dimension(format!(
                "real part {:?} and imaginary part {:?} differ",
                re.shape(),
                im.shape()
            )));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

/// Splits a shape into `(rows, last)` where `last` is the trailing extent.
pub(crate) fn rows_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().expect("rank >= 1");
    (shape.iter().product::<usize>() / last, last)
}

/// Converts `[C × n]` real input into its DFT along the last axis.
pub fn dft_forward(z: &Tensor) -> ComplexTensor {
    let (rows, n) = rows_last(z.shape());
    let mut re = vec![0.0; rows * n];
    let mut im = vec![0.0; rows * n];
    fft::dft_rows(z.data(), None, &mut re, &mut im, n, false);
    ComplexTensor {
        re: Tensor::from_parts(z.shape().to_vec(), re),
        im: Tensor::from_parts(z.shape().to_vec(), im),
    }
}

/// Inverse DFT along the last axis, scaled by `1/n`. Returns the real part
/// together with the largest magnitude of the discarded imaginary part.
pub fn dft_inverse(spectrum: &ComplexTensor) -> (Tensor, f64) {
    let shape = spectrum.shape().to_vec();
    let (rows, n) = rows_last(&shape);
    let mut re = vec![0.0; rows * n];
    let mut im = vec![0.0; rows * n];
    fft::dft_rows(
        spectrum.re.data(),
        Some(spectrum.im.data()),
        &mut re,
        &mut im,
        n,
        true,
    );
    let scale = 1.0 / n as f64;
    re.iter_mut().for_each(|v| *v *= scale);
    let residual = im.iter().fold(0.0f64, |m, v| m.max((v * scale).abs()));
    (Tensor::from_parts(shape, re), residual)
}
