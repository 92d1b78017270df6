use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an accumulated gradient of the same
/// length.
///
/// Every tensor in the engine is viewed as a matrix: a shape `[n]` behaves
/// as `[1, n]`, and higher-rank shapes fold their leading axes into rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("invalid tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::config(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        let grad = vec![0.0; len];
        Ok(Tensor { shape, values, grad })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    /// A `[1, n]` tensor.
    pub fn row(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![1, values.len()], values)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            values: vec![value],
            grad: vec![0.0],
        }
    }

    /// Stacks equally sized rows into a `[rows, cols]` tensor.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::config(format!(
                    "row {i} has width {}, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Split borrow used by optimizers.
    pub fn values_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.grad).all(|v| v.is_finite())
    }
}
