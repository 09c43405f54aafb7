use ndarray::Array2;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    Numerical { op: &'static str },
    #[error("tape error: {0}")]
    Tape(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Dense 2-D array with an optional gradient accumulator.
///
/// Vectors are stored as `n x 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    data: Array2<T>,
    requires_grad: bool,
    grad: Option<Array2<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(data: Array2<T>) -> Self {
        Self {
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// A tensor that participates in differentiation; its gradient starts at zero.
    pub fn param(data: Array2<T>) -> Self {
        let grad = Some(Array2::zeros(data.raw_dim()));
        Self {
            data,
            requires_grad: true,
            grad,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> TensorResult<Self> {
        let len = values.len();
        Array2::from_shape_vec((rows, cols), values)
            .map(Self::new)
            .map_err(|_| TensorError::Shape {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (len, 1),
            })
    }

    /// Column vector of length `values.len()`.
    pub fn column(values: Vec<T>) -> Self {
        let n = values.len();
        Self::new(Array2::from_shape_vec((n, 1), values).expect("column shape"))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on && self.grad.is_none() {
            self.grad = Some(Array2::zeros(self.data.raw_dim()));
        }
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&Array2<T>> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(T::zero());
        }
    }

    /// Adds `delta` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, delta: &Array2<T>) -> TensorResult<()> {
        if delta.dim() != self.data.dim() {
            return Err(TensorError::Shape {
                op: "accumulate_grad",
                lhs: self.data.dim(),
                rhs: delta.dim(),
            });
        }
        match self.grad.as_mut() {
            Some(g) => *g += delta,
            None => {
                return Err(TensorError::Tape(
                    "accumulate_grad on a tensor without requires_grad".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grad_matches_shape_and_accumulates() {
        let mut t = Tensor::param(array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(t.grad().unwrap().dim(), (2, 2));
        t.accumulate_grad(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        t.accumulate_grad(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(t.grad().unwrap()[[1, 1]], 2.0);
        t.zero_grad();
        assert_eq!(t.grad().unwrap()[[1, 1]], 0.0);
        assert!(t.accumulate_grad(&array![[1.0]]).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(2, 3, vec![0.0; 5]).is_err());
        let t = Tensor::<f64>::from_vec(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), (2, 3));
        assert!(Tensor::<f64>::new(array![[1.0]]).grad().is_none());
    }
}
