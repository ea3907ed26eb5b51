use super::real::Real;
use crate::{Error, Result};

/// Dense row-major tensor with up to four axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    dims: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(dims: Vec<usize>, data: Vec<R>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: dims,
                rhs: vec![],
            });
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: dims,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let count = dims.iter().product();
        Tensor {
            dims,
            data: vec![R::ZERO; count],
        }
    }

    pub fn scalar(x: R) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![x],
        }
    }

    /// Build an N x 3 tensor from a slice of points or normals.
    pub fn from_vec3s(rows: &[crate::mesh::Vec3]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * 3);
        for r in rows {
            data.push(R::from_f64(r.x));
            data.push(R::from_f64(r.y));
            data.push(R::from_f64(r.z));
        }
        Tensor {
            dims: vec![rows.len(), 3],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> R {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.dims);
        self.data[0]
    }

    /// Rows-by-columns view used by matrix ops: all leading axes are folded
    /// into rows, the last axis is the column count.
    pub fn fold_rows(&self) -> (usize, usize) {
        let cols = *self.dims.last().expect("tensor has at least one axis");
        (self.data.len() / cols.max(1), cols)
    }

    pub fn map_to<T: Real>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
        }
    }
}
