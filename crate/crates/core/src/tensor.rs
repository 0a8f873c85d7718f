//! Dense row-major tensors over 64-bit floats.
//!
//! Shapes are arbitrary-rank, but all linear-algebra kernels operate on
//! rank-2 views; scalars are shape `[1]`. Construction validates that
//! every value is finite.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Data length does not match the product of the shape extents.
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    /// A non-finite value was found at the given flat offset.
    NonFinite { offset: usize, value: f64 },
    /// Operand shapes are incompatible for the named operation.
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeDataMismatch { shape, len } => {
                write!(f, "shape {shape:?} implies {} values, got {len}", shape.iter().product::<usize>())
            }
            Self::NonFinite { offset, value } => {
                write!(f, "non-finite value {value} at offset {offset}")
            }
            Self::DimMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense tensor: shape extents plus a flat row-major value buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking length consistency and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, len: data.len() });
        }
        if let Some(offset) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { offset, value: data[offset] });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// Internal constructor that trusts the caller on finiteness, used
    /// on op outputs and gradient buffers where the inputs were already
    /// validated. Divergence is caught at the optimizer and loss
    /// checkpoints, which can name the offending parameter or step.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count for a rank-2 tensor; a rank-1 tensor is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Column count for a rank-1 or rank-2 tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out += a @ b` for row-major `a: [m,k]`, `b: [k,n]`, `out: [m,n]`.
pub fn mm_nn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a @ b^T` for `a: [m,k]`, `b: [n,k]`, `out: [m,n]`.
pub fn mm_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out += a^T @ b` for `a: [m,k]`, `b: [m,n]`, `out: [k,n]`.
pub fn mm_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
    }

    #[test]
    fn from_vec_rejects_nan() {
        let err = Tensor::from_vec(vec![3], vec![1.0, f64::NAN, 2.0]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { offset: 1, .. }));
    }

    #[test]
    fn mm_nn_hand_example() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 1.0];
        let mut out = [0.0; 2];
        mm_nn_acc(&a, &b, 2, 2, 1, &mut out);
        assert_eq!(out, [3.0, 7.0]);
    }

    #[test]
    fn mm_variants_agree_with_explicit_transpose() {
        // a: [2,3], b: [3,2]; check nt and tn against nn on transposed inputs.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut nn = [0.0; 4];
        mm_nn_acc(&a, &b, 2, 3, 2, &mut nn);

        // b^T: [2,3]
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut nt = [0.0; 4];
        mm_nt_acc(&a, &bt, 2, 3, 2, &mut nt);
        assert_eq!(nn, nt);

        // a^T: [3,2]
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut tn = [0.0; 4];
        mm_tn_acc(&at, &b, 3, 2, 2, &mut tn);
        assert_eq!(nn, tn);
    }
}
