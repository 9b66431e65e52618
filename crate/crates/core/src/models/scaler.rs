//! Per-column standardization to zero mean and unit population variance.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams<T> {
    pub mean: Vec<T>,
    /// Population standard deviation; 1 for constant columns.
    pub std: Vec<T>,
    pub constant: Vec<bool>,
}

impl<T: Scalar> ScalerParams<T> {
    pub fn fit(x: ArrayView2<T>) -> Result<Self, ModelError> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(ModelError::Empty);
        }
        let nt = T::lit(n as f64);
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let first = col[0];
            let m = col.iter().copied().sum::<T>() / nt;
            let var = col.iter().map(|v| (*v - m) * (*v - m)).sum::<T>() / nt;
            let is_const = col.iter().all(|v| *v == first);
            let s = var.sqrt();
            // Guard columns whose spread is lost in rounding as well as exact constants.
            let degenerate = is_const || !(s > T::epsilon() * m.abs().max(T::one()));
            mean.push(if is_const { first } else { m });
            std.push(if degenerate { T::one() } else { s });
            constant.push(degenerate);
        }
        Ok(Self { mean, std, constant })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<T>) -> Result<Array2<T>, ModelError> {
        self.check(x.ncols())?;
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - *m) / *s;
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: ArrayView2<T>) -> Result<Array2<T>, ModelError> {
        self.check(z.ncols())?;
        let mut out = z.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * *s + *m;
            }
        }
        Ok(out)
    }

    fn check(&self, cols: usize) -> Result<(), ModelError> {
        if cols != self.dim() {
            return Err(ModelError::ColumnMismatch {
                expected: self.dim(),
                got: cols,
            });
        }
        Ok(())
    }
}
