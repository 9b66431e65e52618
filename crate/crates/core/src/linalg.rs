//! Dense symmetric factorizations used by the interior-point solver.

use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    /// `out = self * x`
    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            *o = crate::scalar::dot(row, x);
        }
    }
}

/// Sign pattern expected from the pivots of an `LDLᵀ` factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inertia<T> {
    /// Any nonzero pivot is accepted.
    Any,
    /// The first `positive` pivots must be positive and the rest negative
    /// (quasi-definite KKT matrices).
    QuasiDefinite { positive: usize },
    /// Quasi-definite sign pattern, but a pivot that is smaller than
    /// `threshold` or has the wrong sign is replaced by `±delta`.
    Regularized {
        positive: usize,
        threshold: T,
        delta: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("factorization broke down at pivot {pivot}")]
pub struct FactorError {
    pub pivot: usize,
}

/// `LDLᵀ` factorization without pivoting. Suitable for symmetric quasi-definite
/// matrices, for which every symmetric permutation is factorizable.
#[derive(Debug, Clone)]
pub struct Ldl<T> {
    n: usize,
    /// Strict lower triangle of L, row-major, unit diagonal implied.
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> Ldl<T> {
    pub fn factor(a: &SquareMatrix<T>, inertia: Inertia<T>) -> Result<Self, FactorError> {
        let n = a.dim();
        let mut l = vec![T::zero(); n * n];
        let mut d = vec![T::zero(); n];
        // Work buffer holding l_jk * d_k for the current row j.
        let mut ld = vec![T::zero(); n];
        let tiny = T::epsilon() * T::epsilon();
        for j in 0..n {
            let row_j = j * n;
            let mut djj = a.get(j, j);
            for k in 0..j {
                ld[k] = l[row_j + k] * d[k];
                djj -= l[row_j + k] * ld[k];
            }
            let ok = match inertia {
                Inertia::Any => djj.abs() > tiny && djj.is_finite(),
                Inertia::QuasiDefinite { positive } => {
                    djj.is_finite() && if j < positive { djj > tiny } else { djj < -tiny }
                }
                Inertia::Regularized {
                    positive,
                    threshold,
                    delta,
                } => {
                    let sign = if j < positive { T::one() } else { -T::one() };
                    if djj * sign <= threshold {
                        djj = sign * delta;
                    }
                    djj.is_finite()
                }
            };
            if !ok {
                return Err(FactorError { pivot: j });
            }
            d[j] = djj;
            for i in (j + 1)..n {
                let row_i = i * n;
                let mut v = a.get(i, j);
                for k in 0..j {
                    v -= l[row_i + k] * ld[k];
                }
                l[row_i + j] = v / djj;
            }
        }
        Ok(Self { n, l, d })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s = crate::scalar::dot(row, &b[..i]);
            b[i] -= s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let bi = b[i];
            if bi != T::zero() {
                let row = &self.l[i * n..i * n + i];
                for (bk, lik) in b[..i].iter_mut().zip(row) {
                    *bk -= *lik * bi;
                }
            }
        }
    }

    pub fn pivots(&self) -> &[T] {
        &self.d
    }
}
