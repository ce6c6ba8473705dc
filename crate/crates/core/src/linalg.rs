//! Dense LU factorisation with partial pivoting, row-major storage.

use crate::error::{PmdError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(mut a: Vec<T>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix must be n x n");
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut pivot = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    pivot = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(PmdError::Singular(k));
            }
            if pivot != k {
                for j in 0..n {
                    a.swap(k * n + j, pivot * n + j);
                }
                perm.swap(k, pivot);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        a[i * n + j] = a[i * n + j] - f * a[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu: a, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc = acc - self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc = acc - self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transposed(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        // PA = LU  =>  Aᵀ = Uᵀ Lᵀ P
        let mut y = b.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..i {
                acc = acc - self.lu[j * n + i] * y[j];
            }
            y[i] = acc / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc = acc - self.lu[j * n + i] * y[j];
            }
            y[i] = acc;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

pub fn mat_vec<T: Scalar>(a: &[T], n: usize, x: &[T]) -> Vec<T> {
    (0..n)
        .map(|i| {
            a[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&aij, &xj)| acc + aij * xj)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system_with_pivoting() {
        // first pivot is zero, forces a row swap
        let a: Vec<f64> = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 3.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let b = [3.0, 2.0, 5.0];
        let x = lu.solve(&b);
        let r = mat_vec(&a, 3, &x);
        for i in 0..3 {
            assert!((r[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn transposed_solve_matches_explicit_transpose() {
        let a = vec![4.0, 1.0, 2.0, 0.5, 3.0, 0.0, 1.0, 1.0, 5.0];
        let at: Vec<f64> = (0..9).map(|k| a[(k % 3) * 3 + k / 3]).collect();
        let b = [1.0, -2.0, 0.25];
        let x = Lu::factor(a, 3).unwrap().solve_transposed(&b);
        let y = Lu::factor(at, 3).unwrap().solve(&b);
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_reported() {
        let a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(matches!(Lu::factor(a, 2), Err(PmdError::Singular(1))));
    }
}
