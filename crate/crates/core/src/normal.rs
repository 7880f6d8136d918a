use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::motion::MAX_DOF;

/// Gauss-Newton normal equations `sum g g^T` and `sum g r` for residuals `r`
/// with parameter gradients `g`, plus the residual energy they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    dof: usize,
    hessian: [[f64; MAX_DOF]; MAX_DOF],
    gradient: [f64; MAX_DOF],
    pub sse: f64,
    pub count: usize,
}

impl NormalEquations {
    pub fn new(dof: usize) -> Self {
        assert!(dof <= MAX_DOF);
        NormalEquations {
            dof,
            hessian: [[0.0; MAX_DOF]; MAX_DOF],
            gradient: [0.0; MAX_DOF],
            sse: 0.0,
            count: 0,
        }
    }

    #[inline]
    pub fn add(&mut self, g: &[f64; MAX_DOF], r: f64) {
        for i in 0..self.dof {
            self.gradient[i] += g[i] * r;
            for j in i..self.dof {
                self.hessian[i][j] += g[i] * g[j];
            }
        }
        self.sse += r * r;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &NormalEquations) {
        for i in 0..self.dof {
            self.gradient[i] += other.gradient[i];
            for j in i..self.dof {
                self.hessian[i][j] += other.hessian[i][j];
            }
        }
        self.sse += other.sse;
        self.count += other.count;
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// The symmetric matrix `sum g g^T`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dof, self.dof, |i, j| {
            if i <= j {
                self.hessian[i][j]
            } else {
                self.hessian[j][i]
            }
        })
    }

    /// The vector `sum g r`.
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gradient[..self.dof])
    }

    /// Solves `(matrix + damping I) delta = -vector`.
    pub fn solve(&self, damping: f64) -> Result<Vec<f64>> {
        let mut a = self.matrix();
        for i in 0..self.dof {
            a[(i, i)] += damping;
        }
        let b = -self.vector();
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSystem);
        }
        let delta = match a.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => a.lu().solve(&b).ok_or(Error::NonFiniteSystem)?,
        };
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSystem);
        }
        Ok(delta.iter().copied().collect())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut ne = NormalEquations::new(2);
        // Residual r = 1 - (1 + d0) style data: two observations.
        ne.add(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2.0);
        ne.add(&[0.0, 2.0, 0.0, 0.0, 0.0, 0.0], -4.0);
        let d = ne.solve(0.0).unwrap();
        assert!((d[0] + 2.0).abs() < 1e-14);
        assert!((d[1] - 2.0).abs() < 1e-14);
        assert_eq!(ne.count, 2);
        assert_eq!(ne.sse, 20.0);
    }

    #[test]
    fn singular_without_damping() {
        let ne = NormalEquations::new(2);
        assert!(matches!(ne.solve(0.0), Err(Error::NonFiniteSystem)));
        assert_eq!(ne.solve(1e-6).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn merge_equals_sequential_adds() {
        let g = [[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [0.5, -1.0, 0.0, 2.0, 1.0, -3.0]];
        let mut all = NormalEquations::new(6);
        let mut a = NormalEquations::new(6);
        let mut b = NormalEquations::new(6);
        all.add(&g[0], 0.3);
        all.add(&g[1], -0.7);
        a.add(&g[0], 0.3);
        b.add(&g[1], -0.7);
        a.merge(&b);
        assert_eq!(a, all);
    }
}
