use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::tensor::{ComplexTensor, DenseTensor, Scalar};

/// Unitaries are accepted when `max|U^H U - I| <= UNITARY_TOL`.
pub const UNITARY_TOL: f64 = 1e-10;

/// A one- or two-qubit unitary. For two-qubit gates the first qubit is the
/// more significant index bit (`|q, q+1>`).
#[derive(Clone, Debug, PartialEq)]
pub struct GateMatrix {
    arity: usize,
    matrix: ComplexTensor,
}

impl GateMatrix {
    pub fn new(matrix: ComplexTensor) -> Result<Self> {
        let (r, c) = matrix.dims2()?;
        let arity = match (r, c) {
            (2, 2) => 1,
            (4, 4) => 2,
            _ => return invalid(format!("gate must be 2x2 or 4x4, got {r}x{c}")),
        };
        let g = GateMatrix { arity, matrix };
        if g.unitarity_error() > UNITARY_TOL {
            return invalid(format!(
                "gate is not unitary (error {:.3e})",
                g.unitarity_error()
            ));
        }
        Ok(g)
    }

    pub fn ry(theta: f64) -> Result<Self> {
        finite(theta)?;
        let (s, c) = (theta / 2.0).sin_cos();
        let m = [c, -s, s, c].map(Complex64::from_real);
        Ok(GateMatrix {
            arity: 1,
            matrix: DenseTensor::matrix(2, 2, m.to_vec())?,
        })
    }

    pub fn rz(theta: f64) -> Result<Self> {
        finite(theta)?;
        let h = theta / 2.0;
        let zero = Complex64::new(0.0, 0.0);
        let m = vec![Complex64::from_polar(1.0, -h), zero, zero, Complex64::from_polar(1.0, h)];
        Ok(GateMatrix {
            arity: 1,
            matrix: DenseTensor::matrix(2, 2, m)?,
        })
    }

    /// Control on the first qubit.
    pub fn cnot() -> Self {
        let mut m = DenseTensor::<Complex64>::zeros(&[4, 4]);
        for (r, c) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            m.set(&[r, c], Complex64::new(1.0, 0.0));
        }
        GateMatrix {
            arity: 2,
            matrix: m,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn matrix(&self) -> &ComplexTensor {
        &self.matrix
    }

    /// Entry `(row, col)` of the matrix.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.matrix.data()[row * (1 << self.arity) + col]
    }

    /// `max |U^H U - I|`.
    pub fn unitarity_error(&self) -> f64 {
        let uu = self
            .matrix
            .adjoint()
            .and_then(|a| a.matmul(&self.matrix))
            .expect("square matrix");
        uu.max_abs_diff(&DenseTensor::identity(uu.shape()[0]))
            .expect("same shape")
    }
}

fn finite(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        invalid(format!("rotation angle must be finite, got {theta}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_angles_are_identity() {
        let id = DenseTensor::identity(2);
        assert_eq!(GateMatrix::ry(0.0).unwrap().matrix(), &id);
        assert_eq!(GateMatrix::rz(0.0).unwrap().matrix(), &id);
    }

    #[test]
    fn ry_pi_flips() {
        let g = GateMatrix::ry(PI).unwrap();
        let expect = DenseTensor::matrix(2, 2, vec![c(0., 0.), c(-1., 0.), c(1., 0.), c(0., 0.)]).unwrap();
        assert!(g.matrix().max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn rz_half_pi() {
        let g = GateMatrix::rz(PI / 2.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((g.at(0, 0) - c(r, -r)).norm() < 1e-15);
        assert!((g.at(1, 1) - c(r, r)).norm() < 1e-15);
        assert_eq!(g.at(0, 1), c(0., 0.));
    }

    #[test]
    fn cnot_swaps_10_and_11() {
        let g = GateMatrix::cnot();
        assert_eq!(g.at(2, 3), c(1., 0.));
        assert_eq!(g.at(3, 2), c(1., 0.));
        assert_eq!(g.at(2, 2), c(0., 0.));
        assert_eq!(g.arity(), 2);
    }

    #[test]
    fn unitarity() {
        for k in 0..50 {
            let t = -7.0 + 0.3 * k as f64;
            assert!(GateMatrix::ry(t).unwrap().unitarity_error() <= 1e-12);
            assert!(GateMatrix::rz(t).unwrap().unitarity_error() <= 1e-12);
        }
        assert!(GateMatrix::cnot().unitarity_error() <= 1e-12);
    }

    #[test]
    fn rejects_bad_gates() {
        assert!(GateMatrix::ry(f64::NAN).is_err());
        assert!(GateMatrix::rz(f64::INFINITY).is_err());
        let m = DenseTensor::matrix(2, 2, vec![c(1., 0.), c(1., 0.), c(0., 0.), c(1., 0.)]).unwrap();
        assert!(GateMatrix::new(m).is_err());
        assert!(GateMatrix::new(DenseTensor::identity(3)).is_err());
    }
}
