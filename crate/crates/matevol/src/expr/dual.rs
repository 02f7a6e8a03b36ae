//! Forward-mode dual numbers over scalars, 3-vectors and 3x3 matrices.
//!
//! Every quantity carries its value together with one directional
//! derivative; arithmetic follows the Leibniz rule exactly, so the
//! derivatives are exact up to floating-point rounding (no truncation).

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};

use super::eval::EvalError;

/// Relative determinant threshold below which a matrix is treated as
/// singular when inverted: |det F| < SINGULAR_REL_TOL * ||F||^3.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

/// A scalar with one directional derivative attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualScalar {
    pub value: f64,
    pub deriv: f64,
}

impl DualScalar {
    pub fn new(value: f64, deriv: f64) -> Self {
        DualScalar { value, deriv }
    }

    /// A constant: derivative zero.
    pub fn constant(value: f64) -> Self {
        DualScalar { value, deriv: 0.0 }
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        DualScalar::new(e, e * self.deriv)
    }

    pub fn ln(self) -> Result<Self, EvalError> {
        if self.value <= 0.0 {
            return Err(EvalError::Domain(format!(
                "log of non-positive value {}",
                self.value
            )));
        }
        Ok(DualScalar::new(self.value.ln(), self.deriv / self.value))
    }

    pub fn sin(self) -> Self {
        DualScalar::new(self.value.sin(), self.value.cos() * self.deriv)
    }

    pub fn cos(self) -> Self {
        DualScalar::new(self.value.cos(), -self.value.sin() * self.deriv)
    }

    pub fn sqrt(self) -> Result<Self, EvalError> {
        if self.value < 0.0 {
            return Err(EvalError::Domain(format!(
                "sqrt of negative value {}",
                self.value
            )));
        }
        if self.value == 0.0 {
            if self.deriv == 0.0 {
                return Ok(DualScalar::new(0.0, 0.0));
            }
            return Err(EvalError::Domain(
                "sqrt differentiated at zero".to_string(),
            ));
        }
        let root = self.value.sqrt();
        Ok(DualScalar::new(root, self.deriv / (2.0 * root)))
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return DualScalar::new(1.0, 0.0);
        }
        let value = self.value.powi(n);
        let deriv = f64::from(n) * self.value.powi(n - 1) * self.deriv;
        DualScalar::new(value, deriv)
    }
}

impl Add for DualScalar {
    type Output = DualScalar;
    fn add(self, rhs: Self) -> Self {
        DualScalar::new(self.value + rhs.value, self.deriv + rhs.deriv)
    }
}

impl Sub for DualScalar {
    type Output = DualScalar;
    fn sub(self, rhs: Self) -> Self {
        DualScalar::new(self.value - rhs.value, self.deriv - rhs.deriv)
    }
}

impl Mul for DualScalar {
    type Output = DualScalar;
    fn mul(self, rhs: Self) -> Self {
        DualScalar::new(
            self.value * rhs.value,
            self.value * rhs.deriv + self.deriv * rhs.value,
        )
    }
}

impl Div for DualScalar {
    type Output = DualScalar;
    fn div(self, rhs: Self) -> Self {
        DualScalar::new(
            self.value / rhs.value,
            (self.deriv * rhs.value - self.value * rhs.deriv) / (rhs.value * rhs.value),
        )
    }
}

impl Neg for DualScalar {
    type Output = DualScalar;
    fn neg(self) -> Self {
        DualScalar::new(-self.value, -self.deriv)
    }
}

/// A 3-vector with one directional derivative attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualVector {
    pub value: Vector3<f64>,
    pub deriv: Vector3<f64>,
}

impl DualVector {
    pub fn constant(value: Vector3<f64>) -> Self {
        DualVector { value, deriv: Vector3::zeros() }
    }

    pub fn neg(&self) -> Self {
        DualVector { value: -self.value, deriv: -self.deriv }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        DualVector { value: self.value + rhs.value, deriv: self.deriv + rhs.deriv }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        DualVector { value: self.value - rhs.value, deriv: self.deriv - rhs.deriv }
    }

    pub fn scale(&self, s: DualScalar) -> Self {
        DualVector {
            value: s.value * self.value,
            deriv: s.value * self.deriv + s.deriv * self.value,
        }
    }

    pub fn dot(&self, rhs: &Self) -> DualScalar {
        DualScalar::new(
            self.value.dot(&rhs.value),
            self.deriv.dot(&rhs.value) + self.value.dot(&rhs.deriv),
        )
    }
}

/// A 3x3 matrix with one directional derivative attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualMatrix {
    pub value: Matrix3<f64>,
    pub deriv: Matrix3<f64>,
}

/// Cofactor matrix of a 3x3 matrix: C[i][j] = d(det A)/d(A[i][j]).
pub fn cofactor_matrix(a: &Matrix3<f64>) -> Matrix3<f64> {
    let m = |r: usize, c: usize| a[(r, c)];
    Matrix3::new(
        m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1),
        m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2),
        m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0),
        m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
        m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0),
        m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
        m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1),
        m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
        m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
    )
}

/// True when the matrix is too close to singular for a trustworthy
/// inverse, relative to its own scale.
pub fn near_singular(a: &Matrix3<f64>) -> bool {
    let scale = a.norm();
    a.determinant().abs() < SINGULAR_REL_TOL * scale * scale * scale
}

impl DualMatrix {
    pub fn constant(value: Matrix3<f64>) -> Self {
        DualMatrix { value, deriv: Matrix3::zeros() }
    }

    pub fn seeded(value: Matrix3<f64>, deriv: Matrix3<f64>) -> Self {
        DualMatrix { value, deriv }
    }

    pub fn neg(&self) -> Self {
        DualMatrix { value: -self.value, deriv: -self.deriv }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        DualMatrix { value: self.value + rhs.value, deriv: self.deriv + rhs.deriv }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        DualMatrix { value: self.value - rhs.value, deriv: self.deriv - rhs.deriv }
    }

    pub fn scale(&self, s: DualScalar) -> Self {
        DualMatrix {
            value: s.value * self.value,
            deriv: s.value * self.deriv + s.deriv * self.value,
        }
    }

    pub fn mul_mat(&self, rhs: &Self) -> Self {
        DualMatrix {
            value: self.value * rhs.value,
            deriv: self.deriv * rhs.value + self.value * rhs.deriv,
        }
    }

    pub fn mul_vec(&self, rhs: &DualVector) -> DualVector {
        DualVector {
            value: self.value * rhs.value,
            deriv: self.deriv * rhs.value + self.value * rhs.deriv,
        }
    }

    pub fn transpose(&self) -> Self {
        DualMatrix { value: self.value.transpose(), deriv: self.deriv.transpose() }
    }

    pub fn trace(&self) -> DualScalar {
        DualScalar::new(self.value.trace(), self.deriv.trace())
    }

    /// Determinant with its exact directional derivative
    /// d(det A)[B] = sum_ij cof(A)_ij B_ij = det(A) tr(A^-1 B).
    pub fn det(&self) -> DualScalar {
        let cof = cofactor_matrix(&self.value);
        let mut d = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                d += cof[(r, c)] * self.deriv[(r, c)];
            }
        }
        DualScalar::new(self.value.determinant(), d)
    }

    /// Inverse with d(A^-1)[B] = -A^-1 B A^-1; errors on near-singular input.
    pub fn inv(&self) -> Result<Self, EvalError> {
        if near_singular(&self.value) {
            return Err(EvalError::Singular(format!(
                "inverse of a (near-)singular matrix, det = {:e}",
                self.value.determinant()
            )));
        }
        let inv = self.value.try_inverse().ok_or_else(|| {
            EvalError::Singular("inverse of a singular matrix".to_string())
        })?;
        Ok(DualMatrix { value: inv, deriv: -inv * self.deriv * inv })
    }

    /// Integer power by repeated multiplication; negative exponents invert
    /// first and therefore require an invertible value part.
    pub fn powi(&self, n: i32) -> Result<Self, EvalError> {
        if n == 0 {
            return Ok(DualMatrix::constant(Matrix3::identity()));
        }
        let base = if n < 0 { self.inv()? } else { *self };
        let mut acc = base;
        for _ in 1..n.unsigned_abs() {
            acc = acc.mul_mat(&base);
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_is_bit_exact() {
        let x = DualScalar::new(1.7, -0.3);
        let y = DualScalar::new(-2.4, 0.9);
        let p = x * y;
        assert_eq!(p.deriv, x.value * y.deriv + x.deriv * y.value);
    }

    #[test]
    fn det_derivative_matches_trace_identity() {
        let a = Matrix3::new(2.0, 0.1, 0.0, -0.3, 1.0, 0.4, 0.2, 0.0, 1.5);
        let b = Matrix3::new(0.5, -1.0, 0.2, 0.0, 0.3, 0.7, 1.1, 0.0, -0.4);
        let d = DualMatrix::seeded(a, b).det();
        let expected = a.determinant() * (a.try_inverse().unwrap() * b).trace();
        assert!((d.deriv - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn inverse_rejects_near_singular() {
        let a = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1e-15);
        assert!(DualMatrix::constant(a).inv().is_err());
    }

    #[test]
    fn sqrt_domain() {
        assert!(DualScalar::new(-1.0, 0.0).sqrt().is_err());
        assert_eq!(DualScalar::new(0.0, 0.0).sqrt().unwrap().value, 0.0);
        assert!(DualScalar::new(0.0, 1.0).sqrt().is_err());
    }
}
