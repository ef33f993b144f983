//! Dense vector algebra with a fixed, sequential reduction order.
//!
//! Every reduction walks the coordinates in index order so that results are
//! bit-reproducible across runs and thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{AquilaError, Result};

/// Dense parameter / gradient vector of dimension `d >= 1` with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(AquilaError::dim(1, 0));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(AquilaError::Numeric(format!(
                "entry {i} is {}",
                data[i]
            )));
        }
        Ok(Vector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Vector(vec![0.0; dim])
    }

    /// Constant vector; `filled(d, 1.0)` is the all-ones vector.
    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        assert!(value.is_finite());
        Vector(vec![value; dim])
    }

    /// Wraps raw data produced by crate-internal arithmetic on finite inputs.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Vector(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Returns `Err(Numeric)` naming `what` when any entry is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(AquilaError::Numeric(format!(
                "{what}: entry {i} is {}",
                self.0[i]
            ))),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    fn check_dim(&self, other: &Vector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(AquilaError::dim(self.dim(), other.dim()));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_dim(other)?;
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// Squared Euclidean norm, summed in index order.
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for x in &self.0 {
            acc += x * x;
        }
        acc
    }

    pub fn norm2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `a * x + self`
    pub fn axpy(&self, a: f64, x: &Vector) -> Result<Vector> {
        axpy(a, x, self)
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.check_dim(other)?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.check_dim(other)?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, a: f64) -> Vector {
        Vector(self.0.iter().map(|x| a * x).collect())
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &Vector) -> Result<()> {
        self.check_dim(x)?;
        for (y, xi) in self.0.iter_mut().zip(&x.0) {
            *y += a * xi;
        }
        Ok(())
    }

    /// Squared distance `||self - other||^2` without allocating.
    pub fn dist_sq(&self, other: &Vector) -> Result<f64> {
        self.check_dim(other)?;
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            let t = a - b;
            acc += t * t;
        }
        Ok(acc)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = AquilaError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

pub fn norm2(v: &Vector) -> f64 {
    v.norm2()
}

pub fn norm_inf(v: &Vector) -> f64 {
    v.norm_inf()
}

/// Returns `a * x + y`.
pub fn axpy(a: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    x.check_dim(y)?;
    Ok(Vector(
        x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn norm2_examples() {
        assert_eq!(norm2(&Vector::zeros(3)), 0.0);
        assert_eq!(norm2(&v(&[3.0, 4.0])), 5.0);
        // 0.09 + 0.01 + 0.04 = 0.14
        assert!((norm2(&v(&[0.3, -0.1, 0.2])) - 0.14_f64.sqrt()).abs() < 1e-15);
        assert!((norm2(&v(&[0.3, -0.1, 0.2])) - 0.374166).abs() < 1e-6);
    }

    #[test]
    fn norm_inf_examples() {
        assert_eq!(norm_inf(&v(&[0.3, -0.1, 0.2])), 0.3);
        assert_eq!(norm_inf(&Vector::zeros(5)), 0.0);
        assert_eq!(norm_inf(&v(&[-7.0, 2.0])), 7.0);
    }

    #[test]
    fn axpy_examples() {
        let y = v(&[1.5, -2.0]);
        assert_eq!(axpy(0.0, &v(&[9.0, 9.0]), &y).unwrap(), y);
        assert_eq!(
            axpy(1.0, &v(&[1.0, 1.0]), &Vector::zeros(2)).unwrap(),
            v(&[1.0, 1.0])
        );
        let r = axpy(-0.1, &v(&[10.0, 20.0]), &v(&[1.0, 2.0])).unwrap();
        assert!(r.norm_inf() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let err = axpy(1.0, &Vector::zeros(2), &Vector::zeros(3)).unwrap_err();
        assert_eq!(err, AquilaError::Dimension { expected: 2, actual: 3 });
        assert!(Vector::zeros(2).dot(&Vector::zeros(1)).is_err());
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            Vector::new(vec![1.0, f64::NAN]),
            Err(AquilaError::Numeric(_))
        ));
        assert!(matches!(
            Vector::new(vec![f64::INFINITY]),
            Err(AquilaError::Numeric(_))
        ));
        assert!(Vector::new(vec![]).is_err());
    }

    fn finite_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..64)
    }

    proptest! {
        #[test]
        fn norm_sq_matches_dot(data in finite_vec()) {
            let x = Vector::new(data).unwrap();
            let d = x.dim() as f64;
            let n = x.norm2();
            let dot = x.dot(&x).unwrap();
            prop_assert!((n * n - dot).abs() <= 4.0 * f64::EPSILON * d * dot.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn norm_sandwich(data in finite_vec()) {
            let x = Vector::new(data).unwrap();
            let d = x.dim() as f64;
            let (ni, n2) = (x.norm_inf(), x.norm2());
            prop_assert!(ni <= n2 * (1.0 + 1e-15));
            prop_assert!(n2 <= d.sqrt() * ni * (1.0 + 1e-15));
        }

        #[test]
        fn reductions_are_reproducible(data in finite_vec()) {
            let x = Vector::new(data.clone()).unwrap();
            let y = Vector::new(data).unwrap();
            prop_assert_eq!(x.norm2().to_bits(), y.norm2().to_bits());
            prop_assert_eq!(x.dot(&y).unwrap().to_bits(), y.dot(&x).unwrap().to_bits());
        }
    }
}
