//! Dense real vectors for actions, incentive signals, and gradients.
//!
//! Every constructor rejects NaN and infinities, so arithmetic downstream can
//! assume finite entries and only needs to re-check results it produces
//! itself. Dimensions are small at desk scale (usually 1), hence the inline
//! storage.

use smallvec::SmallVec;

use crate::expr::ExprError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Vector<S: Scalar> {
    data: SmallVec<[S; 2]>,
}

impl<S: Scalar> Vector<S> {
    /// Builds a vector from components. Errors on empty input or any
    /// non-finite component.
    pub fn new(components: &[S]) -> Result<Self, ExprError> {
        if components.is_empty() {
            return Err(ExprError::EmptyVector);
        }
        for (i, c) in components.iter().enumerate() {
            if !c.is_finite() {
                return Err(ExprError::NonFiniteResult {
                    context: format!("vector component {i}"),
                });
            }
        }
        Ok(Vector {
            data: SmallVec::from_slice(components),
        })
    }

    /// A single-component vector; the common case for scalar actions.
    pub fn scalar(value: S) -> Result<Self, ExprError> {
        Self::new(&[value])
    }

    /// All-zero vector of the given dimension. `dim` must be positive.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Vector {
            data: SmallVec::from_elem(S::zero(), dim),
        }
    }

    pub(crate) fn from_smallvec(data: SmallVec<[S; 2]>) -> Self {
        debug_assert!(!data.is_empty());
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn components(&self) -> &[S] {
        &self.data
    }

    pub fn get(&self, i: usize) -> S {
        self.data[i]
    }

    pub(crate) fn set(&mut self, i: usize, value: S) {
        self.data[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Self) -> S {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(S::zero(), |acc, (a, b)| acc + *a * *b)
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, c| acc + *c)
    }

    pub fn scale(&self, k: S) -> Self {
        Vector {
            data: self.data.iter().map(|c| *c * k).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Vector {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Vector {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }

    /// Componentwise clamp to [-bound, bound].
    pub fn clamp(&self, bound: S) -> Self {
        Vector {
            data: self
                .data
                .iter()
                .map(|c| {
                    if *c > bound {
                        bound
                    } else if *c < -bound {
                        -bound
                    } else {
                        *c
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_components() {
        assert!(Vector::<f64>::new(&[1.0, f64::NAN]).is_err());
        assert!(Vector::<f64>::new(&[f64::INFINITY]).is_err());
        assert!(Vector::<f64>::new(&[]).is_err());
        assert!(Vector::<f64>::new(&[0.0, -1.5]).is_ok());
    }

    #[test]
    fn arithmetic_basics() {
        let a = Vector::new(&[1.0, 2.0]).unwrap();
        let b = Vector::new(&[3.0, -1.0]).unwrap();
        assert_eq!(a.dot(&b), 1.0);
        assert_eq!(a.sum(), 3.0);
        assert_eq!(a.add(&b).components(), &[4.0, 1.0]);
        assert_eq!(a.sub(&b).components(), &[-2.0, 3.0]);
        assert_eq!(a.scale(2.0).components(), &[2.0, 4.0]);
        assert_eq!(b.clamp(1.0).components(), &[1.0, -1.0]);
    }

    #[test]
    fn norm_is_euclidean() {
        let v = Vector::new(&[3.0, 4.0]).unwrap();
        assert_eq!(v.norm(), 5.0);
    }
}
