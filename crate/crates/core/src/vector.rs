use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense parameter vector.
///
/// Holds model iterates, dual variables and gradients alike. Finiteness is
/// checked at operation boundaries with [`ModelVec::ensure_finite`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVec(Vec<f64>);

impl ModelVec {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = Self(values);
        v.ensure_finite("vector")?;
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.0.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.0.len(),
            })
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    pub fn sub(&self, other: &[f64]) -> ModelVec {
        ModelVec(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> ModelVec {
        ModelVec(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute entry, 0 for an empty vector.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Arithmetic mean of equally sized vectors, summed in iteration order.
    ///
    /// When all inputs are equal the result is that vector exactly, which
    /// repeated floating-point addition would not guarantee.
    pub fn mean_of<'a, I>(vectors: I, dim: usize) -> ModelVec
    where
        I: IntoIterator<Item = &'a ModelVec>,
    {
        let vectors: Vec<&ModelVec> = vectors.into_iter().collect();
        if let Some(first) = vectors.first() {
            if vectors.iter().all(|v| v == first) {
                return (*first).clone();
            }
        }
        let mut acc = ModelVec::zeros(dim);
        let mut count = 0usize;
        for v in vectors {
            for (a, b) in acc.0.iter_mut().zip(&v.0) {
                *a += b;
            }
            count += 1;
        }
        if count > 0 {
            let n = count as f64;
            for a in &mut acc.0 {
                *a /= n;
            }
        }
        acc
    }
}

impl Deref for ModelVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ModelVec {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
