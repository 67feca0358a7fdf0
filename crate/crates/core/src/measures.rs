//! Finite point measures on the positive half-line.
//!
//! A [`FinitePointMeasure`] is the state of the chain: a finite multiset of
//! strictly positive sizes. Atoms are kept sorted in descending order so that
//! equality and serialization do not depend on the order in which atoms were
//! produced.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("atom {index} has non-finite size {value}")]
    NonFiniteAtom { index: usize, value: f64 },
    #[error("test function is not finite at atom {index} (size {atom}): got {value}")]
    NonFiniteEvaluation { index: usize, atom: f64, value: f64 },
}

/// A finite sum of Dirac masses at strictly positive sizes.
#[derive(Clone, Default)]
pub struct FinitePointMeasure {
    atoms: Vec<f64>,
}

impl FinitePointMeasure {
    pub fn empty() -> Self {
        Self { atoms: Vec::new() }
    }

    /// Builds a measure from raw sizes, silently dropping zero and negative
    /// sizes. Use [`FinitePointMeasure::with_dropped`] to learn how many were
    /// discarded.
    pub fn new<I: IntoIterator<Item = f64>>(sizes: I) -> Result<Self, MeasureError> {
        Self::with_dropped(sizes).map(|(m, _)| m)
    }

    /// Builds a measure and returns the number of non-positive sizes that were
    /// discarded (these encode dead individuals).
    pub fn with_dropped<I: IntoIterator<Item = f64>>(
        sizes: I,
    ) -> Result<(Self, usize), MeasureError> {
        let mut atoms = Vec::new();
        let mut dropped = 0;
        for (index, value) in sizes.into_iter().enumerate() {
            if !value.is_finite() {
                return Err(MeasureError::NonFiniteAtom { index, value });
            }
            if value > 0.0 {
                atoms.push(value);
            } else {
                dropped += 1;
            }
        }
        atoms.sort_by(|a, b| b.total_cmp(a));
        Ok((Self { atoms }, dropped))
    }

    /// Atoms in descending order.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Number of atoms counted with multiplicity.
    pub fn count(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn largest(&self) -> Option<f64> {
        self.atoms.first().copied()
    }

    /// The pairing `<f, s>`: the sum of `f` over the atoms.
    pub fn pair<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64, MeasureError> {
        let mut total = 0.0;
        for (index, &atom) in self.atoms.iter().enumerate() {
            let value = f(atom);
            if !value.is_finite() {
                return Err(MeasureError::NonFiniteEvaluation { index, atom, value });
            }
            total += value;
        }
        Ok(total)
    }

    /// `<x^p, s>`. Atoms are positive, so this is finite for every real `p`
    /// unless it overflows.
    pub fn power_mass(&self, p: f64) -> f64 {
        if p == 0.0 {
            return self.atoms.len() as f64;
        }
        self.atoms.iter().map(|a| a.powf(p)).sum()
    }

    /// Multiset union.
    pub fn union(&self, other: &Self) -> Self {
        let mut atoms = Vec::with_capacity(self.atoms.len() + other.atoms.len());
        atoms.extend_from_slice(&self.atoms);
        atoms.extend_from_slice(&other.atoms);
        atoms.sort_by(|a, b| b.total_cmp(a));
        Self { atoms }
    }

    /// Every atom multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut atoms: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| a * factor)
            .filter(|a| *a > 0.0)
            .collect();
        atoms.sort_by(|a, b| b.total_cmp(a));
        Self { atoms }
    }
}

impl PartialEq for FinitePointMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.atoms.len() == other.atoms.len()
            && self
                .atoms
                .iter()
                .zip(&other.atoms)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for FinitePointMeasure {}

impl fmt::Debug for FinitePointMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.atoms.iter()).finish()
    }
}

impl FromIterator<f64> for FinitePointMeasure {
    /// Non-finite sizes are dropped along with non-positive ones.
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut atoms: Vec<f64> = iter
            .into_iter()
            .filter(|a| a.is_finite() && *a > 0.0)
            .collect();
        atoms.sort_by(|a, b| b.total_cmp(a));
        Self { atoms }
    }
}

impl Serialize for FinitePointMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.atoms.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FinitePointMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        if let Some(bad) = raw.iter().find(|a| !(**a > 0.0)) {
            return Err(serde::de::Error::custom(format!(
                "atom sizes must be strictly positive, got {bad}"
            )));
        }
        FinitePointMeasure::new(raw).map_err(serde::de::Error::custom)
    }
}
