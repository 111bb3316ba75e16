//! Validated signal and mask containers.
//!
//! A [`Signal`] is a flat vector of reals laid out row-major as
//! `(row, column, channel)`. Values are nominally in `[0, 1]` but are never
//! clamped here: Langevin iterates routinely leave that range and only the
//! image writer quantizes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("shape {shape} needs {expected} values, got {actual}")]
    ShapeMismatch {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape dimensions must be positive, got {0}")]
    ZeroDimension(Shape),
    #[error("mask index {index} out of range for length {total_len}")]
    MaskIndexOutOfRange { index: usize, total_len: usize },
    #[error("mask index {0} listed more than once")]
    DuplicateMaskIndex(usize),
    #[error("mask length must be positive")]
    EmptyMask,
}

/// Grid shape `(height, width, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// A `1 × len × 1` row, the layout used for small vector fixtures.
    pub const fn vector(len: usize) -> Self {
        Self::new(1, len, 1)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Real-valued signal on a `height × width × channels` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Signal {
    values: Vec<f64>,
    shape: Shape,
}

impl Signal {
    /// Validates lengths and finiteness. Errors name the offending index.
    pub fn new(values: Vec<f64>, shape: Shape) -> Result<Self, SignalError> {
        if shape.height == 0 || shape.width == 0 || shape.channels == 0 {
            return Err(SignalError::ZeroDimension(shape));
        }
        if values.len() != shape.len() {
            return Err(SignalError::ShapeMismatch {
                shape,
                expected: shape.len(),
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SignalError::NonFinite { index, value });
        }
        Ok(Self { values, shape })
    }

    pub fn from_vector(values: Vec<f64>) -> Result<Self, SignalError> {
        let shape = Shape::vector(values.len());
        Self::new(values, shape)
    }

    pub fn zeros(shape: Shape) -> Result<Self, SignalError> {
        Self::new(vec![0.0; shape.len()], shape)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Elementwise `self - other`.
    pub fn difference(&self, other: &Signal) -> Result<Signal, SignalError> {
        if self.shape != other.shape {
            return Err(SignalError::ShapeMismatch {
                shape: self.shape,
                expected: self.len(),
                actual: other.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Signal::new(values, self.shape)
    }

    /// One channel as a single-channel signal.
    pub fn channel(&self, channel: usize) -> Option<Signal> {
        if channel >= self.shape.channels {
            return None;
        }
        let values = self
            .values
            .iter()
            .skip(channel)
            .step_by(self.shape.channels)
            .copied()
            .collect();
        Some(Signal {
            values,
            shape: Shape::new(self.shape.height, self.shape.width, 1),
        })
    }
}

impl<'de> Deserialize<'de> for Signal {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            values: Vec<f64>,
            shape: Shape,
        }
        let raw = Raw::deserialize(deserializer)?;
        Signal::new(raw.values, raw.shape).map_err(serde::de::Error::custom)
    }
}

/// Shorthand for [`Signal::new`].
pub fn make_signal(values: Vec<f64>, shape: Shape) -> Result<Signal, SignalError> {
    Signal::new(values, shape)
}

/// How much of a signal a mask observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCoverage {
    NoObservations,
    Partial,
    Full,
}

/// The set of observed flat indices (`M`); everything else is the
/// complement `R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    observed: Vec<usize>,
    flags: Vec<bool>,
}

impl Mask {
    pub fn new(observed: Vec<usize>, total_len: usize) -> Result<Self, SignalError> {
        if total_len == 0 {
            return Err(SignalError::EmptyMask);
        }
        let mut flags = vec![false; total_len];
        for &index in &observed {
            if index >= total_len {
                return Err(SignalError::MaskIndexOutOfRange { index, total_len });
            }
            if flags[index] {
                return Err(SignalError::DuplicateMaskIndex(index));
            }
            flags[index] = true;
        }
        let mut observed = observed;
        observed.sort_unstable();
        Ok(Self { observed, flags })
    }

    pub fn from_flags(flags: Vec<bool>) -> Result<Self, SignalError> {
        if flags.is_empty() {
            return Err(SignalError::EmptyMask);
        }
        let observed = flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect();
        Ok(Self { observed, flags })
    }

    pub fn all(total_len: usize) -> Result<Self, SignalError> {
        Self::from_flags(vec![true; total_len])
    }

    pub fn none(total_len: usize) -> Result<Self, SignalError> {
        Self::from_flags(vec![false; total_len])
    }

    /// Sorted observed indices.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn total_len(&self) -> usize {
        self.flags.len()
    }

    #[inline]
    pub fn is_observed(&self, index: usize) -> bool {
        self.flags[index]
    }

    pub fn complement(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (!f).then_some(i))
            .collect()
    }

    pub fn coverage(&self) -> MaskCoverage {
        match self.observed.len() {
            0 => MaskCoverage::NoObservations,
            n if n == self.flags.len() => MaskCoverage::Full,
            _ => MaskCoverage::Partial,
        }
    }
}
