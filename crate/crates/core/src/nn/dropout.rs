//! Inverted-dropout masks.
//!
//! A mask entry is either `0` (unit dropped) or `1 / keep_probability` (unit
//! kept and rescaled), so every entry has expectation one and a masked layer
//! has the same mean output as the unmasked layer.

use ndarray::Array2;

use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    values: Vec<f64>,
    keep_probability: f64,
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::parameter(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

impl DropoutMask {
    /// A mask that keeps every unit.
    pub fn ones(width: usize) -> Self {
        Self {
            values: vec![1.0; width],
            keep_probability: 1.0,
        }
    }

    /// Draws each entry independently: dropped with probability `p`.
    pub fn sample(width: usize, p: f64, rng: &mut SeededRng) -> Result<Self> {
        check_probability(p)?;
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let values = (0..width)
            .map(|_| if rng.uniform() < p { 0.0 } else { scale })
            .collect();
        Ok(Self {
            values,
            keep_probability: keep,
        })
    }

    /// Builds a mask from explicit keep/drop bits (`true` keeps the unit).
    pub fn from_keep_bits(bits: &[bool], p: f64) -> Result<Self> {
        check_probability(p)?;
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        Ok(Self {
            values: bits.iter().map(|&k| if k { scale } else { 0.0 }).collect(),
            keep_probability: keep,
        })
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn keep_probability(&self) -> f64 {
        self.keep_probability
    }

    pub(crate) fn apply(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.values.len());
        for (v, m) in x.iter_mut().zip(&self.values) {
            *v *= m;
        }
    }
}

/// Samples a single dropout mask of the given width.
pub fn sample_mask(width: usize, p: f64, rng: &mut SeededRng) -> Result<DropoutMask> {
    DropoutMask::sample(width, p, rng)
}

/// Stacks one mask per batch row into a `(rows, width)` matrix.
pub(crate) fn stack_masks<'a, I>(masks: I, width: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a DropoutMask>,
{
    let mut data = Vec::new();
    let mut rows = 0;
    for m in masks {
        assert_eq!(m.width(), width, "mask width");
        data.extend_from_slice(m.values());
        rows += 1;
    }
    Array2::from_shape_vec((rows, width), data).expect("mask matrix shape")
}
