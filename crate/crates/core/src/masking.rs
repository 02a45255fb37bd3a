//! Rectangular object masks from thresholded row/column intensity sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Direction of a projection: `Rows` sums each row, `Columns` each column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumAxis {
    Rows,
    Columns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Fraction of the largest sum along the axis.
    Relative,
    /// Raw intensity sum.
    Absolute,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(ThresholdMode::Relative),
            "absolute" => Ok(ThresholdMode::Absolute),
            other => Err(Error::InvalidThreshold(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    pub value: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Relative,
            value: 0.05,
        }
    }
}

impl ThresholdPolicy {
    pub fn new(mode: ThresholdMode, value: f64) -> Result<Self> {
        let ok = match mode {
            ThresholdMode::Relative => (0.0..=1.0).contains(&value),
            ThresholdMode::Absolute => value >= 0.0 && value.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidThreshold(format!("{mode:?} value {value}")));
        }
        Ok(Self { mode, value })
    }

    /// The cut-off applied to one vector of sums.
    pub fn resolve(&self, sums: &[f64]) -> f64 {
        match self.mode {
            ThresholdMode::Absolute => self.value,
            ThresholdMode::Relative => self.value * sums.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Row sums (length `height`) or column sums (length `width`) of a raster.
pub fn directional_sums(slice: &[f32], height: usize, width: usize, axis: SumAxis) -> Vec<f64> {
    debug_assert_eq!(slice.len(), height * width);
    match axis {
        SumAxis::Rows => slice
            .chunks_exact(width)
            .map(|row| row.iter().map(|&v| v as f64).sum())
            .collect(),
        SumAxis::Columns => {
            let mut sums = vec![0.0; width];
            for row in slice.chunks_exact(width) {
                for (s, &v) in sums.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
            sums
        }
    }
}

/// First and one-past-last index whose sum strictly exceeds `tau`.
fn support(sums: &[f64], tau: f64) -> Option<(usize, usize)> {
    let first = sums.iter().position(|&s| s > tau)?;
    let last = sums.iter().rposition(|&s| s > tau)?;
    Some((first, last + 1))
}

/// Bounding rectangle of rows and columns whose sums exceed the threshold.
pub fn extract_object_mask(
    slice: &[f32],
    height: usize,
    width: usize,
    policy: &ThresholdPolicy,
) -> Result<BBox> {
    let rows = directional_sums(slice, height, width, SumAxis::Rows);
    let cols = directional_sums(slice, height, width, SumAxis::Columns);
    let (top, bottom) = support(&rows, policy.resolve(&rows)).ok_or(Error::EmptyObjectMask)?;
    let (left, right) = support(&cols, policy.resolve(&cols)).ok_or(Error::EmptyObjectMask)?;
    BBox::new(top as f64, bottom as f64, left as f64, right as f64)
}
