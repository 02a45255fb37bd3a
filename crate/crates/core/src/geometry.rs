//! Coordinate conventions and rectangle algebra.
//!
//! Coordinates are continuous and measured in pixels from the top-left image
//! corner; pixel `i` covers `[i, i + 1)`. A [`BBox`] is therefore a half-open
//! rectangle `[top, bottom) x [left, right)` and its area is its pixel count
//! when all four edges are integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed-open 1D span `[lo, hi)` along one image axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn empty_at(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if hi <= lo {
            Interval::empty_at(lo)
        } else {
            Interval { lo, hi }
        }
    }

    pub fn shift(&self, d: f64) -> Interval {
        Interval {
            lo: self.lo + d,
            hi: self.hi + d,
        }
    }

    /// Integer pixels `i` with `[i, i + 1)` fully inside the interval.
    pub fn pixels(&self) -> std::ops::Range<i64> {
        let lo = self.lo.ceil() as i64;
        let hi = self.hi.floor() as i64;
        lo..hi.max(lo)
    }
}

/// Which image axis is phase encoded. `Rows` means the row coordinate
/// (top/bottom) is the phase-encode direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseAxis {
    Rows,
    Columns,
}

impl std::str::FromStr for PhaseAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" => Ok(PhaseAxis::Rows),
            "columns" | "cols" => Ok(PhaseAxis::Columns),
            other => Err(Error::InvalidStack(format!("unknown phase axis {other:?}"))),
        }
    }
}

impl std::fmt::Display for PhaseAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhaseAxis::Rows => "rows",
            PhaseAxis::Columns => "columns",
        })
    }
}

/// Axis-aligned rectangle used for ROIs, FOVs and object masks.
///
/// Serialized as `[top, bottom, left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.top, b.bottom, b.left, b.right]
    }
}

impl BBox {
    pub fn new(top: f64, bottom: f64, left: f64, right: f64) -> Result<Self> {
        let finite = [top, bottom, left, right].iter().all(|v| v.is_finite());
        if !finite || top > bottom || left > right {
            return Err(Error::InvalidBox(format!(
                "({top}, {bottom}, {left}, {right})"
            )));
        }
        Ok(Self {
            top,
            bottom,
            left,
            right,
        })
    }

    pub fn from_intervals(rows: Interval, cols: Interval) -> Self {
        Self {
            top: rows.lo,
            bottom: rows.hi,
            left: cols.lo,
            right: cols.hi,
        }
    }

    pub fn rows(&self) -> Interval {
        Interval {
            lo: self.top,
            hi: self.bottom,
        }
    }

    pub fn cols(&self) -> Interval {
        Interval {
            lo: self.left,
            hi: self.right,
        }
    }

    /// Projection onto the given axis (`Rows` gives top/bottom).
    pub fn along(&self, axis: PhaseAxis) -> Interval {
        match axis {
            PhaseAxis::Rows => self.rows(),
            PhaseAxis::Columns => self.cols(),
        }
    }

    /// Projection onto the axis orthogonal to `axis`.
    pub fn across(&self, axis: PhaseAxis) -> Interval {
        match axis {
            PhaseAxis::Rows => self.cols(),
            PhaseAxis::Columns => self.rows(),
        }
    }

    /// Builds a box from its phase-axis and readout-axis projections.
    pub fn from_axes(axis: PhaseAxis, phase: Interval, readout: Interval) -> Self {
        match axis {
            PhaseAxis::Rows => Self::from_intervals(phase, readout),
            PhaseAxis::Columns => Self::from_intervals(readout, phase),
        }
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn area(&self) -> f64 {
        self.height() * self.width()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.rows().contains(&other.rows()) && self.cols().contains(&other.cols())
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let h = (self.bottom.min(other.bottom) - self.top.max(other.top)).max(0.0);
        let w = (self.right.min(other.right) - self.left.max(other.left)).max(0.0);
        h * w
    }

    pub fn translate(&self, dy: f64, dx: f64) -> BBox {
        BBox {
            top: self.top + dy,
            bottom: self.bottom + dy,
            left: self.left + dx,
            right: self.right + dx,
        }
    }

    /// Mirror left-right inside an image of the given width.
    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox {
            top: self.top,
            bottom: self.bottom,
            left: width - self.right,
            right: width - self.left,
        }
    }

    pub fn is_integer(&self) -> bool {
        [self.top, self.bottom, self.left, self.right]
            .iter()
            .all(|v| v.fract() == 0.0)
    }

    pub fn within(&self, height: f64, width: f64) -> bool {
        self.top >= 0.0 && self.left >= 0.0 && self.bottom <= height && self.right <= width
    }

    pub fn clamp_to(&self, height: f64, width: f64) -> BBox {
        let c = |v: f64, hi: f64| v.clamp(0.0, hi);
        BBox {
            top: c(self.top, height),
            bottom: c(self.bottom, height),
            left: c(self.left, width),
            right: c(self.right, width),
        }
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.top, self.bottom, self.left, self.right
        )
    }
}

impl std::str::FromStr for BBox {
    type Err = Error;

    /// Parses `top,bottom,left,right`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidBox(format!("{s:?}: {e}")))?;
        match parts.as_slice() {
            [t, b, l, r] => BBox::new(*t, *b, *l, *r),
            _ => Err(Error::InvalidBox(format!(
                "{s:?}: expected four comma-separated numbers"
            ))),
        }
    }
}

/// Area intersection over union. Zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Mean absolute distance between corresponding sides, in pixels.
pub fn boundary_error(a: &BBox, b: &BBox) -> f64 {
    ((a.top - b.top).abs()
        + (a.bottom - b.bottom).abs()
        + (a.left - b.left).abs()
        + (a.right - b.right).abs())
        / 4.0
}

/// Smallest box containing every input.
pub fn box_union(boxes: &[BBox]) -> Result<BBox> {
    let (first, rest) = boxes.split_first().ok_or(Error::EmptyStack)?;
    Ok(rest.iter().fold(*first, |acc, b| BBox {
        top: acc.top.min(b.top),
        bottom: acc.bottom.max(b.bottom),
        left: acc.left.min(b.left),
        right: acc.right.max(b.right),
    }))
}

/// An ordered stack of equally sized single-channel slices.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerStack {
    height: usize,
    width: usize,
    phase_axis: PhaseAxis,
    slices: Vec<Vec<f32>>,
}

impl LocalizerStack {
    pub fn new(
        height: usize,
        width: usize,
        phase_axis: PhaseAxis,
        slices: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::EmptyStack);
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidStack(format!(
                "image size {height}x{width}"
            )));
        }
        for (k, s) in slices.iter().enumerate() {
            if s.len() != height * width {
                return Err(Error::InvalidStack(format!(
                    "slice {k} has {} pixels, expected {}x{}",
                    s.len(),
                    height,
                    width
                )));
            }
            if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidStack(format!(
                    "slice {k} has negative or non-finite intensities"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            phase_axis,
            slices,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn phase_axis(&self) -> PhaseAxis {
        self.phase_axis
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[Vec<f32>] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> &[f32] {
        &self.slices[k]
    }

    pub fn max_intensity(&self) -> f32 {
        self.slices
            .iter()
            .flat_map(|s| s.iter().copied())
            .fold(0.0, f32::max)
    }

    /// Checks the slice count against a configured maximum.
    pub fn check_max_slices(&self, max: usize) -> Result<()> {
        if self.len() > max {
            return Err(Error::StackTooLarge {
                slices: self.len(),
                max,
            });
        }
        Ok(())
    }

    /// Same geometry, new pixel data.
    pub fn with_slices(&self, slices: Vec<Vec<f32>>) -> Result<Self> {
        Self::new(self.height, self.width, self.phase_axis, slices)
    }

    pub fn into_slices(self) -> Vec<Vec<f32>> {
        self.slices
    }
}
