//! Brute-force wrap-around simulator along the phase-encode axis.
//!
//! A signal sampled with a field of view of width `W` starting at `f0` is
//! folded so that source position `i` lands in bin `(i - f0) mod W`. The
//! functions here enumerate that mapping pixel by pixel and serve as the
//! reference against which the closed-form solver in [`crate::fov`] is
//! checked.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Interval, PhaseAxis};

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub folded: Vec<f64>,
    /// Source indices landing in each bin.
    pub contributions: Vec<Vec<usize>>,
}

/// Folds a length-`N` signal (indices `0..N`) into `width` bins starting at `fov_lo`.
pub fn wrap_sum(signal: &[f64], fov_lo: i64, width: i64) -> Result<FoldResult> {
    if width < 1 {
        return Err(Error::InvalidFoldWidth(width));
    }
    if signal.is_empty() {
        return Err(Error::EmptyInput("wrap_sum"));
    }
    let w = width as usize;
    let mut folded = vec![0.0; w];
    let mut contributions = vec![Vec::new(); w];
    for (i, &v) in signal.iter().enumerate() {
        let bin = (i as i64 - fov_lo).rem_euclid(width) as usize;
        folded[bin] += v;
        contributions[bin].push(i);
    }
    Ok(FoldResult {
        folded,
        contributions,
    })
}

/// Object pixels whose fold bin receives no object signal but their own.
pub fn brute_alias_free(object_support: &BTreeSet<i64>, fov_lo: i64, width: i64) -> Result<BTreeSet<i64>> {
    let query: Vec<i64> = object_support.iter().copied().collect();
    Ok(alias_free_pixels(object_support, &query, fov_lo, width)?
        .into_iter()
        .collect())
}

/// The subset of `query` pixels that receive no folded-in object signal.
///
/// A query pixel outside the object is alias-free iff no object pixel folds
/// onto it; one inside the object is alias-free iff it is alone in its bin.
pub fn alias_free_pixels(
    object_support: &BTreeSet<i64>,
    query: &[i64],
    fov_lo: i64,
    width: i64,
) -> Result<Vec<i64>> {
    if width < 1 {
        return Err(Error::InvalidFoldWidth(width));
    }
    let (Some(&first), Some(&last)) = (object_support.iter().next(), object_support.iter().next_back()) else {
        return Ok(query.to_vec());
    };
    let canvas_lo = query.iter().copied().fold(first, i64::min);
    let canvas_hi = query.iter().copied().fold(last, i64::max) + 1;
    let signal: Vec<f64> = (canvas_lo..canvas_hi)
        .map(|p| if object_support.contains(&p) { 1.0 } else { 0.0 })
        .collect();
    let fold = wrap_sum(&signal, fov_lo - canvas_lo, width)?;
    Ok(query
        .iter()
        .copied()
        .filter(|&p| {
            let bin = (p - fov_lo).rem_euclid(width) as usize;
            let own = if object_support.contains(&p) { 1.0 } else { 0.0 };
            fold.folded[bin] - own == 0.0
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub contains_roi: bool,
    pub roi_alias_free: bool,
    pub is_minimal: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.contains_roi && self.roi_alias_free && self.is_minimal
    }
}

/// Sub-pixels per pixel. FOV placements sit on half pixels, so the oracle
/// enumerates a grid twice as fine as the image.
const SUBDIV: f64 = 2.0;

fn to_grid(v: f64, what: &str) -> Result<i64> {
    let s = v * SUBDIV;
    if s.fract() != 0.0 || !s.is_finite() {
        return Err(Error::OracleRequiresIntegerGrid(format!("{what} coordinate {v}")));
    }
    Ok(s as i64)
}

fn grid_span(iv: Interval, what: &str) -> Result<(i64, i64)> {
    Ok((to_grid(iv.lo, what)?, to_grid(iv.hi, what)?))
}

fn phase_alias_free(object: (i64, i64), roi: (i64, i64), width: i64, fov_lo: i64) -> Result<bool> {
    let support: BTreeSet<i64> = (object.0..object.1).collect();
    let query: Vec<i64> = (roi.0..roi.1).collect();
    Ok(alias_free_pixels(&support, &query, fov_lo, width)?.len() == query.len())
}

/// Checks a prescribed FOV against the object and ROI by enumeration.
///
/// Along the phase axis every ROI sample must be alias-free at the FOV width
/// and, for minimality, every placement of a field one pixel narrower that
/// still contains the ROI must alias somewhere in the ROI. Along the readout
/// axis the FOV must contain the ROI and is minimal when it equals it.
/// Coordinates must lie on the half-pixel grid.
pub fn verify_prescription(object: &BBox, roi: &BBox, fov: &BBox, axis: PhaseAxis) -> Result<Verdicts> {
    let obj = grid_span(object.along(axis), "object")?;
    let r = grid_span(roi.along(axis), "roi")?;
    let f = grid_span(fov.along(axis), "fov")?;
    let (ro_roi, ro_fov) = (roi.across(axis), fov.across(axis));
    for v in [ro_roi.lo, ro_roi.hi, ro_fov.lo, ro_fov.hi] {
        to_grid(v, "readout")?;
    }

    let contains_roi = fov.contains(roi);
    let width = f.1 - f.0;
    let roi_alias_free = width >= 1 && phase_alias_free(obj, r, width, f.0)?;

    let step = SUBDIV as i64;
    let narrower = width - step;
    let mut narrower_fails = true;
    if narrower >= 1 {
        // placements of [lo, lo + narrower) containing [r.0, r.1)
        for lo in (r.1 - narrower)..=r.0 {
            if phase_alias_free(obj, r, narrower, lo)? {
                narrower_fails = false;
                break;
            }
        }
    }
    let readout_exact = ro_fov == ro_roi;
    Ok(Verdicts {
        contains_roi,
        roi_alias_free,
        is_minimal: roi_alias_free && narrower_fails && readout_exact,
    })
}
