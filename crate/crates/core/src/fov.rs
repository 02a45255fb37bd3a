//! Smallest alias-free field of view from an object mask and an ROI.
//!
//! Along the phase-encode axis the object of width `y` is replicated at
//! integer multiples of the FOV width `W`. With signed margins `a <= b`
//! between the ROI and object edges, the nearest copies stay clear of the
//! ROI iff `W >= y - a`; the field must also contain the ROI, so
//! `W = max(y - a, roi width)`. The FOV edge on the tighter side is placed
//! halfway between the object edge and the ROI edge, then clamped so the ROI
//! stays inside. Along the readout axis the FOV equals the ROI.
//!
//! Negative margins (ROI reaching past the object) use the same algebra; the
//! clamp to the ROI width and the containment clamp cover that case.

use serde::{Deserialize, Serialize};

use crate::alias::{verify_prescription, Verdicts};
use crate::error::{Error, Result};
use crate::geometry::{box_union, BBox, Interval, LocalizerStack, PhaseAxis};
use crate::masking::{extract_object_mask, ThresholdPolicy};

/// Object and ROI projections along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovInputs1D {
    pub object: Interval,
    pub roi: Interval,
}

impl FovInputs1D {
    pub fn new(object: Interval, roi: Interval) -> Result<Self> {
        if object.width() <= 0.0 {
            return Err(Error::DegenerateObject {
                lo: object.lo,
                hi: object.hi,
            });
        }
        Ok(Self { object, roi })
    }

    /// Object width `y`.
    pub fn object_width(&self) -> f64 {
        self.object.width()
    }

    /// Signed margins on the low and high side.
    pub fn margins(&self) -> (f64, f64) {
        (self.roi.lo - self.object.lo, self.object.hi - self.roi.hi)
    }

    /// The smaller margin `a`.
    pub fn min_margin(&self) -> f64 {
        let (lo, hi) = self.margins();
        lo.min(hi)
    }

    /// The larger margin `b`.
    pub fn max_margin(&self) -> f64 {
        let (lo, hi) = self.margins();
        lo.max(hi)
    }

    pub fn minimal_width(&self) -> f64 {
        (self.object_width() - self.min_margin()).max(self.roi.width())
    }
}

/// The FOV window along the phase axis.
pub fn smallest_fov_1d(inputs: &FovInputs1D) -> Result<Interval> {
    if inputs.object.width() <= 0.0 {
        return Err(Error::DegenerateObject {
            lo: inputs.object.lo,
            hi: inputs.object.hi,
        });
    }
    let width = inputs.minimal_width();
    let (a_lo, a_hi) = inputs.margins();
    let preferred_lo = if a_lo <= a_hi {
        inputs.object.lo + a_lo / 2.0
    } else {
        inputs.object.hi - a_hi / 2.0 - width
    };
    let lo = preferred_lo.max(inputs.roi.hi - width).min(inputs.roi.lo);
    Ok(Interval {
        lo,
        hi: lo + width,
    })
}

/// Locations of the object that receive no folded copy at FOV width `width`.
///
/// Equals `[object.hi - W, object.lo + W)` clipped to the object; empty when
/// `W <= y / 2`.
pub fn alias_free_interval(object: Interval, width: f64) -> Interval {
    Interval {
        lo: object.hi - width,
        hi: object.lo + width,
    }
    .intersect(&object)
}

/// Per-slice FOV: minimal along the phase axis, equal to the ROI on readout.
pub fn prescribe_slice(mask: &BBox, roi: &BBox, axis: PhaseAxis) -> Result<BBox> {
    let inputs = FovInputs1D::new(mask.along(axis), roi.along(axis))?;
    let phase = smallest_fov_1d(&inputs)?;
    Ok(BBox::from_axes(axis, phase, roi.across(axis)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub index: usize,
    /// `"ok"` or the error code that caused the slice to be skipped.
    pub status: String,
    pub mask: Option<BBox>,
    pub fov: Option<BBox>,
    pub minimal_width: Option<f64>,
    pub alias_free: Option<Interval>,
    /// Oracle check of this slice's FOV; absent when coordinates are off the half-pixel grid.
    pub verdicts: Option<Verdicts>,
    /// Oracle check of the final (union) FOV against this slice.
    pub union_verdicts: Option<Verdicts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionReport {
    pub fov: BBox,
    pub roi: BBox,
    pub phase_axis: PhaseAxis,
    pub slices: Vec<SliceEntry>,
}

impl PrescriptionReport {
    pub fn skipped(&self) -> usize {
        self.slices.iter().filter(|s| s.status != "ok").count()
    }

    /// True when every slice with oracle verdicts passed all three checks.
    pub fn all_verdicts_pass(&self) -> bool {
        self.slices
            .iter()
            .filter_map(|s| s.verdicts)
            .all(|v| v.all())
    }
}

/// Masks every slice, prescribes per slice, and unions the results.
pub fn prescribe_stack(stack: &LocalizerStack, roi: &BBox, policy: &ThresholdPolicy) -> Result<PrescriptionReport> {
    if stack.is_empty() {
        return Err(Error::EmptyStack);
    }
    let axis = stack.phase_axis();
    let mut entries = Vec::with_capacity(stack.len());
    let mut fovs = Vec::new();
    for (index, slice) in stack.slices().iter().enumerate() {
        match extract_object_mask(slice, stack.height(), stack.width(), policy) {
            Ok(mask) => {
                let fov = prescribe_slice(&mask, roi, axis)?;
                let inputs = FovInputs1D::new(mask.along(axis), roi.along(axis))?;
                let width = inputs.minimal_width();
                let verdicts = verify_prescription(&mask, roi, &fov, axis).ok();
                fovs.push(fov);
                entries.push(SliceEntry {
                    index,
                    status: "ok".into(),
                    mask: Some(mask),
                    fov: Some(fov),
                    minimal_width: Some(width),
                    alias_free: Some(alias_free_interval(mask.along(axis), width)),
                    verdicts,
                    union_verdicts: None,
                });
            }
            Err(e @ Error::EmptyObjectMask) => entries.push(SliceEntry {
                index,
                status: e.code().into(),
                mask: None,
                fov: None,
                minimal_width: None,
                alias_free: None,
                verdicts: None,
                union_verdicts: None,
            }),
            Err(e) => return Err(e),
        }
    }
    if fovs.is_empty() {
        return Err(Error::NoObjectFound);
    }
    let fov = box_union(&fovs)?;
    for entry in entries.iter_mut() {
        if let Some(mask) = entry.mask {
            entry.union_verdicts = verify_prescription(&mask, roi, &fov, axis).ok();
        }
    }
    Ok(PrescriptionReport {
        fov,
        roi: *roi,
        phase_axis: axis,
        slices: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn bx(t: f64, b: f64, l: f64, r: f64) -> BBox {
        BBox::new(t, b, l, r).unwrap()
    }

    fn solve(obj: (f64, f64), roi: (f64, f64)) -> Interval {
        smallest_fov_1d(&FovInputs1D::new(iv(obj.0, obj.1), iv(roi.0, roi.1)).unwrap()).unwrap()
    }

    #[test]
    fn smallest_fov_examples() {
        assert_eq!(solve((0.0, 100.0), (0.0, 100.0)), iv(0.0, 100.0));
        assert_eq!(solve((0.0, 100.0), (10.0, 80.0)), iv(5.0, 95.0));
        assert_eq!(solve((0.0, 100.0), (-10.0, 110.0)), iv(-10.0, 110.0));
        // mirrored: tighter margin on the high side
        assert_eq!(solve((0.0, 100.0), (20.0, 90.0)), iv(5.0, 95.0));
        // one-sided overhang: containment clamp
        assert_eq!(solve((0.0, 100.0), (-10.0, 80.0)), iv(-10.0, 100.0));
    }

    #[test]
    fn degenerate_object_rejected() {
        assert!(matches!(
            FovInputs1D::new(iv(3.0, 3.0), iv(0.0, 1.0)),
            Err(Error::DegenerateObject { .. })
        ));
        assert!(prescribe_slice(&bx(5.0, 5.0, 0.0, 10.0), &bx(0.0, 1.0, 0.0, 1.0), PhaseAxis::Rows).is_err());
    }

    #[test]
    fn alias_free_interval_examples() {
        assert_eq!(alias_free_interval(iv(0.0, 100.0), 100.0), iv(0.0, 100.0));
        let af = alias_free_interval(iv(0.0, 100.0), 90.0);
        assert_eq!(af, iv(10.0, 90.0));
        assert_eq!(af.width(), 100.0 - 2.0 * 10.0);
        assert!(alias_free_interval(iv(0.0, 100.0), 40.0).is_empty());
    }

    #[test]
    fn prescribe_slice_examples() {
        let mask = bx(0.0, 100.0, 0.0, 100.0);
        let roi = bx(10.0, 80.0, 20.0, 70.0);
        assert_eq!(prescribe_slice(&mask, &roi, PhaseAxis::Rows).unwrap(), bx(5.0, 95.0, 20.0, 70.0));
        assert_eq!(prescribe_slice(&mask, &roi, PhaseAxis::Columns).unwrap(), bx(10.0, 80.0, 10.0, 90.0));
        assert_eq!(prescribe_slice(&mask, &mask, PhaseAxis::Rows).unwrap(), mask);
    }

    fn stack_from(masks: &[Option<(usize, usize, usize, usize)>], size: usize) -> LocalizerStack {
        let slices = masks
            .iter()
            .map(|m| {
                let mut img = vec![0.0f32; size * size];
                if let Some((t, b, l, r)) = *m {
                    for i in t..b {
                        for j in l..r {
                            img[i * size + j] = 1.0;
                        }
                    }
                }
                img
            })
            .collect();
        LocalizerStack::new(size, size, PhaseAxis::Rows, slices).unwrap()
    }

    #[test]
    fn prescribe_stack_examples() {
        let roi = bx(10.0, 80.0, 20.0, 70.0);
        let one = stack_from(&[Some((0, 100, 0, 100))], 100);
        let rep = prescribe_stack(&one, &roi, &ThresholdPolicy::default()).unwrap();
        assert_eq!(rep.fov, bx(5.0, 95.0, 20.0, 70.0));
        assert!(rep.all_verdicts_pass());

        // per-slice FOVs (15,105) and (10,100) on the phase axis, union (10,105)
        let roi = bx(20.0, 90.0, 20.0, 70.0);
        let two = stack_from(&[Some((10, 110, 0, 100)), Some((0, 110, 0, 100)), None], 120);
        let rep = prescribe_stack(&two, &roi, &ThresholdPolicy::default()).unwrap();
        assert_eq!(rep.slices[0].fov, Some(bx(15.0, 105.0, 20.0, 70.0)));
        assert_eq!(rep.slices[1].fov, Some(bx(10.0, 100.0, 20.0, 70.0)));
        assert_eq!(rep.fov, bx(10.0, 105.0, 20.0, 70.0));
        assert_eq!(rep.skipped(), 1);
        assert_eq!(rep.slices[2].status, "empty_object_mask");
        assert!(rep.slices.iter().filter_map(|s| s.union_verdicts).all(|v| v.contains_roi && v.roi_alias_free));

        let empty = stack_from(&[None, None], 20);
        assert!(matches!(
            prescribe_stack(&empty, &roi, &ThresholdPolicy::default()),
            Err(Error::NoObjectFound)
        ));
    }

    fn config() -> impl Strategy<Value = (i64, i64, i64, i64)> {
        (-50i64..50, 1i64..200).prop_flat_map(|(o0, y)| {
            (Just(o0), Just(y), 0..y, 0..y).prop_map(|(o0, y, p, q)| (o0, y, p.min(q), p.max(q) + 1))
        })
    }

    proptest! {
        #[test]
        fn contains_roi_and_width_formula(o0 in -50.0f64..50.0, y in 0.5f64..100.0, r0 in -80.0f64..80.0, rw in 0.0f64..150.0) {
            let inp = FovInputs1D::new(iv(o0, o0 + y), iv(r0, r0 + rw)).unwrap();
            let fov = smallest_fov_1d(&inp).unwrap();
            prop_assert!(fov.lo <= inp.roi.lo + 1e-9 && inp.roi.hi <= fov.hi + 1e-9);
            let base = y - inp.min_margin();
            prop_assert!(((fov.width() - base) - (rw - base).max(0.0)).abs() < 1e-9);
        }

        #[test]
        fn translation_and_mirror((o0, y, r0, r1) in config(), d in -100i64..100) {
            let (o0, o1, r0, r1, d) = (o0 as f64, (o0 + y) as f64, (o0 + r0) as f64, (o0 + r1) as f64, d as f64);
            let fov = solve((o0, o1), (r0, r1));
            let moved = solve((o0 + d, o1 + d), (r0 + d, r1 + d));
            prop_assert_eq!(moved, fov.shift(d));
            let mirrored = solve((-o1, -o0), (-r1, -r0));
            prop_assert_eq!(mirrored, iv(-fov.hi, -fov.lo));
        }

        #[test]
        fn oracle_agrees_on_integer_configs((o0, y, r0, r1) in config()) {
            let object = bx(o0 as f64, (o0 + y) as f64, 0.0, 10.0);
            let roi = bx((o0 + r0) as f64, (o0 + r1) as f64, 2.0, 8.0);
            let fov = prescribe_slice(&object, &roi, PhaseAxis::Rows).unwrap();
            let v = verify_prescription(&object, &roi, &fov, PhaseAxis::Rows).unwrap();
            prop_assert!(v.all(), "{:?} {:?} {:?} {:?}", object, roi, fov, v);
        }
    }
}
