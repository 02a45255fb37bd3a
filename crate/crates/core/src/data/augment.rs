//! Horizontal flips and cyclic shifts with matching label updates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{BBox, LocalizerStack};

/// Mirrors every slice left-right; `left' = W - right`, `right' = W - left`.
pub fn flip_horizontal(stack: &LocalizerStack, label: &BBox) -> Result<(LocalizerStack, BBox)> {
    let w = stack.width();
    let slices = stack
        .slices()
        .iter()
        .map(|s| s.chunks_exact(w).flat_map(|row| row.iter().rev().copied()).collect())
        .collect();
    Ok((stack.with_slices(slices)?, label.flip_horizontal(w as f64)))
}

/// Outcome of a cyclic shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub stack: LocalizerStack,
    pub label: BBox,
    /// Set when the shifted label would leave the image; the input is returned unchanged.
    pub rejected: bool,
}

/// Rotates pixels by `dx` columns and `dy` rows (positive = right/down).
pub fn cyclic_shift(stack: &LocalizerStack, label: &BBox, dx: i64, dy: i64) -> Result<Shifted> {
    let (h, w) = (stack.height(), stack.width());
    let moved = label.translate(dy as f64, dx as f64);
    if !moved.within(h as f64, w as f64) {
        return Ok(Shifted {
            stack: stack.clone(),
            label: *label,
            rejected: true,
        });
    }
    let slices = stack
        .slices()
        .iter()
        .map(|s| {
            let mut out = vec![0.0; h * w];
            for r in 0..h {
                let nr = (r as i64 + dy).rem_euclid(h as i64) as usize;
                for c in 0..w {
                    let nc = (c as i64 + dx).rem_euclid(w as i64) as usize;
                    out[nr * w + nc] = s[r * w + c];
                }
            }
            out
        })
        .collect();
    Ok(Shifted {
        stack: stack.with_slices(slices)?,
        label: moved,
        rejected: false,
    })
}

/// Candidate shift amounts along each axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSets {
    pub x: Vec<i64>,
    pub y: Vec<i64>,
}

impl ShiftSets {
    /// Sets for 512-pixel images.
    pub fn reference() -> Self {
        Self {
            x: vec![-10, -5, 0, 5, 10],
            y: vec![-20, -10, 0, 10, 20],
        }
    }

    /// The reference sets scaled by `size / 512`, rounded half away from zero.
    pub fn scaled(size: usize) -> Self {
        let r = Self::reference();
        let f = size as f64 / 512.0;
        let s = |v: &[i64]| v.iter().map(|&d| (d as f64 * f).round() as i64).collect();
        Self { x: s(&r.x), y: s(&r.y) }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (i64, i64) {
        (
            *self.x.choose(rng).unwrap_or(&0),
            *self.y.choose(rng).unwrap_or(&0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou, PhaseAxis};
    use proptest::prelude::*;

    fn stack(h: usize, w: usize, n: usize) -> LocalizerStack {
        let slices = (0..n)
            .map(|k| (0..h * w).map(|i| ((i * 7 + k * 13) % 256) as f32).collect())
            .collect();
        LocalizerStack::new(h, w, PhaseAxis::Rows, slices).unwrap()
    }

    fn bx(t: f64, b: f64, l: f64, r: f64) -> BBox {
        BBox::new(t, b, l, r).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let s = stack(6, 5, 3);
        let label = bx(1.0, 4.0, 1.0, 3.0);
        let (fs, fl) = flip_horizontal(&s, &label).unwrap();
        assert_eq!(fl, bx(1.0, 4.0, 2.0, 4.0));
        assert_eq!(fs.slice(0)[0], s.slice(0)[4]);
        let (bs, bl) = flip_horizontal(&fs, &fl).unwrap();
        assert_eq!((bs, bl), (s, label));
    }

    #[test]
    fn shift_examples() {
        let s = stack(30, 30, 2);
        let label = bx(10.0, 20.0, 10.0, 20.0);
        let id = cyclic_shift(&s, &label, 0, 0).unwrap();
        assert_eq!((&id.stack, id.label, id.rejected), (&s, label, false));

        let fwd = cyclic_shift(&s, &label, 5, 10).unwrap();
        assert_eq!(fwd.label, bx(20.0, 30.0, 15.0, 25.0));
        assert_eq!(fwd.stack.slice(1)[10 * 30 + 5], s.slice(1)[0]);
        let back = cyclic_shift(&fwd.stack, &fwd.label, -5, -10).unwrap();
        assert_eq!((back.stack, back.label), (s.clone(), label));

        let out = cyclic_shift(&s, &label, 0, 11).unwrap();
        assert!(out.rejected);
        assert_eq!((out.stack, out.label), (s, label));
    }

    #[test]
    fn scaled_sets() {
        let s = ShiftSets::scaled(64);
        assert_eq!(s.x, vec![-1, -1, 0, 1, 1]);
        assert_eq!(s.y, vec![-3, -1, 0, 1, 3]);
        assert_eq!(ShiftSets::scaled(512), ShiftSets::reference());
    }

    proptest! {
        #[test]
        fn flip_preserves_iou(a in (0u8..30, 1u8..30, 0u8..30, 1u8..30), b in (0u8..30, 1u8..30, 0u8..30, 1u8..30)) {
            let mk = |(t, h, l, w): (u8, u8, u8, u8)| bx(t as f64, (t + h) as f64, l as f64, (l + w) as f64);
            let (a, b) = (mk(a), mk(b));
            let fa = a.flip_horizontal(64.0);
            let fb = b.flip_horizontal(64.0);
            prop_assert!((iou(&fa, &fb) - iou(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn shifted_labels_stay_in_bounds(dx in -5i64..=5, dy in -5i64..=5, t in 0u8..10, l in 0u8..10) {
            let s = stack(12, 12, 1);
            let label = bx(t as f64, t as f64 + 2.0, l as f64, l as f64 + 2.0);
            let out = cyclic_shift(&s, &label, dx, dy).unwrap();
            prop_assert!(out.label.within(12.0, 12.0));
            prop_assert_eq!(out.stack.len(), 1);
            if !out.rejected {
                prop_assert_eq!(out.label.top - label.top, dy as f64);
                prop_assert_eq!(out.label.left - label.left, dx as f64);
            }
        }
    }
}
