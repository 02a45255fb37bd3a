//! Synthetic localizer stacks: a noisy body ellipse with ellipsoidal organs
//! whose cross-sections grow and shrink from slice to slice.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, LocalizerStack, PhaseAxis};
use crate::masking::{extract_object_mask, ThresholdPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub min_slices: usize,
    pub max_slices: usize,
    /// Body semi-axis range as fractions of the image size.
    pub body_axes: (f64, f64),
    /// Maximum body-centre offset from the image centre, as a fraction of size.
    pub body_jitter: f64,
    /// Total organ count range (inclusive); the first one or two are designated.
    pub organ_count: (usize, usize),
    /// Organ semi-axis range as fractions of the image size.
    pub organ_axes: (f64, f64),
    /// Pixels added around the designated organs' extent.
    pub roi_margin: f64,
    /// Half-width of the uniform intensity noise inside the body.
    pub noise: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(size: usize, max_slices: usize, seed: u64) -> Self {
        Self {
            size,
            min_slices: 2.min(max_slices),
            max_slices,
            body_axes: (0.30, 0.44),
            body_jitter: 0.06,
            organ_count: (2, 4),
            organ_axes: (0.10, 0.18),
            roi_margin: 2.0,
            noise: 12.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasiblePhantom(m));
        if self.size < 8 {
            return bad(format!("image size {} below 8", self.size));
        }
        if self.min_slices == 0 || self.min_slices > self.max_slices {
            return bad(format!("slice range {}..={}", self.min_slices, self.max_slices));
        }
        if self.organ_count.0 < 1 || self.organ_count.0 > self.organ_count.1 {
            return bad(format!("organ count range {:?}", self.organ_count));
        }
        let (b0, b1) = self.body_axes;
        if !(0.0 < b0 && b0 <= b1) || b1 + self.body_jitter > 0.5 {
            return bad("body ellipse does not fit the image".into());
        }
        let (o0, o1) = self.organ_axes;
        if !(0.0 < o0 && o0 <= o1) {
            return bad(format!("organ axes {:?}", self.organ_axes));
        }
        // organs must fit inside the smallest body cross-section
        if o1 >= b0 * BODY_MIN_SCALE * 0.9 {
            return bad("organ larger than body".into());
        }
        if !(self.noise >= 0.0 && self.noise < 60.0) || self.roi_margin < 0.0 {
            return bad("noise or margin out of range".into());
        }
        Ok(())
    }
}

/// Cross-section scale of the body at the stack ends.
const BODY_MIN_SCALE: f64 = 0.85;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    fn scaled(&self, s: f64) -> Ellipse {
        Ellipse {
            ry: self.ry * s,
            rx: self.rx * s,
            ..*self
        }
    }

    /// Whether `inner` lies inside `self`, checked on boundary samples.
    fn encloses(&self, inner: &Ellipse) -> bool {
        (0..64).all(|k| {
            let t = k as f64 * std::f64::consts::TAU / 64.0;
            self.contains(inner.cy + inner.ry * t.sin(), inner.cx + inner.rx * t.cos())
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Organ {
    shape: Ellipse,
    z: f64,
    depth: f64,
    intensity: f64,
}

impl Organ {
    fn section(&self, z: f64) -> Option<Ellipse> {
        let u = (z - self.z) / self.depth;
        (u.abs() < 1.0).then(|| self.shape.scaled((1.0 - u * u).sqrt()))
    }
}

/// A generated stack with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub stack: LocalizerStack,
    pub label: BBox,
}

/// Deterministic in `(spec, index)`.
pub fn generate_phantom(spec: &PhantomSpec, index: u64) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let size = spec.size as f64;
    let n = rng.gen_range(spec.min_slices..=spec.max_slices);
    let axis = if rng.gen_bool(0.5) { PhaseAxis::Rows } else { PhaseAxis::Columns };

    let j = spec.body_jitter * size;
    let body = Ellipse {
        cy: size / 2.0 + rng.gen_range(-j..=j),
        cx: size / 2.0 + rng.gen_range(-j..=j),
        ry: rng.gen_range(spec.body_axes.0..=spec.body_axes.1) * size,
        rx: rng.gen_range(spec.body_axes.0..=spec.body_axes.1) * size,
    };
    let inner = body.scaled(BODY_MIN_SCALE * 0.9);
    let body_level = rng.gen_range(80.0..110.0);

    let count = rng.gen_range(spec.organ_count.0..=spec.organ_count.1);
    let designated = if count >= 3 { 2 } else { 1 };
    let mut organs = Vec::with_capacity(count);
    for k in 0..count {
        let mut placed = None;
        for _ in 0..200 {
            let shape = Ellipse {
                cy: rng.gen_range(body.cy - body.ry..body.cy + body.ry),
                cx: rng.gen_range(body.cx - body.rx..body.cx + body.rx),
                ry: rng.gen_range(spec.organ_axes.0..=spec.organ_axes.1) * size,
                rx: rng.gen_range(spec.organ_axes.0..=spec.organ_axes.1) * size,
            };
            if inner.encloses(&shape) {
                placed = Some(shape);
                break;
            }
        }
        let shape = placed.ok_or_else(|| Error::InfeasiblePhantom(format!("could not place organ {k}")))?;
        let intensity = if k < designated {
            rng.gen_range(205.0..230.0)
        } else {
            rng.gen_range(135.0..165.0)
        };
        organs.push(Organ {
            shape,
            z: rng.gen_range(-0.5..0.5),
            depth: rng.gen_range(0.6..1.2),
            intensity,
        });
    }

    let (h, w) = (spec.size, spec.size);
    let mut slices = Vec::with_capacity(n);
    let mut extent: Option<(usize, usize, usize, usize)> = None;
    for s in 0..n {
        let z = -1.0 + 2.0 * (s as f64 + 0.5) / n as f64;
        let section = body.scaled((1.0 - (1.0 - BODY_MIN_SCALE * BODY_MIN_SCALE) * z * z).sqrt());
        let sections: Vec<(Option<Ellipse>, f64)> = organs.iter().map(|o| (o.section(z), o.intensity)).collect();
        let mut px = vec![0.0f32; h * w];
        for r in 0..h {
            for c in 0..w {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                if !section.contains(y, x) {
                    continue;
                }
                let mut v = body_level;
                for (k, (sec, level)) in sections.iter().enumerate() {
                    if let Some(e) = sec {
                        if e.contains(y, x) {
                            v = *level;
                            if k < designated {
                                let (t, b, l, rr) = extent.unwrap_or((r, r, c, c));
                                extent = Some((t.min(r), b.max(r), l.min(c), rr.max(c)));
                            }
                        }
                    }
                }
                v += rng.gen_range(-spec.noise..=spec.noise);
                px[r * w + c] = v.round().clamp(1.0, 255.0) as f32;
            }
        }
        slices.push(px);
    }
    let stack = LocalizerStack::new(h, w, axis, slices)?;
    let (t, b, l, r) = extent.ok_or_else(|| Error::InfeasiblePhantom("designated organs never visible".into()))?;
    let m = spec.roi_margin;
    let raw = BBox::new(t as f64 - m, b as f64 + 1.0 + m, l as f64 - m, r as f64 + 1.0 + m)?.clamp_to(size, size);
    let policy = ThresholdPolicy::default();
    let mut label = raw;
    for k in 0..stack.len() {
        let mask = extract_object_mask(stack.slice(k), h, w, &policy)?;
        label = BBox::new(
            label.top.max(mask.top),
            label.bottom.min(mask.bottom),
            label.left.max(mask.left),
            label.right.min(mask.right),
        )
        .map_err(|_| Error::InfeasiblePhantom("label outside an object mask".into()))?;
    }
    if label.area() <= 0.0 {
        return Err(Error::InfeasiblePhantom("empty label".into()));
    }
    Ok(Phantom { stack, label })
}
