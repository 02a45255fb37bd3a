//! Slice overlays as binary PPM.

use std::str::FromStr;

use scanscribe::data::pnm::Image;
use scanscribe::BBox;

use crate::CliError;

pub const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [255, 0, 0]),
    ("green", [0, 255, 0]),
    ("blue", [0, 0, 255]),
    ("yellow", [255, 255, 0]),
    ("cyan", [0, 255, 255]),
    ("magenta", [255, 0, 255]),
    ("white", [255, 255, 255]),
    ("black", [0, 0, 0]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSpec {
    pub name: String,
    pub color: [u8; 3],
    pub bbox: BBox,
}

impl FromStr for BoxSpec {
    type Err = CliError;

    /// `name=color:t,b,l,r`
    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("box {s:?} is not name=color:t,b,l,r"));
        let (name, rest) = s.split_once('=').ok_or_else(bad)?;
        let (color, coords) = rest.split_once(':').ok_or_else(bad)?;
        let color = COLORS
            .iter()
            .find(|(n, _)| *n == color)
            .map(|(_, c)| *c)
            .ok_or_else(|| CliError::Usage(format!("unknown color {color:?}")))?;
        let bbox = coords
            .parse::<BBox>()
            .map_err(|e| CliError::Usage(format!("box {name}: {e}")))?;
        Ok(Self {
            name: name.to_string(),
            color,
            bbox,
        })
    }
}

/// Grey slice replicated to RGB with each box outlined one pixel wide.
///
/// Outline rows are `floor(top)` and `ceil(bottom) - 1`, columns likewise.
pub fn render(slice: &[f32], height: usize, width: usize, boxes: &[BoxSpec]) -> Image {
    let mut rgb: Vec<u8> = slice
        .iter()
        .flat_map(|&v| {
            let g = v.round().clamp(0.0, 255.0) as u8;
            [g, g, g]
        })
        .collect();
    for b in boxes {
        let bb = b.bbox.clamp_to(height as f64, width as f64);
        if bb.height() <= 0.0 || bb.width() <= 0.0 {
            continue;
        }
        let r0 = bb.top.floor() as usize;
        let r1 = (bb.bottom.ceil() as usize).saturating_sub(1).min(height - 1);
        let c0 = bb.left.floor() as usize;
        let c1 = (bb.right.ceil() as usize).saturating_sub(1).min(width - 1);
        let mut put = |r: usize, c: usize| rgb[(r * width + c) * 3..(r * width + c) * 3 + 3].copy_from_slice(&b.color);
        for c in c0..=c1 {
            put(r0, c);
            put(r1, c);
        }
        for r in r0..=r1 {
            put(r, c0);
            put(r, c1);
        }
    }
    Image::rgb(width, height, rgb).expect("sized")
}
