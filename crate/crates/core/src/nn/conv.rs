//! Strided cross-correlation over up to three spatial dimensions via im2col.
//!
//! Tensors are laid out `[N, C, D, H, W]`; 2D convolutions use `D = 1` and a
//! kernel depth of one.

use serde::{Deserialize, Serialize};

use super::tensor::Element;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, zero padding split with the extra pixel after.
    Same,
    /// No padding; output extent `(in - k) / stride + 1`.
    Valid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        in_dims: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: Padding,
    ) -> Result<Self> {
        let mut pad = [0; 3];
        let mut out_dims = [0; 3];
        for ax in 0..3 {
            let (n, k, s) = (in_dims[ax], kernel[ax], stride[ax]);
            if s == 0 || k == 0 || n == 0 {
                return Err(Error::ShapeMismatch {
                    op: "conv",
                    expected: kernel.to_vec(),
                    got: in_dims.to_vec(),
                });
            }
            match padding {
                Padding::Same => {
                    let out = n.div_ceil(s);
                    let total = ((out - 1) * s + k).saturating_sub(n);
                    pad[ax] = total / 2;
                    out_dims[ax] = out;
                }
                Padding::Valid => {
                    if n < k {
                        return Err(Error::ShapeMismatch {
                            op: "conv",
                            expected: kernel.to_vec(),
                            got: in_dims.to_vec(),
                        });
                    }
                    out_dims[ax] = (n - k) / s + 1;
                }
            }
        }
        Ok(Self {
            in_channels,
            out_channels,
            in_dims,
            kernel,
            stride,
            pad,
            out_dims,
        })
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the column matrix: `C_in * kd * kh * kw`.
    pub fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_len()
    }

    pub fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }
}

/// Maps output index `o` with kernel offset `k` to an input index, if in range.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < n).then_some(i as usize)
}

/// Expands one sample `[C, D, H, W]` into `[C * K, P]` columns.
pub(crate) fn im2col<T: Element>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let [id, ih, iw] = g.in_dims;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.out_dims;
    let p = g.out_len();
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for oz in 0..od {
                        let iz = source(oz, kz, sd, pd, id);
                        for oy in 0..oh {
                            let iy = source(oy, ky, sh, ph, ih);
                            let out = &mut dst[idx..idx + ow];
                            match (iz, iy) {
                                (Some(iz), Some(iy)) => {
                                    let src = &xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                    for (ox, o) in out.iter_mut().enumerate() {
                                        *o = match source(ox, kx, sw, pw, iw) {
                                            Some(ix) => src[ix],
                                            None => T::zero(),
                                        };
                                    }
                                }
                                _ => out.fill(T::zero()),
                            }
                            idx += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds `[C * K, P]` columns back into one sample's input gradient.
pub(crate) fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let [id, ih, iw] = g.in_dims;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.out_dims;
    let p = g.out_len();
    let mut row = 0;
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for oz in 0..od {
                        let iz = source(oz, kz, sd, pd, id);
                        for oy in 0..oh {
                            if let (Some(iz), Some(iy)) = (iz, source(oy, ky, sh, ph, ih)) {
                                let dst = &mut dxc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                                for (ox, &v) in src[idx..idx + ow].iter().enumerate() {
                                    if let Some(ix) = source(ox, kx, sw, pw, iw) {
                                        dst[ix] += v;
                                    }
                                }
                            }
                            idx += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
