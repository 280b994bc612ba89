use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::projector::Image;

const R2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Detail orientation of a Haar subband.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Coarse approximation left after the last level.
    Approximation,
    /// Differences between neighbouring columns.
    Horizontal,
    /// Differences between neighbouring rows.
    Vertical,
    Diagonal,
}

/// One channel of a [`CoeffStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    /// 1 is the finest level.
    pub level: usize,
    pub orientation: Orientation,
    pub side: usize,
    pub values: Vec<f64>,
}

/// Orthonormal Haar coefficients of a square image, stored in the usual
/// in-place (Mallat) layout: the approximation in the top-left
/// `side >> levels` block, level-`k` details in the three blocks of side
/// `side >> k` around it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffStack {
    side: usize,
    levels: usize,
    data: Vec<f64>,
}

impl CoeffStack {
    /// Wraps coefficients already in the in-place layout.
    pub fn from_flat(side: usize, levels: usize, data: Vec<f64>) -> Result<Self> {
        check_levels(side, levels)?;
        if data.len() != side * side {
            return Err(crate::error::mismatch(side * side, data.len()));
        }
        Ok(CoeffStack { side, levels, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Total coefficient count; equals the pixel count (redundancy 1).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::math::norm2(&self.data)
    }

    /// Channels from finest to coarsest, approximation last.
    pub fn subbands(&self) -> Vec<Subband> {
        let mut out = Vec::with_capacity(3 * self.levels + 1);
        for level in 1..=self.levels {
            let h = self.side >> level;
            for (orientation, r0, c0) in
                [(Orientation::Horizontal, 0, h), (Orientation::Vertical, h, 0), (Orientation::Diagonal, h, h)]
            {
                out.push(Subband { level, orientation, side: h, values: self.block(r0, c0, h) });
            }
        }
        let h = self.side >> self.levels;
        out.push(Subband {
            level: self.levels,
            orientation: Orientation::Approximation,
            side: h,
            values: self.block(0, 0, h),
        });
        out
    }

    /// Subbands as a `[channels, side, side]` tensor for one level.
    pub fn level_tensor(&self, level: usize) -> Result<Tensor> {
        if level == 0 || level > self.levels {
            return Err(Error::InvalidArgument(format!("level {level} of {}", self.levels)));
        }
        let h = self.side >> level;
        let mut data = Vec::with_capacity(3 * h * h);
        data.extend(self.block(0, h, h));
        data.extend(self.block(h, 0, h));
        data.extend(self.block(h, h, h));
        Tensor::from_vec(&[3, h, h], data)
    }

    fn block(&self, r0: usize, c0: usize, h: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(h * h);
        for r in 0..h {
            let start = (r0 + r) * self.side + c0;
            v.extend_from_slice(&self.data[start..start + h]);
        }
        v
    }
}

fn check_levels(side: usize, levels: usize) -> Result<()> {
    if side == 0 || levels >= usize::BITS as usize || !side.is_multiple_of(1usize << levels) {
        return Err(Error::InvalidArgument(format!("image side {side} is not divisible by 2^{levels}")));
    }
    Ok(())
}

/// Orthonormal Haar analysis over `levels` dyadic scales.
pub fn wavelet_analysis(image: &Image, levels: usize) -> Result<CoeffStack> {
    let side = image.side();
    check_levels(side, levels)?;
    let mut data = image.values().to_vec();
    analysis_in_place(&mut data, side, levels);
    Ok(CoeffStack { side, levels, data })
}

/// Inverse of [`wavelet_analysis`], returned on a grid with the given pixel
/// spacing.
pub fn wavelet_synthesis(coeffs: &CoeffStack, pixel_spacing: f64) -> Image {
    let mut data = coeffs.data.clone();
    synthesis_in_place(&mut data, coeffs.side, coeffs.levels);
    let mut im = Image::zeros(coeffs.side, pixel_spacing);
    im.values_mut().copy_from_slice(&data);
    im
}

/// In-place analysis of a flat row-major `side x side` buffer.
pub fn analysis_in_place(data: &mut [f64], side: usize, levels: usize) {
    let mut tmp = vec![0.0; side];
    let mut n = side;
    for _ in 0..levels {
        let h = n / 2;
        for r in 0..n {
            let row = &mut data[r * side..r * side + n];
            for i in 0..h {
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                tmp[i] = (a + b) * R2;
                tmp[h + i] = (a - b) * R2;
            }
            row.copy_from_slice(&tmp[..n]);
        }
        for c in 0..n {
            for i in 0..h {
                let (a, b) = (data[2 * i * side + c], data[(2 * i + 1) * side + c]);
                tmp[i] = (a + b) * R2;
                tmp[h + i] = (a - b) * R2;
            }
            for (i, &t) in tmp[..n].iter().enumerate() {
                data[i * side + c] = t;
            }
        }
        n = h;
    }
}

/// In-place synthesis; exact inverse (and adjoint) of [`analysis_in_place`].
pub fn synthesis_in_place(data: &mut [f64], side: usize, levels: usize) {
    let mut tmp = vec![0.0; side];
    for level in (0..levels).rev() {
        let n = side >> level;
        let h = n / 2;
        for c in 0..n {
            for i in 0..h {
                let (s, d) = (data[i * side + c], data[(h + i) * side + c]);
                tmp[2 * i] = (s + d) * R2;
                tmp[2 * i + 1] = (s - d) * R2;
            }
            for (i, &t) in tmp[..n].iter().enumerate() {
                data[i * side + c] = t;
            }
        }
        for r in 0..n {
            let row = &mut data[r * side..r * side + n];
            for i in 0..h {
                let (s, d) = (row[i], row[h + i]);
                tmp[2 * i] = (s + d) * R2;
                tmp[2 * i + 1] = (s - d) * R2;
            }
            row.copy_from_slice(&tmp[..n]);
        }
    }
}
