//! Numerical check that a normal operator `H*H` acts as a convolution.
//!
//! Two measurements are taken. Shift invariance: impulse responses at several
//! probe pixels, recentred by integer shifts, are compared against the
//! response at the image centre. Spectrum: the radially averaged magnitude of
//! the central response's 2-D DFT is fitted by a line in log-log coordinates
//! over a band of frequencies; for the parallel-beam Radon transform the
//! continuous theory predicts a `1/|w|` spectrum, i.e. slope -1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::geometry::Geometry;
use super::radon::{IdentityOperator, LinearOperator, Radon};
use crate::error::{Error, Result};
use crate::math;
use crate::numerics::{fft2, next_power_of_two, Complex};

/// A self-adjoint operator on `side x side` images.
pub trait NormalOperator {
    fn side(&self) -> usize;
    fn apply_normal(&self, image: &[f64], out: &mut [f64]);
}

/// `H*H` for the Joseph projector.
#[derive(Debug, Clone)]
pub struct RadonNormal {
    radon: Radon,
    scratch_len: usize,
}

impl RadonNormal {
    pub fn new(geometry: Geometry) -> Self {
        let radon = Radon::new(geometry);
        let scratch_len = radon.range_len();
        RadonNormal { radon, scratch_len }
    }
}

impl NormalOperator for RadonNormal {
    fn side(&self) -> usize {
        self.radon.geometry().image_side()
    }
    fn apply_normal(&self, image: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.scratch_len];
        self.radon.apply(image, &mut tmp);
        self.radon.apply_adjoint(&tmp, out);
    }
}

impl NormalOperator for IdentityOperator {
    fn side(&self) -> usize {
        let s = math::sqrt(self.len as f64) as usize;
        debug_assert_eq!(s * s, self.len);
        s
    }
    fn apply_normal(&self, image: &[f64], out: &mut [f64]) {
        out.copy_from_slice(image);
    }
}

/// `A^T A` for any linear operator on `side x side` images.
pub struct NormalOf<'a, A: ?Sized> {
    op: &'a A,
    side: usize,
}

impl<'a, A: LinearOperator + ?Sized> NormalOf<'a, A> {
    pub fn new(op: &'a A, side: usize) -> Result<Self> {
        if op.domain_len() != side * side {
            return Err(crate::error::mismatch(side * side, op.domain_len()));
        }
        Ok(NormalOf { op, side })
    }
}

impl<A: LinearOperator + ?Sized> NormalOperator for NormalOf<'_, A> {
    fn side(&self) -> usize {
        self.side
    }
    fn apply_normal(&self, image: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.op.range_len()];
        self.op.apply(image, &mut tmp);
        self.op.apply_adjoint(&tmp, out);
    }
}

/// Response of `op` to a unit impulse at `(row, col)`.
pub fn impulse_response<N: NormalOperator + ?Sized>(op: &N, row: usize, col: usize) -> Vec<f64> {
    let side = op.side();
    let mut delta = vec![0.0; side * side];
    delta[row * side + col] = 1.0;
    let mut out = vec![0.0; side * side];
    op.apply_normal(&delta, &mut out);
    out
}

/// Response to an impulse at the centre pixel `(side / 2, side / 2)`, the
/// reference used by [`certify_normal_convolution`].
pub fn central_impulse_response<N: NormalOperator + ?Sized>(op: &N) -> Vec<f64> {
    let c = op.side() / 2;
    impulse_response(op, c, c)
}

/// Frequency band in cycles per pixel used for the slope fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for SpectralBand {
    fn default() -> Self {
        SpectralBand { lo: 0.025, hi: 0.125 }
    }
}

#[derive(Debug, Clone)]
pub struct CertReport {
    /// Max over probes of `||r_p - r_c|| / ||r_c||` on a window of half-width
    /// `side / 4`, where `r_c` is the response at the centre pixel.
    pub shift_invariance: f64,
    pub per_probe: Vec<f64>,
    /// `(frequency in cycles/pixel, mean |DFT|)` per radial bin.
    pub spectrum: Vec<(f64, f64)>,
    /// Least-squares slope of `ln |DFT|` against `ln f` inside `band`.
    pub spectral_slope: f64,
    pub band: SpectralBand,
}

/// Probe `op` with unit impulses at `probes` (row, col) and summarise.
///
/// Probes must lie in the central half of the image (within `side / 4` of the
/// centre pixel on both axes), otherwise the windows would cross the image
/// edge and truncation would masquerade as shift variance.
pub fn certify_normal_convolution<N: NormalOperator + ?Sized>(
    op: &N,
    probes: &[(usize, usize)],
    band: SpectralBand,
) -> Result<CertReport> {
    let side = op.side();
    let centre = side / 2;
    let half = side / 4;
    if half == 0 {
        return Err(Error::InvalidArgument(format!("image side {side} too small to certify")));
    }
    for &(r, c) in probes {
        if r.abs_diff(centre) > half || c.abs_diff(centre) > half {
            return Err(Error::InvalidArgument(format!(
                "probe ({r}, {c}) outside the central region of a {side}x{side} image"
            )));
        }
    }
    if !(band.lo > 0.0 && band.hi > band.lo) {
        return Err(Error::InvalidArgument(format!("bad spectral band {band:?}")));
    }

    let window = |resp: &[f64], r: usize, c: usize| -> Vec<f64> {
        let mut w = Vec::with_capacity(4 * half * half);
        for dr in 0..2 * half {
            let row = r + dr - half;
            w.extend_from_slice(&resp[row * side + c - half..row * side + c + half]);
        }
        w
    };

    let central = central_impulse_response(op);
    let reference = window(&central, centre, centre);
    let ref_norm = math::norm2(&reference);
    let per_probe: Vec<f64> = probes
        .iter()
        .map(|&(r, c)| {
            let w = window(&impulse_response(op, r, c), r, c);
            let diff: Vec<f64> = w.iter().zip(&reference).map(|(a, b)| a - b).collect();
            if ref_norm > 0.0 {
                math::norm2(&diff) / ref_norm
            } else {
                math::norm2(&diff)
            }
        })
        .collect();
    let shift_invariance = per_probe.iter().copied().fold(0.0, f64::max);

    let spectrum = radial_spectrum(&central, side)?;
    let spectral_slope = loglog_slope(&spectrum, band)?;
    Ok(CertReport { shift_invariance, per_probe, spectrum, spectral_slope, band })
}

/// Radially averaged DFT magnitude of a `side x side` image, zero-padded to
/// a power of two. Bin `k` collects frequencies with `round(|f| * P) == k`.
pub fn radial_spectrum(image: &[f64], side: usize) -> Result<Vec<(f64, f64)>> {
    let p = next_power_of_two(side);
    let mut buf = vec![Complex::new(0.0, 0.0); p * p];
    for r in 0..side {
        for c in 0..side {
            buf[r * p + c] = Complex::new(image[r * side + c], 0.0);
        }
    }
    fft2(&mut buf, p, p, false)?;
    let nbins = p / 2 + 1;
    let mut sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for r in 0..p {
        let fr = if r <= p / 2 { r as f64 } else { r as f64 - p as f64 };
        for c in 0..p {
            let fc = if c <= p / 2 { c as f64 } else { c as f64 - p as f64 };
            let k = math::round(math::sqrt(fr * fr + fc * fc)) as usize;
            if k < nbins {
                sum[k] += buf[r * p + c].norm();
                count[k] += 1;
            }
        }
    }
    Ok((0..nbins).filter(|&k| count[k] > 0).map(|k| (k as f64 / p as f64, sum[k] / count[k] as f64)).collect())
}

fn loglog_slope(spectrum: &[(f64, f64)], band: SpectralBand) -> Result<f64> {
    let pts: Vec<(f64, f64)> = spectrum
        .iter()
        .filter(|(f, m)| *f >= band.lo && *f <= band.hi && *m > 0.0)
        .map(|&(f, m)| (math::ln(f), math::ln(m)))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!("spectral band {band:?} holds fewer than two frequency bins")));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}
