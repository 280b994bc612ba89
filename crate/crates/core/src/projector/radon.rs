use alloc::vec::Vec;

use super::geometry::{Geometry, Image, Sinogram};
use crate::error::{mismatch, Result};
use crate::math;

/// A real matrix given by its action and the action of its transpose.
///
/// Vectors are flat slices; images are row-major.
pub trait LinearOperator {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    /// `out = A x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator {
    pub len: usize,
}

impl LinearOperator for IdentityOperator {
    fn domain_len(&self) -> usize {
        self.len
    }
    fn range_len(&self) -> usize {
        self.len
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// Joseph (ray-driven, linearly interpolating) parallel-beam projector.
///
/// Each ray is walked along the image axis it is most aligned with. At every
/// column (or row) crossing the ray position is linearly interpolated between
/// the two neighbouring pixel centres, and the sample is weighted by the
/// physical step length `pixel_spacing / max(|sin|, |cos|)`. The adjoint
/// scatters with exactly the same weights.
#[derive(Debug, Clone)]
pub struct Radon {
    geometry: Geometry,
    trig: Vec<(f64, f64)>,
}

impl Radon {
    pub fn new(geometry: Geometry) -> Self {
        let trig = geometry.angles().iter().map(|&a| (math::cos(a), math::sin(a))).collect();
        Radon { geometry, trig }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Visit `(pixel index, weight)` for every pixel touched by one ray.
    #[inline]
    fn walk(&self, view: usize, bin: usize, mut visit: impl FnMut(usize, f64)) {
        let n = self.geometry.image_side();
        let d = self.geometry.pixel_spacing();
        let c = 0.5 * (n as f64 - 1.0);
        let s = self.geometry.bin_offset(bin);
        let (cos, sin) = self.trig[view];
        if math::abs(sin) >= math::abs(cos) {
            // march over columns; fractional row index is affine in the column
            let step = d / math::abs(sin);
            let slope = cos / sin;
            let r0 = c - s / (d * sin) - c * slope;
            for col in crossing_range(r0, slope, n) {
                let r = r0 + col as f64 * slope;
                if let Some((ri, f)) = split(r, n) {
                    if ri >= 0 {
                        visit(ri as usize * n + col, (1.0 - f) * step);
                    }
                    if ri + 1 < n as isize {
                        visit((ri + 1) as usize * n + col, f * step);
                    }
                }
            }
        } else {
            let step = d / math::abs(cos);
            let slope = sin / cos;
            let c0 = c + s / (d * cos) - c * slope;
            for row in crossing_range(c0, slope, n) {
                let q = c0 + row as f64 * slope;
                if let Some((qi, f)) = split(q, n) {
                    if qi >= 0 {
                        visit(row * n + qi as usize, (1.0 - f) * step);
                    }
                    if qi + 1 < n as isize {
                        visit(row * n + (qi + 1) as usize, f * step);
                    }
                }
            }
        }
    }

    pub fn forward(&self, image: &Image) -> Result<Sinogram> {
        self.check_image(image)?;
        let mut out = Sinogram::zeros(self.geometry.clone());
        self.apply(image.values(), out.values_mut());
        Ok(out)
    }

    pub fn adjoint(&self, sinogram: &Sinogram) -> Result<Image> {
        let g = sinogram.geometry();
        if g.n_views() != self.geometry.n_views() || g.n_bins() != self.geometry.n_bins() {
            return Err(mismatch(
                alloc::format!("{}x{}", self.geometry.n_views(), self.geometry.n_bins()),
                alloc::format!("{}x{}", g.n_views(), g.n_bins()),
            ));
        }
        let mut out = self.geometry.empty_image();
        self.apply_adjoint(sinogram.values(), out.values_mut());
        Ok(out)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let g = &self.geometry;
        if image.side() != g.image_side()
            || math::abs(image.pixel_spacing() - g.pixel_spacing()) > 1e-12 * g.pixel_spacing()
        {
            return Err(mismatch(
                alloc::format!("{0}x{0} @ {1}", g.image_side(), g.pixel_spacing()),
                alloc::format!("{0}x{0} @ {1}", image.side(), image.pixel_spacing()),
            ));
        }
        Ok(())
    }
}

impl LinearOperator for Radon {
    fn domain_len(&self) -> usize {
        let n = self.geometry.image_side();
        n * n
    }

    fn range_len(&self) -> usize {
        self.geometry.n_views() * self.geometry.n_bins()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.domain_len());
        assert_eq!(out.len(), self.range_len());
        let nb = self.geometry.n_bins();
        for view in 0..self.geometry.n_views() {
            for bin in 0..nb {
                let mut acc = 0.0;
                self.walk(view, bin, |i, w| acc += w * x[i]);
                out[view * nb + bin] = acc;
            }
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.range_len());
        assert_eq!(out.len(), self.domain_len());
        out.fill(0.0);
        let nb = self.geometry.n_bins();
        for view in 0..self.geometry.n_views() {
            for bin in 0..nb {
                let v = y[view * nb + bin];
                if v != 0.0 {
                    self.walk(view, bin, |i, w| out[i] += w * v);
                }
            }
        }
    }
}

/// `H image` for the given geometry.
pub fn forward(image: &Image, geometry: &Geometry) -> Result<Sinogram> {
    Radon::new(geometry.clone()).forward(image)
}

/// `H* sinogram` onto the sinogram's own pixel grid.
pub fn adjoint(sinogram: &Sinogram) -> Image {
    let radon = Radon::new(sinogram.geometry().clone());
    let mut out = sinogram.geometry().empty_image();
    radon.apply_adjoint(sinogram.values(), out.values_mut());
    out
}

/// Adjoint of the projector defined on a different pixel grid sharing the
/// sinogram's views and detector.
pub fn adjoint_onto(sinogram: &Sinogram, side: usize, pixel_spacing: f64) -> Image {
    let radon = Radon::new(sinogram.geometry().with_grid(side, pixel_spacing));
    let mut out = Image::zeros(side, pixel_spacing);
    radon.apply_adjoint(sinogram.values(), out.values_mut());
    out
}

/// Indices `t` in `0..n` where `p0 + t * slope` may lie in `(-1, n)`; a
/// superset, the exact test is left to [`split`].
#[inline]
fn crossing_range(p0: f64, slope: f64, n: usize) -> core::ops::Range<usize> {
    let nf = n as f64;
    if slope == 0.0 {
        return if p0 > -1.0 && p0 < nf { 0..n } else { 0..0 };
    }
    let (a, b) = ((-1.0 - p0) / slope, (nf - p0) / slope);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let lo = if lo <= 0.0 { 0 } else { (lo as usize).min(n) };
    let hi = if hi < 0.0 { 0 } else { (hi as usize).saturating_add(2).min(n) };
    lo..hi.max(lo)
}

/// Integer part and fraction of a grid coordinate inside `(-1, n)`.
#[inline]
fn split(p: f64, n: usize) -> Option<(isize, f64)> {
    if p <= -1.0 || p >= n as f64 {
        return None;
    }
    // p > -1, so truncation is floor except on (-1, 0)
    let i = if p < 0.0 { -1 } else { p as isize };
    Some((i, p - i as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use alloc::vec;
    use alloc::vec::Vec;

    fn random(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn zero_in_zero_out() {
        let g = Geometry::parallel(32, 20).unwrap();
        let radon = Radon::new(g.clone());
        let s = radon.forward(&g.empty_image()).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        let im = radon.adjoint(&Sinogram::zeros(g)).unwrap();
        assert!(im.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dot_product_identity() {
        let g = Geometry::parallel(64, 90).unwrap();
        let radon = Radon::new(g);
        let mut rng = Rng::new(9);
        let mut hx = vec![0.0; radon.range_len()];
        let mut hty = vec![0.0; radon.domain_len()];
        for _ in 0..20 {
            let x = random(&mut rng, radon.domain_len());
            let y = random(&mut rng, radon.range_len());
            radon.apply(&x, &mut hx);
            radon.apply_adjoint(&y, &mut hty);
            let lhs = math::dot(&hx, &y);
            let rhs = math::dot(&x, &hty);
            let scale = math::norm2(&hx) * math::norm2(&y);
            assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn impulse_traces_a_sinusoid() {
        let g = Geometry::parallel(32, 45).unwrap();
        let radon = Radon::new(g.clone());
        let mut im = g.empty_image();
        let (row, col) = (9, 21);
        im.set(row, col, 1.0);
        let (px, py) = im.pixel_center(row, col);
        let s = radon.forward(&im).unwrap();
        for (v, &theta) in g.angles().iter().enumerate() {
            let sp = px * theta.cos() + py * theta.sin();
            let mut hits = 0;
            for b in 0..g.n_bins() {
                if s.get(v, b) != 0.0 {
                    assert!((g.bin_offset(b) - sp).abs() < g.pixel_spacing(), "view {v} bin {b}");
                    hits += 1;
                }
            }
            // footprint is under one pixel either side of the trace
            let max_hits = (2.0 * g.pixel_spacing() / g.det_spacing()) as usize + 1;
            assert!((1..=max_hits).contains(&hits), "view {v}: {hits} bins");
        }
    }

    #[test]
    fn single_view_adjoint_smears_along_rays() {
        // theta = 0: rays are vertical lines x = s, so H* of ones is constant
        // down every column
        let g = Geometry::new(vec![0.0], 47, 2.0 / 32.0, 32, 2.0 / 32.0).unwrap();
        let mut sino = Sinogram::zeros(g.clone());
        sino.values_mut().fill(1.0);
        let im = adjoint(&sino);
        for col in 0..32 {
            let v0 = im.get(0, col);
            assert!(v0 > 0.0);
            for row in 0..32 {
                assert!((im.get(row, col) - v0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subsampled_geometry_matches_row_selection() {
        let g = Geometry::parallel(32, 30).unwrap();
        let mut rng = Rng::new(2);
        let im = Image::from_values(32, g.pixel_spacing(), random(&mut rng, 1024)).unwrap();
        let full = forward(&im, &g).unwrap();
        let idx: Vec<usize> = (0..30).step_by(4).collect();
        let sub = forward(&im, &g.select_views(&idx).unwrap()).unwrap();
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(sub.view(k), full.view(i));
        }
    }

    #[test]
    fn rejects_mismatched_image() {
        let g = Geometry::parallel(32, 10).unwrap();
        assert!(forward(&Image::zeros(16, 0.125), &g).is_err());
    }
}
