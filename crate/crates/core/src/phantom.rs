//! Random ellipse phantoms, their rasterization, and exact sinograms.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math;
use crate::numerics::Rng;
use crate::projector::{Geometry, Image, Sinogram};

/// A filled ellipse of constant intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the ellipse's own x axis (before rotation).
    pub a: f64,
    pub b: f64,
    /// Counter-clockwise rotation in radians, `[0, pi)`.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64, intensity: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidArgument(format!("semi-axes must be positive, got {a}, {b}")));
        }
        if ![cx, cy, angle, intensity].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("ellipse parameters must be finite".into()));
        }
        Ok(Ellipse { cx, cy, a, b, angle, intensity })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (math::cos(self.angle), math::sin(self.angle));
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b) <= 1.0
    }

    /// Exact line integral along `x cos(theta) + y sin(theta) = s`.
    ///
    /// For a centred, unrotated ellipse the chord through the line has length
    /// `2ab sqrt(r^2 - s^2) / r^2` with `r^2 = a^2 cos^2 + b^2 sin^2`; the
    /// centre offset shifts `s` and the rotation shifts `theta`.
    pub fn line_integral(&self, theta: f64, s: f64) -> f64 {
        let s = s - self.cx * math::cos(theta) - self.cy * math::sin(theta);
        let t = theta - self.angle;
        let (c, sn) = (math::cos(t), math::sin(t));
        let r2 = self.a * self.a * c * c + self.b * self.b * sn * sn;
        if s * s >= r2 {
            return 0.0;
        }
        2.0 * self.intensity * self.a * self.b * math::sqrt(r2 - s * s) / r2
    }

    /// Furthest distance from the origin to any point of the ellipse is at
    /// most this value.
    fn reach(&self) -> f64 {
        math::sqrt(self.cx * self.cx + self.cy * self.cy) + self.a.max(self.b)
    }
}

/// Ordered collection of ellipses inside a field-of-view disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    ellipses: Vec<Ellipse>,
    fov_radius: f64,
}

impl Phantom {
    pub fn new(ellipses: Vec<Ellipse>, fov_radius: f64) -> Result<Self> {
        if ellipses.is_empty() {
            return Err(Error::InvalidArgument("phantom needs at least one ellipse".into()));
        }
        if !(fov_radius > 0.0) {
            return Err(Error::InvalidArgument(format!("fov radius {fov_radius}")));
        }
        for e in &ellipses {
            // support must meet the FOV disk
            let d = math::sqrt(e.cx * e.cx + e.cy * e.cy);
            if d - e.a.max(e.b) > fov_radius {
                return Err(Error::InvalidArgument(format!("ellipse {e:?} misses the field of view")));
            }
        }
        Ok(Phantom { ellipses, fov_radius })
    }

    pub fn ellipses(&self) -> &[Ellipse] {
        &self.ellipses
    }

    pub fn fov_radius(&self) -> f64 {
        self.fov_radius
    }

    /// Sum of `intensity * pi * a * b`, the integral of the phantom.
    pub fn mass(&self) -> f64 {
        self.ellipses.iter().map(|e| e.intensity * PI * e.a * e.b).sum()
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum()
    }
}

/// Draw a random phantom in a FOV disk of radius `fov_radius`.
///
/// Ellipse count is uniform on `count_range` (inclusive). Each ellipse has a
/// centre uniform in the disk of radius `0.9 R`, semi-axes uniform in
/// `[0.05, 0.4] R`, angle uniform in `[0, pi)` and intensity uniform on
/// `[-1, 1]` with `|rho| < 0.1` excluded. Centre and axes are redrawn until
/// `|centre| + max(a, b) <= R`, so every ellipse lies inside the FOV.
pub fn random_phantom(rng: &mut Rng, count_range: (usize, usize), fov_radius: f64) -> Result<Phantom> {
    let (lo, hi) = count_range;
    if lo < 1 || lo > hi {
        return Err(Error::InvalidArgument(format!("ellipse count range {count_range:?}")));
    }
    let r = fov_radius;
    let count = lo + rng.below((hi - lo + 1) as u64) as usize;
    let mut ellipses = Vec::with_capacity(count);
    for _ in 0..count {
        let e = loop {
            let rad = 0.9 * r * math::sqrt(rng.next_f64());
            let phi = rng.uniform(0.0, 2.0 * PI);
            let a = rng.uniform(0.05, 0.4) * r;
            let b = rng.uniform(0.05, 0.4) * r;
            let e = Ellipse { cx: rad * math::cos(phi), cy: rad * math::sin(phi), a, b, angle: 0.0, intensity: 0.0 };
            if e.reach() <= r {
                break e;
            }
        };
        let angle = rng.uniform(0.0, PI);
        let magnitude = rng.uniform(0.1, 1.0);
        let intensity = if rng.coin() { magnitude } else { -magnitude };
        ellipses.push(Ellipse { angle, intensity, ..e });
    }
    Phantom::new(ellipses, fov_radius)
}

/// Point-sample the phantom at pixel centres of a `side x side` grid spanning
/// the FOV square; pixels outside the FOV disk are zero.
pub fn rasterize(phantom: &Phantom, side: usize) -> Result<Image> {
    if side < 16 {
        return Err(Error::InvalidArgument(format!("raster side {side} < 16")));
    }
    let r = phantom.fov_radius;
    let mut im = Image::zeros(side, 2.0 * r / side as f64);
    for row in 0..side {
        for col in 0..side {
            let (x, y) = im.pixel_center(row, col);
            if x * x + y * y <= r * r {
                im.set(row, col, phantom.value_at(x, y));
            }
        }
    }
    Ok(im)
}

/// Exact sinogram: every bin holds the sum of ellipse line integrals at the
/// bin centre.
pub fn analytic_sinogram(phantom: &Phantom, geometry: &Geometry) -> Sinogram {
    let mut sino = Sinogram::zeros(geometry.clone());
    let nb = geometry.n_bins();
    for (v, &theta) in geometry.angles().iter().enumerate() {
        for b in 0..nb {
            let s = geometry.bin_offset(b);
            sino.values_mut()[v * nb + b] = phantom.ellipses.iter().map(|e| e.line_integral(theta, s)).sum();
        }
    }
    sino
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit_disk() -> Phantom {
        Phantom::new(vec![Ellipse::new(0.0, 0.0, 1.0, 1.0, 0.0, 1.0).unwrap()], 1.0).unwrap()
    }

    /// Adaptive Simpson along the ray, integrating the indicator directly.
    fn quad_line(e: &Ellipse, theta: f64, s: f64) -> f64 {
        let (c, sn) = (theta.cos(), theta.sin());
        let f = |t: f64| {
            let (x, y) = (s * c - t * sn, s * sn + t * c);
            if e.contains(x, y) {
                e.intensity
            } else {
                0.0
            }
        };
        // find the chord endpoints by bisection on the indicator, then the
        // integrand is constant between them
        let lim = 4.0;
        let n = 4000;
        let h = 2.0 * lim / n as f64;
        let inside: std::vec::Vec<f64> = (0..=n).map(|i| -lim + i as f64 * h).filter(|&t| f(t) != 0.0).collect();
        if inside.is_empty() {
            return 0.0;
        }
        let refine = |mut out: f64, mut inn: f64| {
            for _ in 0..80 {
                let mid = 0.5 * (out + inn);
                if f(mid) != 0.0 {
                    inn = mid
                } else {
                    out = mid
                }
            }
            0.5 * (out + inn)
        };
        let t0 = refine(inside[0] - h, inside[0]);
        let t1 = refine(inside[inside.len() - 1] + h, inside[inside.len() - 1]);
        e.intensity * (t1 - t0)
    }

    #[test]
    fn unit_disk_chords() {
        let e = unit_disk().ellipses()[0];
        assert!((e.line_integral(0.3, 0.0) - 2.0).abs() < 1e-15);
        for &s in &[0.1, 0.5, 0.9, -0.7] {
            let want = 2.0 * (1.0f64 - s * s).sqrt();
            assert!((e.line_integral(1.1, s) - want).abs() < 1e-14);
        }
        assert_eq!(e.line_integral(0.0, 1.2), 0.0);
    }

    #[test]
    fn rotated_ellipse_matches_quadrature() {
        let e = Ellipse::new(0.2, -0.35, 0.45, 0.15, 0.7, -0.8).unwrap();
        let mut rng = Rng::new(17);
        let mut checked = 0;
        while checked < 10 {
            let theta = rng.uniform(0.0, PI);
            let s = rng.uniform(-0.8, 0.8);
            let exact = e.line_integral(theta, s);
            if exact == 0.0 {
                continue;
            }
            let q = quad_line(&e, theta, s);
            assert!((exact - q).abs() < 1e-8, "theta {theta} s {s}: {exact} vs {q}");
            checked += 1;
        }
    }

    #[test]
    fn centred_disk_sinogram_is_angle_invariant() {
        let p = Phantom::new(vec![Ellipse::new(0.0, 0.0, 0.6, 0.6, 0.3, 0.7).unwrap()], 1.0).unwrap();
        let g = Geometry::parallel(64, 37).unwrap();
        let s = analytic_sinogram(&p, &g);
        for v in 1..g.n_views() {
            for b in 0..g.n_bins() {
                assert!((s.get(v, b) - s.get(0, b)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mass_is_conserved_per_view() {
        let mut rng = Rng::new(4);
        let p = random_phantom(&mut rng, (3, 6), 1.0).unwrap();
        // detector spacing 1/256 of the FOV diameter
        let g = Geometry::with_detector(256, 2.0 / 256.0, 12, 2.0 / 256.0).unwrap();
        let s = analytic_sinogram(&p, &g);
        let abs_mass: f64 = p.ellipses().iter().map(|e| e.intensity.abs() * PI * e.a * e.b).sum();
        for v in 0..g.n_views() {
            let m: f64 = s.view(v).iter().sum::<f64>() * g.det_spacing();
            assert!((m - p.mass()).abs() <= 1e-3 * abs_mass, "view {v}: {m} vs {}", p.mass());
        }
    }

    #[test]
    fn sinogram_is_linear_in_ellipses() {
        let mut rng = Rng::new(8);
        let p = random_phantom(&mut rng, (4, 4), 1.0).unwrap();
        let g = Geometry::parallel(32, 16).unwrap();
        let whole = analytic_sinogram(&p, &g);
        let mut sum = vec![0.0; whole.values().len()];
        for e in p.ellipses() {
            let single = analytic_sinogram(&Phantom::new(vec![*e], 1.0).unwrap(), &g);
            for (acc, v) in sum.iter_mut().zip(single.values()) {
                *acc += v;
            }
        }
        for (a, b) in whole.values().iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn random_phantoms_are_deterministic_and_inside() {
        let a = random_phantom(&mut Rng::new(99), (2, 9), 1.0).unwrap();
        let b = random_phantom(&mut Rng::new(99), (2, 9), 1.0).unwrap();
        assert_eq!(a, b);
        let one = random_phantom(&mut Rng::new(1), (1, 1), 1.0).unwrap();
        assert_eq!(one.ellipses().len(), 1);

        let mut rng = Rng::new(2024);
        for _ in 0..10_000 {
            let p = random_phantom(&mut rng, (1, 3), 1.0).unwrap();
            assert!((1..=3).contains(&p.ellipses().len()));
            for e in p.ellipses() {
                assert!(e.reach() <= 1.0);
                assert!(e.intensity.abs() >= 0.1 && e.intensity.abs() <= 1.0);
                assert!((0.0..PI).contains(&e.angle));
                assert!(e.a >= 0.05 && e.a <= 0.4 && e.b >= 0.05 && e.b <= 0.4);
            }
        }
    }

    #[test]
    fn bad_count_range_is_rejected() {
        assert!(random_phantom(&mut Rng::new(0), (0, 2), 1.0).is_err());
        assert!(random_phantom(&mut Rng::new(0), (3, 2), 1.0).is_err());
    }

    #[test]
    fn rasterization_samples_pixel_centres() {
        let im = rasterize(&unit_disk(), 256).unwrap();
        for row in 0..256 {
            for col in 0..256 {
                let (x, y) = im.pixel_center(row, col);
                let want = if x * x + y * y <= 1.0 { 1.0 } else { 0.0 };
                assert_eq!(im.get(row, col), want);
            }
        }
        let p = Phantom::new(
            vec![
                Ellipse::new(-0.1, 0.0, 0.5, 0.3, 0.0, 1.0).unwrap(),
                Ellipse::new(0.1, 0.0, 0.5, 0.3, 0.0, 0.5).unwrap(),
            ],
            1.0,
        )
        .unwrap();
        let im = rasterize(&p, 64).unwrap();
        assert_eq!(im.get(32, 32), 1.5);
        assert_eq!(im.get(0, 0), 0.0);
        assert!(rasterize(&p, 8).is_err());
    }
}
