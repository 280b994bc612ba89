use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{IterRecord, SolveReport, SolverConfig};
use super::haar::{analysis_in_place, synthesis_in_place};
use crate::error::{mismatch, Error, Result};
use crate::math;
use crate::numerics::{Rng, Tensor};
use crate::projector::{Geometry, Image, LinearOperator, Radon, Sinogram};

/// Safety factor applied to power-iteration estimates, which approach the
/// top eigenvalue from below.
pub const LIPSCHITZ_SAFETY: f64 = 1.05;

/// `sign(v) * max(|v| - theta, 0)` elementwise.
///
/// # Panics
/// If `theta` is negative or NaN.
pub fn soft_threshold(v: &Tensor, theta: f64) -> Tensor {
    let mut out = v.clone();
    soft_threshold_in_place(out.data_mut(), theta);
    out
}

pub fn soft_threshold_in_place(v: &mut [f64], theta: f64) {
    assert!(theta >= 0.0, "soft threshold must be non-negative, got {theta}");
    for x in v {
        *x = shrink(*x, theta);
    }
}

#[inline]
pub(crate) fn shrink(x: f64, theta: f64) -> f64 {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        0.0
    }
}

fn largest_haar_levels(side: usize) -> usize {
    let mut levels = 0;
    while levels < 3 && side.is_multiple_of(2 << levels) {
        levels += 1;
    }
    levels
}

/// Power-iteration estimate of the largest eigenvalue of `W* H* H W` for the
/// Radon transform of `geometry`, times [`LIPSCHITZ_SAFETY`].
pub fn estimate_lipschitz(geometry: &Geometry, iters: usize, rng: &mut Rng) -> Result<f64> {
    let side = geometry.image_side();
    let radon = Radon::new(geometry.clone());
    estimate_lipschitz_op(&radon, side, largest_haar_levels(side), iters, rng)
}

pub fn estimate_lipschitz_op<A: LinearOperator + ?Sized>(
    op: &A,
    side: usize,
    levels: usize,
    iters: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if iters < 10 {
        return Err(Error::InvalidArgument(format!("power iteration needs >= 10 steps, got {iters}")));
    }
    let n = side * side;
    if op.domain_len() != n {
        return Err(mismatch(op.domain_len(), n));
    }
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut x = vec![0.0; n];
    let mut hx = vec![0.0; op.range_len()];
    let mut w = vec![0.0; n];
    let mut eig = 0.0;
    let nv = math::norm2(&v);
    v.iter_mut().for_each(|t| *t /= nv);
    for _ in 0..iters {
        x.copy_from_slice(&v);
        synthesis_in_place(&mut x, side, levels);
        op.apply(&x, &mut hx);
        op.apply_adjoint(&hx, &mut w);
        analysis_in_place(&mut w, side, levels);
        eig = math::dot(&v, &w);
        let nw = math::norm2(&w);
        if nw == 0.0 {
            return Err(Error::InvalidArgument("operator annihilated the power iterate".into()));
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / nw;
        }
    }
    Ok(LIPSCHITZ_SAFETY * eig)
}

/// Data and gradient evaluations of `0.5 ||y - H W a||^2`.
struct Problem<'a, A: ?Sized> {
    op: &'a A,
    y: &'a [f64],
    side: usize,
    levels: usize,
    x: Vec<f64>,
    r: Vec<f64>,
}

impl<A: LinearOperator + ?Sized> Problem<'_, A> {
    fn residual(&mut self, a: &[f64]) -> f64 {
        self.x.copy_from_slice(a);
        synthesis_in_place(&mut self.x, self.side, self.levels);
        self.op.apply(&self.x, &mut self.r);
        for (ri, yi) in self.r.iter_mut().zip(self.y) {
            *ri -= yi;
        }
        0.5 * math::dot(&self.r, &self.r)
    }

    fn gradient(&mut self, a: &[f64], grad: &mut [f64]) -> f64 {
        let data = self.residual(a);
        self.op.apply_adjoint(&self.r, grad);
        analysis_in_place(grad, self.side, self.levels);
        data
    }
}

fn l1(a: &[f64]) -> f64 {
    a.iter().map(|v| math::abs(*v)).sum()
}

/// Haar-synthesis ISTA (or monotone FISTA when `config.fista`) for
/// `min_a 0.5 ||y - H W a||^2 + lambda ||a||_1`, starting from `a = 0`.
///
/// The iterate is `a <- S_{lambda/L}(a - W* H* (H W a - y) / L)`. The
/// objective is tracked every iteration; three consecutive relative
/// increases above 1e-6 abort with [`Error::Divergence`], which means `L`
/// is too small.
pub fn ista_solve<A: LinearOperator + ?Sized>(
    op: &A,
    y: &[f64],
    side: usize,
    pixel_spacing: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let n = side * side;
    if op.domain_len() != n {
        return Err(mismatch(op.domain_len(), n));
    }
    if op.range_len() != y.len() {
        return Err(mismatch(op.range_len(), y.len()));
    }
    if config.levels > 0 && !side.is_multiple_of(1 << config.levels) {
        return Err(Error::InvalidArgument(format!("image side {side} is not divisible by 2^{}", config.levels)));
    }
    let l = config.step_inverse;
    let theta = config.lambda / l;
    let mut pb = Problem { op, y, side, levels: config.levels, x: vec![0.0; n], r: vec![0.0; y.len()] };

    let mut a = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut z = vec![0.0; n];
    // extrapolated point (FISTA only)
    let mut p = vec![0.0; n];
    let mut t = 1.0;
    let mut f = pb.gradient(&a, &mut grad);
    let mut history = vec![IterRecord { iteration: 0, objective: f, primal_residual: 0.0, dual_residual: 0.0 }];
    let mut rises = 0;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=config.max_iters {
        let base: &[f64] = if config.fista { &p } else { &a };
        for ((zi, bi), gi) in z.iter_mut().zip(base).zip(&grad) {
            *zi = shrink(bi - gi / l, theta);
        }
        let change = {
            let d: f64 = z.iter().zip(&a).map(|(u, v)| (u - v) * (u - v)).sum();
            math::sqrt(d) / math::norm2(&a).max(f64::MIN_POSITIVE)
        };
        let f_new = if config.fista {
            let fz = pb.residual(&z) + config.lambda * l1(&z);
            let t_new = 0.5 * (1.0 + math::sqrt(1.0 + 4.0 * t * t));
            let keep_z = fz <= f;
            for i in 0..n {
                let prev = a[i];
                if keep_z {
                    a[i] = z[i];
                }
                p[i] = a[i] + (t / t_new) * (z[i] - a[i]) + ((t - 1.0) / t_new) * (a[i] - prev);
            }
            t = t_new;
            pb.gradient(&p, &mut grad);
            if keep_z {
                fz
            } else {
                f
            }
        } else {
            core::mem::swap(&mut a, &mut z);
            pb.gradient(&a, &mut grad) + config.lambda * l1(&a)
        };
        if f_new > f * (1.0 + 1e-6) {
            rises += 1;
            if rises >= 3 {
                return Err(Error::Divergence { iteration: k, objective: f_new });
            }
        } else {
            rises = 0;
        }
        f = f_new;
        iterations = k;
        history.push(IterRecord { iteration: k, objective: f, primal_residual: change, dual_residual: 0.0 });
        if config.tol > 0.0 && change < config.tol {
            converged = true;
            break;
        }
    }

    synthesis_in_place(&mut a, side, config.levels);
    let image = Image::from_values(side, pixel_spacing, a)?;
    Ok(SolveReport { image, iterations, converged, history })
}

/// [`ista_solve`] with the Radon transform of the sinogram's geometry.
pub fn ista_reconstruct(sinogram: &Sinogram, config: &SolverConfig) -> Result<Image> {
    Ok(ista_report(sinogram, config)?.image)
}

pub fn ista_report(sinogram: &Sinogram, config: &SolverConfig) -> Result<SolveReport> {
    let g = sinogram.geometry();
    let radon = Radon::new(g.clone());
    ista_solve(&radon, sinogram.values(), g.image_side(), g.pixel_spacing(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::IdentityOperator;

    /// `diag(d)` as an operator.
    struct Diagonal(Vec<f64>);

    impl LinearOperator for Diagonal {
        fn domain_len(&self) -> usize {
            self.0.len()
        }
        fn range_len(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            for ((o, a), d) in out.iter_mut().zip(x).zip(&self.0) {
                *o = a * d;
            }
        }
        fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
            self.apply(y, out)
        }
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn soft_threshold_values() {
        let t = Tensor::from_vec(&[3], vec![1.2, -0.3, -2.0]).unwrap();
        let s = soft_threshold(&t, 0.5);
        assert!((s.data()[0] - 0.7).abs() < 1e-15);
        assert_eq!(s.data()[1], 0.0);
        assert!((s.data()[2] + 1.5).abs() < 1e-15);
        assert_eq!(soft_threshold(&t, 0.0), t);
    }

    #[test]
    #[should_panic]
    fn negative_threshold_panics() {
        soft_threshold_in_place(&mut [1.0], -0.1);
    }

    #[test]
    fn identity_lipschitz_is_one() {
        let mut rng = Rng::new(1);
        let l = estimate_lipschitz_op(&IdentityOperator { len: 256 }, 16, 2, 10, &mut rng).unwrap();
        assert!((l - LIPSCHITZ_SAFETY).abs() < 1e-12, "{l}");
        assert!(estimate_lipschitz_op(&IdentityOperator { len: 256 }, 16, 2, 9, &mut rng).is_err());
    }

    #[test]
    fn radon_lipschitz_against_long_run_and_view_scaling() {
        let g = Geometry::parallel(64, 90).unwrap();
        let l = estimate_lipschitz(&g, 30, &mut Rng::new(3)).unwrap();
        let reference = estimate_lipschitz(&g, 200, &mut Rng::new(4)).unwrap();
        assert!((l / reference - 1.0).abs() <= 0.02, "{l} vs {reference}");
        let g2 = Geometry::parallel(64, 180).unwrap();
        let l2 = estimate_lipschitz(&g2, 30, &mut Rng::new(3)).unwrap();
        assert!((l2 / l - 2.0).abs() < 0.1, "{l2} / {l}");
    }

    #[test]
    fn identity_problem_without_penalty_returns_data() {
        let y = random(256, 7);
        let cfg = SolverConfig { step_inverse: 1.0, max_iters: 5, tol: 0.0, levels: 2, ..Default::default() };
        let rep = ista_solve(&IdentityOperator { len: 256 }, &y, 16, 1.0, &cfg).unwrap();
        let err = rep.image.values().iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert_eq!(rep.iterations, 5);
    }

    #[test]
    fn huge_penalty_gives_zero() {
        let y = random(256, 8);
        let cfg = SolverConfig { lambda: 1e6, levels: 2, ..Default::default() };
        let rep = ista_solve(&IdentityOperator { len: 256 }, &y, 16, 1.0, &cfg).unwrap();
        assert!(rep.image.values().iter().all(|&v| v == 0.0));
        assert!(rep.converged);
    }

    #[test]
    fn too_small_step_bound_is_reported() {
        let d = Diagonal((0..256).map(|i| 1.0 + i as f64 / 64.0).collect());
        let y = random(256, 9);
        let cfg = SolverConfig { step_inverse: 0.5, lambda: 0.01, tol: 0.0, levels: 2, ..Default::default() };
        match ista_solve(&d, &y, 16, 1.0, &cfg) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    /// Subgradient condition of the l1 problem at the solver output.
    fn optimality_gap(d: &Diagonal, y: &[f64], image: &Image, levels: usize, lambda: f64) -> f64 {
        let side = image.side();
        let mut a = image.values().to_vec();
        analysis_in_place(&mut a, side, levels);
        let mut r = vec![0.0; y.len()];
        d.apply(image.values(), &mut r);
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= yi;
        }
        let mut g = vec![0.0; r.len()];
        d.apply_adjoint(&r, &mut g);
        analysis_in_place(&mut g, side, levels);
        // the round trip through the transform leaves ~1e-16 in zero coefficients
        a.iter()
            .zip(&g)
            .map(
                |(&ai, &gi)| {
                    if ai.abs() > 1e-12 {
                        (gi + lambda * ai.signum()).abs()
                    } else {
                        (gi.abs() - lambda).max(0.0)
                    }
                },
            )
            .fold(0.0, f64::max)
    }

    #[test]
    fn fixed_point_satisfies_optimality_for_both_variants() {
        let d = Diagonal((0..256).map(|i| 0.5 + (i % 7) as f64 / 7.0).collect());
        let y = random(256, 10);
        let lambda = 0.3;
        for fista in [false, true] {
            let cfg = SolverConfig {
                lambda,
                step_inverse: 2.0,
                max_iters: 5000,
                tol: 1e-10,
                levels: 2,
                fista,
                ..Default::default()
            };
            let rep = ista_solve(&d, &y, 16, 1.0, &cfg).unwrap();
            assert!(rep.converged);
            let gap = optimality_gap(&d, &y, &rep.image, 2, lambda);
            assert!(gap <= 1e-6, "fista={fista}: {gap}");
        }
    }

    #[test]
    fn ista_objective_is_monotone_and_fista_is_faster_on_radon() {
        let g = Geometry::parallel(32, 13).unwrap();
        let radon = Radon::new(g.clone());
        let mut truth = g.empty_image();
        for r in 8..20 {
            for c in 10..24 {
                truth.set(r, c, 1.0);
            }
        }
        let y = radon.forward(&truth).unwrap();
        let l = estimate_lipschitz(&g, 50, &mut Rng::new(2)).unwrap();
        let lambda = 1e-3 * l;
        let cfg = SolverConfig { lambda, step_inverse: l, max_iters: 200, tol: 0.0, levels: 3, ..Default::default() };
        let ista = ista_solve(&radon, y.values(), 32, g.pixel_spacing(), &cfg).unwrap();
        for w in ista.history.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9, "{w:?}");
        }
        let target = ista.history.last().unwrap().objective;
        let fista =
            ista_solve(&radon, y.values(), 32, g.pixel_spacing(), &SolverConfig { fista: true, ..cfg }).unwrap();
        let hit = fista.history.iter().position(|r| r.objective <= target).unwrap();
        assert!(hit <= 100, "{hit}");
        for w in fista.history.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let g = Geometry::parallel(16, 10).unwrap();
        let radon = Radon::new(g.clone());
        let y = random(radon.range_len(), 11);
        let l = estimate_lipschitz(&g, 20, &mut Rng::new(1)).unwrap();
        let cfg = SolverConfig { lambda: 0.01, step_inverse: l, max_iters: 30, levels: 2, ..Default::default() };
        let a = ista_solve(&radon, &y, 16, g.pixel_spacing(), &cfg).unwrap();
        let b = ista_solve(&radon, &y, 16, g.pixel_spacing(), &cfg).unwrap();
        assert_eq!(a.image.values(), b.image.values());
    }

    #[test]
    fn tuned_ista_beats_sparse_view_fbp_by_3db() {
        use crate::fbp::{fbp_reconstruct, make_ramp, subsample_views, Apodization};
        use crate::metrics::snr_values;
        use crate::phantom::{analytic_sinogram, random_phantom, rasterize};
        use crate::sparse::golden_section_max;

        let side = 64;
        let full = Geometry::parallel(side, 90).unwrap();
        let mut rng = Rng::new(21);
        let mut instance = || {
            let ph = random_phantom(&mut rng, (3, 6), 1.0).unwrap();
            let sino = subsample_views(&analytic_sinogram(&ph, &full), 7).unwrap();
            (rasterize(&ph, side).unwrap(), sino)
        };
        let (train_truth, train_sino) = instance();
        let (test_truth, test_sino) = instance();
        let g = test_sino.geometry().clone();
        assert_eq!(g.n_views(), 13);
        let l = estimate_lipschitz(&g, 30, &mut Rng::new(1)).unwrap();
        let run = |sino: &Sinogram, log_lambda: f64| {
            let cfg = SolverConfig {
                lambda: l * 10f64.powf(log_lambda),
                step_inverse: l,
                fista: true,
                max_iters: 150,
                ..Default::default()
            };
            ista_reconstruct(sino, &cfg).unwrap()
        };
        let (best, _) =
            golden_section_max(|ll| snr_values(train_truth.values(), run(&train_sino, ll).values()), -5.0, -1.0, 8);
        let ista = snr_values(test_truth.values(), run(&test_sino, best).values());
        let filter = make_ramp(g.n_bins(), g.det_spacing(), Apodization::None).unwrap();
        let fbp = snr_values(test_truth.values(), fbp_reconstruct(&test_sino, &filter, side).unwrap().values());
        assert!(ista >= fbp + 3.0, "ista {ista} fbp {fbp}");
    }
}
