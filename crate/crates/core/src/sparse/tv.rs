use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::config::{IterRecord, SolveReport, SolverConfig, TvMode};
use super::ista::shrink;
use crate::error::{mismatch, Error, Result};
use crate::math;
use crate::numerics::{fft2, next_power_of_two, Complex};
use crate::projector::{central_impulse_response, Image, LinearOperator, NormalOf, Radon, Sinogram};

/// Forward differences `(dx, dy)` with a zero difference on the last column
/// (row); `out` holds all `dx` values followed by all `dy` values.
pub fn gradient(x: &[f64], side: usize, out: &mut [f64]) {
    let n = side * side;
    let (gx, gy) = out.split_at_mut(n);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            gx[i] = if c + 1 < side { x[i + 1] - x[i] } else { 0.0 };
            gy[i] = if r + 1 < side { x[i + side] - x[i] } else { 0.0 };
        }
    }
}

/// Transpose of [`gradient`] (a negative divergence).
pub fn gradient_adjoint(g: &[f64], side: usize, out: &mut [f64]) {
    let n = side * side;
    let (gx, gy) = g.split_at(n);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            let mut v = 0.0;
            if c + 1 < side {
                v -= gx[i];
            }
            if c > 0 {
                v += gx[i - 1];
            }
            if r + 1 < side {
                v -= gy[i];
            }
            if r > 0 {
                v += gy[i - side];
            }
            out[i] = v;
        }
    }
}

pub fn total_variation(x: &[f64], side: usize, mode: TvMode) -> f64 {
    let n = side * side;
    let mut g = vec![0.0; 2 * n];
    gradient(x, side, &mut g);
    let (gx, gy) = g.split_at(n);
    match mode {
        TvMode::Isotropic => gx.iter().zip(gy).map(|(a, b)| math::sqrt(a * a + b * b)).sum(),
        TvMode::Anisotropic => gx.iter().chain(gy).map(|a| math::abs(*a)).sum(),
    }
}

/// Proximal map of `kappa * TV` in the difference domain, in place.
fn tv_prox(v: &mut [f64], kappa: f64, mode: TvMode) {
    let n = v.len() / 2;
    match mode {
        TvMode::Anisotropic => v.iter_mut().for_each(|t| *t = shrink(*t, kappa)),
        TvMode::Isotropic => {
            let (gx, gy) = v.split_at_mut(n);
            for (a, b) in gx.iter_mut().zip(gy) {
                let m = math::sqrt(*a * *a + *b * *b);
                let s = if m > kappa { 1.0 - kappa / m } else { 0.0 };
                *a *= s;
                *b *= s;
            }
        }
    }
}

/// Circulant approximation of `H*H + rho D*D`, inverted in the Fourier
/// domain on a zero-padded grid.
///
/// `H*H` is represented by its response to an impulse at the centre pixel.
/// Applying the inverse as embed -> circulant solve -> crop is symmetric
/// positive definite, so it is a valid preconditioner for CG.
#[derive(Debug, Clone)]
pub struct FourierPreconditioner {
    side: usize,
    p: usize,
    inv: Vec<f64>,
}

impl FourierPreconditioner {
    pub fn new(kernel: &[f64], side: usize, rho: f64) -> Result<Self> {
        if kernel.len() != side * side {
            return Err(mismatch(side * side, kernel.len()));
        }
        let p = next_power_of_two(2 * side);
        let centre = side / 2;
        let mut buf = vec![Complex::new(0.0, 0.0); p * p];
        for r in 0..side {
            let rr = (r + p - centre) % p;
            for c in 0..side {
                let cc = (c + p - centre) % p;
                buf[rr * p + cc] = Complex::new(kernel[r * side + c], 0.0);
            }
        }
        fft2(&mut buf, p, p, false)?;
        let mut m: Vec<f64> = Vec::with_capacity(p * p);
        for r in 0..p {
            let lr = 2.0 - 2.0 * math::cos(2.0 * PI * r as f64 / p as f64);
            for c in 0..p {
                let lc = 2.0 - 2.0 * math::cos(2.0 * PI * c as f64 / p as f64);
                m.push(buf[r * p + c].re.max(0.0) + rho * (lr + lc));
            }
        }
        let top = m.iter().copied().fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(Error::InvalidArgument("preconditioner spectrum vanishes".into()));
        }
        let floor = 1e-6 * top;
        let inv = m.into_iter().map(|v| 1.0 / v.max(floor)).collect();
        Ok(FourierPreconditioner { side, p, inv })
    }

    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        let (side, p) = (self.side, self.p);
        let mut buf = vec![Complex::new(0.0, 0.0); p * p];
        for i in 0..side {
            for j in 0..side {
                buf[i * p + j] = Complex::new(r[i * side + j], 0.0);
            }
        }
        // sizes are powers of two by construction
        fft2(&mut buf, p, p, false).expect("power-of-two grid");
        for (b, w) in buf.iter_mut().zip(&self.inv) {
            *b *= *w;
        }
        fft2(&mut buf, p, p, true).expect("power-of-two grid");
        for i in 0..side {
            for j in 0..side {
                out[i * side + j] = buf[i * p + j].re;
            }
        }
    }
}

/// Preconditioned conjugate gradients for `A x = b`, warm-started from `x`.
/// Stops when `||b - A x|| <= tol ||b||`; returns the iteration count.
pub fn pcg(
    mut apply_a: impl FnMut(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> Result<usize> {
    let n = b.len();
    let bn = math::norm2(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut ap = vec![0.0; n];
    apply_a(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut rn = math::norm2(&r);
    if rn <= tol * bn {
        return Ok(0);
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = math::dot(&r, &z);
    for k in 1..=max_iters {
        apply_a(&p, &mut ap);
        let alpha = rz / math::dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rn = math::norm2(&r);
        if rn <= tol * bn {
            return Ok(k);
        }
        precond(&r, &mut z);
        let rz_new = math::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged { iterations: max_iters, residual: rn / bn })
}

/// TV-regularized least squares `min_x 0.5 ||H x - y||^2 + lambda TV(x)` by
/// ADMM on the split `z = D x` (scaled dual `u`), starting from zero.
///
/// The x-update solves `(H*H + rho D*D) x = H* y + rho D*(z - u)` by CG,
/// preconditioned with the Fourier inverse of the centre impulse response
/// of `H*H` plus `rho` times the periodic Laplacian. Success means the
/// primal residual `||Dx - z||` fell below `tol * max(||Dx||, ||z||, ||x||)`
/// and the dual residual `rho ||D*(z - z_prev)||` below
/// `tol * rho * max(||D* u||, ||x||)`.
pub fn tv_admm_solve<A: LinearOperator + ?Sized>(
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
    let rho = config.rho;
    let lambda = config.lambda;
    let normal = NormalOf::new(op, side)?;
    let pre = FourierPreconditioner::new(&central_impulse_response(&normal), side, rho)?;

    let mut hty = vec![0.0; n];
    op.apply_adjoint(y, &mut hty);
    let mut tmp_range = vec![0.0; y.len()];
    let mut tmp_grad = vec![0.0; 2 * n];
    let mut tmp_img = vec![0.0; n];
    let mut apply_a = |v: &[f64], out: &mut [f64]| {
        op.apply(v, &mut tmp_range);
        op.apply_adjoint(&tmp_range, out);
        gradient(v, side, &mut tmp_grad);
        gradient_adjoint(&tmp_grad, side, &mut tmp_img);
        for (o, t) in out.iter_mut().zip(&tmp_img) {
            *o += rho * t;
        }
    };

    let objective = |x: &[f64]| -> f64 {
        let mut hx = vec![0.0; y.len()];
        op.apply(x, &mut hx);
        let data: f64 = hx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * data + lambda * total_variation(x, side, config.tv_mode)
    };

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; 2 * n];
    let mut z_prev = vec![0.0; 2 * n];
    let mut u = vec![0.0; 2 * n];
    let mut dx = vec![0.0; 2 * n];
    let mut rhs = vec![0.0; n];
    let mut work = vec![0.0; 2 * n];
    let mut history =
        vec![IterRecord { iteration: 0, objective: objective(&x), primal_residual: 0.0, dual_residual: 0.0 }];
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=config.max_iters {
        for i in 0..2 * n {
            work[i] = z[i] - u[i];
        }
        gradient_adjoint(&work, side, &mut rhs);
        for (r, h) in rhs.iter_mut().zip(&hty) {
            *r = h + rho * *r;
        }
        pcg(&mut apply_a, |r, o| pre.apply(r, o), &rhs, &mut x, config.cg_tol, config.cg_max_iters)?;

        gradient(&x, side, &mut dx);
        z_prev.copy_from_slice(&z);
        for i in 0..2 * n {
            z[i] = dx[i] + u[i];
        }
        tv_prox(&mut z, lambda / rho, config.tv_mode);
        let mut primal = 0.0;
        for i in 0..2 * n {
            let d = dx[i] - z[i];
            u[i] += d;
            primal += d * d;
            work[i] = z[i] - z_prev[i];
        }
        let primal = math::sqrt(primal);
        // rhs is rebuilt at the top of the next iteration
        gradient_adjoint(&work, side, &mut rhs);
        let dual = rho * math::norm2(&rhs);

        iterations = k;
        history.push(IterRecord {
            iteration: k,
            objective: objective(&x),
            primal_residual: primal,
            dual_residual: dual,
        });

        if config.tol > 0.0 {
            let xn = math::norm2(&x);
            let p_scale = math::norm2(&dx).max(math::norm2(&z)).max(xn);
            gradient_adjoint(&u, side, &mut rhs);
            let d_scale = rho * math::norm2(&rhs).max(xn);
            if primal <= config.tol * p_scale && dual <= config.tol * d_scale {
                converged = true;
                break;
            }
        }
    }
    if history.iter().any(|r| !r.objective.is_finite()) {
        return Err(Error::Divergence { iteration: iterations, objective: f64::NAN });
    }
    let image = Image::from_values(side, pixel_spacing, x)?;
    Ok(SolveReport { image, iterations, converged, history })
}

/// [`tv_admm_solve`] with the Radon transform of the sinogram's geometry.
pub fn tv_admm_reconstruct(sinogram: &Sinogram, config: &SolverConfig) -> Result<Image> {
    Ok(tv_admm_report(sinogram, config)?.image)
}

pub fn tv_admm_report(sinogram: &Sinogram, config: &SolverConfig) -> Result<SolveReport> {
    let g = sinogram.geometry();
    if g.image_side() < 2 {
        return Err(Error::InvalidArgument(format!("image side {}", g.image_side())));
    }
    let radon = Radon::new(g.clone());
    tv_admm_solve(&radon, sinogram.values(), g.image_side(), g.pixel_spacing(), config)
}
