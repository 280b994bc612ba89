use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::projector::Image;

/// Flavour of the total-variation penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TvMode {
    /// `sum sqrt(dx^2 + dy^2)`; shrinks the gradient vector per pixel.
    #[default]
    Isotropic,
    /// `sum |dx| + |dy|`; shrinks each difference separately.
    Anisotropic,
}

impl TvMode {
    pub fn name(self) -> &'static str {
        match self {
            TvMode::Isotropic => "isotropic",
            TvMode::Anisotropic => "anisotropic",
        }
    }
}

impl FromStr for TvMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" | "iso" => Ok(TvMode::Isotropic),
            "anisotropic" | "aniso" => Ok(TvMode::Anisotropic),
            _ => Err(Error::InvalidArgument(format!("unknown TV mode `{s}`"))),
        }
    }
}

/// Parameters shared by the iterative solvers. Fields irrelevant to a
/// solver are ignored by it.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Regularization weight.
    pub lambda: f64,
    pub max_iters: usize,
    /// Upper bound `L` on the largest eigenvalue of the data term's Hessian
    /// (ISTA step is `1/L`).
    pub step_inverse: f64,
    /// Stopping threshold: relative iterate change for ISTA/FISTA, relative
    /// primal and dual residuals for ADMM. Zero runs all `max_iters`.
    pub tol: f64,
    /// ADMM penalty.
    pub rho: f64,
    pub tv_mode: TvMode,
    /// Haar levels of the sparsifying transform.
    pub levels: usize,
    /// Use the (monotone) accelerated variant of ISTA.
    pub fista: bool,
    /// Relative residual target of the inner conjugate-gradient solves.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.0,
            max_iters: 200,
            step_inverse: 1.0,
            tol: 1e-5,
            rho: 1.0,
            tv_mode: TvMode::Isotropic,
            levels: 3,
            fista: false,
            cg_tol: 1e-8,
            cg_max_iters: 500,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} = {v}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.step_inverse > 0.0 && self.step_inverse.is_finite()) {
            return bad("Lipschitz bound", self.step_inverse);
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", self.rho);
        }
        if !(self.tol >= 0.0) {
            return bad("tol", self.tol);
        }
        if !(self.cg_tol > 0.0) {
            return bad("cg_tol", self.cg_tol);
        }
        Ok(())
    }
}

/// One row of a solver log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    /// ADMM: `||Dx - z||`. ISTA: relative change of the coefficients.
    pub primal_residual: f64,
    /// ADMM: `rho ||D^T (z - z_prev)||`. ISTA: 0.
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub image: Image,
    pub iterations: usize,
    /// Whether the stopping test fired before `max_iters`.
    pub converged: bool,
    /// Row `k` describes the iterate after `k` iterations; row 0 is the
    /// starting point.
    pub history: Vec<IterRecord>,
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Returns the best abscissa evaluated and its value.
pub fn golden_section_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, evaluations: usize) -> (f64, f64) {
    let inv_phi = 0.5 * (crate::math::sqrt(5.0) - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 2..evaluations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let mut calls = 0;
        let (x, fx) = golden_section_max(
            |x| {
                calls += 1;
                -(x - 0.7) * (x - 0.7)
            },
            -3.0,
            5.0,
            40,
        );
        assert_eq!(calls, 40);
        assert!((x - 0.7).abs() < 1e-6, "{x}");
        assert!(fx <= 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let c = SolverConfig { rho: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SolverConfig { step_inverse: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = SolverConfig { lambda: f64::NAN, ..Default::default() };
        assert!(c.validate().is_err());
        assert_eq!("aniso".parse::<TvMode>().unwrap(), TvMode::Anisotropic);
        assert!("l2".parse::<TvMode>().is_err());
    }
}
