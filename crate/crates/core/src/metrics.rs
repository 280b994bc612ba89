//! Reconstruction quality metric.

use crate::error::{mismatch, Result};
use crate::math;
use crate::numerics::affine_fit;
use crate::projector::Image;

/// Value returned for numerically exact matches.
pub const SNR_CAP_DB: f64 = 300.0;

/// Relative residual below which a match counts as exact.
const EXACT_RELATIVE_RESIDUAL: f64 = 1e-12;

/// `max_{a,b} 20 log10(||x|| / ||x - a x_hat + b||)` in decibels, with `x`
/// the reference; the optimal gain and offset come from [`affine_fit`].
/// Exact matches (relative residual below 1e-12) return [`SNR_CAP_DB`].
pub fn snr_values(reference: &[f64], candidate: &[f64]) -> f64 {
    let fit = affine_fit(reference, candidate);
    let norm = math::norm2(reference);
    if fit.residual_norm <= EXACT_RELATIVE_RESIDUAL * norm || fit.residual_norm == 0.0 {
        return SNR_CAP_DB;
    }
    (20.0 * math::log10(norm / fit.residual_norm)).min(SNR_CAP_DB)
}

pub fn snr(reference: &Image, candidate: &Image) -> Result<f64> {
    if reference.side() != candidate.side() {
        return Err(mismatch(reference.side(), candidate.side()));
    }
    Ok(snr_values(reference.values(), candidate.values()))
}
