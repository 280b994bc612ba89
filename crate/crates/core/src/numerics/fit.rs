use crate::math;

/// Gain/offset minimizing `||x - gain * x_hat + offset||_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub gain: f64,
    pub offset: f64,
    /// Candidate was constant, so only the offset could be fitted.
    pub degenerate: bool,
    /// `||x - gain * x_hat + offset||_2` at the optimum.
    pub residual_norm: f64,
}

/// Closed-form least-squares calibration of `candidate` against `reference`.
///
/// Solves the 2x2 normal equations in centered form:
/// `gain = cov(x, x_hat) / var(x_hat)`, `offset = gain * mean(x_hat) - mean(x)`.
/// A constant candidate has `var(x_hat) = 0`; then `gain = 0` and the offset
/// alone is fitted, giving `offset = -mean(x)`.
///
/// Panics if the lengths differ or are below 2.
pub fn affine_fit(reference: &[f64], candidate: &[f64]) -> AffineFit {
    assert_eq!(reference.len(), candidate.len(), "affine_fit: length mismatch");
    assert!(reference.len() >= 2, "affine_fit: need at least two samples");
    let n = reference.len() as f64;
    let mx = reference.iter().sum::<f64>() / n;
    let mc = candidate.iter().sum::<f64>() / n;
    let (mut sxc, mut scc) = (0.0, 0.0);
    for (&x, &c) in reference.iter().zip(candidate) {
        let (dx, dc) = (x - mx, c - mc);
        sxc += dx * dc;
        scc += dc * dc;
    }
    let spread = candidate.iter().fold(0.0f64, |m, &c| m.max(math::abs(c - mc)));
    let scale = candidate.iter().fold(0.0f64, |m, &c| m.max(math::abs(c)));
    let degenerate = scc == 0.0 || spread <= 1e-14 * scale;
    let (gain, offset) = if degenerate { (0.0, -mx) } else { (sxc / scc, sxc / scc * mc - mx) };
    let residual_norm = math::sqrt(
        reference
            .iter()
            .zip(candidate)
            .map(|(&x, &c)| {
                let r = x - gain * c + offset;
                r * r
            })
            .sum(),
    );
    AffineFit { gain, offset, degenerate, residual_norm }
}
