//! Regularized iterative reconstruction: Haar-synthesis ISTA/FISTA and
//! total-variation ADMM.

mod config;
mod haar;
mod ista;
mod tv;

pub use config::{golden_section_max, IterRecord, SolveReport, SolverConfig, TvMode};
pub use haar::{
    analysis_in_place, synthesis_in_place, wavelet_analysis, wavelet_synthesis, CoeffStack, Orientation, Subband,
};
pub use ista::{
    estimate_lipschitz, estimate_lipschitz_op, ista_reconstruct, ista_report, ista_solve, soft_threshold,
    soft_threshold_in_place, LIPSCHITZ_SAFETY,
};
pub use tv::{
    gradient, gradient_adjoint, pcg, total_variation, tv_admm_reconstruct, tv_admm_report, tv_admm_solve,
    FourierPreconditioner,
};
