//! Adversarial estimation over sieve spaces.
//!
//! Estimators are empirical Nash points of a saddle loss: an outer player
//! fits the parameter of interest while an inner adversary exposes the
//! residual violation of the model restrictions. The crate provides the
//! loss families (f-divergence duals, generalized empirical likelihood,
//! conditional moment restrictions, smoothed Bellman residuals, Riesz
//! representers), analytic and gradient-based saddle solvers with Nash
//! certificates, plug-in asymptotic inference, and a Monte Carlo harness.

pub mod data;
pub mod divergences;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod rng;
pub mod saddle;
pub mod sieves;
pub mod solvers;

pub use data::{Dataset, ParamPoint};
pub use divergences::{
    conjugate_oracle, dual_divergence_estimate, ConjugateDomain, DivergenceFamily, FDivergence,
    GaussianLocation, RatioModel,
};
pub use error::{Error, Result};
pub use estimators::{
    analytic_dual_estimate, cue_objective, gmm_lambda_star, orthogonalized_functional, CmrLoss,
    ConditionalDesign, ConditionalGelLoss, FganLoss, GelLoss, LinearIvResidual,
    LocationScaleMoment, MdpBatch, MeanMoment, MomentFunction, RieszFunctional, RieszLoss,
    RieszProblem, SbeedLoss,
};
pub use harness::dgp::{generate, DgpSpec, TabularMdp};
pub use harness::experiments::{
    run_coverage, run_divergence_analytic, run_divergence_network, run_divergence_recovery,
    run_efficiency_compare, run_estimate, run_fgan_location_solve, run_orthogonality_shrink,
    run_rate_experiment, run_sbeed_recovery, slack_budget, CertSummary, CoverageFamily,
    CoverageReport, CoverageRow, DivergenceReport, EfficiencyReport, EstimateReport,
    EstimatorFamily, FganSolveReport, RateFamily, RateFitResult, RateRow, SbeedReport,
    ShrinkFamily, ShrinkReport,
};
pub use inference::{
    cmr_variance_formulas, concentrated_objective, inner_product_matrix,
    neyman_orthogonality_check, pathwise_derivative, variance_estimate, CmrVariances, Direction,
    VarianceReport,
};
pub use saddle::{
    certify_nash, empirical_objective, minimax_consistency_check, NashSolution, SaddleLoss,
    ToleranceBudget,
};
pub use sieves::{Activation, Basis, GrowthSchedule, Sieve, SieveKind};
pub use solvers::{fit_first_stage, solve, SolverConfig, SolverMethod};
