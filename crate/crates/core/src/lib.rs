//! Fisher information and optimal sampling designs for linear Itô SDEs
//! `dX = [a(t) + b(t) X] dt + sigma(t) dW`.
//!
//! The path sampled at `t_1 < ... < t_n` is Gaussian with a product
//! covariance, which gives O(n) quadratic forms and log-determinants. On
//! top of that the crate computes exact and asymptotic information,
//! efficiency ratios, optimised designs and Monte-Carlo validation.

pub mod asymptotic;
pub mod covariance;
pub mod design;
pub mod efficiency;
pub mod error;
pub mod fisher;
pub mod model;
pub mod moments;
mod numdiff;
pub mod outype;
pub mod quadrature;
pub mod simulate;

pub use asymptotic::{convergence_gap, fim_asymptotic, gap_matrix, o_term, AsymptoticInfo};
pub use covariance::{product_factors, quad_form_inverse, ProductCovariance, SamplingDesign};
pub use design::{
    equidistant_design, optimize_design, repair_design, OptimizedDesign, OptimizerSettings,
};
pub use efficiency::{
    condition11_diagnostic, criterion_value, efficiency_curve, ultimate_efficiency, Criterion,
    EfficiencyContext, EfficiencyRow,
};
pub use error::{Error, Result};
pub use fisher::{
    counterexample_info, counterexample_tmin, expected_conditional_fim, fim_exact, fim_markov_sum,
    fim_subvector, fim_subvector_with, info_x0_only, optimal_t1_for_x0, InfoMatrix,
    SubvectorSelection,
};
pub use model::{
    make_builtin_model, make_builtin_model_with, BuiltinModel, CustomSde, Domain, LinearSde, Model,
    ModelOptions, ParameterPartition, ParameterVector, Role,
};
pub use outype::{
    affinity_check, autonomous_ode_residual, make_nonlinear_builtin, tabulated_sde, transform_phi,
    AffinityReport, NonlinearBuiltin, NonlinearSde,
};
pub use quadrature::QuadratureSettings;
pub use simulate::{
    log_likelihood, mc_crlb_study, mle_fit, nelder_mead, sample_path, McReport, MleFit,
    NelderMeadSettings, TransitionPlan,
};
