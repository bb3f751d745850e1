//! Room impulse response estimation from short, noisy, poorly exciting
//! observations, regularized by a simulated prior RIR.
//!
//! The centerpiece is a least-squares deconvolution with an entropic
//! optimal-transport penalty toward the prior's energy profile, solved by
//! forward-backward splitting with a dual block-coordinate proximal operator.
//! Classic baselines (Tikhonov, lasso, lp-distance-to-prior) share the same
//! solver, an image-source simulator produces priors from shoebox room
//! models, and a sweep harness measures robustness to room-geometry and
//! temperature errors.

pub mod conv;
pub mod error;
pub mod eval;
pub mod ism;
pub mod otprox;
pub mod solvers;
pub mod types;
pub mod wright;

pub use conv::ConvolutionOperator;
pub use error::{Error, Result};
pub use eval::{
    add_noise, design_lowpass, nmse, run_dim_sweep, run_temp_sweep, synth_speech_like, CvStrategy,
    EvalConfig, SweepCell, SweepResult,
};
pub use ism::{
    enumerate_images, perturb_room, simulate_rir, simulate_rir_with, speed_of_sound,
    DelayInterpolation, ImageSource, RoomModel,
};
pub use otprox::{
    build_cost_kernel, dual_objective, evaluate_s, extract_transport_plan, prox_ot, CostKernel,
    ProxDualState, ProxParams, TransportPlan,
};
pub use solvers::{
    eta_grid, prox_regularizer, select_eta, solve, EtaSelection, Regularizer, SelectionStrategy,
    SolveReport,
};
pub use types::{
    validate_problem, EstimationConfig, EstimationProblem, ImpulseResponse, RegularizerKind,
    Signal,
};
pub use wright::wright_omega;
