use thiserror::Error;

/// Error variants shared by the estimation, simulation, and evaluation
/// modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector lengths do not satisfy the expected relation.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A sample, tap, or derived quantity is NaN or infinite.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// A parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The convolution input signal is identically zero, so the operator
    /// norm (and hence the stepsize) is undefined.
    #[error("input signal is identically zero")]
    ZeroSignal,

    /// Source and receiver coincide; the 1/(4*pi*d) amplitude diverges.
    #[error("source and receiver positions coincide")]
    CoincidentSourceReceiver,

    /// A perturbed room no longer contains the source or receiver.
    #[error("position {0} lies outside the room after perturbation")]
    PositionOutsideRoom(&'static str),

    /// The transport problem admits no feasible plan: the estimate's energy
    /// profile cannot be covered by the prior's within the kernel band.
    #[error("infeasible transport: prior energy cannot cover the estimate ({0})")]
    InfeasibleTransport(&'static str),

    /// The dual state handed to a plan extraction has not converged.
    #[error("transport plan requested from an unconverged dual state")]
    UnconvergedState,

    /// The outer solver produced a non-finite objective, which indicates a
    /// stepsize or operator-norm defect.
    #[error("solver diverged: objective became non-finite at iteration {0}")]
    SolverDiverged(usize),

    /// A sweep cell failed; coordinates identify the cell.
    #[error("sweep cell failed (axis value {axis_value}, method {method}, realization {realization}): {source}")]
    SweepCell {
        axis_value: f64,
        method: String,
        realization: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
