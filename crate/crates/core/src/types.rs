//! Shared domain types: sampled signals, impulse responses, estimation
//! problems, and solver configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite real-valued sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        let s = Signal {
            samples,
            sample_rate_hz,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sample_rate_hz",
                reason: format!("must be positive, got {}", self.sample_rate_hz),
            });
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal samples"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean-square power of the signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }
}

/// A finite-length room impulse response: tap vector plus sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        let ir = ImpulseResponse {
            taps,
            sample_rate_hz,
        };
        ir.validate()?;
        Ok(ir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::InvalidParameter {
                name: "taps",
                reason: "impulse response must have at least one tap".into(),
            });
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sample_rate_hz",
                reason: format!("must be positive, got {}", self.sample_rate_hz),
            });
        }
        if self.taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("impulse response taps"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }
}

/// A single-channel deconvolution problem: recover an RIR of `rir_length`
/// taps from an input signal and the observed full convolution.
///
/// The observation is always the full linear convolution, so its length must
/// equal `input.len() + rir_length - 1`. Input and observation share one
/// sample rate; resampling is out of scope and rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    pub input: Signal,
    pub observation: Signal,
    pub rir_length: usize,
}

impl EstimationProblem {
    pub fn new(input: Signal, observation: Signal, rir_length: usize) -> Result<Self> {
        validate_problem(EstimationProblem {
            input,
            observation,
            rir_length,
        })
    }
}

/// Checks every problem invariant and passes the problem through unchanged.
pub fn validate_problem(p: EstimationProblem) -> Result<EstimationProblem> {
    p.input.validate()?;
    p.observation.validate()?;
    if p.rir_length == 0 {
        return Err(Error::InvalidParameter {
            name: "rir_length",
            reason: "must be at least 1".into(),
        });
    }
    if p.input.is_empty() {
        return Err(Error::InvalidParameter {
            name: "input",
            reason: "input signal must be non-empty".into(),
        });
    }
    let expected = p.input.len() + p.rir_length - 1;
    if p.observation.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: p.observation.len(),
            context: "observation must be the full convolution: N + N_h - 1",
        });
    }
    if p.input.sample_rate_hz != p.observation.sample_rate_hz {
        return Err(Error::InvalidParameter {
            name: "sample_rate_hz",
            reason: format!(
                "input ({} Hz) and observation ({} Hz) must share one rate",
                p.input.sample_rate_hz, p.observation.sample_rate_hz
            ),
        });
    }
    Ok(p)
}

/// Which regularizer the solver applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    /// Entropic optimal-transport distance to a prior RIR.
    OtPrior,
    /// Squared l2 norm of the estimate.
    Tikhonov,
    /// l1 norm of the estimate.
    Lasso,
    /// Squared l2 distance to a prior RIR.
    L2Prior,
    /// l1 distance to a prior RIR.
    L1Prior,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 5] = [
        RegularizerKind::OtPrior,
        RegularizerKind::Tikhonov,
        RegularizerKind::Lasso,
        RegularizerKind::L2Prior,
        RegularizerKind::L1Prior,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::OtPrior => "ot-prior",
            RegularizerKind::Tikhonov => "tikhonov",
            RegularizerKind::Lasso => "lasso",
            RegularizerKind::L2Prior => "l2-prior",
            RegularizerKind::L1Prior => "l1-prior",
        }
    }

    pub fn parse(s: &str) -> Option<RegularizerKind> {
        RegularizerKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Whether this regularizer needs a prior RIR.
    pub fn needs_prior(&self) -> bool {
        matches!(
            self,
            RegularizerKind::OtPrior | RegularizerKind::L2Prior | RegularizerKind::L1Prior
        )
    }
}

impl std::fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Solver configuration: regularization weights, tolerances, and iteration
/// caps for the outer proximal-gradient loop and the inner dual descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Regularization weight trading data fit against the prior.
    pub eta: f64,
    /// Entropic weight of the transport regularizer.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub max_bcd_iters: usize,
    pub bcd_tol: f64,
    pub use_acceleration: bool,
    /// Scale applied to tap-index differences before squaring in the
    /// transport cost. 1.0 means the cost is in squared sample units.
    pub cost_scale: f64,
    pub regularizer: RegularizerKind,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            eta: 1.0,
            epsilon: 0.1,
            max_outer_iters: 2000,
            outer_tol: 1e-7,
            max_bcd_iters: 500,
            bcd_tol: 1e-9,
            use_acceleration: true,
            cost_scale: 1.0,
            regularizer: RegularizerKind::OtPrior,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("epsilon", self.epsilon),
            ("outer_tol", self.outer_tol),
            ("bcd_tol", self.bcd_tol),
            ("cost_scale", self.cost_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if self.max_outer_iters == 0 || self.max_bcd_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max iterations",
                reason: "iteration caps must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_regularizer(mut self, kind: RegularizerKind) -> Self {
        self.regularizer = kind;
        self
    }
}
