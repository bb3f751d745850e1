//! Outer proximal-gradient solver for regularized deconvolution, the
//! baseline regularizers, and the eta grid / selection machinery.

use crate::conv::ConvolutionOperator;
use crate::error::{Error, Result};
use crate::eval::filtered_nmse_pair;
use crate::otprox::{self, CostKernel, ProxDualState, ProxParams};
use crate::types::{
    validate_problem, EstimationConfig, EstimationProblem, ImpulseResponse, RegularizerKind,
};

/// A regularizer together with the data it needs.
#[derive(Debug, Clone)]
pub enum Regularizer {
    /// Entropic transport distance to a prior RIR.
    OtPrior {
        prior: ImpulseResponse,
        kernel: CostKernel,
    },
    /// Squared l2 norm of the estimate.
    Tikhonov,
    /// l1 norm of the estimate.
    Lasso,
    /// Squared l2 distance to a prior RIR.
    L2Prior { prior: ImpulseResponse },
    /// l1 distance to a prior RIR.
    L1Prior { prior: ImpulseResponse },
}

impl Regularizer {
    pub fn kind(&self) -> RegularizerKind {
        match self {
            Regularizer::OtPrior { .. } => RegularizerKind::OtPrior,
            Regularizer::Tikhonov => RegularizerKind::Tikhonov,
            Regularizer::Lasso => RegularizerKind::Lasso,
            Regularizer::L2Prior { .. } => RegularizerKind::L2Prior,
            Regularizer::L1Prior { .. } => RegularizerKind::L1Prior,
        }
    }

    /// Builds a regularizer of the given kind; prior-based kinds take their
    /// prior from `prior`, and the transport kind derives its kernel from
    /// the config.
    pub fn from_kind(
        kind: RegularizerKind,
        prior: Option<&ImpulseResponse>,
        cfg: &EstimationConfig,
        rir_length: usize,
    ) -> Result<Self> {
        let need_prior = || -> Result<ImpulseResponse> {
            prior.cloned().ok_or(Error::InvalidParameter {
                name: "prior",
                reason: format!("regularizer {kind} requires a prior RIR"),
            })
        };
        Ok(match kind {
            RegularizerKind::OtPrior => Regularizer::OtPrior {
                prior: need_prior()?,
                kernel: CostKernel::banded(rir_length, cfg.epsilon, cfg.cost_scale)?,
            },
            RegularizerKind::Tikhonov => Regularizer::Tikhonov,
            RegularizerKind::Lasso => Regularizer::Lasso,
            RegularizerKind::L2Prior => Regularizer::L2Prior {
                prior: need_prior()?,
            },
            RegularizerKind::L1Prior => Regularizer::L1Prior {
                prior: need_prior()?,
            },
        })
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        let prior_len = match self {
            Regularizer::OtPrior { prior, kernel } => {
                if kernel.n() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: kernel.n(),
                        context: "cost kernel size must match the RIR length",
                    });
                }
                Some(prior.len())
            }
            Regularizer::L2Prior { prior } | Regularizer::L1Prior { prior } => Some(prior.len()),
            _ => None,
        };
        if let Some(p) = prior_len {
            if p != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p,
                    context: "prior tap count must match the RIR length",
                });
            }
        }
        Ok(())
    }

    /// Regularizer value R(h). For the transport kind an infeasible argument
    /// evaluates to +inf.
    pub fn value(&self, h: &[f64]) -> Result<f64> {
        match self {
            Regularizer::OtPrior { prior, kernel } => {
                match otprox::evaluate_s(h, prior, kernel) {
                    Ok(v) => Ok(v),
                    Err(Error::InfeasibleTransport(_)) => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                }
            }
            Regularizer::Tikhonov => Ok(h.iter().map(|v| v * v).sum()),
            Regularizer::Lasso => Ok(h.iter().map(|v| v.abs()).sum()),
            Regularizer::L2Prior { prior } => Ok(h
                .iter()
                .zip(prior.taps.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()),
            Regularizer::L1Prior { prior } => Ok(h
                .iter()
                .zip(prior.taps.iter())
                .map(|(a, b)| (a - b).abs())
                .sum()),
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Proximal map of `tau * R` at `u`. The transport prior runs a cold-started
/// dual descent; inside [`solve`] the dual state is threaded across outer
/// iterations instead.
pub fn prox_regularizer(reg: &Regularizer, u: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be positive and finite, got {tau}"),
        });
    }
    reg.check_dim(u.len())?;
    Ok(match reg {
        Regularizer::OtPrior { prior, kernel } => {
            otprox::prox_ot(u, prior, tau, kernel, &ProxParams::default(), None)?.0
        }
        Regularizer::Tikhonov => u.iter().map(|v| v / (1.0 + 2.0 * tau)).collect(),
        Regularizer::Lasso => u.iter().map(|v| soft_threshold(*v, tau)).collect(),
        Regularizer::L2Prior { prior } => u
            .iter()
            .zip(prior.taps.iter())
            .map(|(ui, pi)| (ui + 2.0 * tau * pi) / (1.0 + 2.0 * tau))
            .collect(),
        Regularizer::L1Prior { prior } => u
            .iter()
            .zip(prior.taps.iter())
            .map(|(ui, pi)| pi + soft_threshold(ui - pi, tau))
            .collect(),
    })
}

/// Result of one solver run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub estimate: ImpulseResponse,
    /// Composite objective per outer iteration, starting at the zero
    /// initializer. Non-increasing: accelerated runs fall back to a plain
    /// step whenever momentum would increase the objective.
    pub objective_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub bcd_iterations_total: usize,
    pub converged: bool,
}

/// Solves `min_h 1/2 ||y - X h||^2 + eta * R(h)` by forward-backward
/// splitting from `h = 0` with stepsize `1/L`.
pub fn solve(
    problem: &EstimationProblem,
    reg: &Regularizer,
    cfg: &EstimationConfig,
) -> Result<SolveReport> {
    solve_with_prefix(problem, reg, cfg, None)
}

/// As [`solve`], but fitting only the first `fit_prefix` observation samples
/// when given; the rest of the observation is ignored by the data-fit term.
/// Used by holdout-based eta selection.
pub(crate) fn solve_with_prefix(
    problem: &EstimationProblem,
    reg: &Regularizer,
    cfg: &EstimationConfig,
    fit_prefix: Option<usize>,
) -> Result<SolveReport> {
    validate_problem(problem.clone())?;
    cfg.validate()?;
    let n_h = problem.rir_length;
    reg.check_dim(n_h)?;

    let op = ConvolutionOperator::new(&problem.input.samples, n_h)?;
    eprintln!("[solve-debug] norm start");
    let l = op.operator_norm_sq()?;
    eprintln!("[solve-debug] norm done");
    // The power-iteration estimate sits just below the true norm; the slack
    // keeps gamma <= 1/L so the descent property holds.
    let gamma = 1.0 / (l * (1.0 + 1e-6));
    let tau = gamma * cfg.eta;
    let y = &problem.observation.samples;
    let fit_len = fit_prefix.unwrap_or(y.len()).min(y.len());
    let prox_params = ProxParams {
        max_iters: cfg.max_bcd_iters,
        tol: cfg.bcd_tol,
    };

    // Residual X h - y, zeroed beyond the fitted prefix.
    let masked_residual = |h: &[f64]| -> Result<Vec<f64>> {
        let mut r = op.apply(h)?;
        for (ri, yi) in r.iter_mut().zip(y.iter()) {
            *ri -= yi;
        }
        for ri in r.iter_mut().skip(fit_len) {
            *ri = 0.0;
        }
        Ok(r)
    };
    let data_fit = |r: &[f64]| 0.5 * r.iter().map(|v| v * v).sum::<f64>();

    let mut warm: Option<ProxDualState> = None;
    let mut bcd_total = 0usize;

    // One forward-backward step from `point`; returns the new iterate and
    // the composite objective there.
    let fb_step = |point: &[f64],
                       warm: &mut Option<ProxDualState>,
                       bcd_total: &mut usize|
     -> Result<(Vec<f64>, f64)> {
        let r = masked_residual(point)?;
        let grad = op.apply_adjoint(&r)?;
        let u: Vec<f64> = point
            .iter()
            .zip(grad.iter())
            .map(|(p, g)| p - gamma * g)
            .collect();
        eprintln!("[solve-debug] prox call");
        let (h_new, reg_value) = match reg {
            Regularizer::OtPrior { prior, kernel } => {
                let (h_new, state) = otprox::prox_ot(&u, prior, tau, kernel, &prox_params, warm.as_ref())?;
                eprintln!("[solve-debug] prox done iters {}", state.bcd_iterations);
                *bcd_total += state.bcd_iterations;
                // The converged dual state realizes the optimal plan for
                // S(h_new, prior), so the regularizer value falls out of the
                // plan at no extra dual solve. The additive entropic
                // constant eps*n^2 is dropped from the logged objective: it
                // dwarfs the data term and would blind the relative-change
                // stopping rule.
                let n = kernel.n() as f64;
                let (cost, entropy) = otprox::plan_objective(
                    kernel,
                    &state.lambda,
                    &state.mu,
                    state.theta * kernel.epsilon(),
                );
                *warm = Some(state);
                (h_new, cost + kernel.epsilon() * (entropy - n * n))
            }
            _ => {
                let h_new = prox_regularizer(reg, &u, tau)?;
                let v = reg.value(&h_new)?;
                (h_new, v)
            }
        };
        let obj = data_fit(&masked_residual(&h_new)?) + cfg.eta * reg_value;
        eprintln!("[solve-debug] obj {obj}");
        Ok((h_new, obj))
    };

    // Prior-informed regularizers start at the prior: where the data has no
    // say, the iterate then keeps the prior's taps instead of the zero
    // vector's. The uninformed baselines keep the zero start, their natural
    // center.
    let mut h = match reg {
        Regularizer::OtPrior { prior, .. }
        | Regularizer::L2Prior { prior }
        | Regularizer::L1Prior { prior } => prior.taps.clone(),
        _ => vec![0.0; n_h],
    };
    eprintln!("[solve-debug] init value start");
    let r0 = match reg {
        Regularizer::OtPrior { prior, kernel } => {
            let n = kernel.n() as f64;
            otprox::evaluate_s_capped(&h, prior, kernel, cfg.max_bcd_iters)?
                - kernel.epsilon() * n * n
        }
        _ => reg.value(&h)?,
    };
    eprintln!("[solve-debug] init value done");
    let f0 = data_fit(&masked_residual(&h)?) + cfg.eta * r0;
    let mut trace = vec![f0];
    let mut h_prev = h.clone();
    let mut extrapolated = h.clone();
    let mut momentum_t = 1.0f64;
    let mut converged = false;
    let mut outer = 0usize;

    for j in 0..cfg.max_outer_iters {
        eprintln!("[solve-debug] outer {j} start");
        outer = j + 1;
        let f_prev = *trace.last().unwrap();
        let (mut h_new, mut f_new) = fb_step(&extrapolated, &mut warm, &mut bcd_total)?;
        if cfg.use_acceleration && f_new > f_prev + 1e-12 * f_prev.abs().max(1.0) {
            // Momentum overshot: restart from the last iterate with a plain
            // step, which cannot increase the objective.
            momentum_t = 1.0;
            let redo = fb_step(&h, &mut warm, &mut bcd_total)?;
            h_new = redo.0;
            f_new = redo.1;
        }
        if !f_new.is_finite() {
            return Err(Error::SolverDiverged(j));
        }

        h_prev.copy_from_slice(&h);
        h = h_new;
        if cfg.use_acceleration {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt());
            let beta = (momentum_t - 1.0) / t_next;
            momentum_t = t_next;
            extrapolated = h
                .iter()
                .zip(h_prev.iter())
                .map(|(a, b)| a + beta * (a - b))
                .collect();
        } else {
            extrapolated = h.clone();
        }

        trace.push(f_new);
        let rel_change = (f_prev - f_new).abs() / f_prev.abs().max(f64::MIN_POSITIVE);
        if rel_change <= cfg.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        estimate: ImpulseResponse::new(h, problem.input.sample_rate_hz)?,
        objective_trace: trace,
        outer_iterations: outer,
        bcd_iterations_total: bcd_total,
        converged,
    })
}

/// Log-uniform grid of `count` values from `lo` to `hi` inclusive.
pub fn eta_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::InvalidParameter {
            name: "eta_grid bounds",
            reason: format!("need 0 < lo < hi, got lo={lo}, hi={hi}"),
        });
    }
    if count < 2 {
        return Err(Error::InvalidParameter {
            name: "eta_grid count",
            reason: format!("need at least 2 points, got {count}"),
        });
    }
    let (ll, lh) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count)
        .map(|i| (ll + (lh - ll) * i as f64 / (count - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    Ok(grid)
}

/// How to score one eta during selection.
#[derive(Debug, Clone)]
pub enum SelectionStrategy<'a> {
    /// Score by filtered NMSE against a known true RIR.
    OracleNmse {
        true_h: &'a ImpulseResponse,
        lowpass: &'a [f64],
    },
    /// Fit on a prefix of the observation and score the squared residual on
    /// the held-out suffix.
    HoldoutResidual { fraction: f64 },
}

/// Outcome of an eta selection: the winner, every (eta, score) pair, and the
/// report of the winning solve.
#[derive(Debug, Clone)]
pub struct EtaSelection {
    pub best_eta: f64,
    pub scores: Vec<(f64, f64)>,
    pub best_report: SolveReport,
}

/// Evaluates every grid point and returns the eta with the smallest score;
/// ties break toward the smaller eta.
pub fn select_eta(
    problem: &EstimationProblem,
    reg: &Regularizer,
    grid: &[f64],
    strategy: &SelectionStrategy,
    cfg: &EstimationConfig,
) -> Result<EtaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "eta grid must be non-empty".into(),
        });
    }
    let (fit_prefix, holdout) = match strategy {
        SelectionStrategy::HoldoutResidual { fraction } => {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "holdout fraction",
                    reason: format!("must lie in (0, 1), got {fraction}"),
                });
            }
            let y_len = problem.observation.len();
            let held = ((y_len as f64) * fraction).floor() as usize;
            let prefix = (y_len - held).max(1);
            (Some(prefix), true)
        }
        SelectionStrategy::OracleNmse { .. } => (None, false),
    };
    let op = if holdout {
        Some(ConvolutionOperator::new(
            &problem.input.samples,
            problem.rir_length,
        )?)
    } else {
        None
    };

    let mut best: Option<(f64, f64, SolveReport)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &eta in grid {
        let cfg_eta = cfg.clone().with_eta(eta);
        let report = solve_with_prefix(problem, reg, &cfg_eta, fit_prefix)?;
        let score = match strategy {
            SelectionStrategy::OracleNmse { true_h, lowpass } => {
                filtered_nmse_pair(&report.estimate.taps, &true_h.taps, lowpass)?
            }
            SelectionStrategy::HoldoutResidual { .. } => {
                let op = op.as_ref().expect("holdout operator");
                let fitted = op.apply(&report.estimate.taps)?;
                fitted
                    .iter()
                    .zip(problem.observation.samples.iter())
                    .skip(fit_prefix.unwrap_or(0))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            }
        };
        scores.push((eta, score));
        let better = match &best {
            None => true,
            Some((_, best_score, _)) => score < *best_score,
        };
        if better {
            best = Some((eta, score, report));
        }
    }
    let (best_eta, _, best_report) = best.expect("non-empty grid");
    Ok(EtaSelection {
        best_eta,
        scores,
        best_report,
    })
}
