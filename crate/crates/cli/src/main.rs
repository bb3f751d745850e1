use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use otrir::{
    design_lowpass, eta_grid, nmse, prox_ot, run_dim_sweep, run_temp_sweep, select_eta,
    simulate_rir_with, solve, validate_problem, wright_omega, ConvolutionOperator,
    EstimationProblem, ImpulseResponse, ProxParams, Regularizer, RegularizerKind,
    SelectionStrategy, Signal, SolveReport,
};
use otrir_cli::config::{self, CvKind, RunConfig, SweepAxis};
use otrir_cli::error::{CliError, Result};
use otrir_cli::io::{
    format_signal_csv, load_signal, parse_results_rows, write_bytes, write_wav_file,
};

#[derive(Parser)]
#[command(
    name = "otrir",
    version,
    about = "Room impulse response estimation with optimal-transport priors"
)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the RNG seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweep cells (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory (overrides io.out_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the regularization weight eta.
    #[arg(long, global = true)]
    eta: Option<f64>,

    /// Override the entropic weight epsilon.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Override the transport cost scale.
    #[arg(long, global = true)]
    cost_scale: Option<f64>,

    /// Override the regularizer: ot-prior | tikhonov | lasso | l2-prior | l1-prior.
    #[arg(long, global = true)]
    regularizer: Option<String>,

    /// Override the eta-selection strategy: oracle | holdout.
    #[arg(long, global = true)]
    cv: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured room's impulse response.
    Simulate,
    /// Estimate an RIR from a source signal and an observation.
    Estimate {
        /// Source signal x (wav or csv).
        input: PathBuf,
        /// Observation y of length len(x) + N_h - 1 (wav or csv).
        observation: PathBuf,
        /// Prior RIR file; required by prior-based regularizers.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// True RIR; enables oracle eta selection and an NMSE report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Select eta over the configured grid instead of using the fixed value.
        #[arg(long)]
        select: bool,
    },
    /// Run the configured robustness sweep.
    Sweep {
        /// Record failed cells instead of aborting.
        #[arg(long)]
        keep_going: bool,
    },
    /// Emit the evaluation low-pass filter taps as CSV.
    FilterDesign,
    /// Run quick internal consistency checks.
    Selftest,
    /// Print a terminal sparkline summary of a sweep results CSV.
    Sparkline {
        /// Results CSV produced by the sweep command.
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let mut cfg = config::load_config(cli.config.as_deref())?;
    apply_overrides(&mut cfg, &cli)?;
    let hash = config::config_hash(&cfg);
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.io.out_dir));

    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &hash, &out_dir),
        Command::Estimate {
            input,
            observation,
            prior,
            truth,
            select,
        } => cmd_estimate(
            &cfg,
            &hash,
            &out_dir,
            input,
            observation,
            prior.as_deref(),
            truth.as_deref(),
            *select,
        ),
        Command::Sweep { keep_going } => cmd_sweep(&cfg, &hash, &out_dir, *keep_going),
        Command::FilterDesign => cmd_filter_design(&cfg, &hash, &out_dir),
        Command::Selftest => cmd_selftest(),
        Command::Sparkline { path } => cmd_sparkline(path),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<()> {
    if let Some(seed) = cli.seed {
        cfg.eval.rng_seed = seed;
    }
    if let Some(eta) = cli.eta {
        cfg.estimation.eta = eta;
    }
    if let Some(eps) = cli.epsilon {
        cfg.estimation.epsilon = eps;
    }
    if let Some(s) = cli.cost_scale {
        cfg.estimation.cost_scale = s;
    }
    if let Some(r) = &cli.regularizer {
        cfg.estimation.regularizer = RegularizerKind::parse(r).ok_or_else(|| {
            CliError::Config(format!(
                "--regularizer: unknown kind {r:?} (expected one of {})",
                RegularizerKind::ALL.map(|k| k.name()).join(", ")
            ))
        })?;
    }
    if let Some(cv) = &cli.cv {
        cfg.eval.cv = match cv.as_str() {
            "oracle" => CvKind::Oracle,
            "holdout" => CvKind::Holdout,
            other => {
                return Err(CliError::Config(format!(
                    "--cv: expected oracle or holdout, got {other:?}"
                )))
            }
        };
    }
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
}

fn write_meta(out_dir: &Path, name: &str, meta: &impl Serialize) -> Result<()> {
    let path = out_dir.join(name);
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::Io(format!("serializing {name}: {e}")))?;
    write_bytes(&path, json.as_bytes())
}

fn cmd_simulate(cfg: &RunConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let room = cfg.room.to_room_model();
    let rir = simulate_rir_with(&room, cfg.room.interpolation.into())?;
    let wav_path = out_dir.join("rir.wav");
    write_wav_file(
        &wav_path,
        &rir.taps,
        rir.sample_rate_hz,
        cfg.io.wav_format.into(),
    )?;
    let csv_path = out_dir.join("rir.csv");
    let provenance = format!("config_hash={hash} seed={}", cfg.eval.rng_seed);
    write_bytes(
        &csv_path,
        format_signal_csv(&rir.taps, Some(&provenance)).as_bytes(),
    )?;
    write_meta(
        out_dir,
        "rir.meta.json",
        &Meta {
            command: "simulate",
            config_hash: hash,
            seed: cfg.eval.rng_seed,
        },
    )?;
    println!(
        "simulated {} taps at {} Hz -> {}, {}",
        rir.len(),
        rir.sample_rate_hz,
        wav_path.display(),
        csv_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateReport {
    command: &'static str,
    config_hash: String,
    seed: u64,
    regularizer: String,
    eta: f64,
    eta_was_selected: bool,
    selection_strategy: Option<String>,
    eta_scores: Option<Vec<(f64, f64)>>,
    outer_iterations: usize,
    bcd_iterations_total: usize,
    converged: bool,
    objective_trace: Vec<f64>,
    nmse_vs_truth: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    cfg: &RunConfig,
    hash: &str,
    out_dir: &Path,
    input: &Path,
    observation: &Path,
    prior: Option<&Path>,
    truth: Option<&Path>,
    select: bool,
) -> Result<()> {
    let csv_rate = cfg.io.sample_rate_hz.or(Some(cfg.room.sample_rate_hz));
    let x = load_signal(input, csv_rate)?;
    let y = load_signal(observation, csv_rate)?;
    if y.len() < x.len() {
        return Err(CliError::Config(format!(
            "observation ({} samples) shorter than input ({} samples); expected the full convolution",
            y.len(),
            x.len()
        )));
    }
    let n_h = y.len() - x.len() + 1;
    let problem = validate_problem(EstimationProblem {
        input: x,
        observation: y,
        rir_length: n_h,
    })?;

    let solve_cfg = cfg.estimation.to_estimation_config();
    let kind = solve_cfg.regularizer;
    let prior_rir = match prior {
        Some(p) => Some(ImpulseResponse::new(
            load_signal(p, csv_rate)?.samples,
            problem.input.sample_rate_hz,
        )?),
        None => None,
    };
    if kind.needs_prior() && prior_rir.is_none() {
        return Err(CliError::Config(format!(
            "regularizer {kind} needs --prior <file> (the simulated prior RIR)"
        )));
    }
    let truth_rir = match truth {
        Some(p) => Some(ImpulseResponse::new(
            load_signal(p, csv_rate)?.samples,
            problem.input.sample_rate_hz,
        )?),
        None => None,
    };
    let reg = Regularizer::from_kind(kind, prior_rir.as_ref(), &solve_cfg, n_h)?;
    let lowpass = design_lowpass(
        cfg.eval.lowpass_cutoff_hz,
        problem.input.sample_rate_hz,
        cfg.eval.lowpass_taps,
    )?;

    let (report, eta_used, selected, strategy_name, scores): (
        SolveReport,
        f64,
        bool,
        Option<String>,
        Option<Vec<(f64, f64)>>,
    ) = if select {
        let grid = eta_grid(
            cfg.eval.eta_grid.lo,
            cfg.eval.eta_grid.hi,
            cfg.eval.eta_grid.count,
        )?;
        let (strategy, name) = match (cfg.eval.cv, &truth_rir) {
            (CvKind::Oracle, Some(t)) => (
                SelectionStrategy::OracleNmse {
                    true_h: t,
                    lowpass: &lowpass,
                },
                "oracle-nmse",
            ),
            (CvKind::Oracle, None) => {
                return Err(CliError::Config(
                    "oracle eta selection needs --truth <file>; use --cv holdout otherwise".into(),
                ))
            }
            (CvKind::Holdout, _) => (
                SelectionStrategy::HoldoutResidual {
                    fraction: cfg.eval.holdout_fraction,
                },
                "holdout-residual",
            ),
        };
        let sel = select_eta(&problem, &reg, &grid, &strategy, &solve_cfg)?;
        (
            sel.best_report,
            sel.best_eta,
            true,
            Some(name.to_string()),
            Some(sel.scores),
        )
    } else {
        (solve(&problem, &reg, &solve_cfg)?, solve_cfg.eta, false, None, None)
    };

    let estimate = &report.estimate;
    let wav_path = out_dir.join("estimate.wav");
    write_wav_file(
        &wav_path,
        &estimate.taps,
        estimate.sample_rate_hz,
        cfg.io.wav_format.into(),
    )?;
    let provenance = format!("config_hash={hash} seed={}", cfg.eval.rng_seed);
    write_bytes(
        &out_dir.join("estimate.csv"),
        format_signal_csv(&estimate.taps, Some(&provenance)).as_bytes(),
    )?;

    let nmse_vs_truth = match &truth_rir {
        Some(t) => Some(nmse(
            std::slice::from_ref(estimate),
            std::slice::from_ref(t),
            &lowpass,
        )?),
        None => None,
    };
    let full = EstimateReport {
        command: "estimate",
        config_hash: hash.to_string(),
        seed: cfg.eval.rng_seed,
        regularizer: kind.name().to_string(),
        eta: eta_used,
        eta_was_selected: selected,
        selection_strategy: strategy_name,
        eta_scores: scores,
        outer_iterations: report.outer_iterations,
        bcd_iterations_total: report.bcd_iterations_total,
        converged: report.converged,
        objective_trace: report.objective_trace.clone(),
        nmse_vs_truth,
    };
    write_meta(out_dir, "report.json", &full)?;
    println!(
        "estimated {n_h} taps with {kind} (eta {eta_used:.3e}{}) -> {}",
        if selected { ", grid-selected" } else { "" },
        wav_path.display()
    );
    if let Some(v) = nmse_vs_truth {
        println!("filtered NMSE vs truth: {v:.6}");
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, hash: &str, out_dir: &Path, keep_going: bool) -> Result<()> {
    let room = cfg.room.to_room_model();
    let eval_cfg = cfg.eval.to_eval_config(keep_going);
    let solve_cfg = cfg.estimation.to_estimation_config();
    let values = cfg.sweep.axis_values()?;
    if cfg.sweep.methods.is_empty() {
        return Err(CliError::Config("sweep.methods is empty".into()));
    }
    let mut result = match cfg.sweep.axis {
        SweepAxis::RoomDims => {
            run_dim_sweep(&room, &values, &cfg.sweep.methods, &eval_cfg, &solve_cfg)?
        }
        SweepAxis::Temperature => {
            run_temp_sweep(&room, &values, &cfg.sweep.methods, &eval_cfg, &solve_cfg)?
        }
    };
    // Stamp the CLI-level provenance hash over the library's internal one.
    result.config_hash = hash.to_string();

    let csv_path = out_dir.join("sweep.csv");
    write_bytes(&csv_path, result.to_csv().as_bytes())?;
    let json_path = out_dir.join("sweep.json");
    write_bytes(&json_path, result.to_json().as_bytes())?;
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "swept {} values x {} methods ({} realizations each) -> {}, {}",
        values.len(),
        cfg.sweep.methods.len(),
        eval_cfg.n_realizations,
        csv_path.display(),
        json_path.display()
    );
    if failed > 0 {
        println!("{failed} cells failed (recorded in the outputs)");
    }
    Ok(())
}

fn cmd_filter_design(cfg: &RunConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let taps = design_lowpass(
        cfg.eval.lowpass_cutoff_hz,
        cfg.room.sample_rate_hz,
        cfg.eval.lowpass_taps,
    )?;
    let path = out_dir.join("filter.csv");
    let provenance = format!(
        "config_hash={hash} seed={} cutoff_hz={} sample_rate_hz={}",
        cfg.eval.rng_seed, cfg.eval.lowpass_cutoff_hz, cfg.room.sample_rate_hz
    );
    write_bytes(&path, format_signal_csv(&taps, Some(&provenance)).as_bytes())?;
    println!(
        "designed {}-tap low-pass at {} Hz -> {}",
        taps.len(),
        cfg.eval.lowpass_cutoff_hz,
        path.display()
    );
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool, detail: String| {
        if ok {
            println!("selftest {name}: PASS ({detail})");
        } else {
            println!("selftest {name}: FAIL ({detail})");
            failures += 1;
        }
    };

    // Wright omega identity on a coarse grid.
    let mut worst = 0.0f64;
    let mut x = -700.0;
    while x <= 700.0 {
        let w = wright_omega(x);
        worst = worst.max((w + w.ln() - x).abs() / x.abs().max(1.0));
        x += 0.7;
    }
    check("wright-omega", worst <= 1e-10, format!("max residual {worst:.2e}"));

    // Convolution adjoint identity.
    let x: Vec<f64> = (0..64).map(|i| ((i * 37 % 64) as f64 / 32.0) - 1.0).collect();
    let op = ConvolutionOperator::new(&x, 24).map_err(CliError::Numeric)?;
    let h: Vec<f64> = (0..24).map(|i| ((i * 11 % 24) as f64 / 12.0) - 1.0).collect();
    let r: Vec<f64> = (0..87).map(|i| ((i * 53 % 87) as f64 / 43.0) - 1.0).collect();
    let lhs: f64 = op
        .apply(&h)
        .map_err(CliError::Numeric)?
        .iter()
        .zip(r.iter())
        .map(|(a, b)| a * b)
        .sum();
    let rhs: f64 = op
        .apply_adjoint(&r)
        .map_err(CliError::Numeric)?
        .iter()
        .zip(h.iter())
        .map(|(a, b)| a * b)
        .sum();
    let adj_err = (lhs - rhs).abs() / lhs.abs().max(1.0);
    check("conv-adjoint", adj_err <= 1e-10, format!("relative error {adj_err:.2e}"));

    // Proximal operator of a vanishing weight is the identity.
    let kernel = otrir::build_cost_kernel(6, 0.1, 1.0).map_err(CliError::Numeric)?;
    let prior = ImpulseResponse::new(vec![0.8, 0.4, 0.2, 0.1, 0.05, 0.02], 8000.0)
        .map_err(CliError::Numeric)?;
    let u = [0.5, -0.3, 0.2, 0.05, -0.02, 0.01];
    let (hp, state) = prox_ot(&u, &prior, 1e-12, &kernel, &ProxParams::default(), None)
        .map_err(CliError::Numeric)?;
    let prox_err = hp
        .iter()
        .zip(u.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check(
        "ot-prox-identity",
        state.converged && prox_err <= 1e-6,
        format!("max deviation {prox_err:.2e}"),
    );

    // Simulator determinism.
    let cfg = RunConfig::default();
    let room = cfg.room.to_room_model();
    let a = otrir::simulate_rir(&room).map_err(CliError::Numeric)?;
    let b = otrir::simulate_rir(&room).map_err(CliError::Numeric)?;
    check("ism-deterministic", a.taps == b.taps, format!("{} taps", a.len()));

    // Low-pass DC gain.
    let z = design_lowpass(3000.0, 8000.0, 129).map_err(CliError::Numeric)?;
    let dc: f64 = z.iter().sum();
    check("lowpass-dc", (dc - 1.0).abs() < 1e-10, format!("sum {dc:.12}"));

    if failures > 0 {
        Err(CliError::Numeric(otrir::Error::InvalidParameter {
            name: "selftest",
            reason: format!("{failures} checks failed"),
        }))
    } else {
        println!("selftest: all checks passed");
        Ok(())
    }
}

const SPARK_LEVELS: [char; 8] = ['\u{2581}', '\u{2582}', '\u{2583}', '\u{2584}', '\u{2585}', '\u{2586}', '\u{2587}', '\u{2588}'];

fn cmd_sparkline(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::file(path.display().to_string(), e))?;
    let rows = parse_results_rows(&text)?;
    if rows.is_empty() {
        return Err(CliError::Io(format!("{}: no data rows", path.display())));
    }
    let finite: Vec<f64> = rows
        .iter()
        .map(|r| r.nmse_mean)
        .filter(|v| v.is_finite())
        .collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.dedup();
    methods.sort();
    methods.dedup();
    println!(
        "{}: nmse_mean from {lo:.4} (low) to {hi:.4} (high) over {}",
        path.display(),
        rows[0].axis_name
    );
    for method in methods {
        let mut line = String::new();
        for r in rows.iter().filter(|r| r.method == method) {
            if !r.nmse_mean.is_finite() {
                line.push('x');
                continue;
            }
            let t = if hi > lo { (r.nmse_mean - lo) / (hi - lo) } else { 0.5 };
            let idx = ((t * 7.0).round() as usize).min(7);
            line.push(SPARK_LEVELS[idx]);
        }
        println!("{method:>10} {line}");
    }
    Ok(())
}
