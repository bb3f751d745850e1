//! Evaluation machinery: the filtered NMSE metric, SNR-calibrated noise
//! injection, a deterministic speech-like source generator, and the
//! room-dimension / temperature robustness sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{direct_convolve, ConvolutionOperator};
use crate::error::{Error, Result};
use crate::ism::{perturb_room, simulate_rir, RoomModel};
use crate::solvers::{eta_grid, select_eta, Regularizer, SelectionStrategy};
use crate::types::{
    EstimationConfig, EstimationProblem, ImpulseResponse, RegularizerKind, Signal,
};

/// Eta-selection protocol used inside sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvStrategy {
    /// Pick the eta minimizing filtered NMSE against the known true RIR.
    Oracle,
    /// Fit on a prefix of the observation, score the held-out suffix.
    Holdout { fraction: f64 },
}

/// Sweep and metric configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub lowpass_cutoff_hz: f64,
    pub lowpass_taps: usize,
    /// Target SNR in dB; `inf` disables noise injection.
    pub snr_db: f64,
    pub n_realizations: usize,
    pub rng_seed: u64,
    /// Cube center for random microphone draws, meters.
    pub mic_region_center_m: [f64; 3],
    /// Cube side length, meters.
    pub mic_region_side_m: f64,
    /// Source segment length in samples.
    pub input_len: usize,
    pub eta_grid_lo: f64,
    pub eta_grid_hi: f64,
    pub eta_grid_count: usize,
    pub cv: CvStrategy,
    /// Record failed cells instead of aborting the sweep.
    pub keep_going: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lowpass_cutoff_hz: 3000.0,
            lowpass_taps: 129,
            snr_db: 5.0,
            n_realizations: 10,
            rng_seed: 1234,
            mic_region_center_m: [2.0, 2.0, 1.5],
            mic_region_side_m: 1.0,
            input_len: 100,
            eta_grid_lo: 1e-6,
            eta_grid_hi: 1e6,
            eta_grid_count: 30,
            cv: CvStrategy::Oracle,
            keep_going: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.lowpass_cutoff_hz > 0.0 && self.lowpass_cutoff_hz < sample_rate_hz / 2.0) {
            return Err(Error::InvalidParameter {
                name: "lowpass_cutoff_hz",
                reason: format!(
                    "must lie in (0, {}), got {}",
                    sample_rate_hz / 2.0,
                    self.lowpass_cutoff_hz
                ),
            });
        }
        if self.lowpass_taps % 2 == 0 || self.lowpass_taps == 0 {
            return Err(Error::InvalidParameter {
                name: "lowpass_taps",
                reason: format!("must be odd, got {}", self.lowpass_taps),
            });
        }
        if self.n_realizations == 0 {
            return Err(Error::InvalidParameter {
                name: "n_realizations",
                reason: "need at least one realization".into(),
            });
        }
        if self.input_len == 0 {
            return Err(Error::InvalidParameter {
                name: "input_len",
                reason: "source segment must be non-empty".into(),
            });
        }
        if let CvStrategy::Holdout { fraction } = self.cv {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "holdout fraction",
                    reason: format!("must lie in (0, 1), got {fraction}"),
                });
            }
        }
        Ok(())
    }
}

/// Linear-phase windowed-sinc low-pass FIR with unit DC gain.
pub fn design_lowpass(cutoff_hz: f64, sample_rate_hz: f64, n_taps: usize) -> Result<Vec<f64>> {
    if !(sample_rate_hz > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sample_rate_hz",
            reason: format!("must be positive, got {sample_rate_hz}"),
        });
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::InvalidParameter {
            name: "cutoff_hz",
            reason: format!(
                "must lie strictly inside (0, {}), got {cutoff_hz}",
                sample_rate_hz / 2.0
            ),
        });
    }
    if n_taps % 2 == 0 || n_taps == 0 {
        return Err(Error::InvalidParameter {
            name: "n_taps",
            reason: format!("must be odd, got {n_taps}"),
        });
    }
    let mid = (n_taps - 1) as f64 / 2.0;
    let fc = cutoff_hz / sample_rate_hz;
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|k| {
            let x = k as f64 - mid;
            let ideal = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            // Hamming window.
            let w = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / (n_taps - 1) as f64).cos();
            ideal * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    Ok(taps)
}

/// Filtered squared-error ratio for one estimate/truth pair:
/// `||est*z - truth*z||^2 / ||truth*z||^2`.
pub(crate) fn filtered_nmse_pair(est: &[f64], truth: &[f64], z: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: est.len(),
            context: "estimate and truth must have equal tap counts",
        });
    }
    if z.is_empty() {
        return Err(Error::InvalidParameter {
            name: "lowpass",
            reason: "filter must be non-empty".into(),
        });
    }
    let est_f = direct_convolve(est, z);
    let truth_f = direct_convolve(truth, z);
    let den: f64 = truth_f.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::InvalidParameter {
            name: "truth",
            reason: "true RIR has zero energy after filtering".into(),
        });
    }
    let num: f64 = est_f
        .iter()
        .zip(truth_f.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

/// NMSE over realization pairs: the sum of per-pair filtered error ratios.
pub fn nmse(
    estimates: &[ImpulseResponse],
    truths: &[ImpulseResponse],
    z: &[f64],
) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: estimates.len(),
            context: "estimate and truth lists must have equal lengths",
        });
    }
    let mut total = 0.0;
    for (e, t) in estimates.iter().zip(truths.iter()) {
        total += filtered_nmse_pair(&e.taps, &t.taps, z)?;
    }
    Ok(total)
}

/// Adds white Gaussian noise scaled to the target SNR (in dB) against the
/// empirical power of the clean signal. Deterministic per seed; an infinite
/// SNR returns the signal unchanged.
pub fn add_noise(y: &Signal, snr_db: f64, seed: u64) -> Result<Signal> {
    if snr_db == f64::INFINITY {
        return Ok(y.clone());
    }
    let power = y.power();
    if power == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = y
        .samples
        .iter()
        .map(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + sigma * n
        })
        .collect();
    Signal::new(samples, y.sample_rate_hz)
}

/// Two-pole resonator with per-sample retuning; the moving formants of the
/// synthetic source run through a cascade of these.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Resonator { y1: 0.0, y2: 0.0 }
    }

    fn tick(&mut self, x: f64, fc: f64, bw: f64, fs: f64) -> f64 {
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let c = 2.0 * r * (2.0 * std::f64::consts::PI * fc / fs).cos();
        let y = (1.0 - r) * x + c * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Deterministic speech-like test source: voiced harmonic bursts with pitch
/// drift shaped by two drifting formant resonators, interleaved with quieter
/// unvoiced noise bursts and short gaps. Spectrally sparse and
/// non-stationary, unlike white noise.
pub fn synth_speech_like(n_samples: usize, sample_rate_hz: f64, seed: u64) -> Signal {
    let fs = sample_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    let nyquist = fs / 2.0;
    let mut has_content = false;
    while out.len() < n_samples {
        let kind: f64 = rng.random_range(0.0..1.0);
        if kind < 0.15 && has_content {
            // Short gap; never first, so a short cut can't be all silence.
            let dur = (rng.random_range(0.005..0.02) * fs) as usize;
            out.extend(std::iter::repeat(0.0).take(dur.max(1)));
            continue;
        }
        has_content = true;
        let voiced = kind < 0.75;
        let dur = (rng.random_range(0.03..0.08) * fs) as usize;
        let dur = dur.max(8);
        let amp = if voiced {
            rng.random_range(0.5..1.0)
        } else {
            rng.random_range(0.1..0.3)
        };
        let f0_start: f64 = rng.random_range(90.0..220.0);
        let f0_end = f0_start * rng.random_range(0.8..1.25);
        let f1_start = rng.random_range(300.0..900.0f64).min(nyquist * 0.4);
        let f1_end = (f1_start * rng.random_range(0.7..1.4)).min(nyquist * 0.5);
        let f2_start = rng.random_range(1000.0..2500.0f64).min(nyquist * 0.8);
        let f2_end = (f2_start * rng.random_range(0.8..1.3)).min(nyquist * 0.85);
        let mut phase = 0.0f64;
        let mut form1 = Resonator::new();
        let mut form2 = Resonator::new();
        let ramp = (0.01 * fs) as usize;
        for i in 0..dur {
            let frac = i as f64 / dur as f64;
            let excitation = if voiced {
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase += f0 / fs;
                let harmonics = ((nyquist * 0.9) / f0).floor().min(8.0) as usize;
                (1..=harmonics.max(1))
                    .map(|h| {
                        (2.0 * std::f64::consts::PI * h as f64 * phase).sin() / h as f64
                    })
                    .sum::<f64>()
            } else {
                rng.random_range(-1.0..1.0)
            };
            let fc1 = f1_start + (f1_end - f1_start) * frac;
            let fc2 = f2_start + (f2_end - f2_start) * frac;
            let shaped = form2.tick(form1.tick(excitation, fc1, 120.0, fs), fc2, 180.0, fs);
            // Raised-cosine edges to avoid clicks between segments.
            let env_in = if i < ramp {
                0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp as f64).cos())
            } else {
                1.0
            };
            let env_out = if dur - i <= ramp {
                0.5 * (1.0 - (std::f64::consts::PI * (dur - i) as f64 / ramp as f64).cos())
            } else {
                1.0
            };
            out.push(amp * shaped * env_in * env_out);
        }
    }
    out.truncate(n_samples);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in out.iter_mut() {
            *v /= peak;
        }
    }
    Signal {
        samples: out,
        sample_rate_hz: fs,
    }
}

/// FNV-1a mix of seed components; cell seeds hash the perturbation size so a
/// cell rerun in isolation (or reached through a different sweep axis) sees
/// identical data.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn canonical_bits(v: f64) -> u64 {
    // Collapse -0.0 onto 0.0 so a zero perturbation hashes identically on
    // both sweep axes.
    if v == 0.0 {
        0.0f64.to_bits()
    } else {
        v.to_bits()
    }
}

/// All per-realization data one sweep cell shares across methods.
#[derive(Debug, Clone)]
pub struct CellData {
    pub mic_pos: [f64; 3],
    pub h_true: ImpulseResponse,
    pub h_prior: ImpulseResponse,
    pub problem: EstimationProblem,
}

/// Builds the shared data for one (perturbation, realization) cell: a
/// microphone draw, the true and prior RIR simulations, a fresh source
/// segment, and the noisy observation.
pub fn build_cell_data(
    base_room: &RoomModel,
    prior_room: &RoomModel,
    eval_cfg: &EvalConfig,
    cell_seed: u64,
) -> Result<CellData> {
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
    let mut mic = [0.0; 3];
    for (axis, m) in mic.iter_mut().enumerate() {
        let u: f64 = rng.random_range(-0.5..0.5);
        *m = eval_cfg.mic_region_center_m[axis] + eval_cfg.mic_region_side_m * u;
    }
    let true_room = RoomModel {
        receiver_pos: mic,
        ..base_room.clone()
    };
    let prior_room = RoomModel {
        receiver_pos: mic,
        ..prior_room.clone()
    };
    let h_true = simulate_rir(&true_room)?;
    let h_prior = simulate_rir(&prior_room)?;
    let x = synth_speech_like(
        eval_cfg.input_len,
        base_room.sample_rate_hz,
        mix_seed(&[cell_seed, 1]),
    );
    let op = ConvolutionOperator::new(&x.samples, h_true.len())?;
    let clean = op.apply(&h_true.taps)?;
    let y = add_noise(
        &Signal::new(clean, base_room.sample_rate_hz)?,
        eval_cfg.snr_db,
        mix_seed(&[cell_seed, 2]),
    )?;
    let problem = EstimationProblem {
        input: x,
        observation: y,
        rir_length: h_true.len(),
    };
    Ok(CellData {
        mic_pos: mic,
        h_true,
        h_prior,
        problem,
    })
}

/// Seed for the data shared by every method in one cell.
pub fn cell_seed(global_seed: u64, perturbation: f64, realization: usize) -> u64 {
    mix_seed(&[global_seed, canonical_bits(perturbation), realization as u64])
}

/// One (axis value, method) cell of a sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis_value: f64,
    pub method: String,
    pub nmse_sum: f64,
    pub nmse_mean: f64,
    pub n_realizations: usize,
    pub selected_etas: Vec<f64>,
    pub nmse_per_realization: Vec<f64>,
    /// Populated when the cell failed and the sweep ran with keep_going.
    pub error: Option<String>,
}

/// Complete result of a robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis_name: String,
    pub seed: u64,
    pub config_hash: String,
    pub cells: Vec<SweepCell>,
}

/// One parsed row of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub axis_name: String,
    pub axis_value: f64,
    pub method: String,
    pub eta_selected: f64,
    pub nmse_sum: f64,
    pub nmse_mean: f64,
    pub n_realizations: usize,
    pub seed: u64,
}

pub const CSV_HEADER: &str =
    "axis_name,axis_value,method,eta_selected,nmse_sum,nmse_mean,n_realizations,seed";

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

impl SweepResult {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.cells
            .iter()
            .map(|c| CsvRow {
                axis_name: self.axis_name.clone(),
                axis_value: c.axis_value,
                method: c.method.clone(),
                eta_selected: median(&c.selected_etas),
                nmse_sum: c.nmse_sum,
                nmse_mean: c.nmse_mean,
                n_realizations: c.n_realizations,
                seed: self.seed,
            })
            .collect()
    }

    /// Plot-ready CSV: a provenance comment, a header, one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={} seed={}\n{CSV_HEADER}\n", self.config_hash, self.seed);
        for row in self.csv_rows() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.axis_name,
                row.axis_value,
                row.method,
                row.eta_selected,
                row.nmse_sum,
                row.nmse_mean,
                row.n_realizations,
                row.seed
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }
}

/// Parses a results CSV (as produced by [`SweepResult::to_csv`]); comment
/// lines starting with '#' are skipped.
pub fn parse_results_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(Error::InvalidParameter {
                    name: "csv header",
                    reason: format!("line {}: unexpected header {line:?}", lineno + 1),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::InvalidParameter {
                name: "csv row",
                reason: format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::InvalidParameter {
                name: "csv field",
                reason: format!("line {}: bad {what}: {s:?}", lineno + 1),
            })
        };
        rows.push(CsvRow {
            axis_name: fields[0].to_string(),
            axis_value: parse_f64(fields[1], "axis_value")?,
            method: fields[2].to_string(),
            eta_selected: parse_f64(fields[3], "eta_selected")?,
            nmse_sum: parse_f64(fields[4], "nmse_sum")?,
            nmse_mean: parse_f64(fields[5], "nmse_mean")?,
            n_realizations: fields[6].parse().map_err(|_| Error::InvalidParameter {
                name: "csv field",
                reason: format!("line {}: bad n_realizations", lineno + 1),
            })?,
            seed: fields[7].parse().map_err(|_| Error::InvalidParameter {
                name: "csv field",
                reason: format!("line {}: bad seed", lineno + 1),
            })?,
        });
    }
    Ok(rows)
}

/// Robustness sweep over an additive room-dimension perturbation: the prior
/// RIR is simulated in a room whose every dimension is shifted by delta.
pub fn run_dim_sweep(
    base_room: &RoomModel,
    deltas: &[f64],
    methods: &[RegularizerKind],
    eval_cfg: &EvalConfig,
    solve_cfg: &EstimationConfig,
) -> Result<SweepResult> {
    run_sweep(
        base_room,
        "room_dim_delta_m",
        deltas,
        |base, &delta| perturb_room(base, delta, 0.0),
        |&delta| delta,
        methods,
        eval_cfg,
        solve_cfg,
    )
}

/// Robustness sweep over the prior's assumed temperature (absolute degrees
/// Celsius); only the prior's room model is perturbed.
pub fn run_temp_sweep(
    base_room: &RoomModel,
    temps_c: &[f64],
    methods: &[RegularizerKind],
    eval_cfg: &EvalConfig,
    solve_cfg: &EstimationConfig,
) -> Result<SweepResult> {
    run_sweep(
        base_room,
        "temperature_c",
        temps_c,
        |base, &t| perturb_room(base, 0.0, t - base.temperature_c),
        |&t| t - base_room.temperature_c,
        methods,
        eval_cfg,
        solve_cfg,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    base_room: &RoomModel,
    axis_name: &str,
    values: &[f64],
    prior_room_for: impl Fn(&RoomModel, &f64) -> Result<RoomModel> + Sync,
    perturbation_of: impl Fn(&f64) -> f64 + Sync,
    methods: &[RegularizerKind],
    eval_cfg: &EvalConfig,
    solve_cfg: &EstimationConfig,
) -> Result<SweepResult> {
    base_room.validate()?;
    eval_cfg.validate(base_room.sample_rate_hz)?;
    solve_cfg.validate()?;
    if values.is_empty() || methods.is_empty() {
        return Err(Error::InvalidParameter {
            name: "sweep axis",
            reason: "need at least one axis value and one method".into(),
        });
    }
    let lowpass = design_lowpass(
        eval_cfg.lowpass_cutoff_hz,
        base_room.sample_rate_hz,
        eval_cfg.lowpass_taps,
    )?;
    let grid = eta_grid(
        eval_cfg.eta_grid_lo,
        eval_cfg.eta_grid_hi,
        eval_cfg.eta_grid_count,
    )?;
    let config_hash = format!(
        "{:016x}",
        mix_seed(&[
            mix_seed(
                &format!("{base_room:?}|{axis_name}|{values:?}|{methods:?}|{eval_cfg:?}|{solve_cfg:?}")
                    .bytes()
                    .map(|b| b as u64)
                    .collect::<Vec<_>>()
            ),
        ])
    );

    // Work units: one per (axis value, realization); methods share the data
    // built inside.
    struct UnitOutcome {
        value_idx: usize,
        realization: usize,
        // Per method: (selected eta, nmse ratio) or an error message.
        per_method: Vec<std::result::Result<(f64, f64), String>>,
    }

    let units: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|vi| (0..eval_cfg.n_realizations).map(move |r| (vi, r)))
        .collect();

    let outcomes: Vec<Result<UnitOutcome>> = units
        .par_iter()
        .map(|&(value_idx, realization)| {
            let value = values[value_idx];
            let prior_room = prior_room_for(base_room, &value)?;
            let seed = cell_seed(eval_cfg.rng_seed, perturbation_of(&value), realization);
            let data = build_cell_data(base_room, &prior_room, eval_cfg, seed)?;
            let n_h = data.h_true.len();
            let strategy = match eval_cfg.cv {
                CvStrategy::Oracle => SelectionStrategy::OracleNmse {
                    true_h: &data.h_true,
                    lowpass: &lowpass,
                },
                CvStrategy::Holdout { fraction } => SelectionStrategy::HoldoutResidual { fraction },
            };
            let per_method = methods
                .iter()
                .map(|&kind| {
                    let run = || -> Result<(f64, f64)> {
                        let reg =
                            Regularizer::from_kind(kind, Some(&data.h_prior), solve_cfg, n_h)?;
                        let sel = select_eta(&data.problem, &reg, &grid, &strategy, solve_cfg)?;
                        let ratio = filtered_nmse_pair(
                            &sel.best_report.estimate.taps,
                            &data.h_true.taps,
                            &lowpass,
                        )?;
                        Ok((sel.best_eta, ratio))
                    };
                    run().map_err(|e| e.to_string())
                })
                .collect();
            Ok(UnitOutcome {
                value_idx,
                realization,
                per_method,
            })
        })
        .collect();

    // Assemble cells keyed by (axis value, method), realizations in order.
    let k = eval_cfg.n_realizations;
    let mut cells: Vec<SweepCell> = Vec::with_capacity(values.len() * methods.len());
    for (vi, &value) in values.iter().enumerate() {
        let mut per_method_etas = vec![Vec::with_capacity(k); methods.len()];
        let mut per_method_ratios = vec![Vec::with_capacity(k); methods.len()];
        let mut per_method_errors: Vec<Option<String>> = vec![None; methods.len()];
        for r in 0..k {
            let outcome = outcomes
                .iter()
                .find(|o| matches!(o, Ok(u) if u.value_idx == vi && u.realization == r));
            match outcome {
                Some(Ok(unit)) => {
                    for (mi, res) in unit.per_method.iter().enumerate() {
                        match res {
                            Ok((eta, ratio)) => {
                                per_method_etas[mi].push(*eta);
                                per_method_ratios[mi].push(*ratio);
                            }
                            Err(msg) => {
                                if per_method_errors[mi].is_none() {
                                    per_method_errors[mi] = Some(msg.clone());
                                }
                            }
                        }
                    }
                }
                _ => {
                    // Data construction for this unit failed; find the error.
                    let msg = outcomes
                        .iter()
                        .filter_map(|o| o.as_ref().err())
                        .map(|e| e.to_string())
                        .next()
                        .unwrap_or_else(|| "cell data construction failed".to_string());
                    for slot in per_method_errors.iter_mut() {
                        if slot.is_none() {
                            *slot = Some(msg.clone());
                        }
                    }
                }
            }
        }
        for (mi, &method) in methods.iter().enumerate() {
            let cell_error = per_method_errors[mi].clone();
            if let Some(msg) = &cell_error {
                if !eval_cfg.keep_going {
                    return Err(Error::SweepCell {
                        axis_value: value,
                        method: method.name().to_string(),
                        realization: per_method_ratios[mi].len(),
                        source: Box::new(Error::InvalidParameter {
                            name: "cell",
                            reason: msg.clone(),
                        }),
                    });
                }
            }
            let ratios = &per_method_ratios[mi];
            let sum: f64 = if cell_error.is_some() {
                f64::NAN
            } else {
                ratios.iter().sum()
            };
            cells.push(SweepCell {
                axis_value: value,
                method: method.name().to_string(),
                nmse_sum: sum,
                nmse_mean: sum / k as f64,
                n_realizations: k,
                selected_etas: per_method_etas[mi].clone(),
                nmse_per_realization: ratios.clone(),
                error: cell_error,
            });
        }
    }

    Ok(SweepResult {
        axis_name: axis_name.to_string(),
        seed: eval_cfg.rng_seed,
        config_hash,
        cells,
    })
}
