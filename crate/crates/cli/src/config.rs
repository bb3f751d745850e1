//! Experiment configuration: a TOML file with `room`, `estimation`, `eval`,
//! `sweep`, and `io` sections. Unknown keys are rejected so typos fail loudly;
//! every physical quantity carries its unit in the field name.

use serde::{Deserialize, Serialize};

use otrir::{
    CvStrategy, DelayInterpolation, EstimationConfig, EvalConfig, RegularizerKind, RoomModel,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub room: RoomSection,
    pub estimation: EstimationSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSection {
    pub dims_m: [f64; 3],
    pub reflection_coeff: f64,
    pub temperature_c: f64,
    pub source_pos_m: [f64; 3],
    pub receiver_pos_m: [f64; 3],
    pub sample_rate_hz: f64,
    pub rir_length: usize,
    /// Reflection-order cap; omit for the automatic amplitude-based cap.
    pub max_order: Option<usize>,
    /// "windowed-sinc" or "nearest".
    pub interpolation: Interpolation,
}

impl Default for RoomSection {
    fn default() -> Self {
        RoomSection {
            dims_m: [7.0, 5.0, 3.0],
            reflection_coeff: 0.5,
            temperature_c: 19.6,
            source_pos_m: [5.0, 4.0, 1.0],
            receiver_pos_m: [2.0, 2.0, 1.5],
            sample_rate_hz: 8000.0,
            rir_length: 600,
            max_order: None,
            interpolation: Interpolation::WindowedSinc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    WindowedSinc,
    Nearest,
}

impl From<Interpolation> for DelayInterpolation {
    fn from(i: Interpolation) -> Self {
        match i {
            Interpolation::WindowedSinc => DelayInterpolation::WindowedSinc,
            Interpolation::Nearest => DelayInterpolation::NearestSample,
        }
    }
}

impl RoomSection {
    pub fn to_room_model(&self) -> RoomModel {
        RoomModel {
            dims: self.dims_m,
            reflection_coeff: self.reflection_coeff,
            temperature_c: self.temperature_c,
            source_pos: self.source_pos_m,
            receiver_pos: self.receiver_pos_m,
            sample_rate_hz: self.sample_rate_hz,
            rir_length: self.rir_length,
            max_order: self.max_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub eta: f64,
    pub epsilon: f64,
    /// Tap-index scale inside the quadratic transport cost.
    pub cost_scale: f64,
    pub regularizer: RegularizerKind,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub max_bcd_iters: usize,
    pub bcd_tol: f64,
    pub use_acceleration: bool,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let d = EstimationConfig::default();
        EstimationSection {
            eta: d.eta,
            epsilon: d.epsilon,
            cost_scale: d.cost_scale,
            regularizer: d.regularizer,
            max_outer_iters: d.max_outer_iters,
            outer_tol: d.outer_tol,
            max_bcd_iters: d.max_bcd_iters,
            bcd_tol: d.bcd_tol,
            use_acceleration: d.use_acceleration,
        }
    }
}

impl EstimationSection {
    pub fn to_estimation_config(&self) -> EstimationConfig {
        EstimationConfig {
            eta: self.eta,
            epsilon: self.epsilon,
            cost_scale: self.cost_scale,
            regularizer: self.regularizer,
            max_outer_iters: self.max_outer_iters,
            outer_tol: self.outer_tol,
            max_bcd_iters: self.max_bcd_iters,
            bcd_tol: self.bcd_tol,
            use_acceleration: self.use_acceleration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtaGridSection {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for EtaGridSection {
    fn default() -> Self {
        EtaGridSection {
            lo: 1e-6,
            hi: 1e6,
            count: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvKind {
    Oracle,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub lowpass_cutoff_hz: f64,
    pub lowpass_taps: usize,
    pub snr_db: f64,
    pub n_realizations: usize,
    pub rng_seed: u64,
    pub mic_region_center_m: [f64; 3],
    pub mic_region_side_m: f64,
    pub input_len: usize,
    pub eta_grid: EtaGridSection,
    pub cv: CvKind,
    pub holdout_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSection {
            lowpass_cutoff_hz: d.lowpass_cutoff_hz,
            lowpass_taps: d.lowpass_taps,
            snr_db: d.snr_db,
            n_realizations: d.n_realizations,
            rng_seed: d.rng_seed,
            mic_region_center_m: d.mic_region_center_m,
            mic_region_side_m: d.mic_region_side_m,
            input_len: d.input_len,
            eta_grid: EtaGridSection::default(),
            cv: CvKind::Oracle,
            holdout_fraction: 0.25,
        }
    }
}

impl EvalSection {
    pub fn to_eval_config(&self, keep_going: bool) -> EvalConfig {
        EvalConfig {
            lowpass_cutoff_hz: self.lowpass_cutoff_hz,
            lowpass_taps: self.lowpass_taps,
            snr_db: self.snr_db,
            n_realizations: self.n_realizations,
            rng_seed: self.rng_seed,
            mic_region_center_m: self.mic_region_center_m,
            mic_region_side_m: self.mic_region_side_m,
            input_len: self.input_len,
            eta_grid_lo: self.eta_grid.lo,
            eta_grid_hi: self.eta_grid.hi,
            eta_grid_count: self.eta_grid.count,
            cv: match self.cv {
                CvKind::Oracle => CvStrategy::Oracle,
                CvKind::Holdout => CvStrategy::Holdout {
                    fraction: self.holdout_fraction,
                },
            },
            keep_going,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    RoomDims,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeSection {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for RangeSection {
    fn default() -> Self {
        RangeSection {
            lo: -0.1,
            hi: 0.1,
            count: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    /// Explicit axis values; takes precedence over `range`.
    pub values: Option<Vec<f64>>,
    pub range: Option<RangeSection>,
    pub methods: Vec<RegularizerKind>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::RoomDims,
            values: None,
            range: Some(RangeSection::default()),
            methods: RegularizerKind::ALL.to_vec(),
        }
    }
}

impl SweepSection {
    pub fn axis_values(&self) -> Result<Vec<f64>> {
        if let Some(v) = &self.values {
            if v.is_empty() {
                return Err(CliError::Config("sweep.values is empty".into()));
            }
            return Ok(v.clone());
        }
        let r = self
            .range
            .as_ref()
            .ok_or_else(|| CliError::Config("sweep needs either values or range".into()))?;
        if r.count < 2 || !(r.lo < r.hi) {
            return Err(CliError::Config(format!(
                "sweep.range needs lo < hi and count >= 2, got {r:?}"
            )));
        }
        Ok((0..r.count)
            .map(|i| r.lo + (r.hi - r.lo) * i as f64 / (r.count - 1) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub out_dir: String,
    /// Sample rate assumed for CSV signal inputs; the room rate is used
    /// when omitted.
    pub sample_rate_hz: Option<f64>,
    /// "float32" or "pcm16".
    pub wav_format: WavFormatChoice,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            out_dir: "out".into(),
            sample_rate_hz: None,
            wav_format: WavFormatChoice::Float32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WavFormatChoice {
    Float32,
    Pcm16,
}

impl From<WavFormatChoice> for crate::io::WavFormat {
    fn from(c: WavFormatChoice) -> Self {
        match c {
            WavFormatChoice::Float32 => crate::io::WavFormat::Float32,
            WavFormatChoice::Pcm16 => crate::io::WavFormat::Pcm16,
        }
    }
}

/// Parses a config document, rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load_config(path: Option<&std::path::Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::file(p.display().to_string(), e))?;
            parse_config(&text)
        }
    }
}

/// Stable 64-bit hash of the effective configuration, stamped into every
/// output for provenance.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = toml::to_string(cfg).unwrap_or_default();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canonical.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.room.dims_m, [7.0, 5.0, 3.0]);
        assert_eq!(cfg.estimation.epsilon, 0.1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config("[room]\nwidth_m = 4.0\n").unwrap_err();
        assert!(err.to_string().contains("width_m"), "{err}");
        assert!(parse_config("[colors]\nred = 1\n").is_err());
    }

    #[test]
    fn sections_parse_and_convert() {
        let text = r#"
[room]
dims_m = [4.0, 3.0, 2.5]
reflection_coeff = 0.3
rir_length = 200

[estimation]
eta = 0.5
regularizer = "l1-prior"

[eval]
snr_db = 15.0
cv = "holdout"
eta_grid = { lo = 1e-3, hi = 1e3, count = 7 }

[sweep]
axis = "temperature"
values = [-14.6, 19.6, 24.6]
methods = ["ot-prior", "tikhonov"]
"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.room.to_room_model().dims, [4.0, 3.0, 2.5]);
        assert_eq!(
            cfg.estimation.to_estimation_config().regularizer,
            RegularizerKind::L1Prior
        );
        let eval = cfg.eval.to_eval_config(false);
        assert_eq!(eval.eta_grid_count, 7);
        assert!(matches!(eval.cv, CvStrategy::Holdout { fraction } if fraction == 0.25));
        assert_eq!(cfg.sweep.axis, SweepAxis::Temperature);
        assert_eq!(cfg.sweep.axis_values().unwrap(), vec![-14.6, 19.6, 24.6]);
    }

    #[test]
    fn range_expansion() {
        let cfg = parse_config("[sweep]\nrange = { lo = -0.1, hi = 0.1, count = 11 }\n").unwrap();
        let v = cfg.sweep.axis_values().unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[0], -0.1);
        assert_eq!(v[10], 0.1);
        assert!((v[5] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.estimation.eta = 2.0;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
