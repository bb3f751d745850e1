//! Image-source simulation of shoebox room impulse responses, with
//! temperature-dependent speed of sound and fractional-delay rendering.

use crate::error::{Error, Result};
use crate::types::ImpulseResponse;

/// Shoebox room description: geometry, a single reflection coefficient
/// applied per bounce, air temperature, endpoints, and render length.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomModel {
    /// Box dimensions [Lx, Ly, Lz] in meters.
    pub dims: [f64; 3],
    /// Per-bounce amplitude factor in [0, 1].
    pub reflection_coeff: f64,
    pub temperature_c: f64,
    /// Source position in meters, strictly inside the box.
    pub source_pos: [f64; 3],
    /// Receiver position in meters, strictly inside the box.
    pub receiver_pos: [f64; 3],
    pub sample_rate_hz: f64,
    /// Rendered RIR length in taps.
    pub rir_length: usize,
    /// Reflection-order cap; None picks the smallest order at which the
    /// per-bounce decay drops below 1e-4.
    pub max_order: Option<usize>,
}

impl RoomModel {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dims",
                reason: format!("room dimensions must be positive, got {:?}", self.dims),
            });
        }
        if !(0.0..=1.0).contains(&self.reflection_coeff) {
            return Err(Error::InvalidParameter {
                name: "reflection_coeff",
                reason: format!("must lie in [0, 1], got {}", self.reflection_coeff),
            });
        }
        if self.temperature_c <= -273.15 {
            return Err(Error::InvalidParameter {
                name: "temperature_c",
                reason: format!("below absolute zero: {}", self.temperature_c),
            });
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sample_rate_hz",
                reason: format!("must be positive, got {}", self.sample_rate_hz),
            });
        }
        if self.rir_length == 0 {
            return Err(Error::InvalidParameter {
                name: "rir_length",
                reason: "must be at least 1".into(),
            });
        }
        for (name, pos) in [("source", &self.source_pos), ("receiver", &self.receiver_pos)] {
            for axis in 0..3 {
                if !(pos[axis] > 0.0 && pos[axis] < self.dims[axis]) {
                    return Err(Error::PositionOutsideRoom(match name {
                        "source" => "source",
                        _ => "receiver",
                    }));
                }
            }
        }
        Ok(())
    }
}

/// One mirror image of the source: absolute position, number of wall
/// bounces, and rendered amplitude `beta^I / (4 pi d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    pub reflection_count: usize,
    pub amplitude: f64,
}

/// How fractional delays are placed on the tap grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayInterpolation {
    /// 81-tap Hann-windowed sinc centered at the exact delay.
    #[default]
    WindowedSinc,
    /// Round to the nearest tap.
    NearestSample,
}

/// Speed of sound in air at the given temperature:
/// `c = 331.3 * sqrt(1 + T / 273.15)` m/s.
pub fn speed_of_sound(temperature_c: f64) -> Result<f64> {
    if temperature_c <= -273.15 {
        return Err(Error::InvalidParameter {
            name: "temperature_c",
            reason: format!("below absolute zero: {temperature_c}"),
        });
    }
    Ok(331.3 * (1.0 + temperature_c / 273.15).sqrt())
}

/// Relative amplitude below which the automatic order cap stops adding
/// reflections.
const AUTO_ORDER_FLOOR: f64 = 1e-4;

fn auto_max_order(beta: f64) -> usize {
    if beta == 0.0 {
        0
    } else if beta >= 1.0 {
        // Amplitude never decays; the delay cutoff bounds the lattice.
        usize::MAX
    } else {
        (AUTO_ORDER_FLOOR.ln() / beta.ln()).ceil() as usize
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3)
        .map(|i| (a[i] - b[i]) * (a[i] - b[i]))
        .sum::<f64>()
        .sqrt()
}

/// Enumerates the shoebox mirror-image lattice up to the order cap, dropping
/// images whose delay falls beyond the rendered RIR.
pub fn enumerate_images(room: &RoomModel) -> Result<Vec<ImageSource>> {
    room.validate()?;
    let c = speed_of_sound(room.temperature_c)?;
    let max_delay = room.rir_length as f64 / room.sample_rate_hz;
    let d_max = c * max_delay;
    let order_cap = room.max_order.unwrap_or_else(|| auto_max_order(room.reflection_coeff));
    let beta = room.reflection_coeff;

    let lattice_range = |l: f64| -> i64 { (d_max / (2.0 * l)).ceil() as i64 + 1 };
    let (mx, my, mz) = (
        lattice_range(room.dims[0]),
        lattice_range(room.dims[1]),
        lattice_range(room.dims[2]),
    );

    let mut images = Vec::new();
    for nx in -mx..=mx {
        for ny in -my..=my {
            for nz in -mz..=mz {
                for px in 0..=1i64 {
                    for py in 0..=1i64 {
                        for pz in 0..=1i64 {
                            let counts = [
                                ((nx - px).unsigned_abs() + nx.unsigned_abs()) as usize,
                                ((ny - py).unsigned_abs() + ny.unsigned_abs()) as usize,
                                ((nz - pz).unsigned_abs() + nz.unsigned_abs()) as usize,
                            ];
                            let order = counts[0] + counts[1] + counts[2];
                            if order > order_cap {
                                continue;
                            }
                            let lattice = [nx, ny, nz];
                            let parity = [px, py, pz];
                            let mut position = [0.0; 3];
                            for axis in 0..3 {
                                position[axis] = (1 - 2 * parity[axis]) as f64
                                    * room.source_pos[axis]
                                    + 2.0 * lattice[axis] as f64 * room.dims[axis];
                            }
                            let d = dist(&position, &room.receiver_pos);
                            if d == 0.0 {
                                return Err(Error::CoincidentSourceReceiver);
                            }
                            if d > d_max {
                                continue;
                            }
                            let amplitude = beta.powi(order as i32)
                                / (4.0 * std::f64::consts::PI * d);
                            images.push(ImageSource {
                                position,
                                reflection_count: order,
                                amplitude,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(images)
}

/// Half-width of the fractional-delay kernel; the full kernel spans 81 taps.
const SINC_HALF_WIDTH: f64 = 40.5;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn delay_kernel(x: f64) -> f64 {
    if x.abs() >= SINC_HALF_WIDTH {
        return 0.0;
    }
    let window = 0.5 * (1.0 + (std::f64::consts::PI * x / SINC_HALF_WIDTH).cos());
    sinc(x) * window
}

/// Renders the RIR by summing all image contributions with windowed-sinc
/// fractional delays.
pub fn simulate_rir(room: &RoomModel) -> Result<ImpulseResponse> {
    simulate_rir_with(room, DelayInterpolation::WindowedSinc)
}

/// As [`simulate_rir`] with an explicit delay-placement rule.
pub fn simulate_rir_with(
    room: &RoomModel,
    interpolation: DelayInterpolation,
) -> Result<ImpulseResponse> {
    let images = enumerate_images(room)?;
    let c = speed_of_sound(room.temperature_c)?;
    let fs = room.sample_rate_hz;
    let n = room.rir_length;
    let mut taps = vec![0.0; n];
    for img in &images {
        let d = dist(&img.position, &room.receiver_pos);
        let t = d / c * fs;
        match interpolation {
            DelayInterpolation::NearestSample => {
                let idx = t.round() as i64;
                if (0..n as i64).contains(&idx) {
                    taps[idx as usize] += img.amplitude;
                }
            }
            DelayInterpolation::WindowedSinc => {
                let lo = (t - SINC_HALF_WIDTH).ceil().max(0.0) as usize;
                let hi = ((t + SINC_HALF_WIDTH).floor() as i64).min(n as i64 - 1);
                if hi < 0 {
                    continue;
                }
                for tap in lo..=(hi as usize) {
                    taps[tap] += img.amplitude * delay_kernel(tap as f64 - t);
                }
            }
        }
    }
    ImpulseResponse::new(taps, fs)
}

/// Returns the room with every dimension shifted by `delta_dims` meters and
/// the temperature shifted by `delta_temp_c`, re-validating the geometry.
pub fn perturb_room(room: &RoomModel, delta_dims: f64, delta_temp_c: f64) -> Result<RoomModel> {
    let mut out = room.clone();
    for d in out.dims.iter_mut() {
        *d += delta_dims;
    }
    out.temperature_c += delta_temp_c;
    out.validate()?;
    Ok(out)
}
