//! Phenomenological model of a spin-orbit-torque Hall-bar stochastic neuron.
//!
//! A device has two magnetization states. A write pulse of amplitude `i`
//! switches it from RESET to SET with probability
//! `sigmoid((i - i_bias) / i_delta)`; a reset pulse returns it to RESET
//! deterministically. The state is read through the anomalous Hall
//! resistance, which is `r_set` or `r_reset` depending on the state.
//!
//! Device-to-device variation is modeled by linear width scaling laws for
//! `i_bias` and `i_delta` with a bounded uniform fractional perturbation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, StreamRng};

/// Read current used for every Hall readout (A).
pub const READ_CURRENT: f64 = 50e-6;
/// Reset and write pulse width (s). Carried for energy and timing accounting only.
pub const PULSE_WIDTH: f64 = 100e-6;
/// Read pulse duration (s), timing metadata.
pub const READ_DURATION: f64 = 0.5;
/// Interval between pulses in the measurement protocol (s), timing metadata.
pub const PULSE_INTERVAL: f64 = 2.0;

pub const MIN_WIDTH_UM: f64 = 0.3;
pub const MAX_WIDTH_UM: f64 = 5.0;

/// Hall-bar widths characterized in the reference measurement campaign (μm).
pub const CHARACTERIZED_WIDTHS_UM: [f64; 9] = [5.0, 2.5, 2.0, 1.5, 1.0, 0.9, 0.7, 0.5, 0.3];

/// Default bound on device-to-device fractional variation.
pub const DEFAULT_VARIATION_LIMIT: f64 = 0.25;

pub const DEFAULT_R_SET: f64 = -20.0;
pub const DEFAULT_R_RESET: f64 = 20.0;
/// Anisotropy field of a 700 nm bar (A/m).
pub const DEFAULT_H_AN: f64 = 5.8e5;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    width_um: f64,
}

impl DeviceGeometry {
    /// A Hall bar inside the characterized width range.
    pub fn new(width_um: f64) -> Result<Self> {
        if !(MIN_WIDTH_UM..=MAX_WIDTH_UM).contains(&width_um) {
            return Err(Error::param(
                "width_um",
                format!("{width_um} outside supported range [{MIN_WIDTH_UM}, {MAX_WIDTH_UM}]"),
            ));
        }
        Ok(Self { width_um })
    }

    /// A Hall bar of any positive width, skipping the supported-range check.
    pub fn extrapolated(width_um: f64) -> Result<Self> {
        if !(width_um.is_finite() && width_um > 0.0) {
            return Err(Error::param("width_um", format!("{width_um} must be > 0")));
        }
        Ok(Self { width_um })
    }

    pub fn width_um(&self) -> f64 {
        self.width_um
    }
}

/// Electrical parameters of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDeviceParams", into = "RawDeviceParams")]
pub struct DeviceParams {
    i_bias: f64,
    i_delta: f64,
    r_set: f64,
    r_reset: f64,
    h_an: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDeviceParams {
    i_bias: f64,
    i_delta: f64,
    r_set: f64,
    r_reset: f64,
    h_an: f64,
}

impl TryFrom<RawDeviceParams> for DeviceParams {
    type Error = Error;

    fn try_from(r: RawDeviceParams) -> Result<Self> {
        DeviceParams::with_readout(r.i_bias, r.i_delta, r.r_set, r.r_reset, r.h_an)
    }
}

impl From<DeviceParams> for RawDeviceParams {
    fn from(p: DeviceParams) -> Self {
        RawDeviceParams {
            i_bias: p.i_bias,
            i_delta: p.i_delta,
            r_set: p.r_set,
            r_reset: p.r_reset,
            h_an: p.h_an,
        }
    }
}

impl DeviceParams {
    /// Switching parameters with the default ±20 Ω readout.
    pub fn new(i_bias: f64, i_delta: f64) -> Result<Self> {
        Self::with_readout(i_bias, i_delta, DEFAULT_R_SET, DEFAULT_R_RESET, DEFAULT_H_AN)
    }

    pub fn with_readout(i_bias: f64, i_delta: f64, r_set: f64, r_reset: f64, h_an: f64) -> Result<Self> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be finite and > 0")))
            }
        };
        positive("i_bias", i_bias)?;
        positive("i_delta", i_delta)?;
        positive("h_an", h_an)?;
        if !(r_set.is_finite() && r_reset.is_finite()) {
            return Err(Error::param("r_set/r_reset", "resistances must be finite"));
        }
        if r_set == r_reset {
            return Err(Error::param(
                "r_set/r_reset",
                "states must read out distinct resistances",
            ));
        }
        Ok(Self {
            i_bias,
            i_delta,
            r_set,
            r_reset,
            h_an,
        })
    }

    pub fn i_bias(&self) -> f64 {
        self.i_bias
    }

    pub fn i_delta(&self) -> f64 {
        self.i_delta
    }

    pub fn r_set(&self) -> f64 {
        self.r_set
    }

    pub fn r_reset(&self) -> f64 {
        self.r_reset
    }

    pub fn h_an(&self) -> f64 {
        self.h_an
    }

    pub fn resistance(&self, m: Magnetization) -> f64 {
        match m {
            Magnetization::Reset => self.r_reset,
            Magnetization::Set => self.r_set,
        }
    }

    /// Write current that places the sigmoid argument at `z`.
    #[inline]
    pub fn drive_current(&self, z: f64) -> f64 {
        self.i_bias + z * self.i_delta
    }
}

/// Probability that a write pulse of amplitude `i_write` switches a RESET device.
pub fn switching_probability(params: &DeviceParams, i_write: f64) -> Result<f64> {
    if !i_write.is_finite() {
        return Err(Error::InvalidInput(format!("write current {i_write} is not finite")));
    }
    Ok(sigmoid((i_write - params.i_bias) / params.i_delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Magnetization {
    Reset,
    Set,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HallReading {
    pub v_ahe: f64,
    pub r_ahe: f64,
}

/// Magnetization plus the device's private random stream.
///
/// A write pulse from RESET consumes exactly one uniform draw; nothing else
/// touches the stream, so a seed and a pulse sequence fix the trajectory.
#[derive(Debug, Clone)]
pub struct DeviceState {
    magnetization: Magnetization,
    rng: StreamRng,
}

impl DeviceState {
    /// A RESET device with a stream seeded by `seed`.
    pub fn new(seed: u64) -> Self {
        Self {
            magnetization: Magnetization::Reset,
            rng: seed::stream(seed),
        }
    }

    pub fn magnetization(&self) -> Magnetization {
        self.magnetization
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = seed::stream(seed);
    }

    pub fn apply_reset_pulse(&mut self) {
        self.magnetization = Magnetization::Reset;
    }

    /// Applies a write pulse and reports whether a RESET→SET transition happened.
    ///
    /// SET is absorbing: a pulse on a SET device does nothing and draws nothing.
    pub fn apply_write_pulse(&mut self, params: &DeviceParams, i_write: f64) -> Result<bool> {
        let p = switching_probability(params, i_write)?;
        if self.magnetization == Magnetization::Set {
            return Ok(false);
        }
        let switched = self.rng.gen::<f64>() < p;
        if switched {
            self.magnetization = Magnetization::Set;
        }
        Ok(switched)
    }

    pub fn read_hall(&self, params: &DeviceParams, i_read: f64) -> Result<HallReading> {
        if !(i_read.is_finite() && i_read > 0.0) {
            return Err(Error::InvalidInput(format!("read current {i_read} must be > 0")));
        }
        let r_ahe = params.resistance(self.magnetization);
        Ok(HallReading {
            v_ahe: r_ahe * i_read,
            r_ahe,
        })
    }

    /// Sweeps the write current through `currents`, recording `(i, r_ahe)`.
    ///
    /// Positive current tries to switch RESET→SET and negative current
    /// SET→RESET, each with probability `switching_probability(|i|)`.
    pub fn sweep_hysteresis(&mut self, params: &DeviceParams, currents: &[f64]) -> Result<Vec<(f64, f64)>> {
        let mut trace = Vec::with_capacity(currents.len());
        for &i in currents {
            let p = switching_probability(params, i.abs())?;
            let target = match (i > 0.0, i < 0.0, self.magnetization) {
                (true, _, Magnetization::Reset) => Some(Magnetization::Set),
                (_, true, Magnetization::Set) => Some(Magnetization::Reset),
                _ => None,
            };
            if let Some(next) = target {
                if self.rng.gen::<f64>() < p {
                    self.magnetization = next;
                }
            }
            trace.push((i, params.resistance(self.magnetization)));
        }
        Ok(trace)
    }
}

/// Width of a hysteresis loop: the current of the first RESET→SET jump
/// minus the current of the first SET→RESET jump after it.
pub fn loop_width(trace: &[(f64, f64)], params: &DeviceParams) -> Option<f64> {
    let mut up = None;
    for w in trace.windows(2) {
        let (prev, (i, r)) = (w[0].1, w[1]);
        if up.is_none() && prev == params.r_reset && r == params.r_set {
            up = Some(i);
        } else if let Some(i_up) = up {
            if prev == params.r_set && r == params.r_reset {
                return Some(i_up - i);
            }
        }
    }
    None
}

/// Linear width law `slope·w + intercept` with a bounded fractional spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    /// A per μm.
    pub slope: f64,
    /// A.
    pub intercept: f64,
    pub variation_limit: f64,
}

/// Intercept-to-slope ratio (μm) of the default dispersion law, solved so that
/// `i_delta(5.0) / i_delta(0.3) = √50`.
pub fn default_delta_offset_um() -> f64 {
    let r = 50f64.sqrt();
    (MAX_WIDTH_UM - MIN_WIDTH_UM * r) / (r - 1.0)
}

impl ScalingLaw {
    pub fn new(slope: f64, intercept: f64, variation_limit: f64) -> Result<Self> {
        let law = Self {
            slope,
            intercept,
            variation_limit,
        };
        law.check_limit()?;
        Ok(law)
    }

    fn check_limit(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.variation_limit) {
            return Err(Error::param(
                "variation_limit",
                format!("{} outside [0, 1]", self.variation_limit),
            ));
        }
        if !(self.slope.is_finite() && self.intercept.is_finite()) {
            return Err(Error::param("slope/intercept", "must be finite"));
        }
        Ok(())
    }

    /// Default bias-current law: 0.1 mA/μm · w + 0.6 mA.
    pub fn default_bias() -> Self {
        Self {
            slope: 0.1e-3,
            intercept: 0.6e-3,
            variation_limit: DEFAULT_VARIATION_LIMIT,
        }
    }

    /// Default dispersion law: `c·(w + w0)` with `i_delta(0.5 μm) = 50 μA`
    /// and `w0` from [`default_delta_offset_um`]. Carries no spread.
    pub fn default_delta() -> Self {
        let w0 = default_delta_offset_um();
        let c = 50e-6 / (0.5 + w0);
        Self {
            slope: c,
            intercept: c * w0,
            variation_limit: 0.0,
        }
    }

    pub fn with_variation(mut self, variation_limit: f64) -> Result<Self> {
        self.variation_limit = variation_limit;
        self.check_limit()?;
        Ok(self)
    }

    pub fn nominal(&self, width_um: f64) -> f64 {
        self.slope * width_um + self.intercept
    }

    fn nominal_checked(&self, name: &'static str, width_um: f64) -> Result<f64> {
        self.check_limit()?;
        let v = self.nominal(width_um);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::param(name, format!("law evaluates to {v} at width {width_um} μm")));
        }
        Ok(v)
    }
}

/// Nominal (variation-free) parameters at a width.
pub fn nominal_device(geometry: DeviceGeometry, bias_law: &ScalingLaw, delta_law: &ScalingLaw) -> Result<DeviceParams> {
    let w = geometry.width_um();
    DeviceParams::new(
        bias_law.nominal_checked("bias_law", w)?,
        delta_law.nominal_checked("delta_law", w)?,
    )
}

/// Samples one device: each current is its law's nominal value times
/// `1 + u`, `u` uniform in `[-δ, δ)`.
///
/// Two draws are consumed regardless of δ, so runs that differ only in δ
/// see the same underlying uniforms.
pub fn sample_device<R: Rng + ?Sized>(
    geometry: DeviceGeometry,
    bias_law: &ScalingLaw,
    delta_law: &ScalingLaw,
    rng: &mut R,
) -> Result<DeviceParams> {
    let w = geometry.width_um();
    let bias = bias_law.nominal_checked("bias_law", w)?;
    let delta = delta_law.nominal_checked("delta_law", w)?;
    let ub = bias_law.variation_limit * (2.0 * rng.gen::<f64>() - 1.0);
    let ud = delta_law.variation_limit * (2.0 * rng.gen::<f64>() - 1.0);
    DeviceParams::new(bias * (1.0 + ub), delta * (1.0 + ud))
}
