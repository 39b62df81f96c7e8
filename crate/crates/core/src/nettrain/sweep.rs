use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::spiking::{converted_accuracy, converted_accuracy_observed, ConversionConfig, NeuronBank};
use crate::crossbar::{calibrate_v0, EnergyAccumulator, EnergyReport, SynapseArray, DEFAULT_T_READ};
use crate::device::{nominal_device, sample_device, DeviceGeometry, ScalingLaw};
use crate::error::{Error, Result};
use crate::mnist::MnistSet;
use crate::seed;

pub const VARIATION_HEADER: &str = "width_um,delta,trial,accuracy";
pub const ENERGY_HEADER: &str = "width_um,energy_normalized";
pub const DEFAULT_EVAL_IMAGES: usize = 2000;

const TAG_WEIGHTS: u64 = 1;
const TAG_DEVICES: u64 = 2;
const TAG_STATES: u64 = 3;

/// `count` distinct test indices chosen by `seed`, in ascending order.
pub fn evaluation_subset(total: usize, count: usize, seed_value: u64) -> Vec<usize> {
    if count >= total {
        return (0..total).collect();
    }
    let mut rng = seed::derived_stream(seed_value, &[0x7375_6273]);
    let mut picked = rand::seq::index::sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationSweepConfig {
    pub widths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub trials: usize,
    pub perturb_weights: bool,
    pub bias_law: ScalingLaw,
    pub delta_law: ScalingLaw,
    pub conversion: ConversionConfig,
}

impl Default for VariationSweepConfig {
    fn default() -> Self {
        Self {
            widths: vec![0.3, 0.5, 1.0, 2.0, 5.0],
            deltas: vec![0.0, 0.1, 0.25],
            trials: 10,
            perturb_weights: true,
            bias_law: ScalingLaw::default_bias(),
            delta_law: ScalingLaw::default_delta(),
            conversion: ConversionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationRecord {
    pub width_um: f64,
    pub delta: f64,
    pub trial: usize,
    pub accuracy: f64,
}

/// Weights and biases each scaled by `1 + δ·u`, `u` uniform in `[-1, 1)`.
///
/// The underlying uniforms depend only on `rng`, not on δ.
pub fn perturb_weights<R: Rng + ?Sized>(mlp: &Mlp, delta: f64, rng: &mut R) -> Mlp {
    let mut out = mlp.clone();
    for l in out.layers_mut() {
        for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
            *v *= 1.0 + delta * (2.0 * rng.gen::<f64>() - 1.0);
        }
    }
    out
}

/// Neuron bank whose devices are sampled around the width's nominal law
/// and driven with the nominal calibration.
pub fn sampled_bank(
    mlp: &Mlp,
    geometry: DeviceGeometry,
    bias_law: &ScalingLaw,
    delta_law: &ScalingLaw,
    trial_seed: u64,
) -> Result<NeuronBank> {
    let nominal = nominal_device(geometry, bias_law, delta_law)?;
    let mut actual = Vec::new();
    let mut drive = Vec::new();
    for (k, l) in mlp.layers().iter().enumerate() {
        let mut a = Vec::with_capacity(l.outputs());
        for j in 0..l.outputs() {
            let mut rng = seed::derived_stream(trial_seed, &[TAG_DEVICES, k as u64, j as u64]);
            a.push(sample_device(geometry, bias_law, delta_law, &mut rng)?);
        }
        actual.push(a);
        drive.push(vec![nominal; l.outputs()]);
    }
    NeuronBank::new(actual, drive, seed::derive(trial_seed, &[TAG_STATES]))
}

/// Accuracy under bias and weight variation for every (width, δ, trial).
///
/// Trial `n` uses the same random draws at every width and δ, so the table
/// compares configurations rather than luck.
pub fn variation_sweep(
    mlp: &Mlp,
    set: &MnistSet,
    indices: &[usize],
    config: &VariationSweepConfig,
    mut on_record: impl FnMut(&VariationRecord),
) -> Result<Vec<VariationRecord>> {
    if config.trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let geometries = config
        .widths
        .iter()
        .map(|&w| DeviceGeometry::new(w))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(config.widths.len() * config.deltas.len() * config.trials);
    for (&w, &geometry) in config.widths.iter().zip(&geometries) {
        for &delta in &config.deltas {
            let bias_law = config.bias_law.with_variation(delta)?;
            for trial in 0..config.trials {
                let trial_seed = seed::derive(config.conversion.seed, &[trial as u64]);
                let net = if config.perturb_weights {
                    perturb_weights(mlp, delta, &mut seed::derived_stream(trial_seed, &[TAG_WEIGHTS]))
                } else {
                    mlp.clone()
                };
                let mut bank = sampled_bank(&net, geometry, &bias_law, &config.delta_law, trial_seed)?;
                let conversion = ConversionConfig {
                    seed: trial_seed,
                    ..config.conversion
                };
                let accuracy = converted_accuracy(&net, set, indices, &mut bank, &conversion)?;
                let rec = VariationRecord {
                    width_um: w,
                    delta,
                    trial,
                    accuracy,
                };
                on_record(&rec);
                out.push(rec);
            }
        }
    }
    Ok(out)
}

pub fn write_variation_csv<W: Write>(records: &[VariationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VARIATION_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.width_um.to_string(),
            r.delta.to_string(),
            r.trial.to_string(),
            r.accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySweepConfig {
    pub widths: Vec<f64>,
    /// Conductance per unit weight (S).
    pub g0: f64,
    /// Read-pulse duration (s).
    pub t_read: f64,
    pub bias_law: ScalingLaw,
    pub delta_law: ScalingLaw,
    pub conversion: ConversionConfig,
}

impl Default for EnergySweepConfig {
    fn default() -> Self {
        Self {
            widths: vec![0.3, 0.5, 0.7, 0.9, 1.0, 1.5, 2.0, 2.5, 5.0],
            g0: 50e-6,
            t_read: DEFAULT_T_READ,
            bias_law: ScalingLaw::default_bias(),
            delta_law: ScalingLaw::default_delta(),
            conversion: ConversionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub width_um: f64,
    pub energy_normalized: f64,
    pub accuracy: f64,
    pub report: EnergyReport,
}

/// Synaptic read energy of nominal-device inference at each width,
/// normalized to the smallest width.
pub fn energy_sweep(mlp: &Mlp, set: &MnistSet, indices: &[usize], config: &EnergySweepConfig) -> Result<Vec<EnergyRecord>> {
    if config.widths.is_empty() {
        return Err(Error::InvalidInput("no widths to sweep".into()));
    }
    let mut out = Vec::with_capacity(config.widths.len());
    for &w in &config.widths {
        let geometry = DeviceGeometry::new(w)?;
        let params = nominal_device(geometry, &config.bias_law, &config.delta_law)?;
        let v0 = calibrate_v0(params.i_delta(), config.g0)?;
        let arrays = mlp
            .layers()
            .iter()
            .map(|l| SynapseArray::from_weights(l.weights.view(), config.g0, v0, config.t_read))
            .collect::<Result<Vec<_>>>()?;
        let mut bank = NeuronBank::uniform(mlp, params, seed::derive(config.conversion.seed, &[TAG_STATES]));
        let mut acc = EnergyAccumulator::new(arrays.len());
        let accuracy = converted_accuracy_observed(mlp, set, indices, &mut bank, &config.conversion, |k, active| {
            acc.add_step(k, &arrays[k], active.iter().map(|&i| i as usize));
        })?;
        out.push(EnergyRecord {
            width_um: w,
            energy_normalized: 0.0,
            accuracy,
            report: acc.report(v0, config.g0),
        });
    }
    let smallest = out
        .iter()
        .min_by(|a, b| a.width_um.total_cmp(&b.width_um))
        .map(|r| r.report.total_joules)
        .unwrap();
    if smallest <= 0.0 {
        return Err(Error::Degenerate("no synaptic reads at the smallest width".into()));
    }
    for r in &mut out {
        r.energy_normalized = r.report.total_joules / smallest;
    }
    Ok(out)
}

pub fn write_energy_csv<W: Write>(records: &[EnergyRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ENERGY_HEADER.split(','))?;
    for r in records {
        w.write_record([r.width_um.to_string(), r.energy_normalized.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
