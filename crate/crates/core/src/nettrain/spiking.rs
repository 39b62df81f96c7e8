use serde::{Deserialize, Serialize};

use super::encode::{poisson_encode_image, SpikeTrain};
use super::mlp::{argmax, Mlp};
use crate::device::{DeviceParams, DeviceState};
use crate::error::{Error, Result};
use crate::mnist::MnistSet;
use crate::seed;

/// A device neuron: the parameters it really has, and the calibration used
/// to turn pre-activations into write currents.
#[derive(Debug, Clone)]
pub struct StochasticNeuron {
    pub actual: DeviceParams,
    pub drive: DeviceParams,
    state: DeviceState,
}

impl StochasticNeuron {
    pub fn new(actual: DeviceParams, drive: DeviceParams, seed: u64) -> Self {
        Self {
            actual,
            drive,
            state: DeviceState::new(seed),
        }
    }

    /// Reset, then write at `drive.i_bias + z·drive.i_delta`.
    #[inline]
    pub fn fire(&mut self, z: f64) -> Result<bool> {
        self.state.apply_reset_pulse();
        self.state.apply_write_pulse(&self.actual, self.drive.drive_current(z))
    }
}

/// Device neurons for every non-input layer of a network.
#[derive(Debug, Clone)]
pub struct NeuronBank {
    layers: Vec<Vec<StochasticNeuron>>,
}

impl NeuronBank {
    /// `actual[k][j]` and `drive[k][j]` describe neuron `j` of layer `k`.
    pub fn new(actual: Vec<Vec<DeviceParams>>, drive: Vec<Vec<DeviceParams>>, seed: u64) -> Result<Self> {
        if actual.len() != drive.len() {
            return Err(Error::DimensionMismatch {
                expected: actual.len(),
                actual: drive.len(),
            });
        }
        let mut layers = Vec::with_capacity(actual.len());
        for (k, (a, d)) in actual.into_iter().zip(drive).enumerate() {
            if a.len() != d.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    actual: d.len(),
                });
            }
            layers.push(
                a.into_iter()
                    .zip(d)
                    .enumerate()
                    .map(|(j, (a, d))| StochasticNeuron::new(a, d, seed::derive(seed, &[k as u64, j as u64])))
                    .collect(),
            );
        }
        Ok(Self { layers })
    }

    /// Every neuron identical and driven with its own parameters.
    pub fn uniform(mlp: &Mlp, params: DeviceParams, seed: u64) -> Self {
        let shape: Vec<Vec<DeviceParams>> = mlp.layers().iter().map(|l| vec![params; l.outputs()]).collect();
        Self::new(shape.clone(), shape, seed).expect("shapes agree by construction")
    }

    pub fn layers(&self) -> &[Vec<StochasticNeuron>] {
        &self.layers
    }

    fn check(&self, mlp: &Mlp) -> Result<()> {
        if self.layers.len() != mlp.layers().len() {
            return Err(Error::InvalidInput(format!(
                "device parameters for {} layers, network has {}",
                self.layers.len(),
                mlp.layers().len()
            )));
        }
        for (k, (bank, layer)) in self.layers.iter().zip(mlp.layers()).enumerate() {
            if bank.len() != layer.outputs() {
                return Err(Error::InvalidInput(format!(
                    "layer {k}: device parameters for {} neurons, layer has {}",
                    bank.len(),
                    layer.outputs()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub class: usize,
    pub spike_counts: Vec<u32>,
}

pub fn stochastic_inference(mlp: &Mlp, train: &SpikeTrain, bank: &mut NeuronBank) -> Result<Inference> {
    stochastic_inference_observed(mlp, train, bank, |_, _| {})
}

/// As [`stochastic_inference`], calling `observe(layer, active_inputs)` once
/// per layer per step with the input lines that carry a spike.
pub fn stochastic_inference_observed(
    mlp: &Mlp,
    train: &SpikeTrain,
    bank: &mut NeuronBank,
    mut observe: impl FnMut(usize, &[u32]),
) -> Result<Inference> {
    bank.check(mlp)?;
    if train.inputs() != mlp.inputs() {
        return Err(Error::DimensionMismatch {
            expected: mlp.inputs(),
            actual: train.inputs(),
        });
    }
    let mut counts = vec![0u32; mlp.outputs()];
    let mut input: Vec<u32> = Vec::new();
    let mut output: Vec<u32> = Vec::new();
    let mut z: Vec<f64> = Vec::new();
    for t in 0..train.t_steps() {
        input.clear();
        input.extend_from_slice(train.active(t));
        for (k, (layer, neurons)) in mlp.layers().iter().zip(bank.layers.iter_mut()).enumerate() {
            observe(k, &input);
            z.clear();
            z.extend(layer.biases.iter());
            for &i in &input {
                for (acc, w) in z.iter_mut().zip(layer.weights.row(i as usize)) {
                    *acc += w;
                }
            }
            output.clear();
            for (j, (n, &zj)) in neurons.iter_mut().zip(&z).enumerate() {
                if n.fire(zj)? {
                    output.push(j as u32);
                }
            }
            std::mem::swap(&mut input, &mut output);
        }
        for &j in &input {
            counts[j as usize] += 1;
        }
    }
    Ok(Inference {
        class: argmax(counts.iter().map(|&c| c as f64)),
        spike_counts: counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConversionConfig {
    pub t_steps: usize,
    pub rate_scale: f64,
    pub seed: u64,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            t_steps: 50,
            rate_scale: 1.0,
            seed: 0,
        }
    }
}

/// Spike train for image `index`; depends only on the seed and the index.
pub fn encode_indexed(set: &MnistSet, index: usize, config: &ConversionConfig) -> Result<SpikeTrain> {
    let mut rng = seed::derived_stream(config.seed, &[0x656e_636f, index as u64]);
    poisson_encode_image(set.image(index), config.t_steps, config.rate_scale, &mut rng)
}

/// Converted accuracy over `indices`, images processed in the given order.
pub fn converted_accuracy(
    mlp: &Mlp,
    set: &MnistSet,
    indices: &[usize],
    bank: &mut NeuronBank,
    config: &ConversionConfig,
) -> Result<f64> {
    converted_accuracy_observed(mlp, set, indices, bank, config, |_, _| {})
}

pub fn converted_accuracy_observed(
    mlp: &Mlp,
    set: &MnistSet,
    indices: &[usize],
    bank: &mut NeuronBank,
    config: &ConversionConfig,
    mut observe: impl FnMut(usize, &[u32]),
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("no evaluation images".into()));
    }
    let mut correct = 0usize;
    for &i in indices {
        let train = encode_indexed(set, i, config)?;
        let out = stochastic_inference_observed(mlp, &train, bank, &mut observe)?;
        if out.class == set.label(i) as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}
