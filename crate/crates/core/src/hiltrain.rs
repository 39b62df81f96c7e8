//! Hardware-in-loop training of a single-layer network whose neurons are
//! device backends.
//!
//! The forward pass runs on the devices: each step, each neuron's backend is
//! reset, written at the calibrated current for its pre-activation, and read.
//! Switch counts become activations, and the weight update is computed in
//! software.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{DeviceBackend, ResetReference, SimulatedBackend};
use crate::device::{nominal_device, sample_device, sigmoid, DeviceGeometry, DeviceParams, ScalingLaw};
use crate::error::{Error, Result};
use crate::mnist::{MnistSet, PIXELS};
use crate::nettrain::{argmax, poisson_encode_image, SpikeTrain};
use crate::seed;

const TAG_INIT: u64 = 1;
const TAG_TRAIN_ENCODE: u64 = 2;
const TAG_TEST_ENCODE: u64 = 3;
const TAG_DEVICE: u64 = 4;
const TAG_STATE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HilConfig {
    pub t_steps: usize,
    pub classes: Vec<u8>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rate_scale: f64,
    pub seed: u64,
    /// Width whose nominal law calibrates the drive currents.
    pub width_um: f64,
    /// Fractional spread of the actual device bias currents.
    pub bias_variation: f64,
    pub bias_law: ScalingLaw,
    pub delta_law: ScalingLaw,
}

impl Default for HilConfig {
    fn default() -> Self {
        Self {
            t_steps: 100,
            classes: vec![0, 2, 4, 6],
            train_per_class: 4,
            test_per_class: 1,
            epochs: 10,
            learning_rate: 0.5,
            rate_scale: 1.0,
            seed: 0,
            width_um: 0.5,
            bias_variation: 0.25,
            bias_law: ScalingLaw::default_bias(),
            delta_law: ScalingLaw::default_delta(),
        }
    }
}

impl HilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::param("t_steps", "must be at least 1"));
        }
        if self.classes.is_empty() {
            return Err(Error::param("classes", "need at least one class"));
        }
        let mut sorted = self.classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.classes.len() {
            return Err(Error::param("classes", "must be distinct"));
        }
        if let Some(c) = self.classes.iter().find(|&&c| c > 9) {
            return Err(Error::param("classes", format!("{c} is not a digit")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::param("learning_rate", "must be finite and ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.bias_variation) {
            return Err(Error::param("bias_variation", "outside [0, 1]"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<DeviceGeometry> {
        DeviceGeometry::new(self.width_um)
    }

    /// Nominal parameters used to turn pre-activations into currents.
    pub fn drive(&self) -> Result<DeviceParams> {
        nominal_device(self.geometry()?, &self.bias_law, &self.delta_law)
    }

    /// Parameters of physical device `k`, sampled with `bias_variation`.
    pub fn sample_device(&self, k: usize) -> Result<DeviceParams> {
        let law = self.bias_law.with_variation(self.bias_variation)?;
        let mut rng = seed::derived_stream(self.seed, &[TAG_DEVICE, k as u64]);
        sample_device(self.geometry()?, &law, &self.delta_law, &mut rng)
    }

    /// Random-stream seed of physical device `k`.
    pub fn device_seed(&self, k: usize) -> u64 {
        seed::derive(self.seed, &[TAG_STATE, k as u64])
    }

    /// One in-process backend per class, each with its own sampled device.
    pub fn simulated_backends(&self) -> Result<Vec<SimulatedBackend>> {
        (0..self.classes.len())
            .map(|k| Ok(SimulatedBackend::new(self.sample_device(k)?, self.device_seed(k))))
            .collect()
    }

    fn target_index(&self, label: u8) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::InvalidInput(format!("label {label} is not among the classes {:?}", self.classes)))
    }

    pub fn train_indices(&self, set: &MnistSet) -> Vec<usize> {
        set.first_of_classes(&self.classes, self.train_per_class)
    }

    pub fn test_indices(&self, set: &MnistSet) -> Vec<usize> {
        set.first_of_classes(&self.classes, self.test_per_class)
    }

    pub fn encode_train(&self, set: &MnistSet, index: usize, epoch: usize) -> Result<SpikeTrain> {
        let mut rng = seed::derived_stream(self.seed, &[TAG_TRAIN_ENCODE, epoch as u64, index as u64]);
        poisson_encode_image(set.image(index), self.t_steps, self.rate_scale, &mut rng)
    }

    pub fn encode_test(&self, set: &MnistSet, index: usize) -> Result<SpikeTrain> {
        let mut rng = seed::derived_stream(self.seed, &[TAG_TEST_ENCODE, index as u64]);
        poisson_encode_image(set.image(index), self.t_steps, self.rate_scale, &mut rng)
    }

    /// Uniform in `±1/√784`.
    pub fn initial_weights(&self) -> Array2<f64> {
        let r = 1.0 / (PIXELS as f64).sqrt();
        let mut rng = seed::derived_stream(self.seed, &[TAG_INIT]);
        Array2::from_shape_fn((PIXELS, self.classes.len()), |_| rng.gen_range(-r..r))
    }
}

struct HilNeuron<B> {
    backend: B,
    drive: DeviceParams,
    reference: ResetReference,
}

/// A `inputs × neurons` weight matrix and one backend per neuron.
pub struct HilNetwork<B> {
    weights: Array2<f64>,
    neurons: Vec<HilNeuron<B>>,
}

impl<B: DeviceBackend> HilNetwork<B> {
    pub fn new(weights: Array2<f64>, drives: Vec<DeviceParams>, backends: Vec<B>) -> Result<Self> {
        if backends.len() != weights.ncols() || drives.len() != weights.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} neurons need one backend and one calibration each, got {} and {}",
                weights.ncols(),
                backends.len(),
                drives.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        Ok(Self {
            weights,
            neurons: backends
                .into_iter()
                .zip(drives)
                .map(|(backend, drive)| HilNeuron {
                    backend,
                    drive,
                    reference: ResetReference::learn(),
                })
                .collect(),
        })
    }

    /// The default network for `config`: initial weights and the nominal drive.
    pub fn from_config(config: &HilConfig, backends: Vec<B>) -> Result<Self> {
        config.validate()?;
        let drive = config.drive()?;
        Self::new(config.initial_weights(), vec![drive; config.classes.len()], backends)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        if weights.dim() != self.weights.dim() {
            return Err(Error::InvalidInput(format!(
                "weights {:?}, network expects {:?}",
                weights.dim(),
                self.weights.dim()
            )));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn neurons(&self) -> usize {
        self.neurons.len()
    }

    pub fn into_backends(self) -> Vec<B> {
        self.neurons.into_iter().map(|n| n.backend).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilForward {
    /// Switch fraction per neuron.
    pub activations: Vec<f64>,
    /// Mean pre-activation per neuron.
    pub mean_z: Vec<f64>,
    /// Switch flags, `switched[t][j]`.
    pub switched: Vec<Vec<bool>>,
}

/// Pre-activations of every neuron at step `t`, summed in ascending input order.
fn step_z(weights: &Array2<f64>, train: &SpikeTrain, t: usize) -> Vec<f64> {
    let mut z = vec![0.0; weights.ncols()];
    for &i in train.active(t) {
        for (acc, w) in z.iter_mut().zip(weights.row(i as usize)) {
            *acc += w;
        }
    }
    z
}

fn check_inputs(weights: &Array2<f64>, train: &SpikeTrain) -> Result<()> {
    if train.inputs() != weights.nrows() {
        return Err(Error::DimensionMismatch {
            expected: weights.nrows(),
            actual: train.inputs(),
        });
    }
    Ok(())
}

/// Runs one spike train through the devices. Within a step neurons are
/// cycled in index order.
pub fn hil_forward<B: DeviceBackend>(train: &SpikeTrain, net: &mut HilNetwork<B>) -> Result<HilForward> {
    check_inputs(&net.weights, train)?;
    let n = net.neurons.len();
    let t_steps = train.t_steps();
    let mut counts = vec![0u32; n];
    let mut z_sum = vec![0.0; n];
    let mut switched = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let z = step_z(&net.weights, train, t);
        let mut row = Vec::with_capacity(n);
        for (j, neuron) in net.neurons.iter_mut().enumerate() {
            let reads = neuron.backend.cycle(neuron.drive.drive_current(z[j]))?;
            let s = neuron.reference.classify(reads)?;
            counts[j] += s as u32;
            z_sum[j] += z[j];
            row.push(s);
        }
        switched.push(row);
    }
    Ok(HilForward {
        activations: counts.iter().map(|&c| c as f64 / t_steps as f64).collect(),
        mean_z: z_sum.iter().map(|s| s / t_steps as f64).collect(),
        switched,
    })
}

/// `Δw_ij = −lr·(a_j − y_j)·a_j(1 − a_j)·r̄_i`, applied in place.
fn apply_update(weights: &mut Array2<f64>, train: &SpikeTrain, a: &[f64], target: usize, lr: f64) {
    let g: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(j, &aj)| {
            let y = if j == target { 1.0 } else { 0.0 };
            (aj - y) * aj * (1.0 - aj)
        })
        .collect();
    if g.iter().all(|&v| v == 0.0) {
        return;
    }
    for (i, r) in train.rates().into_iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        for (w, gj) in weights.row_mut(i).iter_mut().zip(&g) {
            *w -= lr * gj * r;
        }
    }
}

fn image_loss(a: &[f64], target: usize) -> f64 {
    0.5 * a
        .iter()
        .enumerate()
        .map(|(j, &aj)| {
            let y = if j == target { 1.0 } else { 0.0 };
            (aj - y) * (aj - y)
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub epoch: usize,
    pub image_id: usize,
    pub label: u8,
    pub activations: Vec<f64>,
    pub loss: f64,
}

/// One online pass over `indices`. Returns the mean per-image loss.
///
/// `epoch` is zero-based; it selects the encoding streams and is written
/// one-based into the transcript.
pub fn hil_train_epoch<B: DeviceBackend>(
    set: &MnistSet,
    indices: &[usize],
    net: &mut HilNetwork<B>,
    config: &HilConfig,
    epoch: usize,
    mut on_record: impl FnMut(&TranscriptRecord),
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("no training images".into()));
    }
    let mut total = 0.0;
    for &i in indices {
        let label = set.label(i);
        let target = config.target_index(label)?;
        let train = config.encode_train(set, i, epoch)?;
        let fwd = hil_forward(&train, net)?;
        let loss = image_loss(&fwd.activations, target);
        apply_update(&mut net.weights, &train, &fwd.activations, target, config.learning_rate);
        total += loss;
        on_record(&TranscriptRecord {
            epoch: epoch + 1,
            image_id: i,
            label,
            activations: fwd.activations,
            loss,
        });
    }
    Ok(total / indices.len() as f64)
}

/// `config.epochs` passes over the configured training images. Returns the
/// mean loss of each epoch.
pub fn hil_train<B: DeviceBackend>(
    set: &MnistSet,
    net: &mut HilNetwork<B>,
    config: &HilConfig,
    mut on_record: impl FnMut(&TranscriptRecord),
) -> Result<Vec<f64>> {
    config.validate()?;
    let indices = config.train_indices(set);
    (0..config.epochs)
        .map(|e| hil_train_epoch(set, &indices, net, config, e, &mut on_record))
        .collect()
}

/// The same training loop with `a_j = σ(z̄_j)` and no devices.
pub fn software_reference_train(set: &MnistSet, config: &HilConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let indices = config.train_indices(set);
    let mut weights = config.initial_weights();
    for epoch in 0..config.epochs {
        for &i in &indices {
            let target = config.target_index(set.label(i))?;
            let train = config.encode_train(set, i, epoch)?;
            let a: Vec<f64> = mean_z(&weights, &train)?.into_iter().map(sigmoid).collect();
            apply_update(&mut weights, &train, &a, target, config.learning_rate);
        }
    }
    Ok(weights)
}

pub fn mean_z(weights: &Array2<f64>, train: &SpikeTrain) -> Result<Vec<f64>> {
    check_inputs(weights, train)?;
    let mut sum = vec![0.0; weights.ncols()];
    for t in 0..train.t_steps() {
        for (s, z) in sum.iter_mut().zip(step_z(weights, train, t)) {
            *s += z;
        }
    }
    let n = train.t_steps() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// Decide from the mean network input to each neuron.
    #[default]
    NetworkInput,
    /// Decide from device switch counts.
    Switching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilPrediction {
    /// Index into the configured classes.
    pub class_index: usize,
    pub class: u8,
    pub confidences: Vec<f64>,
}

/// Shift by the minimum and scale to sum 1; uniform when all values agree.
pub fn normalize_confidences(v: &[f64]) -> Vec<f64> {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = v.iter().map(|x| x - min).collect();
    let sum: f64 = shifted.iter().sum();
    if sum > 0.0 {
        shifted.iter().map(|x| x / sum).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

pub fn hil_infer<B: DeviceBackend>(
    train: &SpikeTrain,
    net: &mut HilNetwork<B>,
    config: &HilConfig,
    mode: InferenceMode,
) -> Result<HilPrediction> {
    let scores = match mode {
        InferenceMode::NetworkInput => mean_z(&net.weights, train)?,
        InferenceMode::Switching => hil_forward(train, net)?.activations,
    };
    let class_index = argmax(scores.iter().copied());
    Ok(HilPrediction {
        class_index,
        class: config.classes[class_index],
        confidences: normalize_confidences(&scores),
    })
}

/// Number of configured test images classified correctly.
pub fn hil_test<B: DeviceBackend>(
    set: &MnistSet,
    net: &mut HilNetwork<B>,
    config: &HilConfig,
    mode: InferenceMode,
) -> Result<(usize, Vec<HilPrediction>)> {
    let mut correct = 0;
    let mut preds = Vec::new();
    for i in config.test_indices(set) {
        let p = hil_infer(&config.encode_test(set, i)?, net, config, mode)?;
        if p.class == set.label(i) {
            correct += 1;
        }
        preds.push(p);
    }
    Ok((correct, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{time_multiplex, CountingBackend};
    use crate::device::DeviceParams;
    use ndarray::Array2;

    fn ideal(n: usize, seed_value: u64) -> (Vec<SimulatedBackend>, Vec<DeviceParams>) {
        let p = DeviceParams::new(1e-3, 50e-6).unwrap();
        ((0..n).map(|k| SimulatedBackend::new(p, seed_value + k as u64)).collect(), vec![p; n])
    }

    fn const_train(t: usize, inputs: usize, on: bool) -> SpikeTrain {
        SpikeTrain::from_events(Array2::from_elem((t, inputs), on as u8)).unwrap()
    }

    #[test]
    fn zero_input_gives_half_activation() {
        let (b, d) = ideal(4, 1);
        let mut net = HilNetwork::new(Array2::from_elem((3, 4), 0.7), d, b).unwrap();
        let fwd = hil_forward(&const_train(100, 3, false), &mut net).unwrap();
        for a in fwd.activations {
            assert!((0.35..=0.65).contains(&a), "{a}");
        }
    }

    #[test]
    fn constant_drive_matches_sigmoid() {
        let (b, d) = ideal(1, 3);
        let mut net = HilNetwork::new(Array2::from_elem((2, 1), 2.0), d, b).unwrap();
        let mut inside = 0;
        for _ in 0..50 {
            let a = hil_forward(&const_train(100, 2, true), &mut net).unwrap().activations[0];
            let p = sigmoid(4.0);
            if (a - p).abs() <= 3.0 * (p * (1.0 - p) / 100.0).sqrt() {
                inside += 1;
            }
        }
        assert!(inside >= 48, "{inside}/50");
    }

    #[test]
    fn update_vanishes_at_target_or_saturation() {
        let train = const_train(4, 2, true);
        let mut w = Array2::from_elem((2, 2), 0.1);
        apply_update(&mut w, &train, &[1.0, 0.0], 0, 0.5);
        assert_eq!(w, Array2::from_elem((2, 2), 0.1));
        apply_update(&mut w, &train, &[0.0, 1.0], 0, 0.5);
        assert_eq!(w, Array2::from_elem((2, 2), 0.1));
        apply_update(&mut w, &train, &[0.5, 0.5], 0, 0.5);
        assert!(w[[0, 0]] > 0.1 && w[[0, 1]] < 0.1);
    }

    #[test]
    fn confidence_normalization() {
        assert_eq!(normalize_confidences(&[1.0, 3.0, 2.0]), vec![0.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(normalize_confidences(&[5.0, 5.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn multiplexed_cycle_count_per_image() {
        let (mut b, _) = ideal(1, 0);
        let counted = CountingBackend::new(b.pop().unwrap());
        let counts = counted.counts();
        let p = DeviceParams::new(1e-3, 50e-6).unwrap();
        let mut net = HilNetwork::new(Array2::zeros((5, 2)), vec![p; 2], time_multiplex(counted, 2)).unwrap();
        hil_forward(&const_train(30, 5, true), &mut net).unwrap();
        assert_eq!(counts.total(), 2 * 30 * 4);
    }

    #[test]
    fn reset_fault_aborts_forward() {
        struct Stuck;
        impl DeviceBackend for Stuck {
            fn reset(&mut self) -> std::result::Result<(), crate::BackendError> {
                Ok(())
            }
            fn write(&mut self, _: f64) -> std::result::Result<(), crate::BackendError> {
                Ok(())
            }
            fn read(&mut self) -> std::result::Result<f64, crate::BackendError> {
                static N: std::sync::atomic::AtomicU32 = std::sync::atomic::AtomicU32::new(0);
                let n = N.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                Ok(if n < 2 { 20.0 } else { -20.0 })
            }
        }
        let p = DeviceParams::new(1e-3, 50e-6).unwrap();
        let mut net = HilNetwork::new(Array2::zeros((1, 1)), vec![p], vec![Stuck]).unwrap();
        let err = hil_forward(&const_train(3, 1, false), &mut net).unwrap_err();
        assert!(err.to_string().contains("reset not confirmed"), "{err}");
    }

    #[test]
    fn config_checks() {
        assert!(HilConfig { classes: vec![0, 0], ..HilConfig::default() }.validate().is_err());
        assert!(HilConfig { t_steps: 0, ..HilConfig::default() }.validate().is_err());
        assert!(HilConfig::default().validate().is_ok());
        let w = HilConfig::default().initial_weights();
        assert_eq!(w.dim(), (784, 4));
        assert!(w.iter().all(|v| v.abs() <= 1.0 / 28.0));
    }

    #[test]
    fn network_needs_one_backend_per_neuron() {
        let (b, d) = ideal(3, 0);
        assert!(HilNetwork::new(Array2::zeros((2, 4)), d, b).is_err());
    }
}
