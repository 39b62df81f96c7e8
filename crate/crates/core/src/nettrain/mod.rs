//! Baseline MLP training, stochastic spiking conversion, and the variation
//! and energy sweeps over device width.

mod encode;
mod mlp;
mod spiking;
mod sweep;
mod train;

pub use encode::{poisson_encode, poisson_encode_image, SpikeTrain};
pub use mlp::{argmax, Gradients, Layer, Mlp, CHECKPOINT_MAGIC};
pub use spiking::{
    converted_accuracy, converted_accuracy_observed, encode_indexed, stochastic_inference,
    stochastic_inference_observed, ConversionConfig, Inference, NeuronBank, StochasticNeuron,
};
pub use sweep::{
    energy_sweep, evaluation_subset, perturb_weights, sampled_bank, variation_sweep, write_energy_csv,
    write_variation_csv, EnergyRecord, EnergySweepConfig, VariationRecord, VariationSweepConfig, DEFAULT_EVAL_IMAGES,
    ENERGY_HEADER, VARIATION_HEADER,
};
pub use train::{evaluate, input_matrix, train_baseline, train_baseline_with, EpochStats, TrainConfig, TrainReport, BASELINE_SIZES};
