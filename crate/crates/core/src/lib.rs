//! Simulation and co-design toolkit for spin-orbit-torque stochastic neurons.
//!
//! The crate covers the whole loop from a single device to a trained network:
//!
//! * [`device`]: two-state stochastic switching, Hall readout, width scaling and variation.
//! * [`charlab`]: reset–set characterization, sigmoid and anisotropy fits, scaling regressions.
//! * [`crossbar`]: weight-to-conductance mapping, synaptic currents, read energy.
//! * [`nettrain`]: the 784-400-10 baseline, stochastic conversion, variation and energy sweeps.
//! * [`hiltrain`]: hardware-in-loop training against any [`backend::DeviceBackend`].
//! * [`bench`]: a line-protocol instrument emulator and its client backend.

pub mod backend;
pub mod bench;
pub mod charlab;
pub mod crossbar;
pub mod device;
pub mod error;
pub mod hiltrain;
pub mod mnist;
pub mod nettrain;
pub mod seed;

pub use backend::{BackendError, DeviceBackend, SimulatedBackend};
pub use device::{DeviceGeometry, DeviceParams, DeviceState, Magnetization, ScalingLaw};
pub use error::{Error, Result};
pub use mnist::MnistSet;
pub use nettrain::{Mlp, SpikeTrain, TrainConfig};
