//! The device-backend contract: what a harness can do to one physical neuron.
//!
//! A backend exposes only reset, write, and read. Whether a write switched
//! the device is inferred by comparing the read after the write with the read
//! after the reset, exactly as a bench operator would.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::device::{DeviceParams, DeviceState, Magnetization, READ_CURRENT};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("protocol fault: {0}")]
    Protocol(String),
    #[error("instrument error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("device busy: another session holds it")]
    Busy,
    #[error("connection lost after {completed} completed commands: {reason}")]
    ConnectionLost { completed: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub trait DeviceBackend: Send {
    fn reset(&mut self) -> Result<(), BackendError>;
    fn write(&mut self, amps: f64) -> Result<(), BackendError>;
    fn read(&mut self) -> Result<f64, BackendError>;

    /// One reset → read → write → read cycle, returning both reads.
    ///
    /// Implementations that share a physical device override this so the
    /// four calls cannot interleave with another user's cycle.
    fn cycle(&mut self, amps: f64) -> Result<CycleReads, BackendError> {
        self.reset()?;
        let after_reset = self.read()?;
        self.write(amps)?;
        let after_write = self.read()?;
        Ok(CycleReads {
            after_reset,
            after_write,
        })
    }
}

impl<B: DeviceBackend + ?Sized> DeviceBackend for Box<B> {
    fn reset(&mut self) -> Result<(), BackendError> {
        (**self).reset()
    }
    fn write(&mut self, amps: f64) -> Result<(), BackendError> {
        (**self).write(amps)
    }
    fn read(&mut self) -> Result<f64, BackendError> {
        (**self).read()
    }
    fn cycle(&mut self, amps: f64) -> Result<CycleReads, BackendError> {
        (**self).cycle(amps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleReads {
    pub after_reset: f64,
    pub after_write: f64,
}

pub(crate) fn same_resistance(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (a.abs() + b.abs())
}

/// Tracks the resistance that identifies the RESET state and turns cycle
/// reads into switch events.
#[derive(Debug, Clone, Copy, Default)]
pub struct ResetReference {
    resistance: Option<f64>,
}

impl ResetReference {
    /// Trust the first post-reset read and hold later ones to it.
    pub fn learn() -> Self {
        Self { resistance: None }
    }

    /// Require every post-reset read to equal a known RESET resistance.
    pub fn known(resistance: f64) -> Self {
        Self {
            resistance: Some(resistance),
        }
    }

    pub fn resistance(&self) -> Option<f64> {
        self.resistance
    }

    /// Validates the post-reset read and reports whether the write switched.
    pub fn classify(&mut self, reads: CycleReads) -> Result<bool, BackendError> {
        match self.resistance {
            None => self.resistance = Some(reads.after_reset),
            Some(r) if !same_resistance(r, reads.after_reset) => {
                return Err(BackendError::Protocol(format!(
                    "reset not confirmed: read {} Ω, expected {} Ω",
                    reads.after_reset, r
                )))
            }
            Some(_) => {}
        }
        Ok(!same_resistance(reads.after_reset, reads.after_write))
    }
}

/// An in-process simulated device.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    params: DeviceParams,
    state: DeviceState,
}

impl SimulatedBackend {
    pub fn new(params: DeviceParams, seed: u64) -> Self {
        Self {
            params,
            state: DeviceState::new(seed),
        }
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    pub fn magnetization(&self) -> Magnetization {
        self.state.magnetization()
    }

    pub fn reseed(&mut self, seed: u64) {
        self.state.reseed(seed);
    }

    /// Write that also reports the switch flag, for the bench server.
    pub fn pulse(&mut self, amps: f64) -> Result<bool, BackendError> {
        self.state
            .apply_write_pulse(&self.params, amps)
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

impl DeviceBackend for SimulatedBackend {
    fn reset(&mut self) -> Result<(), BackendError> {
        self.state.apply_reset_pulse();
        Ok(())
    }

    fn write(&mut self, amps: f64) -> Result<(), BackendError> {
        self.pulse(amps).map(|_| ())
    }

    fn read(&mut self) -> Result<f64, BackendError> {
        self.state
            .read_hall(&self.params, READ_CURRENT)
            .map(|r| r.r_ahe)
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

#[derive(Debug, Default)]
pub struct CallCounts {
    pub resets: AtomicU64,
    pub writes: AtomicU64,
    pub reads: AtomicU64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.resets.load(Ordering::Relaxed) + self.writes.load(Ordering::Relaxed) + self.reads.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> [u64; 3] {
        [
            self.resets.load(Ordering::Relaxed),
            self.writes.load(Ordering::Relaxed),
            self.reads.load(Ordering::Relaxed),
        ]
    }
}

/// Counts every call that reaches the wrapped backend.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    counts: Arc<CallCounts>,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counts: Arc::default(),
        }
    }

    pub fn counts(&self) -> Arc<CallCounts> {
        Arc::clone(&self.counts)
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: DeviceBackend> DeviceBackend for CountingBackend<B> {
    fn reset(&mut self) -> Result<(), BackendError> {
        self.counts.resets.fetch_add(1, Ordering::Relaxed);
        self.inner.reset()
    }

    fn write(&mut self, amps: f64) -> Result<(), BackendError> {
        self.counts.writes.fetch_add(1, Ordering::Relaxed);
        self.inner.write(amps)
    }

    fn read(&mut self) -> Result<f64, BackendError> {
        self.counts.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.read()
    }
}

/// A logical neuron served by a shared physical backend.
pub struct VirtualNeuron<B> {
    physical: Arc<Mutex<B>>,
    index: usize,
}

impl<B> VirtualNeuron<B> {
    pub fn index(&self) -> usize {
        self.index
    }
}

impl<B: DeviceBackend> VirtualNeuron<B> {
    fn with<T>(&self, f: impl FnOnce(&mut B) -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut guard = self
            .physical
            .lock()
            .map_err(|_| BackendError::Protocol("physical backend lock poisoned".into()))?;
        f(&mut guard)
    }
}

impl<B: DeviceBackend> DeviceBackend for VirtualNeuron<B> {
    fn reset(&mut self) -> Result<(), BackendError> {
        self.with(|b| b.reset())
    }

    fn write(&mut self, amps: f64) -> Result<(), BackendError> {
        self.with(|b| b.write(amps))
    }

    fn read(&mut self) -> Result<f64, BackendError> {
        self.with(|b| b.read())
    }

    fn cycle(&mut self, amps: f64) -> Result<CycleReads, BackendError> {
        self.with(|b| b.cycle(amps))
    }
}

/// Splits one physical backend into `n_virtual` serialized logical neurons.
///
/// Every handle's `cycle` holds the physical device for its whole
/// reset → read → write → read sequence.
pub fn time_multiplex<B: DeviceBackend>(physical: B, n_virtual: usize) -> Vec<VirtualNeuron<B>> {
    let shared = Arc::new(Mutex::new(physical));
    (0..n_virtual.max(1))
        .map(|index| VirtualNeuron {
            physical: Arc::clone(&shared),
            index,
        })
        .collect()
}
