//! Synaptic crossbar: weights as signed conductances, column currents, and
//! read-energy accounting.
//!
//! A weight `w` maps to `G = w·G0`. An input spike drives its row at `V0`,
//! so column `j` receives `Σ_i G_ij·V0·s_i`. Choosing `V0 = i_delta / G0`
//! makes one unit of network pre-activation equal one dispersion scale of
//! neuron write current.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::device::PULSE_WIDTH;
use crate::error::{Error, Result};

/// Default read-pulse duration (s).
pub const DEFAULT_T_READ: f64 = PULSE_WIDTH;

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} must be finite and > 0")))
    }
}

pub fn map_weights(w: ArrayView2<f64>, g0: f64) -> Result<Array2<f64>> {
    check_positive("g0", g0)?;
    Ok(w.mapv(|x| x * g0))
}

/// Column current for one time-step. Sums in ascending row order.
pub fn syn_current(g_column: ArrayView1<f64>, spikes: ArrayView1<u8>, v0: f64) -> Result<f64> {
    if g_column.len() != spikes.len() {
        return Err(Error::DimensionMismatch {
            expected: g_column.len(),
            actual: spikes.len(),
        });
    }
    let mut acc = 0.0;
    for (g, &s) in g_column.iter().zip(spikes.iter()) {
        if s != 0 {
            acc += g * v0;
        }
    }
    Ok(acc)
}

/// Spike amplitude that matches `G0·V0` to the neuron's dispersion scale.
pub fn calibrate_v0(i_delta: f64, g0: f64) -> Result<f64> {
    check_positive("g0", g0)?;
    check_positive("i_delta", i_delta)?;
    Ok(i_delta / g0)
}

/// One layer's synaptic array. Rows are inputs, columns are neurons.
#[derive(Debug, Clone)]
pub struct SynapseArray {
    g: Array2<f64>,
    g0: f64,
    v0: f64,
    t_read: f64,
    row_abs: Vec<f64>,
}

impl SynapseArray {
    pub fn from_weights(w: ArrayView2<f64>, g0: f64, v0: f64, t_read: f64) -> Result<Self> {
        check_positive("v0", v0)?;
        check_positive("t_read", t_read)?;
        let g = map_weights(w, g0)?;
        let row_abs = g.rows().into_iter().map(|r| r.iter().map(|x| x.abs()).sum()).collect();
        Ok(Self {
            g,
            g0,
            v0,
            t_read,
            row_abs,
        })
    }

    pub fn conductances(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn inputs(&self) -> usize {
        self.g.nrows()
    }

    /// Column currents for one time-step of binary inputs.
    pub fn currents(&self, spikes: ArrayView1<u8>) -> Result<Vec<f64>> {
        (0..self.g.ncols())
            .map(|j| syn_current(self.g.column(j), spikes, self.v0))
            .collect()
    }

    /// Energy (J) of reading the rows listed in `active`.
    pub fn step_energy(&self, active: impl IntoIterator<Item = usize>) -> f64 {
        let s: f64 = active.into_iter().map(|i| self.row_abs[i]).sum();
        s * self.v0 * self.v0 * self.t_read
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total_joules: f64,
    pub per_layer: Vec<f64>,
    pub events: u64,
    pub v0_volts: f64,
    pub g0_siemens: f64,
}

/// Read energy of one array over a `T × N` spike raster.
pub fn read_energy(array: &SynapseArray, spike_trains: ArrayView2<u8>) -> Result<EnergyReport> {
    if spike_trains.ncols() != array.inputs() {
        return Err(Error::DimensionMismatch {
            expected: array.inputs(),
            actual: spike_trains.ncols(),
        });
    }
    let mut acc = EnergyAccumulator::new(1);
    for row in spike_trains.rows() {
        acc.add_step(0, array, row.iter().enumerate().filter(|(_, &s)| s != 0).map(|(i, _)| i));
    }
    Ok(acc.report(array.v0(), array.g0()))
}

/// Running per-layer energy totals, summed in call order.
#[derive(Debug, Clone)]
pub struct EnergyAccumulator {
    per_layer: Vec<f64>,
    events: u64,
}

impl EnergyAccumulator {
    pub fn new(layers: usize) -> Self {
        Self {
            per_layer: vec![0.0; layers],
            events: 0,
        }
    }

    pub fn add_step(&mut self, layer: usize, array: &SynapseArray, active: impl IntoIterator<Item = usize>) {
        let mut n = 0u64;
        let e = array.step_energy(active.into_iter().inspect(|_| n += 1));
        self.per_layer[layer] += e;
        self.events += n;
    }

    pub fn merge(&mut self, other: &EnergyAccumulator) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            *a += b;
        }
        self.events += other.events;
    }

    pub fn report(&self, v0: f64, g0: f64) -> EnergyReport {
        EnergyReport {
            total_joules: self.per_layer.iter().sum(),
            per_layer: self.per_layer.clone(),
            events: self.events,
            v0_volts: v0,
            g0_siemens: g0,
        }
    }
}
