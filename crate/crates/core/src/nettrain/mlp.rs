use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::device::sigmoid;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPINMLP1";

/// One dense layer. `weights` is `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Dense feed-forward network with sigmoid units in every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer gradients, same shapes as the layers.
pub type Gradients = Vec<Layer>;

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.biases.len() != l.outputs() {
                return Err(Error::DimensionMismatch {
                    expected: l.outputs(),
                    actual: l.biases.len(),
                });
            }
            if k > 0 && layers[k - 1].outputs() != l.inputs() {
                return Err(Error::DimensionMismatch {
                    expected: layers[k - 1].outputs(),
                    actual: l.inputs(),
                });
            }
            if !l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform init in `±4·√(6 / (fan_in + fan_out))`, biases included.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let r = 4.0 * (6.0 / (w[0] + w[1]) as f64).sqrt();
                let biases = Array1::from_shape_fn(w[1], |_| rng.gen_range(-r..r));
                let weights = Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-r..r));
                Layer { weights, biases }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    /// Activations of every layer, input first. `masks[k]` multiplies the
    /// output of hidden layer `k`.
    pub(crate) fn forward_all(&self, x: ArrayView2<f64>, masks: Option<&[Array2<f64>]>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for (k, l) in self.layers.iter().enumerate() {
            let mut a = acts[k].dot(&l.weights);
            a += &l.biases;
            a.mapv_inplace(sigmoid);
            if let Some(m) = masks.and_then(|m| m.get(k)) {
                if k + 1 < self.layers.len() {
                    a *= m;
                }
            }
            acts.push(a);
        }
        acts
    }

    /// Outputs for a `batch × inputs` matrix.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_all(x, None).pop().unwrap()
    }

    /// Index of the largest output per row, lowest index on ties.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.forward(x).rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
    }

    /// Mean squared error `½ Σ (a − y)² / batch` and its gradients.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        masks: Option<&[Array2<f64>]>,
    ) -> (f64, Gradients) {
        let m = x.nrows() as f64;
        let acts = self.forward_all(x, masks);
        let out = acts.last().unwrap();
        let err = out - &y;
        let loss = 0.5 * err.iter().map(|e| e * e).sum::<f64>() / m;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = &err * &out.mapv(|a| a * (1.0 - a));
        for k in (0..self.layers.len()).rev() {
            let a_in = &acts[k];
            let gw = a_in.t().dot(&delta) / m;
            let gb = delta.sum_axis(Axis(0)) / m;
            grads.push(Layer {
                weights: gw,
                biases: gb,
            });
            if k > 0 {
                // dropped units have a = 0 and so pass no gradient
                delta = delta.dot(&self.layers[k].weights.t()) * &a_in.mapv(|a| a * (1.0 - a));
            }
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
        let err = self.forward(x) - &y;
        0.5 * err.iter().map(|e| e * e).sum::<f64>() / x.nrows() as f64
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            out.write_all(&(l.inputs() as u32).to_le_bytes())?;
            out.write_all(&(l.outputs() as u32).to_le_bytes())?;
            for v in l.weights.iter().chain(l.biases.iter()) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint shorter than its magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a SPINMLP1 checkpoint".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<u32> {
            input
                .read_exact(&mut u32_buf)
                .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let n = read_u32(&mut input)? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            let mut buf = vec![0u8; (rows * cols + cols) * 8];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("truncated {rows}x{cols} layer")))?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let weights = Array2::from_shape_vec((rows, cols), vals[..rows * cols].to_vec())
                .map_err(|e| Error::Format(e.to_string()))?;
            let biases = Array1::from(vals[rows * cols..].to_vec());
            layers.push(Layer { weights, biases });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last layer".into()));
        }
        Self::new(layers)
    }
}

pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
