use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::mnist::{MnistSet, PIXELS};
use crate::seed;

pub const BASELINE_SIZES: [usize; 3] = [PIXELS, 400, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 100,
            learning_rate: 2.0,
            momentum: 0.5,
            dropout: 0.5,
            seed: 0,
            hidden: vec![400],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be finite and > 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::param("hidden", "layer sizes must be positive"));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        std::iter::once(PIXELS)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(10))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub mlp: Mlp,
    pub test_accuracy: f64,
    pub history: Vec<EpochStats>,
}

/// Pixels scaled to [0, 1], one row per image.
pub fn input_matrix(set: &MnistSet, indices: &[usize]) -> Array2<f64> {
    let mut x = Array2::zeros((indices.len(), PIXELS));
    for (r, &i) in indices.iter().enumerate() {
        for (dst, &p) in x.row_mut(r).iter_mut().zip(set.image(i)) {
            *dst = p as f64 / 255.0;
        }
    }
    x
}

fn one_hot(set: &MnistSet, indices: &[usize], classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((indices.len(), classes));
    for (r, &i) in indices.iter().enumerate() {
        y[[r, set.label(i) as usize]] = 1.0;
    }
    y
}

/// Fraction of `set` classified correctly, evaluated in chunks.
pub fn evaluate(mlp: &Mlp, set: &MnistSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(1000) {
        let preds = mlp.predict(input_matrix(set, chunk).view());
        correct += preds
            .iter()
            .zip(chunk)
            .filter(|(&p, &i)| p == set.label(i) as usize)
            .count();
    }
    correct as f64 / set.len() as f64
}

/// Inference weights: hidden-to-next weights scaled by the keep fraction.
fn fold_dropout(raw: &Mlp, dropout: f64) -> Mlp {
    let mut out = raw.clone();
    let n = out.layers().len();
    for l in out.layers_mut()[1..n].iter_mut() {
        l.weights.mapv_inplace(|w| w * (1.0 - dropout));
    }
    out
}

/// Mini-batch SGD with momentum on MSE, dropout on hidden layers.
///
/// `on_epoch` sees each epoch's stats as they complete.
pub fn train_baseline_with(
    train: &MnistSet,
    test: &MnistSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let sizes = config.sizes();
    let mut raw = Mlp::random(&sizes, &mut seed::derived_stream(config.seed, &[0]))?;
    let mut velocity: Vec<(Array2<f64>, Array1<f64>)> = raw
        .layers()
        .iter()
        .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.biases.raw_dim())))
        .collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = seed::derived_stream(config.seed, &[1, epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let x = input_matrix(train, batch);
            let y = one_hot(train, batch, raw.outputs());
            let masks = dropout_masks(&raw, batch.len(), config.dropout, &mut rng);
            let (loss, grads) = raw.loss_and_gradients(x.view(), y.view(), masks.as_deref());
            for ((layer, g), (vw, vb)) in raw.layers_mut().iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                vw.zip_mut_with(&g.weights, |v, &d| *v = config.momentum * *v + config.learning_rate * d);
                vb.zip_mut_with(&g.biases, |v, &d| *v = config.momentum * *v + config.learning_rate * d);
                layer.weights -= &*vw;
                layer.biases -= &*vb;
            }
            loss_sum += loss;
            batches += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / batches as f64,
            test_accuracy: evaluate(&fold_dropout(&raw, config.dropout), test),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    let mlp = fold_dropout(&raw, config.dropout);
    let test_accuracy = evaluate(&mlp, test);
    Ok(TrainReport {
        mlp,
        test_accuracy,
        history,
    })
}

pub fn train_baseline(train: &MnistSet, test: &MnistSet, config: &TrainConfig) -> Result<TrainReport> {
    train_baseline_with(train, test, config, |_| {})
}

fn dropout_masks<R: Rng + ?Sized>(mlp: &Mlp, rows: usize, dropout: f64, rng: &mut R) -> Option<Vec<Array2<f64>>> {
    if dropout == 0.0 {
        return None;
    }
    let hidden = &mlp.layers()[..mlp.layers().len() - 1];
    Some(
        hidden
            .iter()
            .map(|l| Array2::from_shape_fn((rows, l.outputs()), |_| if rng.gen::<f64>() > dropout { 1.0 } else { 0.0 }))
            .collect(),
    )
}
