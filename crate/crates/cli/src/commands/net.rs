use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use spinloop::device::{nominal_device, DeviceGeometry, ScalingLaw};
use spinloop::mnist::{load_dir, MnistSet};
use spinloop::nettrain::{
    converted_accuracy, energy_sweep, evaluation_subset, input_matrix, train_baseline_with, variation_sweep,
    write_energy_csv, write_variation_csv, ConversionConfig, EnergySweepConfig, Mlp, NeuronBank, TrainConfig,
    VariationSweepConfig, DEFAULT_EVAL_IMAGES,
};

use crate::config::{self, Flags};
use crate::{ConvertArgs, EnergyArgs, TrainArgs, VariationArgs};

pub fn default_mnist() -> PathBuf {
    PathBuf::from("data/mnist")
}

pub fn load_mnist(dir: &Path) -> Result<(MnistSet, MnistSet)> {
    load_dir(dir).with_context(|| format!("loading MNIST from {}", dir.display()))
}

fn load_model(path: Option<&Path>) -> Result<Mlp> {
    let path = path.context("--model is required")?;
    Mlp::read_checkpoint(config::open(path)?).with_context(|| format!("reading checkpoint {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub mnist: PathBuf,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            mnist: default_mnist(),
            train: TrainConfig::default(),
        }
    }
}

pub fn train(cfg: Option<&Path>, a: TrainArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags
        .set("mnist", a.mnist.mnist)
        .set("epochs", a.epochs)
        .set("batch_size", a.batch_size)
        .set("learning_rate", a.lr)
        .set("momentum", a.momentum)
        .set("dropout", a.dropout)
        .list("hidden", &a.hidden)
        .set("seed", a.seed);
    let run: TrainRun = config::resolve(cfg, "seed", flags)?;
    let (train, test) = load_mnist(&run.mnist)?;
    let report = train_baseline_with(&train, &test, &run.train, |s| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  test {:.2}%",
            s.epoch,
            s.mean_loss,
            100.0 * s.test_accuracy
        )
    })?;
    let mut out = config::create(&a.out)?;
    report.mlp.write_checkpoint(&mut out)?;
    out.flush()?;
    let result = json!({ "test_accuracy": report.test_accuracy, "history": report.history });
    config::write_sidecar(&a.out, "train-baseline", &run, result)?;
    println!("test accuracy {:.4}", report.test_accuracy);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertRun {
    pub mnist: PathBuf,
    pub model: Option<PathBuf>,
    /// All test images when absent.
    pub images: Option<usize>,
    pub width_um: f64,
    pub bias_law: ScalingLaw,
    pub delta_law: ScalingLaw,
    #[serde(flatten)]
    pub conversion: ConversionConfig,
}

impl Default for ConvertRun {
    fn default() -> Self {
        Self {
            mnist: default_mnist(),
            model: None,
            images: None,
            width_um: 0.5,
            bias_law: ScalingLaw::default_bias(),
            delta_law: ScalingLaw::default_delta(),
            conversion: ConversionConfig::default(),
        }
    }
}

pub fn convert(cfg: Option<&Path>, a: ConvertArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags
        .set("mnist", a.mnist.mnist)
        .set("model", a.model)
        .set("images", a.images)
        .set("width_um", a.width)
        .set("t_steps", a.t_steps)
        .set("rate_scale", a.rate_scale)
        .set("seed", a.seed);
    let run: ConvertRun = config::resolve(cfg, "seed", flags)?;
    let mlp = load_model(run.model.as_deref())?;
    let (_, test) = load_mnist(&run.mnist)?;
    let indices = match run.images {
        Some(n) => evaluation_subset(test.len(), n, run.conversion.seed),
        None => (0..test.len()).collect(),
    };
    let params = nominal_device(DeviceGeometry::new(run.width_um)?, &run.bias_law, &run.delta_law)?;
    let mut bank = NeuronBank::uniform(&mlp, params, run.conversion.seed);
    let accuracy = converted_accuracy(&mlp, &test, &indices, &mut bank, &run.conversion)?;
    let predictions = mlp.predict(input_matrix(&test, &indices).view());
    let ann = predictions
        .iter()
        .zip(&indices)
        .filter(|(&p, &i)| p == test.label(i) as usize)
        .count() as f64
        / indices.len() as f64;
    let result = json!({ "images": indices.len(), "accuracy": accuracy, "ann_accuracy": ann });
    eprintln!("converted {:.2}%, software {:.2}% on {} images", 100.0 * accuracy, 100.0 * ann, indices.len());
    config::write_json(a.out.as_deref(), &config::envelope("convert-infer", &run, result)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationRun {
    pub mnist: PathBuf,
    pub model: Option<PathBuf>,
    pub images: usize,
    #[serde(flatten)]
    pub sweep: VariationSweepConfig,
}

impl Default for VariationRun {
    fn default() -> Self {
        Self {
            mnist: default_mnist(),
            model: None,
            images: DEFAULT_EVAL_IMAGES,
            sweep: VariationSweepConfig::default(),
        }
    }
}

pub fn variation(cfg: Option<&Path>, a: VariationArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags
        .set("mnist", a.mnist.mnist)
        .set("model", a.model)
        .set("images", a.images)
        .list("widths", &a.widths)
        .list("deltas", &a.deltas)
        .set("trials", a.trials)
        .set("perturb_weights", a.no_weight_variation.then_some(false))
        .set("conversion.t_steps", a.t_steps)
        .set("conversion.seed", a.seed);
    let run: VariationRun = config::resolve(cfg, "conversion.seed", flags)?;
    let mlp = load_model(run.model.as_deref())?;
    let (_, test) = load_mnist(&run.mnist)?;
    let indices = evaluation_subset(test.len(), run.images, run.sweep.conversion.seed);
    let records = variation_sweep(&mlp, &test, &indices, &run.sweep, |r| {
        eprintln!(
            "width {:.2} um  delta {:.2}  trial {:>2}  {:.2}%",
            r.width_um,
            r.delta,
            r.trial,
            100.0 * r.accuracy
        )
    })?;
    let mut out = config::output(a.out.as_deref())?;
    write_variation_csv(&records, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.out {
        config::write_sidecar(path, "sweep-variation", &run, json!({ "rows": records.len(), "images": indices.len() }))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyRun {
    pub mnist: PathBuf,
    pub model: Option<PathBuf>,
    pub images: usize,
    #[serde(flatten)]
    pub sweep: EnergySweepConfig,
}

impl Default for EnergyRun {
    fn default() -> Self {
        Self {
            mnist: default_mnist(),
            model: None,
            images: DEFAULT_EVAL_IMAGES,
            sweep: EnergySweepConfig::default(),
        }
    }
}

pub fn energy(cfg: Option<&Path>, a: EnergyArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags
        .set("mnist", a.mnist.mnist)
        .set("model", a.model)
        .set("images", a.images)
        .list("widths", &a.widths)
        .set("g0", a.g0)
        .set("t_read", a.t_read)
        .set("conversion.t_steps", a.t_steps)
        .set("conversion.seed", a.seed);
    let run: EnergyRun = config::resolve(cfg, "conversion.seed", flags)?;
    let mlp = load_model(run.model.as_deref())?;
    let (_, test) = load_mnist(&run.mnist)?;
    let indices = evaluation_subset(test.len(), run.images, run.sweep.conversion.seed);
    let records = energy_sweep(&mlp, &test, &indices, &run.sweep)?;
    let mut out = config::output(a.out.as_deref())?;
    write_energy_csv(&records, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.out {
        config::write_sidecar(path, "sweep-energy", &run, json!({ "images": indices.len(), "records": records }))?;
    }
    Ok(())
}
