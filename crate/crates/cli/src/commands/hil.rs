use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use serde_json::json;
use spinloop::backend::{time_multiplex, DeviceBackend, SimulatedBackend};
use spinloop::bench::RemoteBackend;
use spinloop::hiltrain::{hil_test, hil_train, HilConfig, HilNetwork, InferenceMode};
use spinloop::nettrain::{Layer, Mlp};

use super::net::{default_mnist, load_mnist};
use crate::config::{self, Flags};
use crate::{HilArgs, HilInferArgs, HilTrainArgs, Mode};

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HilRun {
    pub mnist: PathBuf,
    /// Logical neurons per physical device.
    pub multiplex: usize,
    /// One remote bench per physical device; simulated devices when empty.
    pub endpoints: Vec<String>,
    #[serde(flatten)]
    pub hil: HilConfig,
}

impl Default for HilRun {
    fn default() -> Self {
        Self {
            mnist: default_mnist(),
            multiplex: 1,
            endpoints: Vec::new(),
            hil: HilConfig::default(),
        }
    }
}

impl HilRun {
    pub fn physical_devices(&self) -> usize {
        self.hil.classes.len().div_ceil(self.multiplex.max(1))
    }

    /// One backend per logical neuron. Physical device `p` serves neurons
    /// `p·m .. (p+1)·m`; remote devices are reseeded to match their simulated twins.
    pub fn backends(&self) -> Result<Vec<Box<dyn DeviceBackend>>> {
        let m = self.multiplex.max(1);
        let n = self.physical_devices();
        let physical: Vec<Box<dyn DeviceBackend>> = if self.endpoints.is_empty() {
            (0..n)
                .map(|p| {
                    let b = SimulatedBackend::new(self.hil.sample_device(p)?, self.hil.device_seed(p));
                    Ok(Box::new(b) as Box<dyn DeviceBackend>)
                })
                .collect::<Result<_>>()?
        } else {
            ensure!(
                self.endpoints.len() == n,
                "{} endpoints given for {n} physical devices",
                self.endpoints.len()
            );
            self.endpoints
                .iter()
                .enumerate()
                .map(|(p, ep)| {
                    let mut b = RemoteBackend::connect(ep.as_str()).with_context(|| format!("connecting to {ep}"))?;
                    b.seed(self.hil.device_seed(p))?;
                    Ok(Box::new(b) as Box<dyn DeviceBackend>)
                })
                .collect::<Result<_>>()?
        };
        if m == 1 {
            return Ok(physical);
        }
        let total = self.hil.classes.len();
        let mut out: Vec<Box<dyn DeviceBackend>> = Vec::with_capacity(total);
        for (p, dev) in physical.into_iter().enumerate() {
            let here = m.min(total - p * m);
            out.extend(time_multiplex(dev, here).into_iter().map(|v| Box::new(v) as Box<dyn DeviceBackend>));
        }
        Ok(out)
    }

    fn network(&self) -> Result<HilNetwork<Box<dyn DeviceBackend>>> {
        Ok(HilNetwork::from_config(&self.hil, self.backends()?)?)
    }
}

fn hil_flags(a: HilArgs) -> Flags {
    let mut flags = Flags::default();
    flags
        .set("mnist", a.mnist.mnist)
        .list("classes", &a.classes)
        .set("train_per_class", a.train_per_class)
        .set("test_per_class", a.test_per_class)
        .set("epochs", a.epochs)
        .set("learning_rate", a.lr)
        .set("t_steps", a.t_steps)
        .set("rate_scale", a.rate_scale)
        .set("width_um", a.width)
        .set("bias_variation", a.bias_variation)
        .set("multiplex", a.multiplex)
        .list("endpoints", &a.endpoints)
        .set("seed", a.seed);
    flags
}

fn weights_checkpoint(weights: &ndarray::Array2<f64>) -> Result<Mlp> {
    Ok(Mlp::new(vec![Layer {
        weights: weights.clone(),
        biases: Array1::zeros(weights.ncols()),
    }])?)
}

pub fn train(cfg: Option<&Path>, a: HilTrainArgs) -> Result<()> {
    let run: HilRun = config::resolve(cfg, "seed", hil_flags(a.hil))?;
    let (train, test) = load_mnist(&run.mnist)?;
    let mut net = run.network()?;
    let mut transcript = config::output(a.transcript.as_deref())?;
    let mut io_error = None;
    let losses = hil_train(&train, &mut net, &run.hil, |r| {
        if io_error.is_none() {
            let line = serde_json::to_string(r).expect("records serialize");
            io_error = writeln!(transcript, "{line}").err();
        }
    })?;
    if let Some(e) = io_error {
        return Err(e).context("writing transcript");
    }
    transcript.flush()?;
    drop(transcript);
    for (e, l) in losses.iter().enumerate() {
        eprintln!("epoch {:>3}  mean loss {l:.5}", e + 1);
    }
    let (correct, preds) = hil_test(&test, &mut net, &run.hil, InferenceMode::default())?;
    eprintln!("held-out {correct}/{}", preds.len());
    let result = json!({ "epoch_losses": losses, "test_correct": correct, "test_images": preds.len() });
    if let Some(path) = &a.weights {
        let mut out = config::create(path)?;
        weights_checkpoint(net.weights())?.write_checkpoint(&mut out)?;
        out.flush()?;
        config::write_sidecar(path, "hil-train", &run, result.clone())?;
    }
    if let Some(path) = &a.transcript {
        config::write_sidecar(path, "hil-train", &run, result)?;
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HilInferRun {
    pub weights: PathBuf,
    pub mode: InferenceMode,
    #[serde(flatten)]
    pub run: HilRun,
}

pub fn infer(cfg: Option<&Path>, a: HilInferArgs) -> Result<()> {
    let mut flags = hil_flags(a.hil);
    flags.set("weights", Some(&a.weights)).set(
        "mode",
        a.mode.map(|m| match m {
            Mode::NetworkInput => InferenceMode::NetworkInput,
            Mode::Switching => InferenceMode::Switching,
        }),
    );
    let run: HilInferRun = config::resolve(cfg, "seed", flags)?;
    let mlp = Mlp::read_checkpoint(config::open(&run.weights)?)
        .with_context(|| format!("reading weights {}", run.weights.display()))?;
    ensure!(
        mlp.layers().len() == 1,
        "HIL weights are a single layer, checkpoint has {}",
        mlp.layers().len()
    );
    let (_, test) = load_mnist(&run.run.mnist)?;
    let mut net = run.run.network()?;
    net.set_weights(mlp.layers()[0].weights.clone())?;
    let (correct, preds) = hil_test(&test, &mut net, &run.run.hil, run.mode)?;
    let images = run.run.hil.test_indices(&test);
    let rows: Vec<_> = images
        .iter()
        .zip(&preds)
        .map(|(&i, p)| json!({ "image_id": i, "label": test.label(i), "class": p.class, "confidences": p.confidences }))
        .collect();
    eprintln!("{correct}/{} correct", preds.len());
    let result = json!({ "correct": correct, "total": preds.len(), "predictions": rows });
    config::write_json(a.out.as_deref(), &config::envelope("hil-infer", &run, result)?)
}
