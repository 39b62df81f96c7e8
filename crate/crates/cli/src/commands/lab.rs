use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spinloop::bench::{BenchDeviceConfig, BenchServer, RemoteBackend};
use spinloop::charlab::{
    fit_anisotropy, fit_sigmoid, programming_window, run_reset_set_protocol, scaling_regression, FieldSweep,
    SigmoidFit, SwitchCurve, DEFAULT_TILT_FLOOR,
};
use spinloop::device::{DEFAULT_R_RESET, DEFAULT_R_SET};
use spinloop::DeviceBackend;

use crate::config::{self, Flags};
use crate::{AnisotropyArgs, CharacterizeArgs, FitArgs, ScalingArgs, ServeArgs};

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CharacterizeRun {
    pub endpoint: Option<String>,
    pub i_bias: f64,
    pub i_delta: f64,
    pub r_set: f64,
    pub r_reset: f64,
    pub currents: Vec<f64>,
    pub i_min: Option<f64>,
    pub i_max: Option<f64>,
    pub points: usize,
    pub iters: u32,
    pub seed: u64,
}

impl Default for CharacterizeRun {
    fn default() -> Self {
        Self {
            endpoint: None,
            i_bias: 1e-3,
            i_delta: 50e-6,
            r_set: DEFAULT_R_SET,
            r_reset: DEFAULT_R_RESET,
            currents: Vec::new(),
            i_min: None,
            i_max: None,
            points: 30,
            iters: 100,
            seed: 0,
        }
    }
}

impl CharacterizeRun {
    /// Explicit currents, else an even grid over `i_bias ± 5 i_delta`.
    fn grid(&self) -> Result<Vec<f64>> {
        if !self.currents.is_empty() {
            return Ok(self.currents.clone());
        }
        let lo = self.i_min.unwrap_or(self.i_bias - 5.0 * self.i_delta).max(0.0);
        let hi = self.i_max.unwrap_or(self.i_bias + 5.0 * self.i_delta);
        if self.points < 2 || !(hi > lo) {
            bail!("current grid needs at least 2 points and i_max > i_min");
        }
        let step = (hi - lo) / (self.points - 1) as f64;
        Ok((0..self.points).map(|k| lo + step * k as f64).collect())
    }
}

pub fn characterize(cfg: Option<&Path>, a: CharacterizeArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags
        .set("endpoint", a.endpoint)
        .set("i_bias", a.i_bias)
        .set("i_delta", a.i_delta)
        .set("r_set", a.r_set)
        .set("r_reset", a.r_reset)
        .list("currents", &a.currents)
        .set("i_min", a.i_min)
        .set("i_max", a.i_max)
        .set("points", a.points)
        .set("iters", a.iters)
        .set("seed", a.seed);
    let mut run: CharacterizeRun = config::resolve(cfg, "seed", flags)?;
    let mut backend: Box<dyn DeviceBackend> = match &run.endpoint {
        Some(ep) => {
            let mut remote = RemoteBackend::connect(ep.as_str()).with_context(|| format!("connecting to {ep}"))?;
            (run.i_bias, run.i_delta) = remote.params()?;
            remote.seed(run.seed)?;
            Box::new(remote)
        }
        None => Box::new(
            BenchDeviceConfig {
                i_bias: run.i_bias,
                i_delta: run.i_delta,
                r_set: run.r_set,
                r_reset: run.r_reset,
                seed: run.seed,
            }
            .device()?,
        ),
    };
    run.currents = run.grid()?;
    let curve = run_reset_set_protocol(&mut backend, &run.currents, run.iters)?;
    let mut out = config::output(a.out.as_deref())?;
    curve.write_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = &a.out {
        config::write_sidecar(path, "characterize", &run, json!({ "points": curve.points().len() }))?;
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitRun {
    pub input: Option<PathBuf>,
}

pub fn fit(cfg: Option<&Path>, a: FitArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags.set("input", a.input);
    let run: FitRun = config::resolve(cfg, "seed", flags)?;
    let input = run.input.as_deref().context("--input is required")?;
    let curve = SwitchCurve::read_csv(config::open(input)?)?;
    let fit = fit_sigmoid(&curve)?;
    let window = programming_window(fit.i_delta);
    let result = json!({
        "fit": fit,
        "programming_window_A": window,
        "window_over_i_delta": window / fit.i_delta,
    });
    config::write_json(a.out.as_deref(), &config::envelope("fit", &run, result)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AnisotropyRun {
    pub input: Option<PathBuf>,
    pub floor: f64,
}

impl Default for AnisotropyRun {
    fn default() -> Self {
        Self {
            input: None,
            floor: DEFAULT_TILT_FLOOR,
        }
    }
}

pub fn anisotropy(cfg: Option<&Path>, a: AnisotropyArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags.set("input", a.input).set("floor", a.floor);
    let run: AnisotropyRun = config::resolve(cfg, "seed", flags)?;
    let input = run.input.as_deref().context("--input is required")?;
    let sweep = FieldSweep::read_csv(config::open(input)?)?;
    let fit = fit_anisotropy(&sweep, run.floor)?;
    config::write_json(a.out.as_deref(), &config::envelope("anisotropy", &run, json!({ "fit": fit }))?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidthFit {
    pub width_um: f64,
    pub path: PathBuf,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingRun {
    pub fits: Vec<WidthFit>,
}

fn parse_width_fit(s: &str) -> Result<WidthFit> {
    let (w, p) = s.split_once('=').with_context(|| format!("'{s}' is not WIDTH_UM=PATH"))?;
    Ok(WidthFit {
        width_um: w.trim().parse().with_context(|| format!("bad width in '{s}'"))?,
        path: PathBuf::from(p),
    })
}

/// A `fit` result file, or a bare fit object.
fn read_fit(path: &Path) -> Result<SigmoidFit> {
    let v: Value = serde_json::from_reader(config::open(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let fit = v.pointer("/result/fit").cloned().unwrap_or(v);
    serde_json::from_value(fit).with_context(|| format!("{} holds no sigmoid fit", path.display()))
}

pub fn scaling(cfg: Option<&Path>, a: ScalingArgs) -> Result<()> {
    let fits = a.fits.iter().map(|s| parse_width_fit(s)).collect::<Result<Vec<_>>>()?;
    let mut flags = Flags::default();
    flags.list("fits", &fits);
    let run: ScalingRun = config::resolve(cfg, "seed", flags)?;
    let samples = run
        .fits
        .iter()
        .map(|f| Ok((f.width_um, read_fit(&f.path)?)))
        .collect::<Result<Vec<_>>>()?;
    let bias = scaling_regression(&samples.iter().map(|(w, f)| (*w, f.i_bias)).collect::<Vec<_>>())?;
    let delta = scaling_regression(&samples.iter().map(|(w, f)| (*w, f.i_delta)).collect::<Vec<_>>())?;
    let table: Vec<Value> = samples
        .iter()
        .map(|(w, f)| json!({ "width_um": w, "i_bias": f.i_bias, "i_delta": f.i_delta }))
        .collect();
    let result = json!({ "bias": bias, "delta": delta, "samples": table });
    config::write_json(a.out.as_deref(), &config::envelope("scaling", &run, result)?)
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let device: BenchDeviceConfig = serde_json::from_reader(config::open(&a.device)?)
        .with_context(|| format!("parsing device file {}", a.device.display()))?;
    device.params()?;
    let server = BenchServer::bind(a.listen.as_str(), &device)?.with_realistic_timing(a.realistic_timing);
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "listening on {}", server.local_addr()?)?;
    stdout.flush()?;
    drop(stdout);
    server.serve()?;
    Ok(())
}
