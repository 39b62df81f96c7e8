mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "spinloop", version, about = "Stochastic spin-orbit-torque neuron experiments")]
struct Cli {
    /// JSON config (or a provenance record from an earlier run); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reset-set switching statistics of one device.
    Characterize(CharacterizeArgs),
    /// Maximum-likelihood sigmoid fit of a switching curve.
    Fit(FitArgs),
    /// Anisotropy field from an in-plane field sweep.
    Anisotropy(AnisotropyArgs),
    /// Width scaling of fitted device parameters.
    Scaling(ScalingArgs),
    /// Trains the software MLP.
    TrainBaseline(TrainArgs),
    /// Spiking inference with stochastic neurons.
    ConvertInfer(ConvertArgs),
    /// Accuracy under device and weight variation.
    SweepVariation(VariationArgs),
    /// Synaptic read energy against device width.
    SweepEnergy(EnergyArgs),
    /// Hardware-in-loop training.
    HilTrain(HilTrainArgs),
    /// Hardware-in-loop inference on held-out images.
    HilInfer(HilInferArgs),
    /// Serves one simulated device over the bench line protocol.
    ServeBench(ServeArgs),
    /// Prints two columns of a result file.
    PlotData(PlotArgs),
}

#[derive(Args)]
pub struct CharacterizeArgs {
    /// Remote bench `host:port`; in-process simulation when absent.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub i_bias: Option<f64>,
    #[arg(long)]
    pub i_delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r_set: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r_reset: Option<f64>,
    /// Write currents (A), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub currents: Vec<f64>,
    /// Lowest current of the default grid (A).
    #[arg(long)]
    pub i_min: Option<f64>,
    /// Highest current of the default grid (A).
    #[arg(long)]
    pub i_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub iters: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Switching-curve CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AnisotropyArgs {
    /// Field-sweep CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Lowest `R / R0` kept in the fit.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScalingArgs {
    /// `WIDTH_UM=FIT_JSON`, once per width.
    #[arg(long = "fit")]
    pub fits: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MnistArg {
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    pub mnist: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub mnist: MnistArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub mnist: MnistArg,
    /// Trained checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub t_steps: Option<usize>,
    #[arg(long)]
    pub rate_scale: Option<f64>,
    /// Device width whose nominal parameters every neuron uses (μm).
    #[arg(long)]
    pub width: Option<f64>,
    /// Evaluate a seeded subset of this many test images.
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VariationArgs {
    #[command(flatten)]
    pub mnist: MnistArg,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub deltas: Vec<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Leave synaptic weights unperturbed.
    #[arg(long)]
    pub no_weight_variation: bool,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub t_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub mnist: MnistArg,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Vec<f64>,
    /// Conductance per unit weight (S).
    #[arg(long)]
    pub g0: Option<f64>,
    /// Read pulse duration (s).
    #[arg(long)]
    pub t_read: Option<f64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub t_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct HilArgs {
    #[command(flatten)]
    pub mnist: MnistArg,
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<u8>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub t_steps: Option<usize>,
    #[arg(long)]
    pub rate_scale: Option<f64>,
    /// Width whose nominal parameters calibrate the drive (μm).
    #[arg(long)]
    pub width: Option<f64>,
    /// Fractional spread of device bias currents.
    #[arg(long)]
    pub bias_variation: Option<f64>,
    /// Logical neurons served by each physical device.
    #[arg(long)]
    pub multiplex: Option<usize>,
    /// Remote bench per physical device, in order.
    #[arg(long = "endpoint")]
    pub endpoints: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct HilTrainArgs {
    #[command(flatten)]
    pub hil: HilArgs,
    /// JSON-lines transcript; stdout when absent.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Final weights as a checkpoint.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    NetworkInput,
    Switching,
}

#[derive(Args)]
pub struct HilInferArgs {
    #[command(flatten)]
    pub hil: HilArgs,
    /// Weights checkpoint from `hil-train`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Device parameter JSON.
    #[arg(long)]
    pub device: PathBuf,
    #[arg(long, default_value = "127.0.0.1:5025")]
    pub listen: String,
    /// Sleep for real pulse and read durations.
    #[arg(long)]
    pub realistic_timing: bool,
}

#[derive(Args)]
pub struct PlotArgs {
    /// CSV, JSON, or JSON-lines result file.
    #[arg(long)]
    pub input: PathBuf,
    /// Column or field for x; the first one when absent.
    #[arg(long)]
    pub x: Option<String>,
    /// Column or field for y; the second one when absent.
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Characterize(a) => commands::lab::characterize(cfg, a),
        Command::Fit(a) => commands::lab::fit(cfg, a),
        Command::Anisotropy(a) => commands::lab::anisotropy(cfg, a),
        Command::Scaling(a) => commands::lab::scaling(cfg, a),
        Command::TrainBaseline(a) => commands::net::train(cfg, a),
        Command::ConvertInfer(a) => commands::net::convert(cfg, a),
        Command::SweepVariation(a) => commands::net::variation(cfg, a),
        Command::SweepEnergy(a) => commands::net::energy(cfg, a),
        Command::HilTrain(a) => commands::hil::train(cfg, a),
        Command::HilInfer(a) => commands::hil::infer(cfg, a),
        Command::ServeBench(a) => commands::lab::serve(a),
        Command::PlotData(a) => commands::plot::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
