mod common;

use std::io::Write;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spinloop::backend::{time_multiplex, CountingBackend, SimulatedBackend};
use spinloop::bench::{execute, run_script, BenchDeviceConfig, BenchHandle, BenchServer, RemoteBackend};
use spinloop::charlab::{fit_anisotropy, fit_sigmoid, run_reset_set_protocol, FieldSweep, SigmoidFit, DEFAULT_TILT_FLOOR};
use spinloop::device::{nominal_device, DeviceGeometry, DeviceParams, ScalingLaw};
use spinloop::hiltrain::{
    hil_test, hil_train, software_reference_train, HilConfig, HilNetwork, InferenceMode, TranscriptRecord,
};
use spinloop::mnist::MnistSet;
use spinloop::nettrain::{
    converted_accuracy, energy_sweep, evaluation_subset, train_baseline, variation_sweep, ConversionConfig,
    EnergySweepConfig, Mlp, NeuronBank, TrainConfig, TrainReport, VariationSweepConfig, DEFAULT_EVAL_IMAGES,
};

fn report(n: u32, ok: bool, detail: String) {
    let line = format!("criterion {n:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    // Bypasses libtest capture so every criterion prints its verdict.
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok, "{line}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn data() -> &'static (MnistSet, MnistSet) {
    static DATA: OnceLock<(MnistSet, MnistSet)> = OnceLock::new();
    DATA.get_or_init(common::mnist)
}

fn baseline() -> &'static TrainReport {
    static BASE: OnceLock<TrainReport> = OnceLock::new();
    BASE.get_or_init(|| {
        let (train, test) = data();
        let config = TrainConfig::default();
        let report = train_baseline(train, test, &config).unwrap();
        common::store_baseline(&config, &report.mlp);
        report
    })
}

fn eval_subset() -> Vec<usize> {
    evaluation_subset(data().1.len(), DEFAULT_EVAL_IMAGES, ConversionConfig::default().seed)
}

#[test]
fn c01_baseline_accuracy() {
    let (train, test) = data();
    let full = baseline().test_accuracy;
    let smoke = train_baseline(train, test, &TrainConfig { epochs: 5, ..TrainConfig::default() })
        .unwrap()
        .test_accuracy;
    report(
        1,
        full >= 0.968 && smoke >= 0.95,
        format!("40 epochs {:.2}% (>= 96.8), 5 epochs {:.2}% (>= 95)", 100.0 * full, 100.0 * smoke),
    );
}

#[test]
fn c02_conversion_fidelity() {
    let test = &data().1;
    let base = baseline();
    let cfg = ConversionConfig::default();
    let nominal = nominal_device(
        DeviceGeometry::new(0.5).unwrap(),
        &ScalingLaw::default_bias(),
        &ScalingLaw::default_delta(),
    )
    .unwrap();
    let mut bank = NeuronBank::uniform(&base.mlp, nominal, cfg.seed);
    let acc = converted_accuracy(&base.mlp, test, &eval_subset(), &mut bank, &cfg).unwrap();
    let gap = 100.0 * (base.test_accuracy - acc).abs();
    report(
        2,
        gap <= 0.5,
        format!(
            "T=50 converted {:.2}% vs baseline {:.2}%, gap {gap:.2} points (<= 0.5)",
            100.0 * acc,
            100.0 * base.test_accuracy
        ),
    );
}

#[test]
fn c03_protocol_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut inside, mut total) = (0, 0);
    for d in 0..5 {
        let i_bias = rng.gen_range(0.5e-3..2e-3);
        let i_delta = rng.gen_range(20e-6..200e-6);
        let params = DeviceParams::new(i_bias, i_delta).unwrap();
        let currents: Vec<f64> = (0..6).map(|k| i_bias + i_delta * (-3.0 + 1.2 * k as f64)).collect();
        let curve = run_reset_set_protocol(&mut SimulatedBackend::new(params, 100 + d), &currents, 100).unwrap();
        for p in curve.points() {
            let expect = logistic((p.i_write - i_bias) / i_delta);
            let sigma = (expect * (1.0 - expect) / p.trials as f64).sqrt();
            total += 1;
            inside += ((p.switches as f64 / p.trials as f64 - expect).abs() <= 3.0 * sigma) as usize;
        }
    }
    let frac = inside as f64 / total as f64;
    report(3, total >= 20 && frac >= 0.95, format!("{inside}/{total} points inside 3 sigma (>= 95%)"));
}

/// `(true i_bias, true i_delta, fit)` for 50 random devices.
fn recovery_fits() -> &'static Vec<(f64, f64, SigmoidFit)> {
    static FITS: OnceLock<Vec<(f64, f64, SigmoidFit)>> = OnceLock::new();
    FITS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..50u64)
            .map(|d| {
                let i_bias = rng.gen_range(0.1e-3..5e-3);
                let i_delta = rng.gen_range(10e-6..500e-6);
                let params = DeviceParams::new(i_bias, i_delta).unwrap();
                let currents: Vec<f64> =
                    (0..30).map(|k| i_bias + i_delta * (-5.0 + 10.0 * k as f64 / 29.0)).collect();
                let curve = run_reset_set_protocol(&mut SimulatedBackend::new(params, d), &currents, 100).unwrap();
                (i_bias, i_delta, fit_sigmoid(&curve).unwrap())
            })
            .collect()
    })
}

#[test]
fn c04_fit_recovery() {
    let fits = recovery_fits();
    let eb = median(fits.iter().map(|(b, _, f)| (f.i_bias - b).abs() / b).collect());
    let ed = median(fits.iter().map(|(_, d, f)| (f.i_delta - d).abs() / d).collect());
    report(
        4,
        eb <= 0.01 && ed <= 0.05,
        format!("median i_bias error {:.3}% (<= 1), i_delta error {:.2}% (<= 5)", 100.0 * eb, 100.0 * ed),
    );
}

#[test]
fn c05_window_identity() {
    let oracle = (0.999f64 / 0.001).ln() + (0.9999f64 / 0.0001).ln();
    let worst = recovery_fits()
        .iter()
        .map(|(_, _, f)| (f.programming_window() / f.i_delta - 16.1170).abs())
        .fold(0.0, f64::max);
    report(
        5,
        worst <= 1e-3 && (oracle - 16.1170).abs() <= 1e-3,
        format!("max |window/i_delta - 16.1170| = {worst:.2e} over 50 fits, oracle {oracle:.4}"),
    );
}

#[test]
fn c06_anisotropy_oracle() {
    let h_an = 5.8e5;
    let fields: Vec<f64> = (-20..=20).map(|k| k as f64 * 2.0e4).collect();
    let errors: Vec<f64> = (0..20u64)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let noise = Normal::new(1.0, 0.01).unwrap();
            let clean = FieldSweep::synthetic(h_an, 20.0, &fields).unwrap();
            let noisy = FieldSweep::new(clean.points().iter().map(|&(h, r)| (h, r * noise.sample(&mut rng))).collect())
                .unwrap();
            (fit_anisotropy(&noisy, DEFAULT_TILT_FLOOR).unwrap().h_an - h_an).abs() / h_an
        })
        .collect();
    let m = median(errors);
    report(6, m <= 0.01, format!("median h_an error {:.3}% over 20 seeds (<= 1)", 100.0 * m));
}

#[test]
fn c07_variation_trend() {
    let test = &data().1;
    let base = baseline();
    let cfg = VariationSweepConfig {
        widths: vec![0.3, 5.0],
        deltas: vec![0.0, 0.25],
        ..VariationSweepConfig::default()
    };
    let records = variation_sweep(&base.mlp, test, &eval_subset(), &cfg, |_| {}).unwrap();
    let acc = |w: f64, d: f64| -> Vec<f64> {
        let mut v: Vec<_> = records.iter().filter(|r| r.width_um == w && r.delta == d).collect();
        v.sort_by_key(|r| r.trial);
        v.iter().map(|r| r.accuracy).collect()
    };
    let (narrow, wide) = (acc(0.3, 0.25), acc(5.0, 0.25));
    let wins = narrow.iter().zip(&wide).filter(|(n, w)| w >= n).count();
    let worst_clean = [0.3, 5.0]
        .iter()
        .flat_map(|&w| acc(w, 0.0))
        .map(|a| 100.0 * (a - base.test_accuracy).abs())
        .fold(0.0, f64::max);
    let mean = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    report(
        7,
        wins * 10 >= 9 * cfg.trials && worst_clean <= 0.5,
        format!(
            "delta=25%: 5.0um >= 0.3um in {wins}/{} trials (means {:.2}% vs {:.2}%); delta=0 max gap {worst_clean:.2} points",
            cfg.trials,
            mean(&wide),
            mean(&narrow)
        ),
    );
}

#[test]
fn c08_energy_scaling() {
    let test = &data().1;
    let cfg = EnergySweepConfig {
        widths: vec![0.3, 5.0],
        ..EnergySweepConfig::default()
    };
    let records = energy_sweep(&baseline().mlp, test, &eval_subset(), &cfg).unwrap();
    let delta = |w: f64| cfg.delta_law.nominal(w);
    let calibration = delta(5.0) / delta(0.3);
    let ratio = records[1].energy_normalized / records[0].energy_normalized;
    report(
        8,
        (ratio - 50.0).abs() <= 10.0 && (calibration - 50f64.sqrt()).abs() < 1e-9,
        format!("E(5.0)/E(0.3) = {ratio:.2} (50 +- 20%), i_delta ratio {calibration:.4}"),
    );
}

struct HilOutcome {
    loss_ratio: f64,
    hil_correct: usize,
    software_correct: usize,
}

fn hil_outcome(seed: u64) -> HilOutcome {
    let (train, test) = data();
    let cfg = HilConfig {
        seed,
        ..HilConfig::default()
    };
    let mut net = HilNetwork::from_config(&cfg, cfg.simulated_backends().unwrap()).unwrap();
    let losses = hil_train(train, &mut net, &cfg, |_| {}).unwrap();
    let (hil_correct, _) = hil_test(test, &mut net, &cfg, InferenceMode::default()).unwrap();
    let mut sw = HilNetwork::from_config(&cfg, cfg.simulated_backends().unwrap()).unwrap();
    sw.set_weights(software_reference_train(train, &cfg).unwrap()).unwrap();
    let (software_correct, _) = hil_test(test, &mut sw, &cfg, InferenceMode::Switching).unwrap();
    HilOutcome {
        loss_ratio: losses.last().unwrap() / losses[0],
        hil_correct,
        software_correct,
    }
}

#[test]
fn c09_hil_efficacy() {
    let runs: Vec<HilOutcome> = (0..5).map(hil_outcome).collect();
    let loss = median(runs.iter().map(|r| r.loss_ratio).collect());
    let hil = median(runs.iter().map(|r| r.hil_correct as f64).collect());
    let sw = median(runs.iter().map(|r| r.software_correct as f64).collect());
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{}/{}", r.hil_correct, r.software_correct)).collect();
    report(
        9,
        loss < 0.3 && hil >= 3.0 && sw < hil,
        format!(
            "(a) loss ratio {loss:.4} (< 0.3), (b) HIL {hil}/4 (>= 3), (c) software-then-hardware {sw}/4 (< HIL); per seed HIL/software {}",
            per_seed.join(" ")
        ),
    );
}

#[test]
fn c10_time_multiplex() {
    let (train, test) = data();
    let mut scores = Vec::new();
    let mut bookkeeping = true;
    for seed in 0..5 {
        let cfg = HilConfig {
            classes: vec![0, 2],
            test_per_class: 3,
            seed,
            ..HilConfig::default()
        };
        let physical = CountingBackend::new(SimulatedBackend::new(cfg.sample_device(0).unwrap(), cfg.device_seed(0)));
        let counts = physical.counts();
        let mut net = HilNetwork::from_config(&cfg, time_multiplex(physical, 2)).unwrap();
        hil_train(train, &mut net, &cfg, |_| {}).unwrap();
        let images = (cfg.train_indices(train).len() * cfg.epochs) as u64;
        bookkeeping &= counts.total() == images * 2 * cfg.t_steps as u64 * 4;
        let (correct, _) = hil_test(test, &mut net, &cfg, InferenceMode::default()).unwrap();
        scores.push(correct as f64);
        let before = counts.total();
        let (_, preds) = hil_test(test, &mut net, &cfg, InferenceMode::Switching).unwrap();
        bookkeeping &= counts.total() - before == preds.len() as u64 * 2 * cfg.t_steps as u64 * 4;
    }
    let m = median(scores.clone());
    report(
        10,
        m == 6.0 && bookkeeping,
        format!("median {m}/6 (needs 6), per seed {scores:?}; call counts exact: {bookkeeping}"),
    );
}

fn serve(cfg: &BenchDeviceConfig) -> BenchHandle {
    BenchServer::bind("127.0.0.1:0", cfg).unwrap().spawn().unwrap()
}

#[test]
fn c11_backend_equivalence() {
    let device = BenchDeviceConfig::from_params(&DeviceParams::new(1e-3, 50e-6).unwrap(), 11);
    let currents: Vec<f64> = (0..30).map(|k| 0.6e-3 + k as f64 * 0.8e-3 / 29.0).collect();
    let csv = |curve: spinloop::charlab::SwitchCurve| {
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        out
    };
    let server = serve(&device);
    let remote_csv = csv(run_reset_set_protocol(&mut RemoteBackend::connect(server.addr()).unwrap(), &currents, 100).unwrap());
    let local_csv = csv(run_reset_set_protocol(&mut device.device().unwrap(), &currents, 100).unwrap());
    let characterization = remote_csv == local_csv;

    let (train, _) = data();
    let cfg = HilConfig {
        epochs: 2,
        seed: 11,
        ..HilConfig::default()
    };
    let servers: Vec<BenchHandle> = (0..cfg.classes.len())
        .map(|k| serve(&BenchDeviceConfig::from_params(&cfg.sample_device(k).unwrap(), cfg.device_seed(k))))
        .collect();
    let remotes: Vec<RemoteBackend> = servers.iter().map(|s| RemoteBackend::connect(s.addr()).unwrap()).collect();
    let run = |net: &mut dyn FnMut(&mut Vec<TranscriptRecord>) -> Array2<f64>| {
        let mut records = Vec::new();
        let w = net(&mut records);
        (records, w)
    };
    let mut remote_net = HilNetwork::from_config(&cfg, remotes).unwrap();
    let remote = run(&mut |r| {
        hil_train(train, &mut remote_net, &cfg, |x| r.push(x.clone())).unwrap();
        remote_net.weights().clone()
    });
    let mut local_net = HilNetwork::from_config(&cfg, cfg.simulated_backends().unwrap()).unwrap();
    let local = run(&mut |r| {
        hil_train(train, &mut local_net, &cfg, |x| r.push(x.clone())).unwrap();
        local_net.weights().clone()
    });
    let hil = remote == local;

    let script = ["*IDN?", "SEED 5", "RST", "READ?", "PULSE 1.02e-3", "READ?", "PARAM?", "FOO", "PULSE", "RST", "READ?"];
    let (mut r, mut w) = {
        let s = std::net::TcpStream::connect(server.addr()).unwrap();
        (std::io::BufReader::new(s.try_clone().unwrap()), s)
    };
    let wire: Vec<String> = script
        .iter()
        .map(|l| {
            w.write_all(format!("{l}\n").as_bytes()).unwrap();
            let mut line = String::new();
            std::io::BufRead::read_line(&mut r, &mut line).unwrap();
            line.trim_end_matches('\n').to_string()
        })
        .collect();
    let offline = run_script(&mut device.device().unwrap(), script);
    let single: Vec<String> = {
        let mut d = device.device().unwrap();
        script.iter().map(|l| execute(&mut d, l).line).collect()
    };
    let replay = wire == offline && offline == single;

    report(
        11,
        characterization && hil && replay,
        format!("characterization CSV identical: {characterization}; HIL transcript and weights identical: {hil}; transcript replay identical: {replay}"),
    );
}

/// Adds `dv` to parameter `p` of layer `k`, weights first in row-major order.
fn nudge(mlp: &mut Mlp, k: usize, p: usize, dv: f64) {
    let l = &mut mlp.layers_mut()[k];
    let nw = l.weights.len();
    if p < nw {
        *l.weights.iter_mut().nth(p).unwrap() += dv;
    } else {
        l.biases[p - nw] += dv;
    }
}

fn relative_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::random(&[6, 5, 3], &mut rng).unwrap();
    let x = Array2::from_shape_fn((4, 6), |_| rng.gen_range(0.0..1.0));
    let y = Array2::from_shape_fn((4, 3), |_| rng.gen_range(0.0..1.0));
    let (_, grads) = mlp.loss_and_gradients(x.view(), y.view(), None);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        let analytic: Vec<f64> = grads[k].weights.iter().chain(grads[k].biases.iter()).copied().collect();
        for (p, &g) in analytic.iter().enumerate() {
            nudge(&mut mlp, k, p, h);
            let up = mlp.loss(x.view(), y.view());
            nudge(&mut mlp, k, p, -2.0 * h);
            let down = mlp.loss(x.view(), y.view());
            nudge(&mut mlp, k, p, h);
            let numeric = (up - down) / (2.0 * h);
            let scale = (g.abs() + numeric.abs()).max(1e-8);
            worst = worst.max((g - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn c12_numerical_hygiene() {
    let worst = (0..10).map(relative_gradient_error).fold(0.0, f64::max);

    let (train, test) = data();
    let small_train = train.subset(&(0..3000).collect::<Vec<_>>());
    let small_test = test.subset(&(0..500).collect::<Vec<_>>());
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let checkpoint = || {
        let mut out = Vec::new();
        train_baseline(&small_train, &small_test, &cfg)
            .unwrap()
            .mlp
            .write_checkpoint(&mut out)
            .unwrap();
        out
    };
    let training = checkpoint() == checkpoint();

    let mlp = Mlp::read_checkpoint(checkpoint().as_slice()).unwrap();
    let conv = ConversionConfig { seed: 12, ..ConversionConfig::default() };
    let indices: Vec<usize> = (0..200).collect();
    let infer = || {
        let mut bank = NeuronBank::uniform(&mlp, DeviceParams::new(1e-3, 50e-6).unwrap(), 12);
        converted_accuracy(&mlp, &small_test, &indices, &mut bank, &conv).unwrap().to_bits()
    };
    let conversion = infer() == infer();

    let sweep = || {
        let vcfg = VariationSweepConfig {
            widths: vec![0.3, 5.0],
            deltas: vec![0.25],
            trials: 2,
            conversion: conv,
            ..VariationSweepConfig::default()
        };
        variation_sweep(&mlp, &small_test, &indices[..50], &vcfg, |_| {})
            .unwrap()
            .iter()
            .map(|r| r.accuracy.to_bits())
            .collect::<Vec<_>>()
    };
    let variation = sweep() == sweep();

    let hil = || {
        let hcfg = HilConfig { epochs: 2, seed: 12, ..HilConfig::default() };
        let mut net = HilNetwork::from_config(&hcfg, hcfg.simulated_backends().unwrap()).unwrap();
        let mut records = Vec::new();
        hil_train(train, &mut net, &hcfg, |r| records.push(r.clone())).unwrap();
        (records, net.weights().clone())
    };
    let hil_same = hil() == hil();

    let reproducible = training && conversion && variation && hil_same;
    report(
        12,
        worst <= 1e-4 && reproducible,
        format!(
            "max gradient relative error {worst:.2e} (<= 1e-4); bit-identical reruns: training {training}, conversion {conversion}, variation {variation}, HIL {hil_same}"
        ),
    );
}
