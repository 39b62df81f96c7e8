use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::Rng;
use spinloop::backend::SimulatedBackend;
use spinloop::bench::execute;
use spinloop::charlab::{fit_sigmoid, run_reset_set_protocol};
use spinloop::crossbar::SynapseArray;
use spinloop::device::DeviceState;
use spinloop::hiltrain::{hil_forward, HilConfig, HilNetwork};
use spinloop::nettrain::{poisson_encode_image, stochastic_inference, Mlp, NeuronBank};
use spinloop::seed;
use spinloop::DeviceParams;

fn params() -> DeviceParams {
    DeviceParams::new(1e-3, 50e-6).unwrap()
}

fn currents() -> Vec<f64> {
    (0..30).map(|k| 0.75e-3 + k as f64 * 0.5e-3 / 29.0).collect()
}

fn synthetic_image(seed_value: u64) -> Vec<u8> {
    let mut rng = seed::stream(seed_value);
    (0..784).map(|_| if rng.gen_bool(0.2) { rng.gen() } else { 0 }).collect()
}

fn device(c: &mut Criterion) {
    let p = params();
    let mut state = DeviceState::new(1);
    c.bench_function("device/reset_write_pulse", |b| {
        b.iter(|| {
            state.apply_reset_pulse();
            black_box(state.apply_write_pulse(&p, black_box(1.02e-3)).unwrap())
        })
    });
}

fn charlab(c: &mut Criterion) {
    let curve = run_reset_set_protocol(&mut SimulatedBackend::new(params(), 2), &currents(), 100).unwrap();
    c.bench_function("charlab/protocol_30x100", |b| {
        b.iter_batched(
            || SimulatedBackend::new(params(), 3),
            |mut dev| run_reset_set_protocol(&mut dev, &currents(), 100).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("charlab/fit_sigmoid_30", |b| b.iter(|| fit_sigmoid(black_box(&curve)).unwrap()));
}

fn nettrain(c: &mut Criterion) {
    let mlp = Mlp::random(&[784, 400, 10], &mut seed::stream(4)).unwrap();
    let mut rng = seed::stream(5);
    let x = Array2::from_shape_fn((100, 784), |_| rng.gen::<f64>());
    let y = Array2::from_shape_fn((100, 10), |_| rng.gen::<f64>());
    c.bench_function("nettrain/gradients_batch100", |b| {
        b.iter(|| mlp.loss_and_gradients(x.view(), y.view(), None))
    });
    let image = synthetic_image(6);
    let train = poisson_encode_image(&image, 50, 1.0, &mut seed::stream(7)).unwrap();
    let mut bank = NeuronBank::uniform(&mlp, params(), 8);
    c.bench_function("nettrain/stochastic_inference_t50", |b| {
        b.iter(|| stochastic_inference(&mlp, black_box(&train), &mut bank).unwrap())
    });
}

fn crossbar(c: &mut Criterion) {
    let w = Array2::from_shape_fn((784, 400), |(i, j)| ((i * 31 + j * 17) % 200) as f64 / 100.0 - 1.0);
    let array = SynapseArray::from_weights(w.view(), 50e-6, 1.0, 100e-6).unwrap();
    let active: Vec<usize> = (0..784).step_by(5).collect();
    c.bench_function("crossbar/step_energy_157_active", |b| {
        b.iter(|| array.step_energy(black_box(&active).iter().copied()))
    });
}

fn hiltrain(c: &mut Criterion) {
    let cfg = HilConfig::default();
    let mut net = HilNetwork::from_config(&cfg, cfg.simulated_backends().unwrap()).unwrap();
    let train = poisson_encode_image(&synthetic_image(9), 100, 1.0, &mut seed::stream(10)).unwrap();
    c.bench_function("hiltrain/forward_4x100", |b| b.iter(|| hil_forward(black_box(&train), &mut net).unwrap()));
}

fn bench_protocol(c: &mut Criterion) {
    let mut dev = SimulatedBackend::new(params(), 11);
    c.bench_function("bench/execute_cycle", |b| {
        b.iter(|| {
            for line in ["RST", "READ?", "PULSE 1.02e-3", "READ?"] {
                black_box(execute(&mut dev, line));
            }
        })
    });
}

criterion_group!(benches, device, charlab, nettrain, crossbar, hiltrain, bench_protocol);
criterion_main!(benches);
