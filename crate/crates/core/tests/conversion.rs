mod common;

use spinloop::device::DeviceParams;
use spinloop::hiltrain::{hil_test, HilConfig, HilNetwork, InferenceMode};
use spinloop::nettrain::{
    converted_accuracy, encode_indexed, evaluation_subset, input_matrix, stochastic_inference, ConversionConfig, Mlp,
    NeuronBank,
};

fn nominal() -> DeviceParams {
    DeviceParams::new(0.65e-3, 50e-6).unwrap()
}

fn converted_predictions(mlp: &Mlp, set: &spinloop::MnistSet, indices: &[usize], t_steps: usize) -> f64 {
    let cfg = ConversionConfig { t_steps, seed: 9, ..ConversionConfig::default() };
    let mut bank = NeuronBank::uniform(mlp, nominal(), 9);
    converted_accuracy(mlp, set, indices, &mut bank, &cfg).unwrap()
}

#[test]
fn long_trains_agree_with_the_deterministic_network() {
    let Some((train, test)) = common::try_mnist() else { return };
    let mlp = common::cached_baseline(&train, &test);
    let indices = evaluation_subset(test.len(), 100, 1);
    let x = input_matrix(&test, &indices);
    let ann = mlp.predict(x.view());
    let cfg = ConversionConfig { t_steps: 2000, seed: 9, ..ConversionConfig::default() };
    let mut bank = NeuronBank::uniform(&mlp, nominal(), 9);
    let agree = indices
        .iter()
        .zip(&ann)
        .filter(|(&i, &a)| {
            let train = encode_indexed(&test, i, &cfg).unwrap();
            stochastic_inference(&mlp, &train, &mut bank).unwrap().class == a
        })
        .count();
    assert!(agree >= 99, "{agree}/100 agree");
}

#[test]
fn accuracy_grows_with_train_length() {
    let Some((train, test)) = common::try_mnist() else { return };
    let mlp = common::cached_baseline(&train, &test);
    let indices = evaluation_subset(test.len(), 500, 2);
    let acc: Vec<f64> = [1, 5, 50].iter().map(|&t| converted_predictions(&mlp, &test, &indices, t)).collect();
    assert!(acc[0] < acc[1] && acc[1] < acc[2], "{acc:?}");
}

#[test]
fn untrained_hil_network_is_near_chance() {
    let Some((_, test)) = common::try_mnist() else { return };
    let cfg = HilConfig { test_per_class: 50, ..HilConfig::default() };
    let mut hits = 0;
    for seed in 0..4 {
        let cfg = HilConfig { seed, ..cfg.clone() };
        let mut net = HilNetwork::from_config(&cfg, cfg.simulated_backends().unwrap()).unwrap();
        hits += hil_test(&test, &mut net, &cfg, InferenceMode::default()).unwrap().0;
    }
    let frac = hits as f64 / 800.0;
    assert!((0.1..0.45).contains(&frac), "{frac}");
}
