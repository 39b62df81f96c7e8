#![allow(dead_code)]

use std::path::PathBuf;

use spinloop::mnist::{load_dir, MnistSet};
use spinloop::nettrain::{train_baseline, Mlp, TrainConfig};

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("SPINLOOP_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// `(train, test)`, or `None` when no MNIST files are present.
pub fn try_mnist() -> Option<(MnistSet, MnistSet)> {
    let dir = mnist_dir();
    if !dir.join("train-labels-idx1-ubyte").exists() && !dir.join("train-labels-idx1-ubyte.gz").exists() {
        eprintln!("MNIST not found under {}; set SPINLOOP_MNIST_DIR", dir.display());
        return None;
    }
    Some(load_dir(&dir).expect("MNIST files present but unreadable"))
}

pub fn mnist() -> (MnistSet, MnistSet) {
    try_mnist().expect("MNIST is required for this test")
}

fn cache_path(config: &TrainConfig) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!(
        "baseline-e{}-s{}-lr{}-m{}-d{}-b{}.spinmlp",
        config.epochs, config.seed, config.learning_rate, config.momentum, config.dropout, config.batch_size
    ))
}

/// Stores a trained model for other test binaries.
pub fn store_baseline(config: &TrainConfig, mlp: &Mlp) {
    let _ = mlp.write_checkpoint(std::fs::File::create(cache_path(config)).unwrap());
}

/// The default 40-epoch model, trained once per target directory.
pub fn cached_baseline(train: &MnistSet, test: &MnistSet) -> Mlp {
    let config = TrainConfig::default();
    let path = cache_path(&config);
    if let Ok(f) = std::fs::File::open(&path) {
        if let Ok(m) = Mlp::read_checkpoint(std::io::BufReader::new(f)) {
            return m;
        }
    }
    let mlp = train_baseline(train, test, &config).unwrap().mlp;
    store_baseline(&config, &mlp);
    mlp
}
