#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ff() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ff"))
}

pub fn run(args: &[&str]) -> Output {
    ff().args(args).env_remove("FF_DATA_DIR").output().expect("ff binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Images whose brightest quadrant row depends on the label, plus noise.
fn images(rng: &mut ChaCha8Rng, labels: &[u8], c: usize, side: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * c * side * side);
    for &y in labels {
        for _ in 0..c {
            for r in 0..side {
                for col in 0..side {
                    let band = (r * 10 / side) as u8 == y;
                    let base = if band && col > side / 4 { 180 } else { 20 };
                    out.push(base + rng.random_range(0..60u8));
                }
            }
        }
    }
    out
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..10u8)).collect()
}

fn idx_images(n: usize, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2051u32, n as u32, 28, 28] {
        b.extend(v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2049u32, labels.len() as u32] {
        b.extend(v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    b
}

/// Write `root/mnist` with `n_train` / `n_test` synthetic IDX samples.
/// `test_labels` replaces the generated test labels when given.
pub fn write_mnist(root: &Path, n_train: usize, n_test: usize, seed: u64, test_labels: Option<&[u8]>) -> PathBuf {
    let dir = root.join("mnist");
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ytr = labels(&mut rng, n_train);
    let generated = labels(&mut rng, n_test);
    let xtr = images(&mut rng, &ytr, 1, 28);
    // Test images depend only on the seed, never on a label override.
    let xte = images(&mut rng, &generated, 1, 28);
    let yte = test_labels.map(<[u8]>::to_vec).unwrap_or(generated);
    std::fs::write(dir.join("train-images-idx3-ubyte"), idx_images(n_train, &xtr)).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), idx_labels(&ytr)).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), idx_images(n_test, &xte)).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), idx_labels(&yte)).unwrap();
    dir
}

fn cifar_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let ys = labels(rng, n);
    let px = images(rng, &ys, 3, 32);
    let mut out = Vec::with_capacity(n * 3073);
    for (i, y) in ys.iter().enumerate() {
        out.push(*y);
        out.extend_from_slice(&px[i * 3072..(i + 1) * 3072]);
    }
    out
}

/// Write `root/cifar10` with five training batches of `per_batch` records.
pub fn write_cifar(root: &Path, per_batch: usize, n_test: usize, seed: u64) -> PathBuf {
    let dir = root.join("cifar10");
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 1..=5 {
        std::fs::write(dir.join(format!("data_batch_{i}.bin")), cifar_records(&mut rng, per_batch)).unwrap();
    }
    std::fs::write(dir.join("test_batch.bin"), cifar_records(&mut rng, n_test)).unwrap();
    dir
}
