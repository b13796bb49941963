use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bdnn_cli::dataset::{load_dir, parse_cifar10_batch, parse_idx_images, DatasetKind, CIFAR_ROW};
use serde_json::Value;
use tempfile::TempDir;

fn bdnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdnn"))
        .args(args)
        .output()
        .expect("run bdnn")
}

fn ok_json(args: &[&str]) -> Value {
    let out = bdnn(args);
    assert!(
        out.status.success(),
        "bdnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic pseudo-random bytes without pulling in a generator.
fn noise(n: usize, seed: u32) -> Vec<u8> {
    let mut x = seed.wrapping_mul(2_654_435_761) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            (x >> 24) as u8
        })
        .collect()
}

fn write_mnist(dir: &Path, count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let pixels = noise(count * rows * cols, 1);
    let mut images = Vec::new();
    for v in [0x803u32, count as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(&pixels);
    fs::write(dir.join("t10k-images-idx3-ubyte"), &images).unwrap();

    let mut labels = Vec::new();
    for v in [0x801u32, count as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(noise(count, 2).iter().map(|b| b % 10));
    fs::write(dir.join("t10k-labels-idx1-ubyte"), &labels).unwrap();
    images
}

fn gen_model(dir: &Path, arch: &str, name: &str) -> PathBuf {
    let path = dir.join(name);
    let out = bdnn(&["gen-model", "--arch", arch, "--seed", "3", "--out", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn mnist_header_count_and_dims() {
    let dir = TempDir::new().unwrap();
    let bytes = write_mnist(dir.path(), 10_000, 28, 28);
    let (dims, count, pixels) = parse_idx_images(&bytes, Path::new("t10k")).unwrap();
    assert_eq!((count, dims.rows, dims.cols, dims.channels), (10_000, 28, 28, 1));

    let ds = load_dir(dir.path(), None, false).unwrap();
    assert_eq!(ds.kind, DatasetKind::Mnist);
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.labels.as_ref().unwrap().len(), 10_000);
    // pixel (0, 0) of the first and last image by raw file offset
    assert_eq!(ds.image(0)[0], bytes[16]);
    assert_eq!(ds.image(9_999)[0], bytes[16 + 9_999 * 784]);
    assert_eq!(pixels, ds.images);
}

#[test]
fn cifar_rows_and_pixel_offsets() {
    let dir = TempDir::new().unwrap();
    let mut bytes = noise(10_000 * CIFAR_ROW, 4);
    for row in bytes.chunks_exact_mut(CIFAR_ROW) {
        row[0] %= 10;
    }
    let path = dir.path().join("test_batch.bin");
    fs::write(&path, &bytes).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 10_000 * 3073);

    let (images, labels) = parse_cifar10_batch(&bytes, &path).unwrap();
    assert_eq!(labels.len(), 10_000);
    let ds = load_dir(dir.path(), Some(DatasetKind::Cifar10), false).unwrap();
    assert_eq!(ds.images, images);
    assert_eq!((ds.dims.rows, ds.dims.cols, ds.dims.channels), (32, 32, 3));
    for (img, c) in [(0usize, 0usize), (0, 1), (0, 2), (4_321, 2)] {
        assert_eq!(ds.image(img)[c], bytes[img * CIFAR_ROW + 1 + c * 1024]);
    }
}

#[test]
fn classify_backends_and_threads_agree() {
    let dir = TempDir::new().unwrap();
    write_mnist(dir.path(), 300, 28, 28);
    let model = gen_model(dir.path(), "mlp:784,128,64,10", "mlp.bdnn");
    let run = |backend: &str, threads: &str| {
        ok_json(&[
            "classify", "--model", s(&model), "--data-dir", s(dir.path()),
            "--backend", backend, "--threads", threads, "--json",
        ])
    };
    let packed = run("packed", "1");
    let reference = run("reference", "1");
    let threaded = run("packed", "3");
    assert_eq!(packed["images"], 300);
    assert_eq!(packed["predictions"].as_array().unwrap().len(), 300);
    assert_eq!(packed["predictions"], reference["predictions"]);
    assert_eq!(packed["predictions"], threaded["predictions"]);
    assert_eq!(packed["correct"], reference["correct"]);
    let accuracy = packed["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));

    let text = bdnn(&["classify", "--model", s(&model), "--data-dir", s(dir.path()), "--limit", "5", "--verbose"]);
    assert_eq!(code(&text), 0);
    let stdout = String::from_utf8(text.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 5 + 2, "{stdout}");
    assert!(stdout.contains("accuracy"));
}

#[test]
fn classify_cnn_on_cifar() {
    let dir = TempDir::new().unwrap();
    let mut bytes = noise(40 * CIFAR_ROW, 9);
    for row in bytes.chunks_exact_mut(CIFAR_ROW) {
        row[0] %= 10;
    }
    fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
    let model = gen_model(dir.path(), "cifar-vgg-small", "cnn.bdnn");
    let run = |backend: &str| {
        ok_json(&["classify", "--model", s(&model), "--data-dir", s(dir.path()), "--backend", backend, "--json"])
    };
    let (p, r) = (run("packed"), run("reference"));
    assert_eq!(p["dataset"], "cifar10");
    assert_eq!(p["predictions"], r["predictions"]);
}

#[test]
fn data_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let images = write_mnist(dir.path(), 10, 28, 28);
    let model = gen_model(dir.path(), "mlp:784,32,10", "m.bdnn");

    fs::write(dir.path().join("t10k-images-idx3-ubyte"), &images[..images.len() - 100]).unwrap();
    let out = bdnn(&["classify", "--model", s(&model), "--data-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("t10k-images-idx3-ubyte"));

    let empty = TempDir::new().unwrap();
    let out = bdnn(&["classify", "--model", s(&model), "--data-dir", s(empty.path())]);
    assert_eq!(code(&out), 2);

    let missing = dir.path().join("nope.bdnn");
    assert_eq!(code(&bdnn(&["inspect", "--model", s(&missing)])), 2);

    let garbage = dir.path().join("garbage.bdnn");
    fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(code(&bdnn(&["inspect", "--model", s(&garbage)])), 2);

    // MNIST-shaped data for a CIFAR model
    let fresh = TempDir::new().unwrap();
    write_mnist(fresh.path(), 4, 28, 28);
    let cnn = gen_model(fresh.path(), "cifar-vgg-small", "cnn.bdnn");
    let out = bdnn(&["classify", "--model", s(&cnn), "--data-dir", s(fresh.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("input bytes"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&bdnn(&[])), 1);
    assert_eq!(code(&bdnn(&["frobnicate"])), 1);
    assert_eq!(code(&bdnn(&["bench-gemm", "--size", "32"])), 1);
    assert_eq!(code(&bdnn(&["bench-gemm", "--iters", "0"])), 1);
    assert_eq!(code(&bdnn(&["bench-gemm", "--size", "64", "--threads", "0"])), 1);
    assert_eq!(code(&bdnn(&["classify", "--model", "x.bdnn", "--backend", "gpu"])), 1);
    assert_eq!(code(&bdnn(&["gen-model", "--arch", "mlp:10", "--out", "x.bdnn"])), 1);
    assert_eq!(code(&bdnn(&["--help"])), 0);
}

#[test]
fn bench_gemm_report() {
    let a = ok_json(&["bench-gemm", "--size", "200", "--iters", "1", "--json"]);
    assert_eq!(a["task"], "gemm");
    assert_eq!(a["iterations"], 1);
    assert_eq!(a["packed"]["samples_ms"].as_array().unwrap().len(), 1);
    assert_eq!(a["reference"]["samples_ms"].as_array().unwrap().len(), 1);
    assert!(a["packed"]["mean_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(a["exact"], true);
    assert_eq!(a["size"], 200);

    let b = ok_json(&["bench-gemm", "--size", "200", "--iters", "2", "--json"]);
    assert_eq!(a["checksum"], b["checksum"]);
    let c = ok_json(&["bench-gemm", "--size", "200", "--iters", "1", "--seed", "1", "--json"]);
    assert_ne!(a["checksum"], c["checksum"]);

    let text = bdnn(&["bench-gemm", "--size", "64", "--iters", "1"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("speedup"));
}

#[test]
fn bench_net_mlp_report() {
    let dir = TempDir::new().unwrap();
    let model = gen_model(dir.path(), "mnist-mlp", "mlp.bdnn");
    let r = ok_json(&["bench-net", "--model", s(&model), "--iters", "5", "--limit", "3", "--json"]);
    assert_eq!(r["task"], "net");
    assert_eq!(r["threads"], 1);
    assert_eq!(r["images"], 3);
    assert_eq!(r["exact"], true);
    assert!(r["memory_ratio"].as_f64().unwrap() >= 30.0);
    assert!(r["ratio"].as_f64().unwrap() > 1.0, "packed slower than reference: {r}");
}

#[test]
fn inspect_reports_sizes() {
    let dir = TempDir::new().unwrap();
    let model = gen_model(dir.path(), "cifar-vgg-small", "cnn.bdnn");
    let j = ok_json(&["inspect", "--model", s(&model), "--json"]);
    assert_eq!(j["input"], serde_json::json!([32, 32, 3]));
    let layers = j["layers"].as_array().unwrap();
    assert_eq!(layers[0]["kind"], "conv8");
    assert_eq!(layers.last().unwrap()["kind"], "batchnorm");
    assert_eq!(layers.last().unwrap()["output"], serde_json::json!([1, 1, 10]));
    let total: u64 = layers.iter().map(|l| l["packed_bytes"].as_u64().unwrap()).sum();
    assert_eq!(total, j["packed_bytes"].as_u64().unwrap());
    assert!(j["memory_ratio"].as_f64().unwrap() >= 30.0);

    let text = bdnn(&["inspect", "--model", s(&model)]);
    let stdout = String::from_utf8(text.stdout).unwrap();
    assert!(stdout.contains("maxpool") && stdout.contains("MiB"), "{stdout}");
}

#[test]
fn gen_model_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen_model(dir.path(), "mlp:100,70,10", "a.bdnn");
    let b = gen_model(dir.path(), "mlp:100,70,10", "b.bdnn");
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}
