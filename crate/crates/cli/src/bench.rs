//! Timing harness and the JSON benchmark report.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use bdnn_core::gemm::{bgemm_par, sgemm_ref_par, PackedMatrixA, PackedMatrixB};
use bdnn_core::layers::Backend;
use bdnn_core::network::{argmax, Network};
use bdnn_core::tensor::words_for;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Untimed runs before measuring.
pub const WARMUP: usize = 3;

/// Wall-clock statistics over the measured runs, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl Timing {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        assert!(!samples_ms.is_empty(), "at least one sample");
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Timing {
            mean_ms: samples_ms.iter().sum::<f64>() / n as f64,
            median_ms,
            min_ms: sorted[0],
            samples_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReport {
    pub backend: String,
    #[serde(flatten)]
    pub timing: Timing,
    /// Bytes of weights (or GEMM operands) in this backend's representation.
    pub weight_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// `"gemm"` or `"net"`.
    pub task: String,
    pub iterations: usize,
    pub warmup: usize,
    pub threads: usize,
    pub reference: BackendReport,
    pub packed: BackendReport,
    /// Reference mean time over packed mean time.
    pub ratio: f64,
    /// Reference bytes over packed bytes.
    pub memory_ratio: f64,
    /// Whether both backends produced the same results.
    pub exact: bool,
    /// Hash of the packed backend's results; stable across runs.
    pub checksum: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_score_diff: Option<f64>,
    pub machine: String,
}

/// Runs `f` `WARMUP` times untimed, then `iters` times under a monotonic clock.
pub fn measure(iters: usize, mut f: impl FnMut()) -> Timing {
    for _ in 0..WARMUP {
        f();
    }
    let samples = (0..iters.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    Timing::from_samples(samples)
}

pub fn machine_note() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut features = Vec::new();
    #[cfg(target_arch = "x86_64")]
    {
        for (name, on) in [
            ("popcnt", std::is_x86_feature_detected!("popcnt")),
            ("avx2", std::is_x86_feature_detected!("avx2")),
            ("fma", std::is_x86_feature_detected!("fma")),
            ("avx512f", std::is_x86_feature_detected!("avx512f")),
            ("avx512vpopcntdq", std::is_x86_feature_detected!("avx512vpopcntdq")),
        ] {
            if on {
                features.push(name);
            }
        }
    }
    format!(
        "{}-{}, {} logical cpus, features: {}",
        std::env::consts::ARCH,
        std::env::consts::OS,
        cpus,
        if features.is_empty() { "none".into() } else { features.join(" ") }
    )
}

fn hash_of(values: impl Hash) -> u64 {
    let mut h = DefaultHasher::new();
    values.hash(&mut h);
    h.finish()
}

/// Times `size x size` binary GEMM against float GEMM on the same `{-1, +1}` operands.
///
/// Operand packing is done once up front; only the multiplications are timed.
/// Both run on the current rayon pool.
pub fn bench_gemm(size: usize, iters: usize, seed: u64) -> BenchReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = PackedMatrixA::from_fn(size, size, |_, _| rng.random());
    let b = PackedMatrixB::from_fn(size, size, |_, _| rng.random());
    let (fa, fb) = (a.unpack(), b.unpack());

    let mut packed_out = None;
    let packed = measure(iters, || packed_out = Some(bgemm_par(&a, &b).expect("square operands")));
    let mut float_out = None;
    let reference = measure(iters, || float_out = Some(sgemm_ref_par(&fa, &fb).expect("square operands")));

    let (p, f) = (packed_out.unwrap(), float_out.unwrap());
    let exact = p.data().iter().zip(f.data()).all(|(&x, &y)| x as f32 == y);
    let float_bytes = 2 * size * size * 4;
    let packed_bytes = a.byte_len() + b.byte_len();
    debug_assert_eq!(packed_bytes, 2 * size * words_for(size) * 8);
    BenchReport {
        task: "gemm".into(),
        iterations: packed.samples_ms.len(),
        warmup: WARMUP,
        threads: rayon::current_num_threads(),
        ratio: reference.mean_ms / packed.mean_ms,
        memory_ratio: float_bytes as f64 / packed_bytes as f64,
        reference: BackendReport {
            backend: Backend::Reference.to_string(),
            timing: reference,
            weight_bytes: float_bytes,
        },
        packed: BackendReport {
            backend: Backend::Packed.to_string(),
            timing: packed,
            weight_bytes: packed_bytes,
        },
        exact,
        checksum: hash_of(p.data()),
        size: Some(size),
        model: None,
        images: None,
        max_score_diff: None,
        machine: machine_note(),
    }
}

/// Times single-image forward passes of `net` on both backends.
///
/// Run `i` uses image `i % images.len()`. Exactness compares the scores of
/// every image on both backends.
pub fn bench_net(net: &Network, images: &[&[u8]], iters: usize) -> bdnn_core::Result<BenchReport> {
    assert!(!images.is_empty(), "at least one image");
    let packed_net = net.to_backend(Backend::Packed);
    let reference_net = net.to_backend(Backend::Reference);

    let mut predictions = Vec::with_capacity(images.len());
    let mut exact = true;
    let mut max_diff = 0f64;
    let (mut wp, mut wr) = (packed_net.workspace(), reference_net.workspace());
    for img in images {
        let sp = packed_net.forward(&mut wp, img)?;
        let sr = reference_net.forward(&mut wr, img)?;
        let diff = sp.iter().zip(sr).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
        max_diff = max_diff.max(diff);
        exact &= argmax(sp) == argmax(sr) && diff < 1e-4;
        predictions.push(argmax(sp));
    }

    let time = |net: &Network| {
        let mut ws = net.workspace();
        let mut i = 0;
        measure(iters, || {
            let scores = net.forward(&mut ws, images[i % images.len()]).expect("validated input");
            std::hint::black_box(scores);
            i += 1;
        })
    };
    let packed = time(&packed_net);
    let reference = time(&reference_net);
    let size = net.model_size();
    Ok(BenchReport {
        task: "net".into(),
        iterations: packed.samples_ms.len(),
        warmup: WARMUP,
        threads: 1,
        ratio: reference.mean_ms / packed.mean_ms,
        memory_ratio: size.ratio(),
        reference: BackendReport {
            backend: Backend::Reference.to_string(),
            timing: reference,
            weight_bytes: size.reference(),
        },
        packed: BackendReport {
            backend: Backend::Packed.to_string(),
            timing: packed,
            weight_bytes: size.packed(),
        },
        exact,
        checksum: hash_of(&predictions),
        size: None,
        model: None,
        images: Some(images.len()),
        max_score_diff: Some(max_diff),
        machine: machine_note(),
    })
}

/// `n` seeded uniform random images of `len` bytes.
pub fn random_images(n: usize, len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * len).map(|_| rng.random()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use bdnn_core::network::{random_network, Architecture};

    #[test]
    fn timing_statistics() {
        let t = Timing::from_samples(vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!((t.mean_ms, t.median_ms, t.min_ms), (4.0, 2.5, 1.0));
        let t = Timing::from_samples(vec![5.0]);
        assert_eq!((t.mean_ms, t.median_ms, t.min_ms), (5.0, 5.0, 5.0));
    }

    #[test]
    fn gemm_report_is_exact_and_repeatable() {
        let r = bench_gemm(128, 1, 7);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.packed.timing.samples_ms.len(), 1);
        assert!(r.exact);
        assert_eq!(r.memory_ratio, 32.0);
        assert_eq!(bench_gemm(128, 2, 7).checksum, r.checksum);
        assert_ne!(bench_gemm(128, 1, 8).checksum, r.checksum);
    }

    #[test]
    fn net_report() {
        let net = random_network(&Architecture::mlp(&[64, 64, 10]), Backend::Packed, 1).unwrap();
        let pixels = random_images(4, 64, 0);
        let images: Vec<&[u8]> = pixels.chunks(64).collect();
        let r = bench_net(&net, &images, 5).unwrap();
        assert!(r.exact);
        assert_eq!(r.iterations, 5);
        assert_eq!(r.images, Some(4));
        assert!(r.packed.timing.min_ms > 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<BenchReport>(&json).unwrap(), r);
    }
}
