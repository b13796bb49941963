//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bdnn_core::layers::Backend;
use bdnn_core::network::{random_network, Architecture, Layer, Network};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::bench::{bench_gemm, bench_net, random_images};
use crate::dataset::{load_dir, Dataset, DatasetKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bdnn", version, about = "Bit-packed binarized neural network inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a dataset split and report accuracy.
    Classify(ClassifyArgs),
    /// Time binary against float matrix multiplication.
    BenchGemm(BenchGemmArgs),
    /// Time single-image forward passes on both backends.
    BenchNet(BenchNetArgs),
    /// Print a model's layers and sizes.
    Inspect(InspectArgs),
    /// Write a model with random weights.
    GenModel(GenModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Reference,
    Packed,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Reference => Backend::Reference,
            BackendArg::Packed => Backend::Packed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Cifar10,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Print a JSON object instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding MNIST IDX files or CIFAR-10 binary batches.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Dataset to look for in --data-dir (detected when omitted).
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// Use the training split instead of the test split.
    #[arg(long)]
    pub train: bool,
    /// Use at most this many images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "packed")]
    pub backend: BackendArg,
    /// Print one line per image.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchGemmArgs {
    /// Matrix side length.
    #[arg(long, default_value_t = 4096)]
    pub size: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchNetArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Images to cycle through; random bytes when --data-dir is omitted.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Seed for random images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    /// `mnist-mlp`, `cifar-vgg`, `cifar-vgg-small` or `mlp:IN,H1,...,OUT`.
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

pub fn parse_arch(spec: &str) -> Result<Architecture, Failure> {
    match spec {
        "mnist-mlp" => Ok(Architecture::mnist_mlp()),
        "cifar-vgg" => Ok(Architecture::cifar_vgg()),
        "cifar-vgg-small" => Ok(Architecture::cifar_vgg_small()),
        _ => {
            let sizes = spec
                .strip_prefix("mlp:")
                .map(|s| s.split(',').map(|v| v.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>());
            match sizes {
                Some(Ok(s)) if s.len() >= 2 && s.iter().all(|&v| v > 0) => Ok(Architecture::mlp(&s)),
                _ => Err(Failure::Usage(format!("unknown architecture `{spec}`"))),
            }
        }
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if threads == Some(0) {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn load_model(path: &Path) -> Result<Network, Failure> {
    Network::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_data(args: &DataArgs, dir: &Path) -> Result<Dataset, Failure> {
    let mut ds = load_dir(dir, args.dataset.map(Into::into), args.train).map_err(data)?;
    if let Some(n) = args.limit {
        ds.truncate(n);
    }
    Ok(ds)
}

fn check_input(net: &Network, ds: &Dataset) -> Result<(), Failure> {
    if net.input_len() != ds.dims.len() {
        return Err(Failure::Data(format!(
            "model expects {} input bytes, {} images are {} ({} bytes)",
            net.input_len(),
            ds.kind,
            ds.dims,
            ds.dims.len()
        )));
    }
    Ok(())
}

fn emit(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), Failure> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("serializable")).map_err(data)
}

fn classify(args: &ClassifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let pool = thread_pool(args.common.threads)?;
    let dir = args
        .data
        .data_dir
        .as_deref()
        .ok_or_else(|| Failure::Usage("classify needs --data-dir".into()))?;
    let backend = Backend::from(args.backend);
    let net = load_model(&args.model)?.to_backend(backend);
    let ds = load_data(&args.data, dir)?;
    check_input(&net, &ds)?;

    let start = Instant::now();
    let predictions: Vec<usize> = pool
        .install(|| {
            ds.images
                .par_chunks(ds.dims.len())
                .map_init(|| net.workspace(), |ws, img| net.classify(ws, img))
                .collect::<bdnn_core::Result<Vec<_>>>()
        })
        .map_err(data)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    let correct = ds.labels.as_ref().map(|labels| {
        predictions
            .iter()
            .zip(labels)
            .filter(|(&p, &l)| p == l as usize)
            .count()
    });
    let accuracy = correct.map(|c| c as f64 / predictions.len().max(1) as f64);
    if args.common.json {
        return emit(
            out,
            &json!({
                "model": args.model.display().to_string(),
                "dataset": ds.kind.to_string(),
                "backend": backend.to_string(),
                "threads": pool.current_num_threads(),
                "images": predictions.len(),
                "correct": correct,
                "accuracy": accuracy,
                "elapsed_ms": elapsed_ms,
                "predictions": predictions,
            }),
        );
    }
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(data);
    if args.verbose {
        for (i, p) in predictions.iter().enumerate() {
            match &ds.labels {
                Some(l) => w(out, format!("{i}\t{p}\t{}", l[i]))?,
                None => w(out, format!("{i}\t{p}"))?,
            }
        }
    }
    w(
        out,
        format!(
            "{} images from {} on the {} backend in {:.1} ms",
            predictions.len(),
            ds.kind,
            backend,
            elapsed_ms
        ),
    )?;
    if let (Some(c), Some(a)) = (correct, accuracy) {
        w(out, format!("accuracy {:.2}% ({c}/{})", a * 100.0, predictions.len()))?;
    }
    Ok(())
}

fn print_report(report: &crate::bench::BenchReport, json: bool, out: &mut dyn Write) -> Result<(), Failure> {
    if json {
        return emit(out, &serde_json::to_value(report).expect("serializable"));
    }
    let mut lines = vec![format!("task {} ({} iterations after {} warm-up)", report.task, report.iterations, report.warmup)];
    for b in [&report.reference, &report.packed] {
        lines.push(format!(
            "{:<9} mean {:>10.3} ms  median {:>10.3} ms  min {:>10.3} ms  {:>12} bytes",
            b.backend, b.timing.mean_ms, b.timing.median_ms, b.timing.min_ms, b.weight_bytes
        ));
    }
    lines.push(format!(
        "speedup {:.2}x, memory saving {:.2}x, results {}",
        report.ratio,
        report.memory_ratio,
        if report.exact { "identical" } else { "DIFFER" }
    ));
    lines.push(format!("checksum {:016x}", report.checksum));
    lines.push(report.machine.clone());
    for l in lines {
        writeln!(out, "{l}").map_err(data)?;
    }
    Ok(())
}

fn bench_gemm_cmd(args: &BenchGemmArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if args.size < 64 {
        return Err(Failure::Usage("--size must be at least 64".into()));
    }
    if args.iters == 0 {
        return Err(Failure::Usage("--iters must be positive".into()));
    }
    let pool = thread_pool(args.common.threads)?;
    let report = pool.install(|| bench_gemm(args.size, args.iters, args.seed));
    print_report(&report, args.common.json, out)
}

fn bench_net_cmd(args: &BenchNetArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if args.iters == 0 {
        return Err(Failure::Usage("--iters must be positive".into()));
    }
    let pool = thread_pool(args.common.threads)?;
    let net = load_model(&args.model)?;
    let pixels = match &args.data.data_dir {
        Some(dir) => {
            let ds = load_data(&args.data, dir)?;
            check_input(&net, &ds)?;
            ds.images
        }
        None => random_images(args.data.limit.unwrap_or(100).max(1), net.input_len(), args.seed),
    };
    if pixels.is_empty() {
        return Err(Failure::Data("no images to run".into()));
    }
    let images: Vec<&[u8]> = pixels.chunks_exact(net.input_len()).collect();
    let mut report = pool.install(|| bench_net(&net, &images, args.iters)).map_err(data)?;
    report.model = Some(args.model.display().to_string());
    print_report(&report, args.common.json, out)
}

fn inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let net = load_model(&args.model)?;
    let size = net.model_size();
    let rows: Vec<_> = net
        .layers()
        .iter()
        .zip(net.shapes())
        .enumerate()
        .map(|(i, (layer, dims))| {
            let (r, p) = layer.weight_bytes();
            let bn = match layer {
                Layer::BatchNorm(b) => 16 * b.channels(),
                _ => 0,
            };
            (i + 1, layer.name(), *dims, r + bn, p + bn)
        })
        .collect();
    if args.json {
        let layers: Vec<_> = rows
            .iter()
            .map(|(i, name, d, r, p)| {
                json!({
                    "index": i, "kind": name, "output": [d.rows, d.cols, d.channels],
                    "reference_bytes": r, "packed_bytes": p,
                })
            })
            .collect();
        let d = net.input_dims();
        return emit(
            out,
            &json!({
                "model": args.model.display().to_string(),
                "input": [d.rows, d.cols, d.channels],
                "layers": layers,
                "reference_bytes": size.reference(),
                "packed_bytes": size.packed(),
                "batchnorm_bytes": size.batchnorm,
                "memory_ratio": size.ratio(),
                "workspace_bytes": net.workspace_spec().byte_len(),
            }),
        );
    }
    let mut lines = vec![
        format!("{} (input {})", args.model.display(), net.input_dims()),
        format!("{:>4}  {:<10} {:>14} {:>14} {:>12}", "#", "layer", "output", "reference B", "packed B"),
    ];
    for (i, name, d, r, p) in rows {
        lines.push(format!("{i:>4}  {name:<10} {:>14} {r:>14} {p:>12}", d.to_string()));
    }
    let mib = |b: usize| b as f64 / (1024.0 * 1024.0);
    lines.push(format!(
        "total: reference {} B ({:.2} MiB), packed {} B ({:.2} MiB), saving {:.2}x",
        size.reference(),
        mib(size.reference()),
        size.packed(),
        mib(size.packed()),
        size.ratio()
    ));
    lines.push(format!("workspace {} B", net.workspace_spec().byte_len()));
    for l in lines {
        writeln!(out, "{l}").map_err(data)?;
    }
    Ok(())
}

fn gen_model(args: &GenModelArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let arch = parse_arch(&args.arch)?;
    let net = random_network(&arch, Backend::Packed, args.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    net.save(&args.out).map_err(|e| Failure::Data(format!("{}: {e}", args.out.display())))?;
    writeln!(
        out,
        "wrote {} ({} layers, {} packed bytes)",
        args.out.display(),
        net.layers().len(),
        net.model_size().packed()
    )
    .map_err(data)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Classify(a) => classify(a, out),
        Command::BenchGemm(a) => bench_gemm_cmd(a, out),
        Command::BenchNet(a) => bench_net_cmd(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::GenModel(a) => gen_model(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}
