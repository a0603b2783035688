//! `tinymask` command-line pipeline: build a dataset, train a float32
//! network, quantize it to int8, then evaluate and bench both flavors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tinymask::datakit::{
    augment_dataset, load_dataset, split, synth_dataset, to_labeled_set, write_dataset, DatasetManifest, Label,
    StandardAugment,
};
use tinymask::engine::{bench, Interpreter, Prediction, DEFAULT_ARENA_BYTES, DEFAULT_CLOCK_HZ, DEFAULT_MACS_PER_CYCLE};
use tinymask::evalkit::{compare, confusion, report};
use tinymask::modelio::{self, budget_check, size_report, FloatModel, Model, DEFAULT_BUDGET_BYTES};
use tinymask::netgraph::{predict, zoo, NetworkConfig, ZOO_NAMES};
use tinymask::quantizer::{calibrate, quantize_model};
use tinymask::trainer::{train, TrainConfig};
use tinymask::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tinymask", version, about = "Train, quantize and deploy tiny mask classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset as `out/{mask,no_mask}/*.png`.
    Synth(SynthArgs),
    /// Standard augmentation followed by five-way interpolation augmentation.
    Augment(AugmentArgs),
    /// Train a float32 network and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Calibrate on representative samples and write an int8 container.
    Quantize(QuantizeArgs),
    /// Classification report on a held-out test set.
    Eval(EvalArgs),
    /// MAC counts, arena peak, host latency and a device throughput estimate.
    Bench(BenchArgs),
    /// Dump a container's header fields and network summary.
    Info(InfoArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Text,
    Csv,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of images (even).
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seeded standard variants added per source image before interpolation.
    #[arg(long, default_value_t = 0)]
    standard_ops: usize,
    #[arg(long, default_value_t = 15.0)]
    max_rotation: f64,
    #[arg(long, default_value_t = 0.2)]
    max_brightness: f64,
    #[arg(long)]
    no_flip: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output float32 container.
    #[arg(long)]
    out: PathBuf,
    /// Zoo name or path to a TOML network config.
    #[arg(long, default_value = "tinymask-ref")]
    arch: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    /// Float32 container to quantize.
    #[arg(long)]
    model: PathBuf,
    /// Dataset the representative samples are drawn from.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    rep_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES / 1024)]
    budget_kb: u64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// One container, or a float32 and an int8 container to compare.
    #[arg(long, required = true, num_args = 1..=2)]
    model: Vec<PathBuf>,
    #[arg(long)]
    test_set: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Int8 container.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_CLOCK_HZ)]
    clock_hz: f64,
    #[arg(long, default_value_t = DEFAULT_MACS_PER_CYCLE)]
    macs_per_cycle: f64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage_or_data() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Info(a) => cmd_info(a),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn print_counts(what: &str, m: &DatasetManifest) {
    let (mask, no_mask) = m.counts();
    println!("{what}: {} images (mask {mask}, no_mask {no_mask})", m.len());
}

fn write_tree(manifest: &DatasetManifest, out: &Path) -> Result<()> {
    let written = write_dataset(manifest, out)?;
    write_file(&out.join("index.csv"), written.to_csv().as_bytes())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let manifest = synth_dataset(a.count, a.seed)?;
    write_tree(&manifest, &a.out)?;
    print_counts("synthetic", &manifest);
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let source = load_dataset(&a.dataset)?;
    for (path, why) in &source.skipped {
        eprintln!("warning: skipped {}: {why}", path.display());
    }
    let cfg = StandardAugment {
        flip: !a.no_flip,
        max_rotation_deg: a.max_rotation,
        max_brightness: a.max_brightness,
    };
    let augmented = augment_dataset(&source, a.standard_ops, &cfg, a.seed)?;
    write_tree(&augmented, &a.out)?;
    print_counts("input", &source);
    print_counts("output", &augmented);
    Ok(())
}

fn resolve_arch(arch: &str) -> Result<NetworkConfig> {
    if ZOO_NAMES.contains(&arch) {
        zoo(arch)
    } else {
        let path = Path::new(arch);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "--arch {arch}: neither a zoo model ({}) nor a config file",
                ZOO_NAMES.join(", ")
            )));
        }
        NetworkConfig::load(path)
    }
}

fn channels(config: &NetworkConfig) -> usize {
    config.input[2]
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let net_cfg = resolve_arch(&a.arch)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        max_epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let manifest = load_dataset(&a.dataset)?;
    let (train_m, val_m) = split(&manifest, a.val_frac, a.seed)?;
    let c = channels(&net_cfg);
    let train_set = to_labeled_set(&train_m, c)?;
    let val_set = to_labeled_set(&val_m, c)?;
    print_counts("train", &train_m);
    print_counts("validation", &val_m);

    let outcome = train(&cfg, &net_cfg, &train_set, &val_set)?;
    let model = Model::Float(FloatModel::new(net_cfg, outcome.params)?);
    let bytes = modelio::save(&a.out, &model)?;
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_file(&history, outcome.history.to_csv().as_bytes())?;
    println!("epochs: {}", outcome.history.epochs.len());
    println!("best epoch: {}", outcome.best_epoch);
    println!("best val accuracy: {:.4}", outcome.best_val_accuracy);
    println!("wrote {} ({bytes} bytes) and {}", a.out.display(), history.display());
    Ok(())
}

fn load_float(path: &Path) -> Result<FloatModel> {
    match modelio::load(path)? {
        Model::Float(m) => Ok(m),
        Model::Int8(_) => Err(Error::Format(format!("{} is an int8 container, expected float32", path.display()))),
    }
}

fn cmd_quantize(a: QuantizeArgs) -> Result<()> {
    if a.rep_samples == 0 {
        return Err(Error::Config("--rep-samples must be at least 1".into()));
    }
    let float = load_float(&a.model)?;
    let float_bytes = modelio::serialize(&Model::Float(float.clone())).len() as u64;
    let net = float.network()?;
    let rep = load_dataset(&a.dataset)?.sample(a.rep_samples, a.seed);
    let rep_set = to_labeled_set(&rep, channels(&float.config))?;
    let stats = calibrate(&net, &float.params, &rep_set.inputs)?;
    let qm = quantize_model(&net, &float.params, &stats)?;
    let int8_bytes = modelio::save(&a.out, &Model::Int8(qm))?;

    let size = size_report(float_bytes, int8_bytes)?;
    let budget = budget_check(int8_bytes, a.budget_kb * 1024);
    match a.format {
        Format::Text => {
            println!("representative samples: {}", rep.len());
            println!("size: {size}");
            println!("budget: {budget}");
        }
        Format::Csv => {
            println!("float_bytes,int8_bytes,reduction_pct,budget_bytes,budget_pass,margin_bytes");
            println!(
                "{},{},{:.4},{},{},{}",
                size.float_bytes, size.int8_bytes, size.reduction_pct, budget.budget_bytes, budget.pass, budget.margin_bytes
            );
        }
    }
    if !budget.pass {
        eprintln!("warning: int8 model does not fit the {} KB budget", a.budget_kb);
    }
    Ok(())
}

fn predict_labels(model: &Model, test: &DatasetManifest) -> Result<Vec<Label>> {
    let set = to_labeled_set(test, channels(model.config()))?;
    let preds: Vec<Prediction> = match model {
        Model::Float(m) => predict(&m.network()?, &m.params, &set.inputs, 256)?
            .into_iter()
            .map(|p| Prediction::from_probability(p as f64))
            .collect(),
        Model::Int8(qm) => Interpreter::new(qm, DEFAULT_ARENA_BYTES)?.invoke_batch(&set.inputs)?,
    };
    Ok(preds.into_iter().map(|p| p.label).collect())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let test = load_dataset(&a.test_set)?;
    let truth: Vec<Label> = test.entries.iter().map(|e| e.label).collect();
    let models = a.model.iter().map(|p| modelio::load(p)).collect::<Result<Vec<_>>>()?;
    if let [single] = models.as_slice() {
        let cm = confusion(&predict_labels(single, &test)?, &truth)?;
        let r = report(&cm);
        match a.format {
            Format::Text => {
                println!("model: {} ({})", single.config().name, single.flavor());
                print!("{}", r.to_text());
                print!("{}", cm.grid());
            }
            Format::Csv => print!("{}", r.to_csv()),
        }
        return Ok(());
    }
    let (float, int8) = match (&models[0], &models[1]) {
        (f @ Model::Float(_), q @ Model::Int8(_)) | (q @ Model::Int8(_), f @ Model::Float(_)) => (f, q),
        _ => {
            return Err(Error::Format(
                "comparison needs one float32 and one int8 container".into(),
            ))
        }
    };
    let c = compare(&predict_labels(float, &test)?, &predict_labels(int8, &test)?, &truth)?;
    match a.format {
        Format::Text => {
            println!("model: {}", float.config().name);
            print!("{}", c.to_text());
            println!("\nfloat32");
            print!("{}", c.float.to_text());
            println!("\nint8");
            print!("{}", c.int8.to_text());
        }
        Format::Csv => print!("{}", c.to_csv()),
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let qm = match modelio::load(&a.model)? {
        Model::Int8(qm) => qm,
        Model::Float(_) => {
            return Err(Error::Format(format!(
                "{} is a float32 container; bench runs the int8 engine",
                a.model.display()
            )))
        }
    };
    let r = bench(&qm, a.trials, a.clock_hz, a.macs_per_cycle)?;
    match a.format {
        Format::Text => print!("{}", r.to_text()),
        Format::Csv => print!("{}", r.to_csv()),
    }
    Ok(())
}

fn cmd_info(a: InfoArgs) -> Result<()> {
    let bytes = fs::read(&a.model).map_err(|e| io_error(&a.model, e))?;
    let (header, _) = modelio::read_header(&bytes)?;
    let model = modelio::deserialize(&bytes)?;
    let config = model.config();
    println!("magic: {}", String::from_utf8_lossy(&modelio::MAGIC));
    println!("version: {}", header.version);
    println!("flavor: {}", header.flavor);
    println!("payload bytes: {}", header.payload_len);
    println!("crc32: {:08x}", header.checksum);
    println!("file bytes: {}", bytes.len());
    println!("network: {}", config.name);
    println!("input: {}x{}x{}", config.input[0], config.input[1], config.input[2]);
    println!("layers: {}", config.layers.len());
    match &model {
        Model::Float(m) => println!("parameters: {}", m.params.count()),
        Model::Int8(qm) => println!("int8 weights: {}", qm.weight_count()),
    }
    Ok(())
}
