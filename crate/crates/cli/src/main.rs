//! `ldc`: train, evaluate and inspect LDC and HDC classifiers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ldc_core::eval::{self, CycleEstimate, InjectionTarget, DEFAULT_CLOCK_MHZ};
use ldc_core::hdc::HdcClassifier;
use ldc_core::store;
use ldc_core::train::{self, EpochMetrics};
use ldc_core::{BinaryModel, DatasetManifest, Error, HdcConfig, LdcConfig, LdcNetwork, ModelKind, PreparedDataset, Schedule, TrainConfig};

const DATA_ROOT_VAR: &str = "LDC_DATA_ROOT";

#[derive(Parser, Debug)]
#[command(name = "ldc", version, about = "Train and evaluate low-dimensional and hyperdimensional binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and save it with metrics and a run summary
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset's test split
    Eval(EvalArgs),
    /// Accuracy under random bit errors in the stored vectors
    Robust(RobustArgs),
    /// Print a model file's header and size audit
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset name (resolved under $LDC_DATA_ROOT) or manifest path
    #[arg(long)]
    dataset: Option<String>,
    /// ldc, hdc-basic or hdc-retrain
    #[arg(long)]
    model: Option<ModelKind>,
    /// Hypervector dimension for HDC models
    #[arg(long)]
    dim: Option<usize>,
    /// Value vector dimension for LDC
    #[arg(long)]
    dv: Option<usize>,
    /// Feature and class vector dimension for LDC
    #[arg(long)]
    df: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// halve-<n>, linear or constant
    #[arg(long)]
    schedule: Option<Schedule>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Logit multiplier in the training loss (default 1/sqrt(df))
    #[arg(long)]
    logit_scale: Option<f64>,
    /// Sample-sum multiplier before its straight-through sign (default 1/sqrt(N))
    #[arg(long)]
    sample_scale: Option<f64>,
    #[arg(long)]
    retrain_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML run configuration; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model file
    model_file: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Expected model kind; a mismatch with the file is an error
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RobustArgs {
    model_file: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Comma-separated bit error rates, ascending
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1])]
    rates: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// associative-memory, item-memory or both
    #[arg(long, default_value = "associative-memory")]
    target: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InfoArgs {
    model_file: PathBuf,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    dataset: Option<String>,
    model: Option<String>,
    dim: Option<usize>,
    dv: Option<usize>,
    df: Option<usize>,
    lr: Option<f64>,
    wd: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    schedule: Option<String>,
    validation_fraction: Option<f64>,
    logit_scale: Option<f64>,
    sample_scale: Option<f64>,
    retrain_epochs: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

/// Fully resolved training configuration, recorded verbatim in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunConfig {
    command: String,
    dataset: String,
    manifest: PathBuf,
    model: String,
    seed: u64,
    out: PathBuf,
    dim: usize,
    dv: usize,
    df: usize,
    lr: f64,
    wd: f64,
    epochs: usize,
    batch_size: usize,
    schedule: Schedule,
    validation_fraction: f64,
    logit_scale: f64,
    sample_scale: f64,
    retrain_epochs: usize,
}

enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } | Error::EmptyAccumulator => Failure::Internal(e.to_string()),
            other => Failure::User(other.to_string()),
        }
    }
}

fn user(msg: impl Into<String>) -> Failure {
    Failure::User(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::User(format!("{}: {e}", path.display()))
}

fn resolve_manifest(dataset: &str) -> Result<PathBuf, Failure> {
    let p = Path::new(dataset);
    if p.extension().is_some_and(|e| e == "toml") || dataset.contains(std::path::MAIN_SEPARATOR) {
        if p.is_dir() {
            return Ok(p.join("manifest.toml"));
        }
        return Ok(p.to_path_buf());
    }
    if p.is_dir() && p.join("manifest.toml").is_file() {
        return Ok(p.join("manifest.toml"));
    }
    let root = std::env::var_os(DATA_ROOT_VAR)
        .ok_or_else(|| user(format!("dataset {dataset:?} is not a path and {DATA_ROOT_VAR} is not set")))?;
    Ok(PathBuf::from(root).join(dataset).join("manifest.toml"))
}

fn load_dataset(dataset: &str) -> Result<(PathBuf, PreparedDataset), Failure> {
    let path = resolve_manifest(dataset)?;
    if !path.is_file() {
        return Err(user(format!("dataset manifest {} not found", path.display())));
    }
    let manifest = DatasetManifest::from_file(&path)?;
    Ok((path, manifest.prepare()?))
}

fn resolve_train(args: TrainArgs) -> Result<(RunConfig, PreparedDataset), Failure> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            toml::from_str::<ConfigFile>(&text).map_err(|e| user(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    let dataset = args
        .dataset
        .or(file.dataset)
        .ok_or_else(|| user("no dataset given (--dataset or `dataset` in the config file)"))?;
    let model = match (args.model, file.model) {
        (Some(m), _) => m,
        (None, Some(m)) => m.parse::<ModelKind>()?,
        (None, None) => ModelKind::Ldc,
    };
    let schedule = match (args.schedule, file.schedule) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse::<Schedule>()?,
        (None, None) => Schedule::default(),
    };
    let (manifest, data) = load_dataset(&dataset)?;
    let (dv, df, lr, wd) = train::dataset_defaults(&data.name).unwrap_or((4, 64, 1e-3, 0.0));
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let model_name = model.name().to_string();
    let out = args
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-{}", data.name, model_name, seed)));
    let df = args.df.or(file.df).unwrap_or(df);
    let cfg = RunConfig {
        command: "train".into(),
        dataset,
        manifest,
        model: model_name,
        seed,
        out,
        dim: args.dim.or(file.dim).unwrap_or(8000),
        dv: args.dv.or(file.dv).unwrap_or(dv),
        df,
        lr: args.lr.or(file.lr).unwrap_or(lr),
        wd: args.wd.or(file.wd).unwrap_or(wd),
        epochs: args.epochs.or(file.epochs).unwrap_or(50),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(64),
        schedule,
        validation_fraction: args.validation_fraction.or(file.validation_fraction).unwrap_or(0.1),
        logit_scale: args
            .logit_scale
            .or(file.logit_scale)
            .unwrap_or_else(|| 1.0 / (df as f64).sqrt()),
        sample_scale: args
            .sample_scale
            .or(file.sample_scale)
            .unwrap_or_else(|| 1.0 / (data.train.num_features() as f64).sqrt()),
        retrain_epochs: args.retrain_epochs.or(file.retrain_epochs).unwrap_or(20),
    };
    if data.train.is_empty() || data.test.is_empty() {
        return Err(user(format!("dataset {} has an empty split", data.name)));
    }
    Ok((cfg, data))
}

#[derive(Serialize)]
struct Summary<'a, C: Serialize> {
    config: &'a C,
    model_kind: &'a str,
    test_accuracy: f64,
    size_bits: u64,
    size_kb: f64,
    file_bytes: usize,
    cycles: CycleEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_validation_accuracy: Option<f64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn print_model_lines(model: &BinaryModel) -> CycleEstimate {
    let desc = model.descriptor();
    let bits = store::model_size_bits(&desc);
    let cycles = eval::cycle_estimate(&desc, DEFAULT_CLOCK_MHZ);
    println!("model size {bits} bits ({:.2} KB)", store::size_kb(bits));
    println!(
        "latency {} cycles ({} encode + {} similarity), {:.2} us at {} MHz",
        cycles.total_cycles, cycles.encode_cycles, cycles.similarity_cycles, cycles.latency_us, cycles.clock_mhz
    );
    cycles
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let (cfg, data) = resolve_train(args)?;
    let kind: ModelKind = cfg.model.parse()?;
    let start = Instant::now();
    let mut metrics: Vec<String> = Vec::new();
    let mut best = (None, None);
    let model = match kind {
        ModelKind::Ldc => {
            let lcfg = LdcConfig {
                num_levels: data.train.num_levels(),
                ..LdcConfig::new(data.train.num_features(), data.train.num_classes(), cfg.dv, cfg.df)
            };
            let mut net = LdcNetwork::new(lcfg, cfg.seed)?;
            let tcfg = TrainConfig {
                learning_rate: cfg.lr,
                weight_decay: cfg.wd,
                batch_size: cfg.batch_size,
                epochs: cfg.epochs,
                schedule: cfg.schedule,
                seed: cfg.seed,
                validation_fraction: cfg.validation_fraction,
                logit_scale: Some(cfg.logit_scale),
                sample_scale: Some(cfg.sample_scale),
                ..TrainConfig::new(cfg.lr, cfg.wd)
            };
            let report = train::fit(&mut net, &data.train, &tcfg, |m: &EpochMetrics| {
                println!(
                    "epoch {:>3} {:<10} loss {:.4} accuracy {:.4}",
                    m.epoch,
                    format!("{:?}", m.split).to_lowercase(),
                    m.loss,
                    m.accuracy
                );
                metrics.push(serde_json::to_string(m).expect("metrics serialize"));
            })?;
            best = (Some(report.best_epoch), report.best_validation_accuracy);
            net.extract(cfg.seed)
        }
        ModelKind::HdcBasic | ModelKind::HdcRetrained => {
            let hcfg = HdcConfig {
                dim: cfg.dim,
                num_levels: data.train.num_levels(),
                seed: cfg.seed,
                retrain_epochs: cfg.retrain_epochs,
                ..HdcConfig::new(data.train.num_features(), data.train.num_classes())
            };
            let clf = HdcClassifier::fit(&hcfg, &data.train, kind == ModelKind::HdcRetrained)?;
            if let Some(r) = &clf.retrain_report {
                for (epoch, mistakes) in r.mistakes.iter().enumerate() {
                    metrics.push(format!("{{\"epoch\":{epoch},\"split\":\"train\",\"mistakes\":{mistakes}}}"));
                }
            }
            clf.to_binary_model()
        }
    };
    let report = eval::evaluate(&model, &data.test)?;
    let bytes = store::to_bytes(&model);

    fs::create_dir_all(&cfg.out).map_err(|e| io_failure(&cfg.out, e))?;
    let model_path = cfg.out.join("model.ldc");
    fs::write(&model_path, &bytes).map_err(|e| io_failure(&model_path, e))?;
    let metrics_path = cfg.out.join("metrics.jsonl");
    let mut f = fs::File::create(&metrics_path).map_err(|e| io_failure(&metrics_path, e))?;
    for line in &metrics {
        writeln!(f, "{line}").map_err(|e| io_failure(&metrics_path, e))?;
    }
    let desc = model.descriptor();
    let bits = store::model_size_bits(&desc);
    println!("dataset {} model {} test accuracy {:.4}", data.name, kind, report.accuracy);
    let cycles = print_model_lines(&model);
    println!("saved {}", model_path.display());
    eprintln!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    write_json(
        &cfg.out.join("summary.json"),
        &Summary {
            config: &cfg,
            model_kind: kind.name(),
            test_accuracy: report.accuracy,
            size_bits: bits,
            size_kb: store::size_kb(bits),
            file_bytes: bytes.len(),
            cycles,
            best_epoch: best.0,
            best_validation_accuracy: best.1,
        },
    )
}

fn load_model(path: &Path, expected: Option<ModelKind>) -> Result<BinaryModel, Failure> {
    let model = store::load(path)?;
    if let Some(k) = expected {
        if k != model.kind {
            return Err(user(format!("{} holds a {} model, not {}", path.display(), model.kind, k)));
        }
    }
    Ok(model)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    command: &'a str,
    dataset: &'a str,
    model_file: &'a Path,
    model_kind: &'a str,
    accuracy: f64,
    confusion: &'a [Vec<usize>],
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let model = load_model(&args.model_file, args.model)?;
    let (_, data) = load_dataset(&args.dataset)?;
    let report = eval::evaluate(&model, &data.test)?;
    println!("dataset {} model {} test accuracy {:.4}", data.name, model.kind, report.accuracy);
    println!("confusion (rows true, columns predicted):");
    for row in &report.confusion {
        println!("{}", row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("\t"));
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
        write_json(
            &out.join("summary.json"),
            &EvalSummary {
                command: "eval",
                dataset: &args.dataset,
                model_file: &args.model_file,
                model_kind: model.kind.name(),
                accuracy: report.accuracy,
                confusion: &report.confusion,
            },
        )?;
    }
    Ok(())
}

fn parse_target(s: &str) -> Result<InjectionTarget, Failure> {
    s.parse().map_err(|e: ldc_core::Error| user(e.to_string()))
}

#[derive(Serialize)]
struct RobustSummary<'a> {
    command: &'a str,
    dataset: &'a str,
    model_file: &'a Path,
    seed: u64,
    runs: usize,
    report: &'a eval::RobustnessReport,
}

fn cmd_robust(args: RobustArgs) -> Result<(), Failure> {
    let target = parse_target(&args.target)?;
    let model = load_model(&args.model_file, None)?;
    let (_, data) = load_dataset(&args.dataset)?;
    let report = eval::robustness_sweep(&model, &data.test, &args.rates, args.runs, args.seed, target)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
        let table = out.join("robustness.tsv");
        fs::write(&table, report.to_table()).map_err(|e| io_failure(&table, e))?;
        write_json(
            &out.join("summary.json"),
            &RobustSummary {
                command: "robust",
                dataset: &args.dataset,
                model_file: &args.model_file,
                seed: args.seed,
                runs: args.runs,
                report: &report,
            },
        )?;
    }
    Ok(())
}

fn cmd_info(args: InfoArgs) -> Result<(), Failure> {
    let bytes = fs::read(&args.model_file).map_err(|e| io_failure(&args.model_file, e))?;
    let model = store::from_bytes(&bytes)?;
    let desc = model.descriptor();
    let sections = [
        desc.num_levels * desc.value_dim,
        desc.num_features * desc.feature_dim,
        desc.num_classes * desc.feature_dim,
    ];
    let section_bits: usize = sections.iter().sum();
    let bits = store::model_size_bits(&desc);
    println!("file {} ({} bytes, checksum ok)", args.model_file.display(), bytes.len());
    println!("kind {}  seed {}", model.kind, model.seed);
    println!(
        "features {}  levels {}  classes {}  value dim {}  feature dim {}",
        desc.num_features, desc.num_levels, desc.num_classes, desc.value_dim, desc.feature_dim
    );
    println!(
        "sections value {} + feature {} + class {} = {} bits",
        sections[0], sections[1], sections[2], section_bits
    );
    if section_bits as u64 != bits {
        return Err(Failure::Internal(format!("size audit failed: sections {section_bits} != model size {bits}")));
    }
    print_model_lines(&model);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Robust(a) => cmd_robust(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
