//! `incay` command-line tool: train experiments, evaluate saved models,
//! and run the property-verification suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use incay::data::{load_idx, preprocess, synth_gaussian_blobs, Dataset, Split};
use incay::error::{Error, Result};
use incay::io::{
    arch_from_string, arch_to_string, load_model, manifest_get, read_manifest, save_model,
    write_manifest, CsvWriter, EMBEDDINGS_HEADER, METRICS_HEADER,
};
use incay::propcheck::run_default_suite;
use incay::trainer::{evaluate, lr_at, train_with, TrainConfig};
use incay::{Architecture, LossConfig, LossKind, SeededRng};

#[derive(Parser)]
#[command(
    name = "incay",
    version,
    about = "Feature-incay regularization lab: train norm-regularized softmax variants and verify their geometric properties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and emit metrics (and optionally embeddings) CSVs
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset
    Eval(EvalArgs),
    /// Run the property-verification suite
    Verify,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    /// MNIST IDX files under --data-dir
    Mnist,
    /// Synthetic Gaussian blobs (smoke tests; no data files needed)
    Blobs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchKind {
    /// Two-conv network with 2-d features (the quick-experiment setup)
    Mnist2d,
    /// 784-256-64 fully connected fallback
    Mlp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Softmax,
    Lsoftmax,
    Asoftmax,
    Center,
    Coco,
    L2softmax,
}

impl LossArg {
    fn kind(self) -> LossKind {
        match self {
            LossArg::Softmax => LossKind::Softmax,
            LossArg::Lsoftmax => LossKind::LSoftmax,
            LossArg::Asoftmax => LossKind::ASoftmax,
            LossArg::Center => LossKind::Center,
            LossArg::Coco => LossKind::Coco,
            LossArg::L2softmax => LossKind::L2Softmax,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetKind,
    /// Directory holding the four MNIST IDX files (optionally gzipped)
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Keep only the first N training samples
    #[arg(long)]
    train_subset: Option<usize>,
    /// Keep only the first N test samples
    #[arg(long)]
    test_subset: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "mnist2d")]
    arch: ArchKind,
    #[arg(long, value_enum, default_value = "softmax")]
    loss: LossArg,
    /// Incay weight λ; defaults to 0.1 (0.01 for lsoftmax/asoftmax)
    #[arg(long)]
    incay_lambda: Option<f64>,
    /// Stabilizer ε in λ/( ‖f‖² + ε )
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    /// Angular margin m for lsoftmax/asoftmax
    #[arg(long, default_value_t = 2)]
    margin: u32,
    /// Feature scale α for l2softmax
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Center-loss weight
    #[arg(long, default_value_t = 0.01)]
    center_lambda: f64,
    /// Center update rate
    #[arg(long, default_value_t = 0.5)]
    center_lr: f64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 10000)]
    iters: usize,
    /// Comma-separated iterations at which lr drops 10x
    /// (default: 50%, 75% and 90% of --iters)
    #[arg(long)]
    lr_drops: Option<String>,
    #[arg(long, default_value_t = 200)]
    eval_every: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "metrics.csv")]
    metrics_out: PathBuf,
    /// Embeddings CSV (2-d feature architectures only)
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Re-run the experiment recorded in a manifest file
    /// (other hyperparameter flags are ignored)
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model file written by `train --model-out`
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    loss: EvalLossArgs,
}

#[derive(Args)]
struct EvalLossArgs {
    #[arg(long, value_enum, default_value = "softmax")]
    loss: LossArg,
    #[arg(long, default_value_t = 0.0)]
    incay_lambda: f64,
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long, default_value_t = 2)]
    margin: u32,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    center_lambda: f64,
}

/// Everything needed to reproduce a run; serialized to the manifest.
struct Experiment {
    dataset: DatasetKind,
    data_dir: PathBuf,
    train_subset: Option<usize>,
    test_subset: Option<usize>,
    arch: Architecture,
    config: TrainConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Verify => run_verify(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn mnist_path(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::invalid(format!(
        "missing {stem}[.gz] under {}",
        dir.display()
    )))
}

/// Loads both splits, truncates if asked, flattens for MLP input, and
/// subtracts the training mean from both splits.
fn load_data(
    data: &DataArgs,
    arch: &Architecture,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match data.dataset {
        DatasetKind::Mnist => {
            let train = load_idx(
                &mnist_path(&data.data_dir, "train-images-idx3-ubyte")?,
                &mnist_path(&data.data_dir, "train-labels-idx1-ubyte")?,
            )?;
            let mut test = load_idx(
                &mnist_path(&data.data_dir, "t10k-images-idx3-ubyte")?,
                &mnist_path(&data.data_dir, "t10k-labels-idx1-ubyte")?,
            )?;
            test.split = Split::Test;
            (train, test)
        }
        DatasetKind::Blobs => {
            let k = arch.num_classes;
            let d: usize = arch.input_shape.iter().product();
            let mut rng = SeededRng::new(seed ^ 0x00DA_7A5E);
            let train = synth_gaussian_blobs(k, d, 200, 0.5, &mut rng)?;
            let mut test = synth_gaussian_blobs(k, d, 50, 0.5, &mut rng)?;
            test.split = Split::Test;
            (train, test)
        }
    };
    if let Some(n) = data.train_subset {
        train = train.truncated(n)?;
    }
    if let Some(n) = data.test_subset {
        test = test.truncated(n)?;
        test.split = Split::Test;
    }
    if arch.input_shape.len() == 1 {
        train = train.flattened()?;
        test = test.flattened()?;
    }
    if train.images.shape()[1..] != arch.input_shape[..] {
        return Err(Error::invalid(format!(
            "data shape {:?} does not match architecture input {:?}",
            &train.images.shape()[1..],
            arch.input_shape
        )));
    }
    preprocess(&mut train, &mut [&mut test])?;
    Ok((train, test))
}

fn parse_lr_drops(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad --lr-drops entry {p:?}")))
        })
        .collect()
}

fn resolve_experiment(args: &TrainArgs) -> Result<Experiment> {
    if let Some(path) = &args.from_manifest {
        return experiment_from_manifest(path);
    }
    let kind = args.loss.kind();
    let incay_lambda = args.incay_lambda.unwrap_or(match kind {
        LossKind::LSoftmax | LossKind::ASoftmax => 0.01,
        _ => 0.1,
    });
    let arch = match args.arch {
        ArchKind::Mnist2d => Architecture::mnist2d(),
        ArchKind::Mlp => Architecture::mlp_mnist(),
    };
    let lr_drop_iters = match &args.lr_drops {
        Some(s) => parse_lr_drops(s)?,
        None => TrainConfig::default_lr_drops(args.iters),
    };
    let config = TrainConfig {
        arch: arch.clone(),
        loss: LossConfig {
            kind,
            margin: args.margin,
            alpha: args.alpha,
            center_lambda: args.center_lambda,
            center_lr: args.center_lr,
            incay_lambda,
            epsilon: args.epsilon,
            decay_mu: args.weight_decay,
        },
        base_lr: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        total_iters: args.iters,
        lr_drop_iters,
        eval_every: args.eval_every,
        seed: args.seed,
    };
    Ok(Experiment {
        dataset: args.data.dataset,
        data_dir: args.data.data_dir.clone(),
        train_subset: args.data.train_subset,
        test_subset: args.data.test_subset,
        arch,
        config,
    })
}

fn manifest_entries(exp: &Experiment, args: &TrainArgs) -> Vec<(String, String)> {
    let c = &exp.config;
    let l = &c.loss;
    let mut e: Vec<(String, String)> = vec![
        ("tool".into(), format!("incay {}", env!("CARGO_PKG_VERSION"))),
        (
            "created_unix".into(),
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs().to_string())
                .unwrap_or_default(),
        ),
        (
            "dataset".into(),
            match exp.dataset {
                DatasetKind::Mnist => "mnist".into(),
                DatasetKind::Blobs => "blobs".into(),
            },
        ),
        ("data_dir".into(), exp.data_dir.display().to_string()),
        ("arch".into(), arch_to_string(&exp.arch)),
        ("loss".into(), l.kind.name().to_string()),
        ("incay_lambda".into(), format!("{}", l.incay_lambda)),
        ("epsilon".into(), format!("{}", l.epsilon)),
        ("margin".into(), format!("{}", l.margin)),
        ("alpha".into(), format!("{}", l.alpha)),
        ("center_lambda".into(), format!("{}", l.center_lambda)),
        ("center_lr".into(), format!("{}", l.center_lr)),
        ("weight_decay".into(), format!("{}", l.decay_mu)),
        ("lr".into(), format!("{}", c.base_lr)),
        ("momentum".into(), format!("{}", c.momentum)),
        ("batch_size".into(), format!("{}", c.batch_size)),
        ("iters".into(), format!("{}", c.total_iters)),
        (
            "lr_drops".into(),
            c.lr_drop_iters
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("eval_every".into(), format!("{}", c.eval_every)),
        ("seed".into(), format!("{}", c.seed)),
        ("metrics_out".into(), args.metrics_out.display().to_string()),
    ];
    if let Some(n) = exp.train_subset {
        e.push(("train_subset".into(), n.to_string()));
    }
    if let Some(n) = exp.test_subset {
        e.push(("test_subset".into(), n.to_string()));
    }
    if let Some(p) = &args.embeddings_out {
        e.push(("embeddings_out".into(), p.display().to_string()));
    }
    if let Some(p) = &args.model_out {
        e.push(("model_out".into(), p.display().to_string()));
    }
    e
}

fn experiment_from_manifest(path: &Path) -> Result<Experiment> {
    let entries = read_manifest(path)?;
    let get = |key: &str| {
        manifest_get(&entries, key)
            .ok_or_else(|| Error::MalformedManifest(format!("missing key {key:?}")))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::MalformedManifest(format!("bad number for {key:?}")))
    };
    let int = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::MalformedManifest(format!("bad integer for {key:?}")))
    };
    let opt_int = |key: &str| -> Result<Option<usize>> {
        match manifest_get(&entries, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::MalformedManifest(format!("bad integer for {key:?}"))),
        }
    };
    let dataset = match get("dataset")? {
        "mnist" => DatasetKind::Mnist,
        "blobs" => DatasetKind::Blobs,
        other => {
            return Err(Error::MalformedManifest(format!("unknown dataset {other:?}")))
        }
    };
    let arch = arch_from_string(get("arch")?)?;
    let config = TrainConfig {
        arch: arch.clone(),
        loss: LossConfig {
            kind: LossKind::parse(get("loss")?)?,
            margin: int("margin")? as u32,
            alpha: num("alpha")?,
            center_lambda: num("center_lambda")?,
            center_lr: num("center_lr")?,
            incay_lambda: num("incay_lambda")?,
            epsilon: num("epsilon")?,
            decay_mu: num("weight_decay")?,
        },
        base_lr: num("lr")?,
        momentum: num("momentum")?,
        batch_size: int("batch_size")?,
        total_iters: int("iters")?,
        lr_drop_iters: parse_lr_drops(get("lr_drops")?)?,
        eval_every: int("eval_every")?,
        seed: int("seed")? as u64,
    };
    Ok(Experiment {
        dataset,
        data_dir: PathBuf::from(get("data_dir")?),
        train_subset: opt_int("train_subset")?,
        test_subset: opt_int("test_subset")?,
        arch,
        config,
    })
}

fn run_train(args: TrainArgs) -> Result<ExitCode> {
    let exp = resolve_experiment(&args)?;
    exp.config.validate()?;
    if args.embeddings_out.is_some() && exp.arch.feature_dim != 2 {
        return Err(Error::invalid(format!(
            "--embeddings-out requires a 2-d feature architecture, got dimension {}",
            exp.arch.feature_dim
        )));
    }

    // Manifest goes out before training so a crashed run is still
    // reproducible.
    if let Some(path) = &args.manifest_out {
        write_manifest(path, &manifest_entries(&exp, &args))?;
    }

    let data_args = DataArgs {
        dataset: exp.dataset,
        data_dir: exp.data_dir.clone(),
        train_subset: exp.train_subset,
        test_subset: exp.test_subset,
    };
    let (train_data, test_data) = load_data(&data_args, &exp.arch, exp.config.seed)?;
    eprintln!(
        "loaded {} train / {} test samples; training {} for {} iters (seed {})",
        train_data.len(),
        test_data.len(),
        exp.config.loss.kind.name(),
        exp.config.total_iters,
        exp.config.seed
    );

    let mut metrics = CsvWriter::create(&args.metrics_out, METRICS_HEADER)?;
    let mut embeddings = match &args.embeddings_out {
        Some(path) => Some(CsvWriter::create(path, EMBEDDINGS_HEADER)?),
        None => None,
    };

    let loss_cfg = exp.config.loss.clone();
    let test_ref = &test_data;
    let train_result = train_with(
        &exp.config,
        &train_data,
        Some(test_ref),
        |record, model| {
            metrics.write_metrics(record)?;
            metrics.flush()?;
            if record.split == Split::Test {
                eprintln!(
                    "iter {:>6}  test acc {:.4}  base {:.4}  incay {:.4}  mean ‖f‖ {:.2}  lr {}",
                    record.iter,
                    record.accuracy,
                    record.base_loss,
                    record.incay_loss,
                    record.mean_feature_norm,
                    incay::io::format_sig6(lr_at(&exp.config, record.iter))
                );
                if let Some(w) = embeddings.as_mut() {
                    let stats = evaluate(model, test_ref, &loss_cfg, true)?;
                    let feats = stats.features.expect("keep_features was requested");
                    w.write_embeddings(&feats, &test_ref.labels, record.iter)?;
                    w.flush()?;
                }
            }
            Ok(())
        },
    );
    // On a training abort the partial CSV is kept (already flushed).
    let (model, _records) = train_result?;

    let final_stats = evaluate(&model, &test_data, &exp.config.loss, false)?;
    println!(
        "final test accuracy {:.4} ({:.2}%), mean feature norm {:.4}",
        final_stats.accuracy,
        final_stats.accuracy * 100.0,
        final_stats.mean_feature_norm
    );
    if let Some(path) = &args.model_out {
        save_model(path, &model)?;
        eprintln!("model written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run_eval(args: EvalArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let l = &args.loss;
    let kind = l.loss.kind();
    let loss_cfg = LossConfig {
        kind,
        margin: l.margin,
        alpha: l.alpha,
        center_lambda: l.center_lambda,
        incay_lambda: l.incay_lambda,
        epsilon: l.epsilon,
        ..LossConfig::default()
    };
    if kind == LossKind::Center && model.classifier.centers.is_none() {
        return Err(Error::invalid(
            "model has no class centers; it was not trained with the center loss",
        ));
    }
    let (train_data, test_data) = load_data(&args.data, &model.network.arch, 0)?;
    for data in [&train_data, &test_data] {
        let stats = evaluate(&model, data, &loss_cfg, false)?;
        println!(
            "{}: accuracy {:.4} base_loss {:.6} incay_loss {:.6} total_loss {:.6} mean_feature_norm {:.4}",
            data.split.name(),
            stats.accuracy,
            stats.base_loss,
            stats.incay_loss,
            stats.total_loss,
            stats.mean_feature_norm
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_verify() -> Result<ExitCode> {
    let reports = run_default_suite()?;
    let mut all_pass = true;
    for report in &reports {
        println!("{}", report.summary());
        all_pass &= report.pass;
    }
    if all_pass {
        println!("verify: all {} properties hold", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verify: FAILED");
        Ok(ExitCode::FAILURE)
    }
}
