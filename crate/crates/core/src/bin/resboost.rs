//! Command-line entry point: train and evaluate boosted tree networks,
//! convert classical trees, and run the property-check suite.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use resboost::checks::{run_all, CheckOptions};
use resboost::data::{
    scan_manifest, DatasetStream, LabelColumn, ManifestOptions, Preprocessing, Split,
};
use resboost::resnet::{BoostedResNet, Mode, NetworkConfig, Shortcut};
use resboost::tree::{NeuralDecisionTree, TreeImportSpec};
use resboost::{CompositeLoss, Matrix};

const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "resboost", version, about = "Online-boosted residual networks of neural decision trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a boosted model on a CSV dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Convert a classical decision tree document into a checkpoint.
    Convert(ConvertArgs),
    /// Run the property-check suite.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Vanilla,
    Shrinkage,
    Shared,
}

impl From<ModeArg> for Mode {
    fn from(value: ModeArg) -> Mode {
        match value {
            ModeArg::Vanilla => Mode::Vanilla,
            ModeArg::Shrinkage => Mode::Shrinkage,
            ModeArg::Shared => Mode::Shared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Auto,
    Logistic,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by header name or zero-based index.
    #[arg(long, default_value = "class")]
    label_col: String,
    /// Number of tree modules.
    #[arg(long, default_value_t = 15)]
    trees: usize,
    /// Tree depth (a depth-d tree has 2^d - 1 decision nodes).
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Shrinkage)]
    mode: ModeArg,
    /// Boosting step size, must lie in [1/trees, 1].
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Seed for initialization, shuffling, and splitting.
    #[arg(long, env = "RESBOOST_SEED", default_value_t = 1)]
    seed: u64,
    /// SGD learning rate for module and classifier parameters.
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Learning rate for the shrinkage values.
    #[arg(long, default_value_t = 0.01)]
    theta_lr: f64,
    /// Max-norm bound on module outputs.
    #[arg(long, default_value_t = 5.0)]
    max_norm: f64,
    /// Routing temperature of the tree modules.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Auto)]
    loss: LossArg,
    /// Shuffle window size in batches.
    #[arg(long, default_value_t = 32)]
    shuffle_buffer: usize,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the metrics JSON here (it always goes to stdout).
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train` or `convert`.
    #[arg(long)]
    ckpt: PathBuf,
    /// CSV file to evaluate.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Override the label column recorded in the checkpoint.
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Tree document: {n_features, nodes, leaves}.
    #[arg(long)]
    spec: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Assert hard-routing equivalence against the classical evaluator on
    /// every row of this CSV.
    #[arg(long)]
    verify: Option<PathBuf>,
    /// Label column to drop from the verification CSV.
    #[arg(long, default_value = "class")]
    label_col: String,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, env = "RESBOOST_SEED", default_value_t = 1)]
    seed: u64,
    /// Run only checks whose name contains this substring.
    #[arg(long)]
    only: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Internal test hook: append a synthetic failure.
    #[arg(long, hide = true)]
    force_fail: bool,
}

/// Runtime failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<resboost::Error> for Failure {
    fn from(e: resboost::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Check(args) => cmd_check(args),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn parse_label_column(raw: &str) -> LabelColumn {
    match raw.parse::<usize>() {
        Ok(index) => LabelColumn::Index(index),
        Err(_) => LabelColumn::Name(raw.to_string()),
    }
}

#[derive(Serialize)]
struct TrainConfigEcho {
    data: String,
    label_column: String,
    trees: usize,
    depth: usize,
    mode: String,
    loss: String,
    eta: f64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    theta_learning_rate: f64,
    max_norm: f64,
    temperature: f64,
    shuffle_buffer: usize,
}

#[derive(Serialize)]
struct TrainMetrics {
    schema_version: u32,
    train_acc: f64,
    test_acc: f64,
    per_epoch_loss: Vec<f64>,
    per_epoch_accuracy: Vec<f64>,
    theta_final: Vec<f64>,
    best_learner_index: Option<usize>,
    empirical_regret_vs_best_learner: Option<f64>,
    seed: u64,
    config: TrainConfigEcho,
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Failure> {
    let options = ManifestOptions {
        label_column: parse_label_column(&args.label_col),
        split_seed: args.seed,
        ..ManifestOptions::default()
    };
    let manifest = scan_manifest(&args.data, &options)?;
    let classes = manifest.n_classes();
    if classes < 2 {
        return Err(Failure::runtime(format!(
            "need at least two classes, found {classes}"
        )));
    }
    let loss = match args.loss {
        LossArg::Logistic => {
            if classes != 2 {
                return Err(Failure::runtime(format!(
                    "logistic loss needs a binary dataset, found {classes} classes"
                )));
            }
            CompositeLoss::Logistic
        }
        LossArg::Auto if classes == 2 => CompositeLoss::Logistic,
        _ => CompositeLoss::SoftmaxCrossEntropy { classes },
    };
    let config = NetworkConfig {
        mode: args.mode.into(),
        modules: args.trees,
        tree_depth: args.depth,
        input_width: manifest.n_features(),
        loss,
        eta: args.eta,
        theta_learning_rate: args.theta_lr,
        max_norm: args.max_norm,
        routing_temperature: args.temperature,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut net = BoostedResNet::with_tree_modules(&config, &mut rng)?;

    let buffer_rows = args.shuffle_buffer.max(1) * args.batch_size;
    let mut train_stream = DatasetStream::new(
        &manifest,
        Split::Train,
        args.batch_size,
        args.seed,
        Some(buffer_rows),
    )?;
    let report = net.train_stream(&mut train_stream, args.epochs, args.lr)?;

    let train_acc = net.evaluate(&mut train_stream)?.accuracy;
    let mut test_stream =
        DatasetStream::new(&manifest, Split::Test, args.batch_size, args.seed, None)?;
    let test_acc = net.evaluate(&mut test_stream)?.accuracy;

    net.save_checkpoint(&args.out, Some(&manifest.to_preprocessing()))?;

    let best = report.ledger.best_learner_total();
    let metrics = TrainMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        train_acc,
        test_acc,
        per_epoch_loss: report.epochs.iter().map(|e| e.mean_loss).collect(),
        per_epoch_accuracy: report.epochs.iter().map(|e| e.accuracy).collect(),
        theta_final: report.theta_final.clone(),
        best_learner_index: best.map(|(i, _)| i),
        empirical_regret_vs_best_learner: best
            .map(|(_, total)| report.ledger.empirical_regret(total)),
        seed: args.seed,
        config: TrainConfigEcho {
            data: args.data.display().to_string(),
            label_column: args.label_col.clone(),
            trees: args.trees,
            depth: args.depth,
            mode: Mode::from(args.mode).to_string(),
            loss: net.loss().name().to_string(),
            eta: net.shrinkage().eta(),
            epochs: args.epochs,
            batch_size: args.batch_size,
            learning_rate: args.lr,
            theta_learning_rate: args.theta_lr,
            max_norm: args.max_norm,
            temperature: args.temperature,
            shuffle_buffer: args.shuffle_buffer,
        },
    };
    let json = serde_json::to_string_pretty(&metrics).map_err(resboost::Error::from)?;
    println!("{json}");
    if let Some(path) = &args.metrics_out {
        std::fs::write(path, format!("{json}\n")).map_err(resboost::Error::from)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalMetrics {
    schema_version: u32,
    accuracy: f64,
    examples: u64,
    split: String,
    classes: Vec<String>,
    confusion: Vec<Vec<u64>>,
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Failure> {
    let (net, preprocessing) = BoostedResNet::load_checkpoint(&args.ckpt)?;
    let preprocessing = preprocessing
        .ok_or_else(|| Failure::runtime("checkpoint carries no preprocessing context"))?;
    if net.input_width() != preprocessing.feature_names.len() {
        return Err(Failure::runtime(format!(
            "checkpoint width {} does not match its preprocessing ({} features)",
            net.input_width(),
            preprocessing.feature_names.len()
        )));
    }
    let manifest = preprocessing.eval_manifest(&args.data, args.label_col.as_deref())?;

    let splits: &[Split] = match args.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::All => &[Split::Train, Split::Test],
    };
    let classes = net.loss().class_count();
    let mut confusion = vec![vec![0u64; classes]; classes];
    for &split in splits {
        let mut stream = DatasetStream::new(&manifest, split, 256, 0, None)?;
        let stats = net.evaluate(&mut stream)?;
        for (row, counts) in confusion.iter_mut().zip(&stats.confusion) {
            for (total, c) in row.iter_mut().zip(counts) {
                *total += c;
            }
        }
    }
    let examples: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let metrics = EvalMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        accuracy: correct as f64 / examples as f64,
        examples,
        split: format!("{:?}", args.split).to_lowercase(),
        classes: preprocessing.class_names.clone(),
        confusion,
    };
    let json = serde_json::to_string_pretty(&metrics).map_err(resboost::Error::from)?;
    println!("{json}");
    if let Some(path) = &args.out {
        std::fs::write(path, format!("{json}\n")).map_err(resboost::Error::from)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ConvertSummary {
    schema_version: u32,
    nodes: usize,
    leaves: usize,
    output_width: usize,
    verified_rows: Option<u64>,
}

fn cmd_convert(args: ConvertArgs) -> Result<ExitCode, Failure> {
    let raw = std::fs::read_to_string(&args.spec).map_err(resboost::Error::from)?;
    let spec: TreeImportSpec = serde_json::from_str(&raw)
        .map_err(|e| Failure::usage(format!("malformed tree document: {e}")))?;
    let tree = NeuralDecisionTree::import(&spec)?;
    let width = tree.output_width();
    let n_features = tree.n_features();

    let mut verified_rows = None;
    if let Some(data) = &args.verify {
        verified_rows = Some(verify_against_classical(&spec, &tree, data, &args.label_col)?);
    }

    let shortcut = if width == n_features {
        Shortcut::Identity
    } else {
        Shortcut::Projection(Matrix::zeros(width, n_features))
    };
    let net = BoostedResNet::from_parts(
        vec![resboost::ResidualModule::Tree {
            tree,
            passthrough: None,
        }],
        vec![shortcut],
        Matrix::identity(width),
        CompositeLoss::SoftmaxCrossEntropy { classes: width },
        Mode::Vanilla,
        1.0,
        0.01,
        1e12,
    )?;
    let preprocessing = Preprocessing {
        feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
        feature_mean: vec![0.0; n_features],
        feature_std: vec![1.0; n_features],
        class_names: (0..width).map(|c| c.to_string()).collect(),
        label_column: "class".into(),
        split_seed: 0,
    };
    net.save_checkpoint(&args.out, Some(&preprocessing))?;

    let summary = ConvertSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        nodes: spec.nodes.len(),
        leaves: spec.leaves.len(),
        output_width: width,
        verified_rows,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(resboost::Error::from)?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

/// Checks hard routing of the neural parameterization against the
/// classical evaluator on every row of a CSV file.
fn verify_against_classical(
    spec: &TreeImportSpec,
    tree: &NeuralDecisionTree,
    data: &Path,
    label_col: &str,
) -> Result<u64, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(data)
        .map_err(|e| Failure::runtime(format!("{}: {e}", data.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Failure::runtime(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let skip = header.iter().position(|h| h == label_col);
    let expected = spec.n_features + skip.map_or(0, |_| 1);
    if header.len() != expected {
        return Err(Failure::runtime(format!(
            "verification file has {} columns, tree expects {} features",
            header.len(),
            spec.n_features
        )));
    }
    let mut rows = 0u64;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::runtime(e.to_string()))?;
        let mut features = Vec::with_capacity(spec.n_features);
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == skip {
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                Failure::runtime(format!("row {}: non-numeric cell {cell:?}", idx + 1))
            })?;
            features.push(v);
        }
        let (neural_leaf, _) = tree.forward_deterministic(&features)?;
        let classical_leaf = spec.classical_leaf_index(&features)?;
        if neural_leaf != classical_leaf {
            return Err(Failure::runtime(format!(
                "row {}: neural routing reached leaf {neural_leaf}, classical evaluator leaf {classical_leaf}",
                idx + 1
            )));
        }
        rows += 1;
    }
    Ok(rows)
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, Failure> {
    let reports = run_all(&CheckOptions {
        seed: args.seed,
        only: args.only.clone(),
        force_fail: args.force_fail,
    });
    let json = serde_json::to_string_pretty(&reports).map_err(resboost::Error::from)?;
    match &args.out {
        Some(path) => std::fs::write(path, format!("{json}\n")).map_err(resboost::Error::from)?,
        None => println!("{json}"),
    }
    let all_passed = !reports.is_empty() && reports.iter().all(|r| r.passed);
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "{} of {} checks failed",
            reports.iter().filter(|r| !r.passed).count(),
            reports.len()
        );
        Ok(ExitCode::from(1))
    }
}
