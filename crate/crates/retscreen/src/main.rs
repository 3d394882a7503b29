//! Command-line entry point. One subcommand per pipeline stage:
//! `fixture`, `prepare`, `train`, `evaluate`, `threshold`, `report`.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use retscreen::config::{parse_config, ExperimentConfig};
use retscreen::dataset::{
    build_manifest, generate_synthetic_fixture, load_label_table, read_manifest, summarize_split,
    write_manifest, IngestConfig,
};
use retscreen::metrics::{
    select_threshold, threshold_sweep, MetricsReport, ThresholdPolicy,
};
use retscreen::model::{spec_by_name, Model, ModelName};
use retscreen::run::{load_samples, run_experiment, write_atomic, RunManifest};
use retscreen::trainer::score_split;

/// Reproducible binary retinal-disease-risk screening pipeline.
#[derive(Parser)]
#[command(name = "retscreen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataDirArg {
    /// Dataset root (defaults to $RETSCREEN_DATA_DIR)
    #[arg(long, env = "RETSCREEN_DATA_DIR")]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic, separable desk-scale dataset with train,
    /// validation, and test splits.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
        /// Training images per class
        #[arg(long, default_value_t = 8)]
        n_per_class: u32,
        /// Validation/test images per class (default: n_per_class / 4, min 1)
        #[arg(long)]
        eval_n_per_class: Option<u32>,
        #[arg(long, default_value_t = 64)]
        image_size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build and verify split manifests from per-split label CSVs.
    Prepare {
        #[command(flatten)]
        data: DataDirArg,
        /// Name of the id column in the label CSVs
        #[arg(long, default_value = "ID")]
        id_column: String,
        /// Name of the binary label column
        #[arg(long, default_value = "Disease_Risk")]
        label_column: String,
        /// Image filename template; `{id}` is replaced by the record id
        #[arg(long, default_value = "{id}.png")]
        filename_template: String,
    },
    /// Train an experiment and write a run directory.
    Train {
        /// TOML config file; overrides --experiment/--seed presets
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["baseline", "vgg16"])]
        experiment: Option<String>,
        #[command(flatten)]
        data: DataDirArg,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Pretrained VGG16 backbone weights file
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Overwrite an existing run directory
        #[arg(long)]
        force: bool,
    },
    /// Compute a metrics report, either from an exported model and a split
    /// or from a stored predictions CSV (`y_true,y_pred[,score]`).
    Evaluate {
        /// Run directory holding model.bin and run_manifest.json
        #[arg(long, required_unless_present = "predictions")]
        run_dir: Option<PathBuf>,
        #[arg(long, env = "RETSCREEN_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, value_parser = ["train", "validation", "test"], default_value = "test")]
        split: String,
        /// CSV of stored predictions instead of a model
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Where to write metrics.json (printed to stdout regardless)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep decision thresholds over stored scores (`y_true,score`) and
    /// select one by policy.
    Threshold {
        #[arg(long)]
        predictions: PathBuf,
        /// `youden` or `min_recall=R`
        #[arg(long, default_value = "youden")]
        policy: String,
        /// Where to write the full sweep as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a run directory's metrics and ROC data as human-readable text.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Fixture { out_dir, n_per_class, eval_n_per_class, image_size, seed } => {
            cmd_fixture(&out_dir, n_per_class, eval_n_per_class, image_size, seed)
        }
        Command::Prepare { data, id_column, label_column, filename_template } => {
            let cfg = IngestConfig { id_column, label_column, filename_template };
            cmd_prepare(&data.data_dir, &cfg)
        }
        Command::Train { config, experiment, data, out_dir, seed, weights, force } => {
            cmd_train(config.as_deref(), experiment.as_deref(), &data.data_dir, &out_dir, seed, weights, force)
        }
        Command::Evaluate { run_dir, data_dir, split, predictions, out } => {
            cmd_evaluate(run_dir.as_deref(), data_dir.as_deref(), &split, predictions.as_deref(), out.as_deref())
        }
        Command::Threshold { predictions, policy, out } => {
            cmd_threshold(&predictions, &policy, out.as_deref())
        }
        Command::Report { run_dir } => cmd_report(&run_dir),
    }
}

fn cmd_fixture(
    out_dir: &Path,
    n_per_class: u32,
    eval_n_per_class: Option<u32>,
    image_size: u32,
    seed: u64,
) -> Result<(), String> {
    let eval_n = eval_n_per_class.unwrap_or((n_per_class / 4).max(1));
    let plan = [("train", n_per_class), ("validation", eval_n), ("test", eval_n)];
    for (i, (split, n)) in plan.iter().enumerate() {
        let split_dir = out_dir.join(split);
        let data = generate_synthetic_fixture(*n, image_size, seed.wrapping_add(i as u64), &split_dir)
            .map_err(|e| e.to_string())?;
        println!(
            "{split}: {} images ({} per class) in {}",
            data.records.len(),
            n,
            split_dir.display()
        );
    }
    let ingest = IngestConfig::default();
    cmd_prepare_with(out_dir, &ingest)
}

fn cmd_prepare(data_dir: &Path, ingest: &IngestConfig) -> Result<(), String> {
    cmd_prepare_with(data_dir, ingest)
}

fn cmd_prepare_with(data_dir: &Path, ingest: &IngestConfig) -> Result<(), String> {
    for split in ["train", "validation", "test"] {
        let split_dir = data_dir.join(split);
        let table = load_label_table(&split_dir.join("labels.csv"), ingest)
            .map_err(|e| format!("{split}: {e}"))?;
        let manifest =
            build_manifest(&table, &split_dir, split, ingest).map_err(|e| format!("{split}: {e}"))?;
        let manifest_path = data_dir.join(format!("{split}.manifest"));
        write_manifest(&manifest, data_dir, &manifest_path).map_err(|e| e.to_string())?;
        let summary = summarize_split(&manifest).map_err(|e| e.to_string())?;
        println!(
            "{split}: {} records, counts ({}, {}), imbalance {}",
            summary.total, summary.class_counts[0], summary.class_counts[1], summary.imbalance
        );
    }
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    experiment: Option<&str>,
    data_dir: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    weights: Option<PathBuf>,
    force: bool,
) -> Result<(), String> {
    let mut cfg = match (config, experiment) {
        (Some(path), _) => parse_config(path).map_err(|e| e.to_string())?,
        (None, Some("baseline")) => ExperimentConfig::baseline(0),
        (None, Some("vgg16")) => ExperimentConfig::vgg16(0),
        (None, _) => return Err("either --config or --experiment is required".to_string()),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if weights.is_some() {
        cfg.weights = weights;
    }
    let out = run_experiment(&cfg, data_dir, out_dir, force).map_err(|e| e.to_string())?;
    if out.model.untrained_backbone {
        eprintln!("note: transfer backbone ran with pseudo-random weights (no --weights file)");
    }
    println!("run complete: {}", out.out_dir.display());
    print!("{}", out.report.render_text());
    Ok(())
}

fn read_prediction_csv(
    path: &Path,
    need_pred: bool,
) -> Result<(Vec<u8>, Vec<u8>, Option<Vec<f64>>), String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let true_idx = col("y_true").ok_or("predictions CSV needs a y_true column")?;
    let pred_idx = col("y_pred");
    let score_idx = col("score");
    if need_pred && pred_idx.is_none() {
        return Err("predictions CSV needs a y_pred column".to_string());
    }
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    let mut scores = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let parse = |idx: usize, what: &str| {
            record
                .get(idx)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or(format!("row {}: bad {what}", i + 2))
        };
        y_true.push(parse(true_idx, "y_true")? as u8);
        if let Some(idx) = pred_idx {
            y_pred.push(parse(idx, "y_pred")? as u8);
        }
        if let Some(idx) = score_idx {
            scores.push(parse(idx, "score")?);
        }
    }
    Ok((y_true, y_pred, (!scores.is_empty()).then_some(scores)))
}

fn cmd_evaluate(
    run_dir: Option<&Path>,
    data_dir: Option<&Path>,
    split: &str,
    predictions: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), String> {
    let report = if let Some(pred_path) = predictions {
        let (y_true, y_pred, scores) = read_prediction_csv(pred_path, true)?;
        MetricsReport::build(&y_true, &y_pred, scores.as_deref(), 0.5).map_err(|e| e.to_string())?
    } else {
        let run_dir = run_dir.expect("clap enforces run_dir or predictions");
        let data_dir = data_dir.ok_or("--data-dir (or $RETSCREEN_DATA_DIR) is required")?;
        let manifest: RunManifest = serde_json::from_str(
            &std::fs::read_to_string(run_dir.join("run_manifest.json"))
                .map_err(|e| format!("run manifest: {e}"))?,
        )
        .map_err(|e| format!("run manifest: {e}"))?;
        let name = match manifest.experiment.as_str() {
            "baseline_cnn" => ModelName::BaselineCnn,
            "vgg16_transfer" => ModelName::Vgg16Transfer,
            other => return Err(format!("unknown experiment `{other}` in run manifest")),
        };
        let spec = spec_by_name(name);
        let model = Model::load(&spec, &run_dir.join("model.bin")).map_err(|e| e.to_string())?;
        let manifest_path = data_dir.join(format!("{split}.manifest"));
        let split_data =
            read_manifest(&manifest_path, data_dir, split).map_err(|e| e.to_string())?;
        let samples = load_samples(&split_data, spec.input_size).map_err(|e| e.to_string())?;
        let (labels, preds, scores) = score_split(&model, &samples).map_err(|e| e.to_string())?;
        MetricsReport::build(&labels, &preds, Some(&scores), 0.5).map_err(|e| e.to_string())?
    };
    print!("{}", report.render_text());
    if let Some(out_path) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_atomic(out_path, json.as_bytes()).map_err(|e| e.to_string())?;
        println!("wrote {}", out_path.display());
    }
    Ok(())
}

fn parse_policy(policy: &str) -> Result<ThresholdPolicy, String> {
    if policy == "youden" {
        return Ok(ThresholdPolicy::Youden);
    }
    if let Some(rest) = policy.strip_prefix("min_recall=") {
        let r: f64 = rest.parse().map_err(|_| format!("bad recall value `{rest}`"))?;
        if !(0.0..=1.0).contains(&r) {
            return Err(format!("recall {r} outside [0,1]"));
        }
        return Ok(ThresholdPolicy::MinRecall(r));
    }
    Err(format!("unknown policy `{policy}` (expected youden or min_recall=R)"))
}

fn cmd_threshold(predictions: &Path, policy: &str, out: Option<&Path>) -> Result<(), String> {
    let policy = parse_policy(policy)?;
    let (y_true, _, scores) = read_prediction_csv(predictions, false)?;
    let scores = scores.ok_or("predictions CSV needs a score column")?;
    let sweep = threshold_sweep(&y_true, &scores).map_err(|e| e.to_string())?;
    let chosen = select_threshold(&sweep, policy).map_err(|e| e.to_string())?;
    let row = sweep
        .iter()
        .find(|r| r.threshold == chosen)
        .expect("selected threshold comes from the sweep");
    println!("selected threshold: {chosen}");
    println!(
        "at that cut: recall1 {:.4}, precision1 {}, accuracy {:.4}, youden_j {:.4}",
        row.recall1,
        row.precision1.map_or("undef".to_string(), |p| format!("{p:.4}")),
        row.accuracy,
        row.youden_j
    );
    if let Some(out_path) = out {
        let mut csv = String::from("threshold,precision1,recall1,f1_1,accuracy,youden_j\n");
        for r in &sweep {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.threshold,
                r.precision1.map_or(String::from("nan"), |v| v.to_string()),
                r.recall1,
                r.f1_1.map_or(String::from("nan"), |v| v.to_string()),
                r.accuracy,
                r.youden_j
            ));
        }
        write_atomic(out_path, csv.as_bytes()).map_err(|e| e.to_string())?;
        println!("wrote {}", out_path.display());
    }
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<(), String> {
    let metrics_path = run_dir.join("metrics.json");
    let report: MetricsReport = serde_json::from_str(
        &std::fs::read_to_string(&metrics_path).map_err(|e| format!("{}: {e}", metrics_path.display()))?,
    )
    .map_err(|e| e.to_string())?;
    let mut text = report.render_text();
    for class in [0, 1] {
        let roc_path = run_dir.join(format!("roc_class{class}.csv"));
        if let Ok(csv) = std::fs::read_to_string(&roc_path) {
            let points = csv.lines().count().saturating_sub(1);
            text.push_str(&format!("roc class {class}: {points} points ({})\n", roc_path.display()));
        }
    }
    let history_path = run_dir.join("history.csv");
    if let Ok(csv) = std::fs::read_to_string(&history_path) {
        if let Some(last) = csv.lines().filter(|l| !l.trim().is_empty()).last() {
            if !last.starts_with("epoch") {
                text.push_str(&format!("final epoch: {last}\n"));
            }
        }
    }
    print!("{text}");
    write_atomic(&run_dir.join("report.txt"), text.as_bytes()).map_err(|e| e.to_string())?;
    Ok(())
}
