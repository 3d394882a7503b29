//! End-to-end experiment runs and the run directory layout.
//!
//! A run directory contains `config.snapshot`, `history.csv`, `model.bin`,
//! `metrics.json`, `roc_class0.csv`, `roc_class1.csv`, and
//! `run_manifest.json`. The manifest is written with status `incomplete`
//! first and flipped to `complete` last, so an interrupted run is always
//! identifiable. Individual files are written via temp-then-rename.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::dataset::{read_manifest, DatasetError, DatasetSplit};
use crate::metrics::{roc_curve, MetricsError, MetricsReport, PositiveClass, RocCurve};
use crate::model::{instantiate, spec_by_name, Model, ModelError};
use crate::preprocess::{rescale, resize, ImageTensor, PreprocessError};
use crate::trainer::{score_split, train, Sample, TrainError, TrainHistory};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("output directory {0} already exists (use --force to overwrite)")]
    OutDirExists(PathBuf),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    pub status: String,
    pub config_snapshot: String,
    pub dataset_checksums: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub artifacts: BTreeMap<String, String>,
    pub weights_checksum: Option<String>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn file_sha256(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Load a split's images, resize to `target`, rescale to unit range.
pub fn load_samples(split: &DatasetSplit, target: usize) -> Result<Vec<Sample>, RunError> {
    split
        .records
        .iter()
        .map(|r| {
            let img = ImageTensor::load(&r.path)?;
            let img = resize(&img, target)?;
            let img = rescale(&img)?;
            Ok((img, r.label))
        })
        .collect()
}

/// Serialize history as `epoch,train_loss,train_acc,val_loss,val_acc`.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
        ));
    }
    out
}

/// Serialize a ROC curve as `threshold,fpr,tpr`.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

pub struct RunOutput {
    pub out_dir: PathBuf,
    pub history: TrainHistory,
    pub report: MetricsReport,
    pub model: Model,
}

/// Train per the config on the manifests under `data_dir`, evaluate on the
/// test split, and persist everything into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out_dir: &Path,
    force: bool,
) -> Result<RunOutput, RunError> {
    if out_dir.exists() {
        if !force {
            return Err(RunError::OutDirExists(out_dir.to_path_buf()));
        }
        std::fs::remove_dir_all(out_dir).map_err(io_err(out_dir))?;
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut dataset_checksums = BTreeMap::new();
    let mut splits = Vec::new();
    for name in ["train", "validation", "test"] {
        let manifest_path = data_dir.join(format!("{name}.manifest"));
        dataset_checksums.insert(name.to_string(), file_sha256(&manifest_path)?);
        splits.push(read_manifest(&manifest_path, data_dir, name)?);
    }

    let mut manifest = RunManifest {
        experiment: cfg.experiment.to_string(),
        seed: cfg.seed,
        status: "incomplete".to_string(),
        config_snapshot: "config.snapshot".to_string(),
        dataset_checksums,
        started_unix: now_unix(),
        finished_unix: None,
        artifacts: BTreeMap::new(),
        weights_checksum: None,
    };
    let manifest_path = out_dir.join("run_manifest.json");
    write_atomic(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest").as_bytes(),
    )?;
    write_atomic(&out_dir.join("config.snapshot"), cfg.snapshot().as_bytes())?;

    let train_samples = load_samples(&splits[0], cfg.image_size)?;
    let val_samples = load_samples(&splits[1], cfg.image_size)?;
    let test_samples = load_samples(&splits[2], cfg.image_size)?;

    let spec = spec_by_name(cfg.experiment);
    let mut model = instantiate(&spec, cfg.seed, cfg.weights.as_deref())?;
    let history = train(
        &mut model,
        &train_samples,
        &val_samples,
        &cfg.augment,
        &cfg.train_config(),
    )?;

    let (labels, preds, scores) = score_split(&model, &test_samples)?;
    let report = MetricsReport::build(&labels, &preds, Some(&scores), 0.5)?;

    write_atomic(&out_dir.join("history.csv"), history_csv(&history).as_bytes())?;
    write_atomic(
        &out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report").as_bytes(),
    )?;
    for (positive, file) in [
        (PositiveClass::Zero, "roc_class0.csv"),
        (PositiveClass::One, "roc_class1.csv"),
    ] {
        match roc_curve(&labels, &scores, positive) {
            Ok(curve) => write_atomic(&out_dir.join(file), roc_csv(&curve).as_bytes())?,
            // single-class test split: no curve, but the run is still valid
            Err(MetricsError::SingleClass) => {}
            Err(e) => return Err(e.into()),
        }
    }
    model.save(&out_dir.join("model.bin"))?;

    for artifact in [
        "config.snapshot",
        "history.csv",
        "metrics.json",
        "model.bin",
        "roc_class0.csv",
        "roc_class1.csv",
    ] {
        if out_dir.join(artifact).exists() {
            manifest.artifacts.insert(artifact.to_string(), artifact.to_string());
        }
    }
    manifest.weights_checksum = Some(model.weights_checksum());
    manifest.finished_unix = Some(now_unix());
    manifest.status = "complete".to_string();
    write_atomic(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest").as_bytes(),
    )?;

    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        history,
        report,
        model,
    })
}
