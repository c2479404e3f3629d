use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{sha256_hex, ExperimentConfig};
use crate::baselines::{MethodKind, MethodTrace, PermittedData};
use crate::data::{partition_by_class, AccessLog, ForgetPartition, LabeledDataset};
use crate::editing::{EpochProbe, UNLEARN_END, UNLEARN_START};
use crate::error::{PteError, Result};
use crate::evaluation::{accuracy, evaluate, EvaluationReport, ReportContext};
use crate::model::{
    build_reference_model, load_checkpoint, save_checkpoint, train_supervised, Classifier,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// Metrics aggregated over repeats, in column order.
pub const AGGREGATE_METRICS: [&str; 9] = [
    "acc_f",
    "acc_r",
    "acc_ft",
    "acc_rt",
    "drop_ft",
    "h_mean",
    "mia",
    "retain_kl",
    "forget_conf_gap",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub repeat: usize,
    pub seed: u64,
    pub method: Option<MethodKind>,
    /// `data`, `train`, `partition`, `unlearn`, `evaluate` or `persist`.
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: MethodKind,
    pub report: PathBuf,
    pub checkpoint: PathBuf,
    pub trace: Option<PathBuf>,
    /// Retain-split samples read between the unlearning markers; only
    /// recorded for retain-free methods that emit markers.
    pub retain_reads_during_unlearn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub original_checkpoint: Option<PathBuf>,
    pub methods: Vec<MethodRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub data_signature: String,
    /// Canonical config bytes; hashing this file reproduces `config_hash`.
    pub config_path: PathBuf,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub seeds: Vec<u64>,
    pub repeats: Vec<RepeatRecord>,
    pub aggregate: Option<PathBuf>,
    pub stage_errors: Vec<StageError>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| PteError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PteError::Data(format!("manifest {}: {e}", path.display())))
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        let bytes = fs::read(&self.config_path).map_err(|e| PteError::io(&self.config_path, e))?;
        if sha256_hex(&bytes) != self.config_hash {
            return Err(PteError::Data(format!(
                "{} does not match the recorded config hash",
                self.config_path.display()
            )));
        }
        serde_json::from_slice(&bytes)
            .map_err(|e| PteError::Data(format!("{}: {e}", self.config_path.display())))
    }

    /// Every report listed in the manifest, in repeat then method order.
    pub fn reports(&self) -> Result<Vec<EvaluationReport>> {
        self.repeats
            .iter()
            .flat_map(|r| &r.methods)
            .map(|m| {
                let text = fs::read_to_string(&m.report).map_err(|e| PteError::io(&m.report, e))?;
                EvaluationReport::from_text(&text)
            })
            .collect()
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PteError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PteError::io(path, e))
}

/// Trains the original model of a repeat, or loads it from the checkpoint
/// cache when an identical one already exists.
fn original_model(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    seed: u64,
) -> Result<(Classifier, PathBuf)> {
    let key = cfg.original_model_key();
    let path = cfg
        .output_dir
        .join("checkpoints")
        .join(format!("original_{}_seed{seed}.ckpt", &key[..16]));
    let arch = cfg.arch()?;
    let train_cfg = crate::model::TrainConfig {
        seed: seed.wrapping_add(cfg.train.seed),
        ..cfg.train.clone()
    };
    if path.exists() {
        let cached = load_checkpoint(&path)?;
        if cached.train_config_hash() == Some(train_cfg.hash().as_str())
            && cached.architecture() == &arch
            && cached.seed() == seed
        {
            info!("seed {seed}: reusing original model {}", path.display());
            return Ok((cached, path));
        }
        warn!(
            "seed {seed}: cached model {} is stale, retraining",
            path.display()
        );
    }
    let init = build_reference_model(&arch, cfg.dataset.classes(), seed)?;
    let trained = train_supervised(init, train, &train_cfg)?.model.snapshot();
    save_checkpoint(&trained, &path)?;
    Ok((trained, path))
}

/// Data and original model of one repeat.
#[derive(Debug, Clone)]
pub struct PreparedRepeat {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub original: Classifier,
    pub checkpoint: PathBuf,
}

/// Builds the data of the repeat with `seed` and trains its original model,
/// or loads it from the checkpoint cache under `cfg.output_dir`.
pub fn prepare_repeat(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedRepeat> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.build(seed, Path::new("."))?;
    let (original, checkpoint) = original_model(cfg, &train, seed)?;
    Ok(PreparedRepeat {
        train,
        test,
        original,
        checkpoint,
    })
}

/// Accuracy of every recorded epoch model on the forget and retain test sets.
fn epoch_probes(models: &[Classifier], p: &ForgetPartition) -> Result<Vec<EpochProbe>> {
    models
        .iter()
        .enumerate()
        .map(|(epoch, m)| {
            Ok(EpochProbe {
                epoch,
                forget_acc: accuracy(m, &p.forget_test)?,
                retain_acc: accuracy(m, &p.retain_test)?,
            })
        })
        .collect()
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    config_hash: &'a str,
    repeat: usize,
    seed: u64,
    errors: &'a mut Vec<StageError>,
}

impl Ctx<'_> {
    fn stage<T>(&mut self, method: Option<MethodKind>, stage: &str, r: Result<T>) -> Option<T> {
        r.map_err(|e| {
            warn!("repeat {} ({stage}): {e}", self.repeat);
            self.errors.push(StageError {
                repeat: self.repeat,
                seed: self.seed,
                method,
                stage: stage.into(),
                message: e.to_string(),
            });
        })
        .ok()
    }
}

fn run_method(
    ctx: &mut Ctx<'_>,
    method: MethodKind,
    original: &Classifier,
    p: &ForgetPartition,
    log: &AccessLog,
) -> Option<MethodRecord> {
    let cfg = ctx.cfg;
    let seed = ctx.seed;
    let data = PermittedData {
        forget: Some(&p.forget),
        retain: method.uses_retain_data().then_some(&p.retain),
        forget_classes: p.forget_classes(),
    };
    let outcome = method.run(original, data, &cfg.method_settings(), seed);
    let outcome = ctx.stage(Some(method), "unlearn", outcome)?;
    let retain_reads = log.retain_reads_between(UNLEARN_START, UNLEARN_END);

    let report = evaluate(
        original,
        &outcome.model,
        p,
        &ReportContext {
            method: &method.to_string(),
            seed,
            config_hash: ctx.config_hash,
            uses_retain: method.uses_retain_data(),
            attack: &cfg.attack,
        },
    );
    let report = ctx.stage(Some(method), "evaluate", report)?;

    let stem = format!("{method}_seed{seed}");
    let dir = &cfg.output_dir;
    let report_path = dir.join("reports").join(format!("{stem}.txt"));
    let ckpt_path = dir.join("models").join(format!("{stem}.ckpt"));
    let trace_path = dir.join("traces").join(format!("{stem}.csv"));
    let persisted = (|| -> Result<Option<PathBuf>> {
        write(&report_path, report.to_text())?;
        save_checkpoint(&outcome.model, &ckpt_path)?;
        match outcome.trace {
            MethodTrace::Edit(mut trace) => {
                trace.epoch_probes = epoch_probes(&outcome.epoch_models, p)?;
                write(&trace_path, trace.to_csv())?;
                Ok(Some(trace_path.clone()))
            }
            MethodTrace::Ascent(trace) => {
                let mut csv = String::from("epoch,loss\n");
                for (e, l) in trace.epoch_losses.iter().enumerate() {
                    let _ = writeln!(csv, "{e},{l}");
                }
                write(&trace_path, csv)?;
                Ok(Some(trace_path.clone()))
            }
            MethodTrace::None => Ok(None),
        }
    })();
    let trace = ctx.stage(Some(method), "persist", persisted)?;
    Some(MethodRecord {
        method,
        report: report_path,
        checkpoint: ckpt_path,
        trace,
        retain_reads_during_unlearn: retain_reads,
    })
}

/// Runs every configured method for every repeat, writing reports, traces,
/// checkpoints, an aggregate table and a manifest into `cfg.output_dir`.
///
/// Stage failures are recorded in the manifest and the remaining work
/// continues; only an invalid config or an unwritable output directory is
/// returned as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| PteError::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    let canonical = cfg.canonical_bytes();
    write(&config_path, &canonical)?;
    let config_hash = sha256_hex(&canonical);

    let mut errors = Vec::new();
    let mut repeats = Vec::new();
    let mut reports: Vec<EvaluationReport> = Vec::new();
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed_base.wrapping_add(repeat as u64);
        info!("repeat {repeat} (seed {seed})");
        let mut ctx = Ctx {
            cfg,
            config_hash: &config_hash,
            repeat,
            seed,
            errors: &mut errors,
        };
        let mut record = RepeatRecord {
            repeat,
            seed,
            original_checkpoint: None,
            methods: Vec::new(),
        };
        (|| -> Option<()> {
            let built = cfg.dataset.build(seed, Path::new("."));
            let (train, test) = ctx.stage(None, "data", built)?;
            let (original, ckpt) = ctx.stage(None, "train", original_model(cfg, &train, seed))?;
            record.original_checkpoint = Some(ckpt);
            let log = AccessLog::new();
            let p = partition_by_class(&train, &test, &cfg.forget_classes);
            let p = ctx.stage(None, "partition", p)?.audited(&log);
            for &method in &cfg.methods {
                if let Some(m) = run_method(&mut ctx, method, &original, &p, &log) {
                    record.methods.push(m);
                }
            }
            Some(())
        })();
        repeats.push(record);
    }
    for r in &repeats {
        for m in &r.methods {
            let text = fs::read_to_string(&m.report).map_err(|e| PteError::io(&m.report, e))?;
            reports.push(EvaluationReport::from_text(&text)?);
        }
    }
    let aggregate = if reports.is_empty() {
        None
    } else {
        let path = dir.join(AGGREGATE_FILE);
        write(&path, aggregate_csv(&reports, &cfg.methods))?;
        Some(path)
    };
    let manifest = RunManifest {
        name: cfg.name.clone(),
        config_hash,
        data_signature: cfg.data_signature(),
        config_path,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        seeds: (0..cfg.repeats)
            .map(|r| cfg.seed_base.wrapping_add(r as u64))
            .collect(),
        repeats,
        aggregate,
        stage_errors: errors,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Sample mean and, for two or more values, the sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// `method,repeats,<metric>_mean,<metric>_std,...`, one row per method in
/// `order`. The std cell is empty with fewer than two repeats.
pub fn aggregate_csv(reports: &[EvaluationReport], order: &[MethodKind]) -> String {
    let mut out = String::from("method,repeats");
    for m in AGGREGATE_METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for method in order {
        let name = method.to_string();
        let rows: Vec<&EvaluationReport> = reports.iter().filter(|r| r.method == name).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = write!(out, "{name},{}", rows.len());
        for metric in AGGREGATE_METRICS {
            let values: Vec<f64> = rows.iter().filter_map(|r| r.metric(metric)).collect();
            let (mean, std) = mean_std(&values);
            let _ = write!(out, ",{mean:.4},");
            if let Some(s) = std {
                let _ = write!(out, "{s:.4}");
            }
        }
        out.push('\n');
    }
    out
}
