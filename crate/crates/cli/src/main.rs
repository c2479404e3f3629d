use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use pte_core::baselines::MethodKind;
use pte_core::data::partition_by_class;
use pte_core::evaluation::{accuracy, evaluate, ReportContext};
use pte_core::harness::{
    compare_methods, emit_plots, prepare_repeat, run_experiment, ExperimentConfig, PlotOptions,
    RunManifest,
};
use pte_core::model::load_checkpoint;

#[derive(Parser)]
#[command(
    name = "pte",
    version,
    about = "Retain-free class unlearning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of a config file.
#[derive(Args, Clone)]
struct Overrides {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, replacing the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the (first) repeat, replacing `seed_base`.
    #[arg(long)]
    seed: Option<u64>,
    /// Method to run; repeat the flag for several.
    #[arg(long = "method")]
    methods: Vec<MethodKind>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated forget classes, e.g. `0,3`.
    #[arg(long, value_delimiter = ',')]
    forget_classes: Option<Vec<usize>>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).context("config")?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed_base = seed;
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(cf) = &self.forget_classes {
            cfg.forget_classes = cf.clone();
        }
        cfg.validate().context("config")?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train (or load from cache) the original model of one seed.
    Train(Overrides),
    /// Run the configured methods for a single seed and write reports.
    Unlearn(Overrides),
    /// Evaluate an unlearned checkpoint against the original model.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint of the unlearned model.
        #[arg(long)]
        model: PathBuf,
        /// Method name written into the report.
        #[arg(long, default_value = "external")]
        label: String,
    },
    /// Run every repeat of one or more configs and print the comparison table.
    Bench {
        #[command(flatten)]
        overrides: Overrides,
        /// Further configs compared against the first.
        #[arg(long = "also")]
        also: Vec<PathBuf>,
    },
    /// Draw box plots, trajectories and projections for a finished run.
    Plot {
        /// Run directory containing manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        projection: bool,
    },
}

fn run_checked(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let manifest = run_experiment(cfg).context("run")?;
    if let Some(e) = manifest.stage_errors.first() {
        let method = e.method.map(|m| format!(" {m}")).unwrap_or_default();
        bail!(
            "{} stage error(s); first: repeat {} (seed {}){method}, stage `{}`: {}",
            manifest.stage_errors.len(),
            e.repeat,
            e.seed,
            e.stage,
            e.message
        );
    }
    Ok(manifest)
}

fn write_table(dir: &Path, text: &str) -> Result<()> {
    let path = dir.join("table.csv");
    fs::write(&path, text).with_context(|| format!("persist: {}", path.display()))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(o) => {
            let cfg = o.load()?;
            let prep = prepare_repeat(&cfg, cfg.seed_base).context("train")?;
            let acc = accuracy(&prep.original, &prep.test).context("evaluate")?;
            println!("checkpoint = {}", prep.checkpoint.display());
            println!("test_accuracy = {acc:.4}");
        }
        Command::Unlearn(o) => {
            let mut cfg = o.load()?;
            cfg.repeats = 1;
            let manifest = run_checked(&cfg)?;
            for m in manifest.repeats.iter().flat_map(|r| &r.methods) {
                print!("{}", fs::read_to_string(&m.report)?);
                println!();
            }
        }
        Command::Evaluate {
            overrides,
            model,
            label,
        } => {
            let cfg = overrides.load()?;
            let prep = prepare_repeat(&cfg, cfg.seed_base).context("train")?;
            let unlearned = load_checkpoint(&model).context("load")?;
            let p = partition_by_class(&prep.train, &prep.test, &cfg.forget_classes)
                .context("partition")?;
            let report = evaluate(
                &prep.original,
                &unlearned,
                &p,
                &ReportContext {
                    method: &label,
                    seed: cfg.seed_base,
                    config_hash: &cfg.hash(),
                    uses_retain: false,
                    attack: &cfg.attack,
                },
            )
            .context("evaluate")?;
            print!("{}", report.to_text());
        }
        Command::Bench { overrides, also } => {
            let first = overrides.load()?;
            let mut cfgs = vec![first.clone()];
            for path in also {
                let o = Overrides {
                    config: path,
                    out: None,
                    ..overrides.clone()
                };
                cfgs.push(o.load()?);
            }
            let mut manifests = Vec::new();
            for cfg in &cfgs {
                info!("running {}", cfg.output_dir.display());
                manifests.push(run_checked(cfg)?);
            }
            let table = compare_methods(&manifests).context("compare")?;
            let text = table.to_delimited(',');
            write_table(&first.output_dir, &text)?;
            print!("{text}");
        }
        Command::Plot { out, projection } => {
            let manifest = RunManifest::load(&out).context("plot")?;
            let files = emit_plots(&manifest, &out.join("plots"), &PlotOptions { projection })
                .context("plot")?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
