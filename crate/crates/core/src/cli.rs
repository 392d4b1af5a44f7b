//! The `stnet` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::complexity::{analyze, emit_report, Format};
use crate::data::{gen_synthetic, read_dataset, split_dataset, write_dataset, MotionClass, SynthConfig};
use crate::error::{Error, Result};
use crate::graph::{build_model, load_checkpoint, save_checkpoint, ArchSpec, Model32};
use crate::ops::{run_op_checks, OP_NAMES};
use crate::train::{evaluate, run_ablation, train, TrainConfig, ABLATION_ROWS};

pub const SEED_ENV: &str = "STNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "stnet", version, about = "Super-image video networks: complexity, synthetic data, training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer parameter and multiplication counts.
    Describe(DescribeArgs),
    /// Render the synthetic motion dataset.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate the four component-toggle variants.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Preset name or path to an `.arch` file.
    #[arg(long)]
    pub spec: String,
    /// Snippets per clip.
    #[arg(long)]
    pub t: Option<usize>,
    /// Frames per snippet.
    #[arg(long)]
    pub n: Option<usize>,
    /// Square input resolution.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clips_per_class: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Key-value training config; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the architecture is written next to it with a `.spec` suffix
    /// and the loss curve with a `.loss.csv` suffix.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the architecture stored next to the checkpoint.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(OP_NAMES.iter().copied()))]
    pub op: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub spec: String,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// `STNET_SEED` if set, otherwise 0.
pub fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::InvalidArgument { op: SEED_ENV, msg: format!("not an unsigned integer: {v:?}") }),
        Err(_) => Ok(0),
    }
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

/// Defaults, then the config file, then flags.
pub fn resolve_train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let base = TrainConfig { seed: default_seed()?, ..TrainConfig::default() };
    let mut cfg = match &flags.config {
        Some(p) => TrainConfig::parse_over(&read_text(p)?, &p.display().to_string(), base)?,
        None => base,
    };
    cfg.epochs = flags.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = flags.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = flags.lr.unwrap_or(cfg.lr);
    cfg.momentum = flags.momentum.unwrap_or(cfg.momentum);
    cfg.weight_decay = flags.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.seed = flags.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn spec_sidecar(checkpoint: &Path) -> PathBuf {
    suffixed(checkpoint, ".spec")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|l| MotionClass::from_label(l).map_or_else(|| l.to_string(), |c| c.name().to_string())).collect()
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Runs one command, returning everything it prints to stdout.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Describe(a) => describe(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn describe(a: &DescribeArgs) -> Result<String> {
    let mut spec = ArchSpec::resolve(&a.spec)?;
    if let Some(t) = a.t {
        spec.snippets = t;
    }
    if let Some(n) = a.n {
        spec.frames = n;
    }
    if let Some(r) = a.res {
        spec.height = r;
        spec.width = r;
    }
    if let Some(k) = a.classes {
        spec.classes = k;
    }
    spec.validate()?;
    let report = analyze(&spec)?;
    Ok(emit_report(&report, if a.json { Format::Json } else { Format::Table }))
}

fn gen_data(a: &GenDataArgs) -> Result<String> {
    let base = SynthConfig { seed: default_seed()?, ..SynthConfig::default() };
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::parse_over(&read_text(p)?, &p.display().to_string(), base)?,
        None => base,
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.clips_per_class = a.clips_per_class.unwrap_or(cfg.clips_per_class);
    let clips = gen_synthetic(&cfg)?;
    write_dataset(&clips, &a.out)?;
    Ok(format!("seed: {}\nwrote {} clips ({} classes) to {}\n", cfg.seed, clips.len(), cfg.classes.len(), a.out.display()))
}

fn train_cmd(a: &TrainArgs) -> Result<String> {
    let cfg = resolve_train_config(&a.train)?;
    let spec = ArchSpec::resolve(&a.spec)?;
    let clips = read_dataset(&a.data)?;
    let mut model: Model32 = build_model(&spec, cfg.seed)?;
    let report = train(&mut model, &clips, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    fs::write(spec_sidecar(&a.out), spec.to_text())?;
    let csv = suffixed(&a.out, ".loss.csv");
    fs::write(&csv, report.loss_csv())?;
    let mut out = format!("seed: {}\n", cfg.seed);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        out += &format!("epoch {e}: mean loss {l:.6} (lr {})\n", cfg.lr_at(e));
    }
    out += &format!("final loss: {}\nwrote {} and {}\n", report.final_loss, a.out.display(), csv.display());
    Ok(out)
}

fn eval_cmd(a: &EvalArgs) -> Result<String> {
    let spec = match &a.spec {
        Some(s) => ArchSpec::resolve(s)?,
        None => {
            let side = spec_sidecar(&a.model);
            ArchSpec::parse(&read_text(&side)?, &side.display().to_string())?
        }
    };
    let model: Model32 = load_checkpoint(&spec, &a.model)?;
    let clips = read_dataset(&a.data)?;
    let m = evaluate(&model, &clips, a.batch_size)?;
    Ok(if a.json { json(&m) + "\n" } else { m.to_table(&class_names(spec.classes)) })
}

fn gradcheck(a: &GradcheckArgs) -> Result<String> {
    let seed = match a.seed {
        Some(s) => s,
        None => default_seed()?,
    };
    let ops: Vec<&str> = match &a.op {
        Some(op) => vec![op.as_str()],
        None => OP_NAMES.to_vec(),
    };
    let reports = ops.iter().map(|op| run_op_checks(op, a.instances, seed)).collect::<Result<Vec<_>>>()?;
    let failed: Vec<&str> = reports.iter().filter(|r| r.max_rel_error.is_nan() || r.max_rel_error >= 1e-4).map(|r| r.op.as_str()).collect();
    let out = if a.json {
        json(&serde_json::json!({ "seed": seed, "reports": reports })) + "\n"
    } else {
        let mut out = format!("seed: {seed}\n{:<22} {:>9} {:>11} {:>14}\n", "op", "instances", "coordinates", "max_rel_error");
        for r in &reports {
            out += &format!("{:<22} {:>9} {:>11} {:>14.3e}\n", r.op, r.instances, r.coordinates, r.max_rel_error);
        }
        out
    };
    if failed.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        Err(Error::InvalidArgument { op: "gradcheck", msg: format!("relative error >= 1e-4 for {}", failed.join(", ")) })
    }
}

fn ablate(a: &AblateArgs) -> Result<String> {
    let cfg = resolve_train_config(&a.train)?;
    let base = ArchSpec::resolve(&a.spec)?;
    let clips = read_dataset(&a.data)?;
    let (train_clips, test_clips) = split_dataset(&clips, a.test_fraction, cfg.seed);
    let report = run_ablation(&train_clips, &test_clips, &base, &cfg, &ABLATION_ROWS)?;
    fs::write(&a.out, json(&report))?;
    Ok(format!("seed: {}\n{}wrote {}\n", cfg.seed, report.to_table(), a.out.display()))
}

/// Parses `std::env::args`, runs the command and maps errors to exit code 1.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(out) => {
            print!("{out}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
