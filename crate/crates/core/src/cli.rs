//! Command-line front end: `train`, `eval`, `ablate`, `dump-features` and
//! `synth-data`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical abort.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aer::{write_synthetic_dataset, SynthParams, ARCHETYPES};
use crate::cbam::AttentionKind;
use crate::checkpoint::{self, Checkpoint};
use crate::config::{Attention, Config, LifMode};
use crate::convlstm::GateMask;
use crate::error::{Error, Result};
use crate::features::{default_steps, dump_features};
use crate::model::Model;
use crate::train::{evaluate, load_split, train, write_history_csv, Dataset, EpochMetrics};

#[derive(Debug, Parser)]
#[command(name = "srnn", version, about = "Spiking ConvLSTM with spiking attention on event streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics.csv plus checkpoints.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the gate-placement, threshold and time-step ablations.
    Ablate(RunArgs),
    /// Export hidden feature maps of one sample.
    DumpFeatures(DumpArgs),
    /// Write a synthetic gesture dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file; defaults apply to missing keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed override (same as --set seed=N).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset root: `<root>/<class>/<id>.aer`, optionally under train/ and test/.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Output directory for all artifacts.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint manifest (or its stem).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset root; its test/ folder is used when present.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to load; without it a freshly initialised model is used.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Index of the sample (in dataset order) to visualise.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Comma-separated time steps [default: 0,5,10,15,T-1 within range].
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Samples, assigned to classes round-robin.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Extra samples written to a separate test/ split (with train/ for the rest).
    #[arg(long, default_value_t = 0)]
    pub test_samples: usize,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 200_000)]
    pub duration_us: u32,
    /// Per-pixel, per-tick probability of a noise event.
    #[arg(long, default_value_t = 0.002)]
    pub noise: f64,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Config::parse(&text)?
            }
            None => Config::default(),
        };
        for kv in &self.overrides {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| Error::config(kv.as_str(), "override must be KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = args.config.resolve()?;
            run_training(&cfg, &args.data, &args.out, true).map(|_| ())
        }
        Command::Eval(args) => run_eval(args),
        Command::Ablate(args) => {
            let cfg = args.config.resolve()?;
            run_ablation(&cfg, &args.data, &args.out)
        }
        Command::DumpFeatures(args) => run_dump(args),
        Command::SynthData(args) => run_synth(args),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn checkpoint_of(cfg: &Config, m: &EpochMetrics) -> Checkpoint {
    let mut metrics = BTreeMap::from([("loss".to_string(), m.loss), ("train_acc".to_string(), m.train_acc)]);
    if let Some(v) = m.val_acc {
        metrics.insert("val_acc".into(), v);
    }
    Checkpoint { config: cfg.clone(), epoch: m.epoch, metrics }
}

/// Trains under `out`: `config.txt`, `metrics.csv`, periodic
/// `checkpoint_eNNNN.*` files and the final `model.*`.
pub fn run_training(
    cfg: &Config,
    data: &Path,
    out: &Path,
    verbose: bool,
) -> Result<(Model, Vec<EpochMetrics>)> {
    let (train_set, val_set) = load_split(data, &cfg.model, cfg.train.val_fraction)?;
    create_dir(out)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let mut model = Model::build(&cfg.model, cfg.train.seed)?;
    let every = cfg.train.checkpoint_every;
    let history = train(&mut model, &train_set, &val_set, &cfg.train, |m, model| {
        if verbose {
            let val = m.val_acc.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            println!("epoch {:>4}  loss {:.5}  train_acc {:.4}  val_acc {val}", m.epoch, m.loss, m.train_acc);
        }
        if every > 0 && m.epoch % every == 0 {
            checkpoint::save(
                &out.join(format!("checkpoint_e{:04}", m.epoch)),
                model,
                &checkpoint_of(cfg, m),
            )?;
        }
        Ok(())
    })?;
    write_history_csv(&out.join("metrics.csv"), &history)?;
    let last = history.last().cloned().unwrap_or(EpochMetrics {
        epoch: 0,
        loss: f64::NAN,
        train_acc: 0.0,
        val_acc: None,
    });
    checkpoint::save(&out.join("model"), &model, &checkpoint_of(cfg, &last))?;
    Ok((model, history))
}

fn evaluation_set(data: &Path, model: &Model) -> Result<Dataset> {
    let test = data.join("test");
    let root = if test.is_dir() { test } else { data.to_path_buf() };
    let (all, _) = load_split(&root, &model.config, 0.0)?;
    Ok(all)
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let set = evaluation_set(&args.data, &model)?;
    let ev = evaluate(&model, &set, args.batch_size)?;
    create_dir(&args.out)?;
    let mut report = format!("accuracy,{}\nloss,{}\n", ev.accuracy, ev.loss);
    for (c, acc) in ev.per_class.iter().enumerate() {
        let name = set.class_names.get(c).map_or("", String::as_str);
        let _ = writeln!(report, "class_{c}_{name},{acc}");
    }
    write(&args.out.join("eval.csv"), &report)?;
    let confusion: String = ev
        .confusion
        .iter()
        .map(|row| row.iter().map(usize::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    write(&args.out.join("confusion.csv"), &confusion)?;
    println!("accuracy {:.4} on {} samples", ev.accuracy, set.len());
    Ok(())
}

/// One run of the ablation study.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub group: &'static str,
    pub config: Config,
}

/// Gate placement and attention kind, trainable thresholds under both LIF
/// schedules, then the time-step sweep. Every run uses `ablate_epochs`.
pub fn ablation_plan(base: &Config) -> Vec<AblationRun> {
    let mut runs = Vec::new();
    let mut variant = |group: &'static str, edit: &dyn Fn(&mut Config)| {
        let mut cfg = base.clone();
        cfg.train.epochs = base.train.ablate_epochs;
        edit(&mut cfg);
        runs.push(AblationRun { group, config: cfg });
    };
    let placements: [(Attention, &str); 7] = [
        (Attention::None, "000"),
        (Attention::Kind(AttentionKind::Analog), "100"),
        (Attention::Kind(AttentionKind::Spiking), "011"),
        (Attention::Kind(AttentionKind::Spiking), "111"),
        (Attention::Kind(AttentionKind::Spiking), "100"),
        (Attention::Kind(AttentionKind::Spiking), "110"),
        (Attention::Kind(AttentionKind::Spiking), "010"),
    ];
    for (attention, mask) in placements {
        let mask: GateMask = mask.parse().expect("valid mask literal");
        variant("gates", &|c| {
            c.model.attention = attention;
            c.model.gate_mask = mask;
        });
    }
    let proposed = |c: &mut Config| {
        c.model.attention = Attention::Kind(AttentionKind::Spiking);
        c.model.gate_mask = GateMask::FORGET;
    };
    for mode in [LifMode::SingleStep, LifMode::MultiStep] {
        variant("threshold", &|c| {
            proposed(c);
            c.model.v_th_trainable = true;
            c.model.lif_mode = mode;
        });
    }
    for t in [10, 15, 20, 25] {
        variant("time_steps", &|c| {
            proposed(c);
            c.model.time_steps = t;
        });
    }
    runs
}

pub const ABLATION_HEADER: &str =
    "group,attention,gate_mask,v_th_trainable,lif_mode,time_steps,epochs,params,loss,train_acc,val_acc";

fn run_ablation(base: &Config, data: &Path, out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut table = format!("{ABLATION_HEADER}\n");
    let plan = ablation_plan(base);
    for (i, run) in plan.iter().enumerate() {
        let m = &run.config.model;
        let dir = out.join(format!("run_{i:02}"));
        println!(
            "[{}/{}] {} attention={} mask={} trainable_v_th={} lif={} T={}",
            i + 1,
            plan.len(),
            run.group,
            m.attention,
            m.effective_mask(),
            m.v_th_trainable,
            m.lif_mode,
            m.time_steps
        );
        let (model, history) = run_training(&run.config, data, &dir, false)?;
        let last = history.last();
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{}",
            run.group,
            m.attention,
            m.effective_mask(),
            m.v_th_trainable,
            m.lif_mode,
            m.time_steps,
            run.config.train.epochs,
            model.num_parameters(),
            fmt(last.map(|l| l.loss)),
            fmt(last.map(|l| l.train_acc)),
            fmt(last.and_then(|l| l.val_acc)),
        );
    }
    write(&out.join("ablation.csv"), &table)?;
    println!("wrote {}", out.join("ablation.csv").display());
    Ok(())
}

fn run_dump(args: &DumpArgs) -> Result<()> {
    let model = match &args.checkpoint {
        Some(path) => checkpoint::load(path)?.0,
        None => {
            let cfg = args.config.resolve()?;
            Model::build(&cfg.model, cfg.train.seed)?
        }
    };
    let set = evaluation_set(&args.data, &model)?;
    let sample = set.samples.get(args.sample).ok_or_else(|| {
        Error::Data(format!("sample {} out of range, dataset has {}", args.sample, set.len()))
    })?;
    let steps =
        if args.steps.is_empty() { default_steps(model.config.time_steps) } else { args.steps.clone() };
    let dump = dump_features(&model, &sample.frames, &steps, &args.out)?;
    for (k, s) in &dump.sparsity {
        println!("step {k:>3}  sparsity {s:.4}");
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    if args.classes == 0 || args.classes > ARCHETYPES.len() {
        return Err(Error::config("classes", format!("must be in 1..={}", ARCHETYPES.len())));
    }
    let params = SynthParams {
        width: args.width,
        height: args.height,
        duration_us: args.duration_us,
        noise_prob: args.noise,
        ..SynthParams::default()
    };
    if args.test_samples == 0 {
        write_synthetic_dataset(&args.out, args.classes, args.samples, args.seed, &params)?;
    } else {
        write_synthetic_dataset(&args.out.join("train"), args.classes, args.samples, args.seed, &params)?;
        // Offset seeds so test streams never repeat training streams.
        let test_seed = args.seed.wrapping_add(args.samples as u64);
        write_synthetic_dataset(&args.out.join("test"), args.classes, args.test_samples, test_seed, &params)?;
    }
    println!("wrote {} samples to {}", args.samples + args.test_samples, args.out.display());
    Ok(())
}
