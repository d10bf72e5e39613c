//! Command-line front end: budget profiling, gradient checking, training,
//! evaluation, the four-variant context ablation, and spec export.
//!
//! Every command is deterministic for a fixed --seed. The process exits 0
//! only when everything requested succeeded, including budget windows and
//! gradient tolerances; flags are long-form only so published command
//! lines stay unambiguous.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cotnet::gradcheck::{standard_suite, SUITE_SEEDS};
use cotnet::models::{self, build_model, specfile, ModelSpec};
use cotnet::profile::{
    budget_line, budget_table_csv, budget_table_passes, budget_table_text,
};
use cotnet::train::checkpoint::{load_checkpoint, save_checkpoint};
use cotnet::train::data::{DataSource, DiskDataset, Split, ToyDataset};
use cotnet::train::{
    ablation_variants, evaluate, metrics_to_csv, train, TrainConfig, TrainData,
};

#[derive(Parser)]
#[command(name = "cotnet", version, about = "Contextual-attention network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count parameters and MACs, compare against published budgets
    Profile(ProfileArgs),
    /// Finite-difference gradient checks over the operator suite
    Gradcheck(GradcheckArgs),
    /// Train a model on synthetic gratings or an on-disk image tree
    Train(TrainArgs),
    /// Evaluate a saved checkpoint
    Eval(EvalArgs),
    /// Train the four tiny context variants and tabulate them
    Ablate(AblateArgs),
    /// Print the canonical spec document for a model
    ExportSpec(ExportSpecArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Args)]
struct OutArg {
    /// Directory for output artifacts
    #[arg(long, env = "COTNET_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// Comma-separated model names or spec-file paths
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Single model name or spec-file path; may repeat
    #[arg(long)]
    model: Vec<String>,
    /// Square input extent in pixels
    #[arg(long, default_value_t = 224)]
    input: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct GradcheckArgs {
    /// "all" or comma-separated check names
    #[arg(long, default_value = "all")]
    ops: String,
    /// Element type; finite differences are only meaningful at 64-bit
    #[arg(long, default_value = "f64",
          value_parser = clap::builder::PossibleValuesParser::new(["f64"]))]
    dtype: String,
    /// Base seed; each check runs five consecutive seeds from here
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Canonical model name or path to a spec file
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Reference rate at batch 256; the peak rate is lr * batch / 256
    #[arg(long, default_value_t = 0.8)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-step EMA decay for a shadow copy of the weights, e.g. 0.9999
    #[arg(long)]
    ema: Option<f64>,
    /// Override attention normalization inside the contextual units
    #[arg(long, value_enum)]
    softmax_attn: Option<OnOff>,
    /// Swap contextual units into chosen stages of a plain conv model:
    /// four 0/1 digits for res2..res5, e.g. 0011
    #[arg(long)]
    stage_flags: Option<String>,
    /// Directory of per-class image folders; omit for synthetic data
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override crop/flip jitter (defaults on for --data, off otherwise)
    #[arg(long, value_enum)]
    augment: Option<OnOff>,
    /// Synthetic train split size
    #[arg(long, default_value_t = 256)]
    train_len: usize,
    /// Synthetic val split size
    #[arg(long, default_value_t = 64)]
    val_len: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate the EMA shadow weights instead of the raw parameters
    #[arg(long)]
    ema: bool,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Directory of per-class image folders; omit for synthetic data
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic val split size
    #[arg(long, default_value_t = 64)]
    val_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.8)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic train split size
    #[arg(long, default_value_t = 256)]
    train_len: usize,
    /// Synthetic val split size
    #[arg(long, default_value_t = 64)]
    val_len: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ExportSpecArgs {
    /// Canonical model name
    model: String,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Profile(a) => run_profile(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Train(a) => run_train(a).map(|()| true),
        Command::Eval(a) => run_eval(a).map(|()| true),
        Command::Ablate(a) => run_ablate(a),
        Command::ExportSpec(a) => {
            print!("{}", specfile::export_spec(&models::canonical(&a.model)?));
            Ok(true)
        }
    }
}

/// A model argument is either a registry name or a spec-file path; stage
/// replacement and the softmax override then rewrite the parsed spec.
fn resolve_spec(
    model: &str,
    softmax_attn: Option<OnOff>,
    stage_flags: Option<&str>,
) -> Result<ModelSpec> {
    let mut spec = if models::canonical_names().iter().any(|n| *n == model) {
        models::canonical(model)?
    } else if Path::new(model).is_file() {
        let text = fs::read_to_string(model)
            .with_context(|| format!("reading spec file {model}"))?;
        specfile::parse_spec(&text).with_context(|| format!("parsing {model}"))?
    } else {
        bail!(
            "'{model}' is neither a canonical model nor a spec file; known models: {}",
            models::canonical_names().join(", ")
        );
    };
    if let Some(flags) = stage_flags {
        spec = models::stage_replacement_variants(&spec, parse_stage_flags(flags)?)?;
    }
    if let Some(sm) = softmax_attn {
        spec.cot.softmax_attn = sm.into();
    }
    Ok(spec)
}

fn parse_stage_flags(s: &str) -> Result<[bool; 4]> {
    let digits: Vec<char> =
        s.chars().filter(|c| *c != ',' && !c.is_whitespace()).collect();
    if digits.len() != 4 || digits.iter().any(|c| *c != '0' && *c != '1') {
        bail!("--stage-flags wants four 0/1 digits for res2..res5, e.g. 0011; got '{s}'");
    }
    Ok([digits[0] == '1', digits[1] == '1', digits[2] == '1', digits[3] == '1'])
}

fn run_profile(a: ProfileArgs) -> Result<bool> {
    let mut names = a.models;
    names.extend(a.model);
    fs::create_dir_all(&a.out.out)
        .with_context(|| format!("creating {}", a.out.out.display()))?;

    let mut lines = Vec::new();
    for name in &names {
        let spec = resolve_spec(name, None, None)?;
        let net = build_model::<f32>(&spec, 0)?;
        let report = net.cost_report(a.input)?;
        let path = a.out.out.join(format!("profile_{}.csv", spec.name));
        fs::write(&path, report.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
        lines.push(budget_line(&report));
    }
    let table = a.out.out.join("budget_table.csv");
    fs::write(&table, budget_table_csv(&lines))
        .with_context(|| format!("writing {}", table.display()))?;
    print!("{}", budget_table_text(&lines));
    println!("wrote {}", table.display());
    Ok(budget_table_passes(&lines))
}

fn run_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let suite = standard_suite();
    let wanted: Option<Vec<&str>> = if a.ops == "all" {
        None
    } else {
        let names: Vec<&str> =
            a.ops.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        for name in &names {
            if !suite.iter().any(|c| c.name == *name) {
                bail!(
                    "unknown op '{name}'; valid names: {}",
                    suite.iter().map(|c| c.name).collect::<Vec<_>>().join(", ")
                );
            }
        }
        Some(names)
    };
    let seeds: Vec<u64> = match a.seed {
        Some(s) => (s..s + SUITE_SEEDS.len() as u64).collect(),
        None => SUITE_SEEDS.to_vec(),
    };

    let mut checks = 0usize;
    let mut failures = 0usize;
    for case in &suite {
        if let Some(w) = &wanted {
            if !w.contains(&case.name) {
                continue;
            }
        }
        for &seed in &seeds {
            let report = case.run(seed)?;
            println!("{report}");
            checks += 1;
            if !report.passed() {
                failures += 1;
            }
        }
    }
    if failures == 0 {
        println!("{checks} checks at {}: all passed", a.dtype);
    } else {
        println!("{failures} of {checks} checks FAILED");
    }
    Ok(failures == 0)
}

fn train_config(
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
    train_len: usize,
    val_len: usize,
) -> TrainConfig {
    TrainConfig {
        epochs,
        batch,
        base_lr: lr,
        seed,
        train_len,
        val_len,
        ..TrainConfig::default()
    }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let spec = resolve_spec(&a.model, a.softmax_attn, a.stage_flags.as_deref())?;
    let mut cfg = train_config(a.epochs, a.batch, a.lr, a.seed, a.train_len, a.val_len);
    cfg.ema_decay = a.ema;
    cfg.augment = a.augment.map(bool::from);
    let data = match &a.data {
        Some(dir) => TrainData::from_dir(dir)?,
        None => TrainData::synthetic(&cfg),
    };

    let net = build_model::<f32>(&spec, cfg.seed)?;
    println!(
        "training {}: {} train / {} val samples, {} classes, {} epochs, peak lr {:.4}",
        spec.name,
        data.train.len(),
        data.val.len(),
        data.train.classes(),
        cfg.epochs,
        cfg.peak_lr()
    );
    let outcome = train(&net, &cfg, &data, |r| {
        println!("  epoch {:>3} {:<5} loss {:.4} top1 {:.4}", r.epoch, r.split, r.loss, r.top1);
    })?;

    fs::create_dir_all(&a.out.out)
        .with_context(|| format!("creating {}", a.out.out.display()))?;
    let metrics = a.out.out.join("metrics.csv");
    fs::write(&metrics, metrics_to_csv(&outcome.rows))
        .with_context(|| format!("writing {}", metrics.display()))?;
    let ckpt = a.out.out.join(format!("{}.ckpt", spec.name));
    save_checkpoint(
        &ckpt,
        &net,
        Some(&outcome.optimizer),
        outcome.ema.as_ref(),
        &outcome.rng,
        cfg.epochs as u32,
    )?;
    println!("wrote {} and {}", metrics.display(), ckpt.display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let loaded = load_checkpoint::<f32>(&a.checkpoint)?;
    let net = loaded.network;
    if a.ema {
        let ema = loaded
            .ema
            .ok_or_else(|| anyhow::anyhow!("checkpoint holds no EMA shadow"))?;
        ema.apply(&net.parameters());
    }
    let source = match &a.data {
        Some(dir) => DataSource::Disk(DiskDataset::open(dir, Split::Val)?),
        None => DataSource::Toy(ToyDataset::new(Split::Val, a.val_len, a.seed)),
    };
    if source.classes() != net.spec.classes {
        bail!(
            "model '{}' expects {} classes but the data provides {}",
            net.spec.name,
            net.spec.classes,
            source.classes()
        );
    }
    // Same smoothing as the trainer's val rows, so numbers line up.
    let (loss, top1) = evaluate(&net, &source, a.batch, 0.1)?;
    println!(
        "{} epoch {}{}: val loss {:.6} top1 {:.4} ({} samples)",
        net.spec.name,
        loaded.epoch,
        if a.ema { " (EMA weights)" } else { "" },
        loss,
        top1,
        source.len()
    );
    Ok(())
}

/// Published 50-layer ImageNet top-1 figures for the four context
/// variants, embedded for side-by-side display; desk-scale runs are not
/// expected to reproduce them.
const PUBLISHED_ABLATION_TOP1: [f64; 4] = [77.1, 78.5, 78.7, 79.2];

fn run_ablate(a: AblateArgs) -> Result<bool> {
    let cfg = train_config(a.epochs, a.batch, a.lr, a.seed, a.train_len, a.val_len);
    let data = TrainData::synthetic(&cfg);

    println!(
        "{:<26} {:>9} {:>12} {:>9} {:>15}",
        "variant", "params", "train_loss", "val_top1", "published_top1"
    );
    let mut csv =
        String::from("variant,params,final_train_loss,final_val_top1,published_imagenet_top1\n");
    let mut all_finite = true;
    for (spec, published) in ablation_variants().iter().zip(PUBLISHED_ABLATION_TOP1) {
        let net = build_model::<f32>(spec, cfg.seed)?;
        let outcome = train(&net, &cfg, &data, |_| {})?;
        let last_train = outcome.rows.iter().rev().find(|r| r.split == "train").unwrap();
        let last_val = outcome.rows.iter().rev().find(|r| r.split == "val").unwrap();
        all_finite &= last_train.loss.is_finite();
        println!(
            "{:<26} {:>9} {:>12.4} {:>9.4} {:>15.1}",
            spec.name,
            net.param_count(),
            last_train.loss,
            last_val.top1,
            published
        );
        csv.push_str(&format!(
            "{},{},{:.6},{:.4},{:.1}\n",
            spec.name,
            net.param_count(),
            last_train.loss,
            last_val.top1,
            published
        ));
    }
    println!(
        "published_top1: ImageNet top-1 reported for these variants at 50-layer \
scale; included for orientation only, not reproducible by these runs"
    );
    fs::create_dir_all(&a.out.out)
        .with_context(|| format!("creating {}", a.out.out.display()))?;
    let path = a.out.out.join("ablation.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(all_finite)
}
