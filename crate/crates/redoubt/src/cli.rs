//! Command-line surface. Each subcommand binds config, data, and one
//! pipeline stage into a reproducible run; flags override config-file
//! values and the effective config is snapshotted into the output
//! directory before any work starts.

use crate::attacks::DeepfoolNorm;
use crate::config::RunConfig;
use crate::data::{self, MnistSet};
use crate::error::{Error, Result};
use crate::eval::{self, AttackSpec, CampaignSpec, Denominator};
use crate::models::ClassifierModel;
use crate::train::{self, RunDirs, BASELINE_CLASSIFIER, PHASE_BASELINE_CLASSIFIER, PHASE_CLASSIFIER, ROBUST_CLASSIFIER};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "redoubt", version, about = "Robust feature training and attack evaluation on MNIST")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run config; flags below override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, metrics, and reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// MNIST directory (else REDOUBT_DATA_DIR, else data/mnist).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Master seed for training and campaigns.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Smoke-scale schedule: 8000 train images, epochs (3, 8, 5).
    #[arg(long, global = true)]
    fast: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phase 1: both autoencoders learn plain reconstruction.
    TrainInit,
    /// Phase 2: adversarial co-training from the phase-1 checkpoint.
    TrainRobust,
    /// Classifier head over frozen robust defender features.
    TrainClassifier,
    /// The conventional twin: plain autoencoder plus classifier head.
    TrainBaseline,
    /// Attack campaigns against a trained classifier.
    Attack(AttackArgs),
    /// DeepFool success rate versus iteration budget, appended to sweep.csv.
    Sweep(SweepArgs),
    /// Merge campaign results into report.csv and the comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// "robust", "baseline", or a checkpoint path.
    #[arg(long, default_value = "robust")]
    model: String,
    /// Model label in reports; inferred from --model when omitted.
    #[arg(long)]
    label: Option<String>,
    /// fgsm, bim, deepfool, single_pixel, local_search, identity, or
    /// "all" for the configured suite.
    #[arg(long, default_value = "all")]
    attack: String,
    /// Perturbation bound for fgsm / bim.
    #[arg(long)]
    eps: Option<f64>,
    /// Iteration count for bim.
    #[arg(long)]
    steps: Option<u32>,
    /// deepfool norm: l2 or linf.
    #[arg(long)]
    norm: Option<String>,
    /// Iteration budget for deepfool.
    #[arg(long)]
    iters: Option<u32>,
    /// Boundary overshoot for deepfool.
    #[arg(long)]
    overshoot: Option<f64>,
    /// Pixel budget for single_pixel.
    #[arg(long)]
    max_trials: Option<usize>,
    /// Round budget for local_search.
    #[arg(long)]
    rounds: Option<u32>,
    /// Pixels perturbed per local_search round.
    #[arg(long)]
    top_t: Option<usize>,
    /// Evaluate the first N test images.
    #[arg(long)]
    slice: Option<usize>,
    /// Success-rate denominator: all or correct.
    #[arg(long)]
    denominator: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// "robust", "baseline", or a checkpoint path.
    #[arg(long, default_value = "robust")]
    model: String,
    /// Series label in sweep.csv; inferred from --model when omitted.
    #[arg(long)]
    label: Option<String>,
    /// l2 or linf.
    #[arg(long, default_value = "linf")]
    norm: String,
    /// Comma-separated iteration budgets.
    #[arg(long, default_value = "50,100,200")]
    iters: String,
    /// Evaluate the first N test images.
    #[arg(long)]
    slice: Option<usize>,
    /// Success-rate denominator: all or correct.
    #[arg(long)]
    denominator: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Campaign directories to merge; defaults to <out>/campaigns.
    #[arg(long = "dir", value_name = "DIR")]
    dirs: Vec<PathBuf>,
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn effective_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = &global.data {
        cfg.data_dir = Some(data.clone());
    }
    if let Some(seed) = global.seed {
        cfg.seed = Some(seed);
    }
    if global.fast {
        cfg.fast = true;
    }
    Ok(cfg)
}

fn prepare(cfg: &RunConfig) -> Result<RunDirs> {
    let dirs = RunDirs::create(&cfg.out_dir)?;
    cfg.snapshot(&dirs.config_snapshot())?;
    Ok(dirs)
}

fn load_train(cfg: &RunConfig) -> Result<MnistSet> {
    data::load_split(&cfg.data_dir_effective(), true)
}

fn load_test(cfg: &RunConfig) -> Result<MnistSet> {
    data::load_split(&cfg.data_dir_effective(), false)
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = effective_config(&cli.global)?;
    match cli.command {
        Command::TrainInit => {
            let dirs = prepare(&cfg)?;
            let tcfg = cfg.training_effective();
            let ckpt = train::phase1_init(&load_train(&cfg)?, &tcfg, cfg.arch, &dirs)?;
            println!("phase init done: {}", ckpt.display());
            Ok(())
        }
        Command::TrainRobust => {
            let dirs = prepare(&cfg)?;
            let tcfg = cfg.training_effective();
            let ckpt = train::phase2_robust(&load_train(&cfg)?, &tcfg, cfg.arch, &dirs)?;
            println!("phase robust done: {}", ckpt.display());
            Ok(())
        }
        Command::TrainClassifier => {
            let dirs = prepare(&cfg)?;
            let tcfg = cfg.training_effective();
            let ckpt = train::train_classifier(&load_train(&cfg)?, &tcfg, cfg.arch, &dirs, ROBUST_CLASSIFIER)?;
            report_accuracy(&cfg, &ckpt, "robust")?;
            Ok(())
        }
        Command::TrainBaseline => {
            let dirs = prepare(&cfg)?;
            let tcfg = cfg.training_effective();
            let train_set = load_train(&cfg)?;
            train::baseline_init(&train_set, &tcfg, cfg.arch, &dirs)?;
            let ckpt = train::train_classifier(&train_set, &tcfg, cfg.arch, &dirs, BASELINE_CLASSIFIER)?;
            report_accuracy(&cfg, &ckpt, "baseline")?;
            Ok(())
        }
        Command::Attack(args) => cmd_attack(&cfg, &args),
        Command::Sweep(args) => cmd_sweep(&cfg, &args),
        Command::Report(args) => cmd_report(&cfg, &args),
    }
}

fn report_accuracy(cfg: &RunConfig, ckpt: &std::path::Path, label: &str) -> Result<()> {
    let store = eval::load_classifier_store(ckpt)?;
    let acc = eval::classifier_accuracy(&store, cfg.arch, &load_test(cfg)?)?;
    println!("{label} classifier done: {} (test accuracy {:.2}%)", ckpt.display(), acc * 100.0);
    Ok(())
}

/// Maps --model to (checkpoint path, report label). The shorthand names
/// pick the newest classifier checkpoint of that pipeline in the output
/// directory.
fn resolve_model(dirs: &RunDirs, model: &str, label: Option<&str>) -> Result<(PathBuf, String)> {
    let (path, inferred) = match model {
        "robust" => {
            let Some((_, path)) = dirs.latest_checkpoint(PHASE_CLASSIFIER)? else {
                return Err(Error::Checkpoint("classifier checkpoint required; run train-classifier first".into()));
            };
            (path, "robust")
        }
        "baseline" => {
            let Some((_, path)) = dirs.latest_checkpoint(PHASE_BASELINE_CLASSIFIER)? else {
                return Err(Error::Checkpoint("baseline classifier checkpoint required; run train-baseline first".into()));
            };
            (path, "baseline")
        }
        other => {
            let path = PathBuf::from(other);
            if !path.is_file() {
                return Err(Error::Checkpoint(format!("{other}: no such checkpoint")));
            }
            (path, "")
        }
    };
    let label = match label {
        Some(l) => l.to_string(),
        None if inferred.is_empty() => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into()),
        None => inferred.to_string(),
    };
    Ok((path, label))
}

const ATTACK_NAMES: &str = "fgsm, bim, deepfool, single_pixel, local_search, identity, all";

/// Which override flags were passed, by flag name.
fn set_overrides(a: &AttackArgs) -> Vec<&'static str> {
    let mut set = Vec::new();
    if a.eps.is_some() {
        set.push("--eps");
    }
    if a.steps.is_some() {
        set.push("--steps");
    }
    if a.norm.is_some() {
        set.push("--norm");
    }
    if a.iters.is_some() {
        set.push("--iters");
    }
    if a.overshoot.is_some() {
        set.push("--overshoot");
    }
    if a.max_trials.is_some() {
        set.push("--max-trials");
    }
    if a.rounds.is_some() {
        set.push("--rounds");
    }
    if a.top_t.is_some() {
        set.push("--top-t");
    }
    set
}

fn parse_norm(s: &str) -> CliResult<DeepfoolNorm> {
    DeepfoolNorm::parse(s).ok_or_else(|| usage(format!("unknown norm \"{s}\"; valid: l2, linf")))
}

fn parse_denominator(flag: Option<&str>, fallback: Denominator) -> CliResult<Denominator> {
    match flag {
        None => Ok(fallback),
        Some(s) => Denominator::parse(s)
            .ok_or_else(|| usage(format!("unknown denominator \"{s}\"; valid: all, correct"))),
    }
}

/// Expands --attack into concrete specs, folding in parameter overrides.
fn resolve_attacks(cfg: &RunConfig, args: &AttackArgs) -> CliResult<Vec<AttackSpec>> {
    let set = set_overrides(args);
    let accepted: &[&str] = match args.attack.as_str() {
        "all" | "identity" => &[],
        "fgsm" => &["--eps"],
        "bim" => &["--eps", "--steps"],
        "deepfool" => &["--norm", "--iters", "--overshoot"],
        "single_pixel" => &["--max-trials"],
        "local_search" => &["--rounds", "--top-t"],
        other => {
            return Err(usage(format!("unknown attack \"{other}\"; valid: {ATTACK_NAMES}")));
        }
    };
    if let Some(stray) = set.iter().find(|f| !accepted.contains(f)) {
        return Err(usage(format!("{stray} does not apply to --attack {}", args.attack)));
    }
    let specs = match args.attack.as_str() {
        "all" => cfg.attacks.clone(),
        "identity" => vec![AttackSpec::Identity],
        "fgsm" => {
            let AttackSpec::Fgsm { eps } = AttackSpec::fgsm_default() else { unreachable!() };
            vec![AttackSpec::Fgsm { eps: args.eps.unwrap_or(eps) }]
        }
        "bim" => {
            let AttackSpec::Bim { eps, steps } = AttackSpec::bim_default() else { unreachable!() };
            vec![AttackSpec::Bim {
                eps: args.eps.unwrap_or(eps),
                steps: args.steps.unwrap_or(steps),
            }]
        }
        "deepfool" => {
            let norm = match &args.norm {
                Some(s) => parse_norm(s)?,
                None => DeepfoolNorm::L2,
            };
            let AttackSpec::Deepfool { iters, overshoot, .. } = AttackSpec::deepfool_default(norm)
            else {
                unreachable!()
            };
            vec![AttackSpec::Deepfool {
                norm,
                iters: args.iters.unwrap_or(iters),
                overshoot: args.overshoot.unwrap_or(overshoot),
            }]
        }
        "single_pixel" => {
            let AttackSpec::SinglePixel { max_trials } = AttackSpec::single_pixel_default() else {
                unreachable!()
            };
            vec![AttackSpec::SinglePixel { max_trials: args.max_trials.unwrap_or(max_trials) }]
        }
        "local_search" => {
            let AttackSpec::LocalSearch { rounds, top_t } = AttackSpec::local_search_default()
            else {
                unreachable!()
            };
            vec![AttackSpec::LocalSearch {
                rounds: args.rounds.unwrap_or(rounds),
                top_t: args.top_t.unwrap_or(top_t),
            }]
        }
        _ => unreachable!("name validated above"),
    };
    Ok(specs)
}

fn cmd_attack(cfg: &RunConfig, args: &AttackArgs) -> CliResult<()> {
    let attacks = resolve_attacks(cfg, args)?;
    let slice = args.slice.unwrap_or(cfg.slice);
    if slice == 0 {
        return Err(usage("--slice must be at least 1"));
    }
    let denominator = parse_denominator(args.denominator.as_deref(), cfg.denominator)?;

    let mut snap = cfg.clone();
    snap.attacks = attacks.clone();
    snap.slice = slice;
    snap.denominator = denominator;
    let dirs = prepare(&snap)?;

    let (ckpt, label) = resolve_model(&dirs, &args.model, args.label.as_deref())?;
    let store = eval::load_classifier_store(&ckpt)?;
    let model = ClassifierModel::new(&store, cfg.arch);
    let test = load_test(cfg)?;

    for attack in attacks {
        let spec = CampaignSpec {
            model_label: label.clone(),
            checkpoint: ckpt.clone(),
            attack,
            slice,
            seed: cfg.seed_effective(),
            denominator,
        };
        let report = eval::run_campaign_on(&spec, &model, &test, &dirs.campaigns())?;
        let noise = report
            .mean_noise
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "{} {}({}) success {}/{} ({:.2}%), mean noise {noise}",
            report.model,
            report.attack,
            report.params,
            report.n_success,
            report.denominator_count(),
            report.success_rate_pct,
        );
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> CliResult<()> {
    let norm = parse_norm(&args.norm)?;
    let mut budgets = Vec::new();
    for part in args.iters.split(',') {
        let n: u32 = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad --iters entry \"{part}\"")))?;
        if n == 0 {
            return Err(usage("--iters budgets must be at least 1"));
        }
        budgets.push(n);
    }
    let slice = args.slice.unwrap_or(cfg.slice);
    let denominator = parse_denominator(args.denominator.as_deref(), cfg.denominator)?;

    let dirs = prepare(cfg)?;
    let (ckpt, label) = resolve_model(&dirs, &args.model, args.label.as_deref())?;
    let store = eval::load_classifier_store(&ckpt)?;
    let model = ClassifierModel::new(&store, cfg.arch);
    let test = load_test(cfg)?;

    let points = eval::deepfool_sweep(&model, &test, slice, norm, &budgets, denominator)?;
    eval::write_sweep_csv(&dirs.root().join("sweep.csv"), &label, norm, &points)?;
    for p in &points {
        println!(
            "{label} deepfool {} iters={} success {}/{} ({:.2}%)",
            norm.name(),
            p.iters,
            p.n_success,
            p.n,
            p.success_rate_pct,
        );
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig, args: &ReportArgs) -> CliResult<()> {
    let dirs = prepare(cfg)?;
    let roots = if args.dirs.is_empty() { vec![dirs.campaigns()] } else { args.dirs.clone() };
    let reports = eval::collect_campaigns(&roots)?;
    let rows = eval::compare_report(reports, dirs.root())?;
    println!("report.csv: {} campaign rows", rows.len());
    for r in &rows {
        let noise = r.mean_noise.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "  {} ({}) {}: {:.2}% of {}, mean noise {noise}",
            r.attack,
            r.params,
            r.model,
            r.success_rate_pct,
            r.denominator_count(),
        );
    }
    Ok(())
}
