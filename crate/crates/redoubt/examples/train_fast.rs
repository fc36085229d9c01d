//! The whole training pipeline at smoke scale (8000 images, epochs 3/8/5):
//! reconstruction pretraining, adversarial co-training, both classifier
//! heads, and a test accuracy readout for each. Writes checkpoints and
//! metrics to runs/train-fast (override with the OUT env var). Takes a few
//! minutes; re-running resumes from the latest checkpoints.

use redoubt::config::RunConfig;
use redoubt::data::load_split;
use redoubt::eval::{classifier_accuracy, load_classifier_store};
use redoubt::train::{self, RunDirs, BASELINE_CLASSIFIER, ROBUST_CLASSIFIER};
use redoubt::Result;

fn main() -> Result<()> {
    let cfg = RunConfig {
        fast: true,
        out_dir: std::env::var("OUT").unwrap_or_else(|_| "runs/train-fast".into()).into(),
        ..RunConfig::default()
    };
    let tcfg = cfg.training_effective();

    let dirs = RunDirs::create(&cfg.out_dir)?;
    cfg.snapshot(&dirs.config_snapshot())?;
    let train_set = load_split(&cfg.data_dir_effective(), true)?;
    let test_set = load_split(&cfg.data_dir_effective(), false)?;

    println!("phase 1: independent reconstruction ({} epochs)", tcfg.epochs_init);
    train::phase1_init(&train_set, &tcfg, cfg.arch, &dirs)?;

    println!("phase 2: adversarial co-training ({} epochs)", tcfg.epochs_opt);
    train::phase2_robust(&train_set, &tcfg, cfg.arch, &dirs)?;

    println!("classifier on frozen robust features ({} epochs)", tcfg.epochs_classifier);
    let robust = train::train_classifier(&train_set, &tcfg, cfg.arch, &dirs, ROBUST_CLASSIFIER)?;
    let acc = classifier_accuracy(&load_classifier_store(&robust)?, cfg.arch, &test_set)?;
    println!("  robust test accuracy {:.2}%", acc * 100.0);

    println!("baseline: plain autoencoder + classifier");
    train::baseline_init(&train_set, &tcfg, cfg.arch, &dirs)?;
    let base = train::train_classifier(&train_set, &tcfg, cfg.arch, &dirs, BASELINE_CLASSIFIER)?;
    let acc = classifier_accuracy(&load_classifier_store(&base)?, cfg.arch, &test_set)?;
    println!("  baseline test accuracy {:.2}%", acc * 100.0);

    println!("checkpoints in {}", dirs.checkpoints().display());
    Ok(())
}
