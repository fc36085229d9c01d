//! DeepFool success rate as a function of the iteration budget. One
//! trajectory per image is computed at the largest budget and every
//! smaller budget is read off the step counts, so the curve is monotone by
//! construction. Run the train_fast example first, or pass a checkpoint.

use redoubt::attacks::DeepfoolNorm;
use redoubt::config::RunConfig;
use redoubt::data::load_split;
use redoubt::eval::{deepfool_sweep, load_classifier_store, write_sweep_csv, Denominator};
use redoubt::models::{ArchConfig, ClassifierModel};
use redoubt::train::{RunDirs, PHASE_CLASSIFIER};
use redoubt::{Error, Result};

fn main() -> Result<()> {
    let dirs = RunDirs::create("runs/train-fast".as_ref())?;
    let ckpt = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let Some((_, path)) = dirs.latest_checkpoint(PHASE_CLASSIFIER)? else {
                return Err(Error::Checkpoint(
                    "no classifier checkpoint under runs/train-fast; run the train_fast example first".into(),
                ));
            };
            path
        }
    };

    let store = load_classifier_store(&ckpt)?;
    let model = ClassifierModel::new(&store, ArchConfig::default());
    let test = load_split(&RunConfig::default().data_dir_effective(), false)?;

    let budgets = [5, 10, 25, 50];
    let points = deepfool_sweep(&model, &test, 200, DeepfoolNorm::Linf, &budgets, Denominator::Correct)?;
    for p in &points {
        println!(
            "iters {:>3}: success {:>3}/{} ({:5.2}%), mean noise {}",
            p.iters,
            p.n_success,
            p.n,
            p.success_rate_pct,
            p.mean_noise.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
        );
    }
    let out = dirs.root().join("sweep.csv");
    write_sweep_csv(&out, "robust", DeepfoolNorm::Linf, &points)?;
    println!("appended to {}", out.display());
    Ok(())
}
