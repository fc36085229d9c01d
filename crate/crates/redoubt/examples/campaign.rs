//! Runs one attack campaign over a test slice, persists the per-image
//! artifacts (PNG + raw f64 pixels for every success), then re-verifies
//! each persisted adversarial from disk the way an auditor would. Run the
//! train_fast example first, or pass a checkpoint path.

use redoubt::config::RunConfig;
use redoubt::data::load_split;
use redoubt::eval::{
    load_classifier_store, run_campaign_on, verify_campaign, AttackSpec, CampaignSpec, Denominator,
};
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

    let spec = CampaignSpec {
        model_label: "robust".into(),
        checkpoint: ckpt,
        attack: AttackSpec::deepfool_default(redoubt::attacks::DeepfoolNorm::L2),
        slice: 200,
        seed: 0,
        denominator: Denominator::Correct,
    };
    let store = load_classifier_store(&spec.checkpoint)?;
    let model = ClassifierModel::new(&store, ArchConfig::default());
    let test = load_split(&RunConfig::default().data_dir_effective(), false)?;

    println!("running {} ({}) on {} images", spec.attack.name(), spec.attack.params(), spec.slice);
    let report = run_campaign_on(&spec, &model, &test, &dirs.campaigns())?;
    println!(
        "success {}/{} ({:.2}%), mean noise {}",
        report.n_success,
        report.denominator_count(),
        report.success_rate_pct,
        report.mean_noise.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
    );

    let dir = dirs.campaigns().join(format!("{}_{}", spec.model_label, spec.attack.slug()));
    let (verified, mismatches) = verify_campaign(&dir, &model)?;
    println!("re-verified from disk: {verified} ok, {mismatches} mismatched");
    println!("artifacts in {}", dir.display());
    Ok(())
}
