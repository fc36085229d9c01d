//! Crafts adversarial versions of one test digit against a trained
//! classifier, with FGSM and DeepFool L2, and reports what each attack
//! needed. Run the train_fast example first (or pass a checkpoint path as
//! the first argument); the image index is the optional second argument.

use redoubt::attacks::{deepfool, fgsm, DeepfoolNorm};
use redoubt::config::RunConfig;
use redoubt::data::load_split;
use redoubt::eval::load_classifier_store;
use redoubt::models::{ArchConfig, ClassifierModel};
use redoubt::train::{RunDirs, PHASE_CLASSIFIER};
use redoubt::{Error, Result};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = match args.get(1) {
        Some(p) => p.clone().into(),
        None => {
            let dirs = RunDirs::create("runs/train-fast".as_ref())?;
            let Some((_, path)) = dirs.latest_checkpoint(PHASE_CLASSIFIER)? else {
                return Err(Error::Checkpoint(
                    "no classifier checkpoint under runs/train-fast; run the train_fast example first".into(),
                ));
            };
            path
        }
    };
    let index: usize = args.get(2).map(|s| s.parse().expect("image index")).unwrap_or(0);

    let store = load_classifier_store(&ckpt)?;
    let arch = ArchConfig::default();
    let model = ClassifierModel::new(&store, arch);
    let test = load_split(&RunConfig::default().data_dir_effective(), false)?;
    let x = test.image(index);
    let y = test.labels[index] as usize;
    println!("checkpoint {}", ckpt.display());
    println!("image #{index}, true label {y}");

    let logits = model.logits(&x)?;
    let pred = redoubt::attacks::argmax(logits.data());
    println!("clean prediction: {pred}");
    if pred != y {
        println!("already misclassified; nothing to attack");
        return Ok(());
    }

    for eps in [0.005, 0.05, 0.2] {
        let out = fgsm(&model, &x, y, eps)?;
        match out.adversarial_label {
            Some(adv) if out.success => {
                println!("fgsm eps={eps}: {y} -> {adv}, noise {:.4}", out.noise.unwrap_or(0.0))
            }
            _ => println!("fgsm eps={eps}: no flip"),
        }
    }

    let out = deepfool(&model, &x, y, DeepfoolNorm::L2, 50, 0.02)?;
    if out.success {
        println!(
            "deepfool l2: {y} -> {} in {} steps, noise {:.4}",
            out.adversarial_label.expect("label on success"),
            out.queries_or_iters,
            out.noise.expect("noise on success"),
        );
    } else {
        println!("deepfool l2: no flip within 50 iterations");
    }
    Ok(())
}
