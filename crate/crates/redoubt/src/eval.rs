//! Attack campaigns over the test-set prefix, per-image artifact
//! persistence, and the comparison reports.
//!
//! Every campaign writes a self-contained directory: `campaign.json`
//! with the aggregate numbers and per-image outcomes, `outcomes.csv`
//! for spreadsheets, and for each successful attack both a PNG (for
//! eyes) and the raw f64 pixels (for exact re-verification). Reports
//! are assembled purely from those files, so any claim in `report.csv`
//! can be recomputed from disk.

use crate::attacks::{
    argmax, bim, deepfool, fgsm, local_search, single_pixel, AttackOutcome, DeepfoolNorm,
    LocalSearchParams, TargetModel,
};
use crate::checkpoint;
use crate::data::MnistSet;
use crate::error::{Error, Result};
use crate::models::{ArchConfig, ClassifierModel};
use crate::nn::ParamStore;
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Euclidean distance between an image and its perturbed version. Not
/// the mean-squared error used in training; units differ.
pub fn noise_level(x: &Tensor, adv: &Tensor) -> Result<f64> {
    if x.dims() != adv.dims() {
        return Err(Error::Shape(format!(
            "noise_level shapes differ: {:?} vs {:?}",
            x.dims(),
            adv.dims()
        )));
    }
    Ok(x.dist2(adv).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// Rate over every evaluated image.
    All,
    /// Rate over images the model classified correctly before the attack.
    Correct,
}

impl Default for Denominator {
    fn default() -> Self {
        Denominator::Correct
    }
}

impl Denominator {
    pub fn parse(s: &str) -> Option<Denominator> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Some(Denominator::All),
            "correct" => Some(Denominator::Correct),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Denominator::All => "all",
            Denominator::Correct => "correct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Identity,
    Fgsm { eps: f64 },
    Bim { eps: f64, steps: u32 },
    Deepfool { norm: DeepfoolNorm, iters: u32, overshoot: f64 },
    SinglePixel { max_trials: usize },
    LocalSearch { rounds: u32, top_t: usize },
}

impl AttackSpec {
    pub fn fgsm_default() -> AttackSpec {
        AttackSpec::Fgsm { eps: 0.005 }
    }

    pub fn bim_default() -> AttackSpec {
        AttackSpec::Bim { eps: 0.005, steps: 10 }
    }

    pub fn deepfool_default(norm: DeepfoolNorm) -> AttackSpec {
        AttackSpec::Deepfool { norm, iters: 50, overshoot: 0.02 }
    }

    pub fn single_pixel_default() -> AttackSpec {
        AttackSpec::SinglePixel { max_trials: 100 }
    }

    pub fn local_search_default() -> AttackSpec {
        let p = LocalSearchParams::default();
        AttackSpec::LocalSearch { rounds: p.rounds, top_t: p.top_t }
    }

    /// The whole battery at published defaults.
    pub fn standard_suite() -> Vec<AttackSpec> {
        vec![
            AttackSpec::fgsm_default(),
            AttackSpec::bim_default(),
            AttackSpec::deepfool_default(DeepfoolNorm::L2),
            AttackSpec::deepfool_default(DeepfoolNorm::Linf),
            AttackSpec::single_pixel_default(),
            AttackSpec::local_search_default(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Identity => "identity",
            AttackSpec::Fgsm { .. } => "fgsm",
            AttackSpec::Bim { .. } => "bim",
            AttackSpec::Deepfool { .. } => "deepfool",
            AttackSpec::SinglePixel { .. } => "single_pixel",
            AttackSpec::LocalSearch { .. } => "local_search",
        }
    }

    /// Canonical parameter string used in reports and for pairing the
    /// robust and baseline sides.
    pub fn params(&self) -> String {
        match self {
            AttackSpec::Identity => String::new(),
            AttackSpec::Fgsm { eps } => format!("eps={eps}"),
            AttackSpec::Bim { eps, steps } => format!("eps={eps},steps={steps}"),
            AttackSpec::Deepfool { norm, iters, overshoot } => {
                format!("norm={},iters={iters},overshoot={overshoot}", norm.name())
            }
            AttackSpec::SinglePixel { max_trials } => format!("max_trials={max_trials}"),
            AttackSpec::LocalSearch { rounds, top_t } => format!("rounds={rounds},top_t={top_t}"),
        }
    }

    /// Directory-name-safe identity.
    pub fn slug(&self) -> String {
        let p = self.params().replace('=', "-").replace(',', "_");
        if p.is_empty() {
            self.name().to_string()
        } else {
            format!("{}_{p}", self.name())
        }
    }

    pub fn run(
        &self,
        model: &dyn TargetModel,
        x: &Tensor,
        y: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<AttackOutcome> {
        match self {
            AttackSpec::Identity => Ok(AttackOutcome::failed(y, 1)),
            AttackSpec::Fgsm { eps } => fgsm(model, x, y, *eps),
            AttackSpec::Bim { eps, steps } => {
                bim(model, x, y, *eps, *steps, eps / f64::from(*steps))
            }
            AttackSpec::Deepfool { norm, iters, overshoot } => {
                deepfool(model, x, y, *norm, *iters, *overshoot)
            }
            AttackSpec::SinglePixel { max_trials } => single_pixel(model, x, y, *max_trials, rng),
            AttackSpec::LocalSearch { rounds, top_t } => {
                let params = LocalSearchParams { rounds: *rounds, top_t: *top_t, ..Default::default() };
                local_search(model, x, y, &params, rng)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignSpec {
    /// Which trained model this is, e.g. "robust" or "baseline"; pairs
    /// rows in the comparison table.
    pub model_label: String,
    pub checkpoint: PathBuf,
    pub attack: AttackSpec,
    /// Evaluate the first `slice` test images.
    pub slice: usize,
    pub seed: u64,
    pub denominator: Denominator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageRecord {
    pub index: usize,
    pub original_label: usize,
    pub clean_correct: bool,
    pub attacked: bool,
    pub success: bool,
    pub adversarial_label: Option<usize>,
    pub noise: Option<f64>,
    pub queries_or_iters: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub model: String,
    pub attack: String,
    pub params: String,
    pub slice: usize,
    pub seed: u64,
    pub denominator: Denominator,
    pub n_evaluated: usize,
    pub n_correct_clean: usize,
    pub n_success: usize,
    pub success_rate_pct: f64,
    pub mean_noise: Option<f64>,
    pub outcomes: Vec<PerImageRecord>,
}

impl CampaignReport {
    pub fn denominator_count(&self) -> usize {
        match self.denominator {
            Denominator::All => self.n_evaluated,
            Denominator::Correct => self.n_correct_clean,
        }
    }
}

fn write_png(path: &Path, t: &Tensor) -> Result<()> {
    let d = t.dims();
    let (h, w) = (d[2] as u32, d[3] as u32);
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w, h, bytes)
        .ok_or_else(|| Error::Report("png buffer size mismatch".into()))?;
    img.save(path).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

fn write_raw_f64(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for v in t.data() {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads pixels persisted by `write_raw_f64` back into an image tensor.
pub fn read_raw_f64(path: &Path, dims: &[usize]) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let n: usize = dims.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::Report(format!(
            "{}: {} bytes, expected {}",
            path.display(),
            bytes.len(),
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::from_vec(dims, data)
}

/// Runs one attack over the slice with an already-built model. Artifacts
/// land in `campaigns_dir/<model>_<attack-slug>/`.
pub fn run_campaign_on(
    spec: &CampaignSpec,
    model: &dyn TargetModel,
    test: &MnistSet,
    campaigns_dir: &Path,
) -> Result<CampaignReport> {
    if spec.slice == 0 || test.is_empty() {
        return Err(Error::Report("campaign slice is empty".into()));
    }
    let slice = test.first_k(spec.slice);
    let dir = campaigns_dir.join(format!("{}_{}", spec.model_label, spec.attack.slug()));
    let adv_dir = dir.join("adv");
    fs::create_dir_all(&adv_dir)?;

    let mut outcomes = Vec::with_capacity(slice.len());
    let mut n_correct = 0usize;
    let mut n_success = 0usize;
    let mut noise_sum = 0.0f64;
    for i in 0..slice.len() {
        let x = slice.image(i);
        let y = slice.labels[i] as usize;
        let clean = argmax(model.logits(&x)?.data());
        if clean != y {
            outcomes.push(PerImageRecord {
                index: i,
                original_label: y,
                clean_correct: false,
                attacked: false,
                success: false,
                adversarial_label: None,
                noise: None,
                queries_or_iters: 0,
            });
            continue;
        }
        n_correct += 1;
        let mut rng = stream_rng(spec.seed, i as u64);
        let out = spec.attack.run(model, &x, y, &mut rng)?;
        if out.success {
            n_success += 1;
            noise_sum += out.noise.expect("noise accompanies success");
            let adv = out.adversarial.as_ref().expect("image accompanies success");
            write_png(&adv_dir.join(format!("{i:04}.png")), adv)?;
            write_raw_f64(&adv_dir.join(format!("{i:04}.f64")), adv)?;
        }
        outcomes.push(PerImageRecord {
            index: i,
            original_label: y,
            clean_correct: true,
            attacked: true,
            success: out.success,
            adversarial_label: out.adversarial_label,
            noise: out.noise,
            queries_or_iters: out.queries_or_iters,
        });
    }

    let denom = match spec.denominator {
        Denominator::All => slice.len(),
        Denominator::Correct => n_correct,
    };
    let report = CampaignReport {
        model: spec.model_label.clone(),
        attack: spec.attack.name().to_string(),
        params: spec.attack.params(),
        slice: spec.slice,
        seed: spec.seed,
        denominator: spec.denominator,
        n_evaluated: slice.len(),
        n_correct_clean: n_correct,
        n_success,
        success_rate_pct: if denom == 0 { 0.0 } else { 100.0 * n_success as f64 / denom as f64 },
        mean_noise: if n_success == 0 { None } else { Some(noise_sum / n_success as f64) },
        outcomes,
    };

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Report(format!("campaign.json: {e}")))?;
    fs::write(dir.join("campaign.json"), json)?;
    write_outcomes_csv(&dir.join("outcomes.csv"), &report.outcomes)?;
    Ok(report)
}

/// Loads the checkpoint, builds the classifier, runs the campaign.
pub fn run_campaign(
    spec: &CampaignSpec,
    arch: ArchConfig,
    test: &MnistSet,
    campaigns_dir: &Path,
) -> Result<CampaignReport> {
    let store = load_classifier_store(&spec.checkpoint)?;
    let model = ClassifierModel::new(&store, arch);
    run_campaign_on(spec, &model, test, campaigns_dir)
}

/// A checkpoint that must contain both the defender encoder and a
/// trained classifier head.
pub fn load_classifier_store(path: &Path) -> Result<ParamStore> {
    let store = checkpoint::load_params(path)?;
    for required in ["defender.encoder.conv1.weight", "classifier.fc1.weight"] {
        if store.get(required).is_err() {
            return Err(Error::Checkpoint(format!(
                "{}: missing {required}; train-classifier must run first",
                path.display()
            )));
        }
    }
    Ok(store)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_outcomes_csv(path: &Path, outcomes: &[PerImageRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| Error::Report(format!("outcomes.csv: {e}"));
    w.write_record([
        "index",
        "original_label",
        "clean_correct",
        "attacked",
        "success",
        "adversarial_label",
        "noise",
        "queries_or_iters",
    ])
    .map_err(fail)?;
    for o in outcomes {
        w.write_record([
            o.index.to_string(),
            o.original_label.to_string(),
            o.clean_correct.to_string(),
            o.attacked.to_string(),
            o.success.to_string(),
            fmt_opt_usize(o.adversarial_label),
            fmt_opt_f64(o.noise),
            o.queries_or_iters.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-checks every persisted success in a campaign directory: the raw
/// adversarial must still be classified as the recorded flipped label.
/// Returns (verified, mismatches).
pub fn verify_campaign(dir: &Path, model: &dyn TargetModel) -> Result<(usize, usize)> {
    let text = fs::read_to_string(dir.join("campaign.json"))?;
    let report: CampaignReport =
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("campaign.json: {e}")))?;
    let mut verified = 0;
    let mut mismatches = 0;
    for o in report.outcomes.iter().filter(|o| o.success) {
        let adv = read_raw_f64(
            &dir.join("adv").join(format!("{:04}.f64", o.index)),
            &[1, 1, crate::models::IMAGE_HW, crate::models::IMAGE_HW],
        )?;
        if adv.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            mismatches += 1;
            continue;
        }
        let label = argmax(model.logits(&adv)?.data());
        if Some(label) == o.adversarial_label && label != o.original_label {
            verified += 1;
        } else {
            mismatches += 1;
        }
    }
    Ok((verified, mismatches))
}

/// All campaign.json files under the campaigns directories given, in a
/// stable order.
pub fn collect_campaigns(campaign_dirs: &[PathBuf]) -> Result<Vec<CampaignReport>> {
    let mut found: Vec<PathBuf> = Vec::new();
    for root in campaign_dirs {
        if !root.is_dir() {
            continue;
        }
        for entry in fs::read_dir(root)? {
            let p = entry?.path().join("campaign.json");
            if p.is_file() {
                found.push(p);
            }
        }
    }
    found.sort();
    let mut reports = Vec::with_capacity(found.len());
    for p in found {
        let text = fs::read_to_string(&p)?;
        reports.push(
            serde_json::from_str(&text)
                .map_err(|e| Error::Report(format!("{}: {e}", p.display())))?,
        );
    }
    Ok(reports)
}

fn report_sort_key(r: &CampaignReport) -> (String, String, String) {
    (r.attack.clone(), r.params.clone(), r.model.clone())
}

/// Writes report.csv / report.json (one row per campaign), and when both
/// a robust and a baseline side exist, compare.csv / compare.json plus
/// plot_points.csv. Returns the sorted rows.
pub fn compare_report(mut reports: Vec<CampaignReport>, out_dir: &Path) -> Result<Vec<CampaignReport>> {
    reports.sort_by_key(report_sort_key);
    let fail = |e: csv::Error| Error::Report(format!("report.csv: {e}"));

    let mut w = csv::Writer::from_path(out_dir.join("report.csv"))
        .map_err(|e| Error::Report(format!("report.csv: {e}")))?;
    w.write_record([
        "attack",
        "params",
        "model",
        "denominator",
        "n",
        "n_success",
        "success_rate_pct",
        "mean_noise",
    ])
    .map_err(fail)?;
    for r in &reports {
        w.write_record([
            r.attack.clone(),
            r.params.clone(),
            r.model.clone(),
            r.denominator.name().to_string(),
            r.denominator_count().to_string(),
            r.n_success.to_string(),
            format!("{}", r.success_rate_pct),
            fmt_opt_f64(r.mean_noise),
        ])
        .map_err(fail)?;
    }
    w.flush()?;

    let slim: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "attack": r.attack,
                "params": r.params,
                "model": r.model,
                "denominator": r.denominator.name(),
                "n": r.denominator_count(),
                "n_evaluated": r.n_evaluated,
                "n_correct_clean": r.n_correct_clean,
                "n_success": r.n_success,
                "success_rate_pct": r.success_rate_pct,
                "mean_noise": r.mean_noise,
            })
        })
        .collect();
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&slim).map_err(|e| Error::Report(e.to_string()))?,
    )?;

    let robust: Vec<&CampaignReport> = reports.iter().filter(|r| r.model == "robust").collect();
    let baseline: Vec<&CampaignReport> = reports.iter().filter(|r| r.model == "baseline").collect();
    if !robust.is_empty() && !baseline.is_empty() {
        let key = |r: &CampaignReport| (r.attack.clone(), r.params.clone());
        let rk: Vec<_> = robust.iter().map(|r| key(r)).collect();
        let bk: Vec<_> = baseline.iter().map(|r| key(r)).collect();
        if rk != bk {
            return Err(Error::Report(format!(
                "attack specs differ between models: robust ran {rk:?}, baseline ran {bk:?}"
            )));
        }
        let mut w = csv::Writer::from_path(out_dir.join("compare.csv"))
            .map_err(|e| Error::Report(format!("compare.csv: {e}")))?;
        w.write_record([
            "attack",
            "params",
            "robust_success_rate_pct",
            "robust_mean_noise",
            "baseline_success_rate_pct",
            "baseline_mean_noise",
        ])
        .map_err(fail)?;
        let mut compare_rows = Vec::new();
        for (r, b) in robust.iter().zip(&baseline) {
            w.write_record([
                r.attack.clone(),
                r.params.clone(),
                format!("{}", r.success_rate_pct),
                fmt_opt_f64(r.mean_noise),
                format!("{}", b.success_rate_pct),
                fmt_opt_f64(b.mean_noise),
            ])
            .map_err(fail)?;
            compare_rows.push(serde_json::json!({
                "attack": r.attack,
                "params": r.params,
                "robust": {"success_rate_pct": r.success_rate_pct, "mean_noise": r.mean_noise},
                "baseline": {"success_rate_pct": b.success_rate_pct, "mean_noise": b.mean_noise},
            }));
        }
        w.flush()?;
        fs::write(
            out_dir.join("compare.json"),
            serde_json::to_string_pretty(&compare_rows).map_err(|e| Error::Report(e.to_string()))?,
        )?;
    }

    let mut w = csv::Writer::from_path(out_dir.join("plot_points.csv"))
        .map_err(|e| Error::Report(format!("plot_points.csv: {e}")))?;
    w.write_record(["series", "x", "y"]).map_err(fail)?;
    for r in &reports {
        let series = if r.params.is_empty() {
            format!("{}:{}", r.model, r.attack)
        } else {
            format!("{}:{}({})", r.model, r.attack, r.params)
        };
        w.write_record([
            series,
            format!("{}", r.success_rate_pct),
            format!("{}", r.mean_noise.unwrap_or(0.0)),
        ])
        .map_err(fail)?;
    }
    w.flush()?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub iters: u32,
    pub n: usize,
    pub n_success: usize,
    pub success_rate_pct: f64,
    pub mean_noise: Option<f64>,
}

/// Success rate as a function of the iteration budget. One trajectory
/// per image at the largest budget; the outcome under a smaller budget b
/// is "succeeded within b steps", which makes the series monotone by
/// construction and saves re-running the attack per budget.
pub fn deepfool_sweep(
    model: &dyn TargetModel,
    test: &MnistSet,
    slice: usize,
    norm: DeepfoolNorm,
    budgets: &[u32],
    denominator: Denominator,
) -> Result<Vec<SweepPoint>> {
    if budgets.is_empty() {
        return Ok(Vec::new());
    }
    let max_budget = *budgets.iter().max().expect("nonempty budgets");
    let slice_set = test.first_k(slice);
    let mut per_image: Vec<Option<(u32, f64)>> = Vec::new();
    let mut n_correct = 0usize;
    for i in 0..slice_set.len() {
        let x = slice_set.image(i);
        let y = slice_set.labels[i] as usize;
        if argmax(model.logits(&x)?.data()) != y {
            continue;
        }
        n_correct += 1;
        let out = deepfool(model, &x, y, norm, max_budget, 0.02)?;
        per_image.push(out.success.then(|| {
            (out.queries_or_iters, out.noise.expect("noise accompanies success"))
        }));
    }

    let denom = match denominator {
        Denominator::All => slice_set.len(),
        Denominator::Correct => n_correct,
    };
    let mut points = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let hits: Vec<f64> = per_image
            .iter()
            .filter_map(|o| o.filter(|(it, _)| *it <= b).map(|(_, noise)| noise))
            .collect();
        points.push(SweepPoint {
            iters: b,
            n: denom,
            n_success: hits.len(),
            success_rate_pct: if denom == 0 { 0.0 } else { 100.0 * hits.len() as f64 / denom as f64 },
            mean_noise: if hits.is_empty() {
                None
            } else {
                Some(hits.iter().sum::<f64>() / hits.len() as f64)
            },
        });
    }
    Ok(points)
}

/// Appends sweep points so robust and baseline series share one file.
/// The header is written only when the file is new.
pub fn write_sweep_csv(
    path: &Path,
    model_label: &str,
    norm: DeepfoolNorm,
    points: &[SweepPoint],
) -> Result<()> {
    let fresh = !path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    let fail = |e: csv::Error| Error::Report(format!("sweep.csv: {e}"));
    if fresh {
        w.write_record(["model", "norm", "iters", "n", "n_success", "success_rate_pct", "mean_noise"])
            .map_err(fail)?;
    }
    for p in points {
        w.write_record([
            model_label.to_string(),
            norm.name().to_string(),
            p.iters.to_string(),
            p.n.to_string(),
            p.n_success.to_string(),
            format!("{}", p.success_rate_pct),
            fmt_opt_f64(p.mean_noise),
        ])
        .map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}

/// Share of the set the classifier labels correctly.
pub fn classifier_accuracy(store: &ParamStore, arch: ArchConfig, set: &MnistSet) -> Result<f64> {
    let model = ClassifierModel::new(store, arch);
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut hits = 0usize;
    for chunk in idx.chunks(512) {
        let x = set.gather(chunk);
        let logits = model.logits(&x)?;
        let classes = logits.dims()[1];
        for (row, &i) in chunk.iter().enumerate() {
            if argmax(&logits.data()[row * classes..(row + 1) * classes]) == set.labels[i] as usize {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / set.len() as f64)
}
