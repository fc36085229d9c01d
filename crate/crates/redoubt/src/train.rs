//! Training schedules: reconstruction pretraining for both autoencoders,
//! the adversarial co-training phase, classifier fitting on frozen
//! features, and the conventional baseline.
//!
//! Every phase is resumable: each epoch ends with a checkpoint carrying
//! parameters, optimizer moments, and the exact RNG position, so a
//! re-run continues bit-identically from the last saved epoch. A NaN in
//! any loss aborts the phase with the previous checkpoint intact.

use crate::checkpoint::{self, Checkpoint};
use crate::data::MnistSet;
use crate::error::{Error, Result};
use crate::models::{freeze_for_phase2, ArchConfig, Autoencoder, ClassifierHead};
use crate::nn::{AdamParams, AdamState, Binding, ParamStore};
use crate::rng::{
    save_state, stream_rng, STREAM_BASELINE, STREAM_BASELINE_CLASSIFIER, STREAM_CLASSIFIER,
    STREAM_INIT, STREAM_PHASE1, STREAM_PHASE2,
};
use crate::tensor::{Tape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const PHASE_INIT: &str = "init";
pub const PHASE_ROBUST: &str = "robust";
pub const PHASE_CLASSIFIER: &str = "classifier";
pub const PHASE_BASELINE_INIT: &str = "baseline_init";
pub const PHASE_BASELINE_CLASSIFIER: &str = "baseline_classifier";

pub const OPT_ATTACKER: &str = "attacker";
pub const OPT_DEFENDER: &str = "defender";
pub const OPT_CLASSIFIER: &str = "classifier";

/// Reconstruction distance. Only the squared (L2) form is implemented;
/// the field exists so configs can state it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossKind {
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub beta: f64,
    pub loss_kind: LossKind,
    pub lr_defender_init: f64,
    pub lr_defender_opt: f64,
    pub lr_attacker_init: f64,
    pub lr_attacker_opt: f64,
    pub epochs_init: u32,
    pub epochs_opt: u32,
    pub epochs_classifier: u32,
    pub lr_classifier: f64,
    pub batch: usize,
    pub seed: u64,
    /// Train on only the first k images (fast mode). None = full set.
    pub train_limit: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            gamma: 5.0,
            beta: 0.01,
            loss_kind: LossKind::L2,
            lr_defender_init: 5e-4,
            lr_defender_opt: 1e-5,
            lr_attacker_init: 1e-3,
            lr_attacker_opt: 1e-5,
            epochs_init: 9,
            epochs_opt: 31,
            epochs_classifier: 20,
            lr_classifier: 1e-3,
            batch: 128,
            seed: 0,
            train_limit: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("lr_defender_init", self.lr_defender_init),
            ("lr_defender_opt", self.lr_defender_opt),
            ("lr_attacker_init", self.lr_attacker_init),
            ("lr_attacker_opt", self.lr_attacker_opt),
            ("lr_classifier", self.lr_classifier),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Training(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch == 0 {
            return Err(Error::Training("batch must be at least 1".into()));
        }
        if self.train_limit == Some(0) {
            return Err(Error::Training("train_limit must be at least 1".into()));
        }
        Ok(())
    }

    /// The reduced smoke-test schedule: 8000 images, epochs (3, 8, 5).
    /// The classifier head gets a hotter learning rate so its five epochs
    /// converge far enough to be a meaningful smoke signal.
    pub fn apply_fast(&mut self) {
        self.train_limit = Some(8000);
        self.epochs_init = 3;
        self.epochs_opt = 8;
        self.epochs_classifier = 5;
        self.lr_classifier = 6e-3;
    }
}

/// Output directory layout shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct RunDirs {
    root: PathBuf,
}

impl RunDirs {
    pub fn create(root: &Path) -> Result<RunDirs> {
        let dirs = RunDirs { root: root.to_path_buf() };
        fs::create_dir_all(dirs.checkpoints())?;
        fs::create_dir_all(dirs.campaigns())?;
        Ok(dirs)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn campaigns(&self) -> PathBuf {
        self.root.join("campaigns")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn checkpoint_path(&self, phase: &str, epoch: u32) -> PathBuf {
        self.checkpoints().join(format!("{phase}_{epoch}.ckpt"))
    }

    /// Highest-epoch checkpoint of a phase, if any.
    pub fn latest_checkpoint(&self, phase: &str) -> Result<Option<(u32, PathBuf)>> {
        let dir = self.checkpoints();
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best: Option<(u32, PathBuf)> = None;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_suffix(".ckpt") else { continue };
            let Some(ep) = stem.strip_prefix(&format!("{phase}_")) else { continue };
            let Ok(ep) = ep.parse::<u32>() else { continue };
            if best.as_ref().is_none_or(|(b, _)| ep > *b) {
                best = Some((ep, path));
            }
        }
        Ok(best)
    }

    /// Keeps the two most recent epochs of a phase, removes the rest.
    fn prune_checkpoints(&self, phase: &str, newest: u32) -> Result<()> {
        for entry in fs::read_dir(self.checkpoints())? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_suffix(".ckpt") else { continue };
            let Some(ep) = stem.strip_prefix(&format!("{phase}_")) else { continue };
            let Ok(ep) = ep.parse::<u32>() else { continue };
            if ep + 1 < newest {
                fs::remove_file(&path)?;
            }
        }
        Ok(())
    }
}

/// One metrics.csv row. Empty optionals are left blank in the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub epoch: u32,
    pub phase: String,
    pub attacker_loss: Option<f64>,
    pub defender_loss: Option<f64>,
    pub classifier_loss: Option<f64>,
    pub penalty_active_fraction: Option<f64>,
    pub defense_in_band_fraction: Option<f64>,
}

const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "phase",
    "attacker_loss",
    "defender_loss",
    "classifier_loss",
    "penalty_active_fraction",
    "defense_in_band_fraction",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn append_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    let fresh = !path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    let fail = |e: csv::Error| Error::Report(format!("{}: {e}", path.display()));
    if fresh {
        w.write_record(METRICS_HEADER).map_err(fail)?;
    }
    w.write_record([
        row.epoch.to_string(),
        row.phase.clone(),
        fmt_opt(row.attacker_loss),
        fmt_opt(row.defender_loss),
        fmt_opt(row.classifier_loss),
        fmt_opt(row.penalty_active_fraction),
        fmt_opt(row.defense_in_band_fraction),
    ])
    .map_err(fail)?;
    w.flush()?;
    Ok(())
}

/// Reads metrics back, keeping the last row per (phase, epoch) so resumed
/// runs do not double-count.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    let parse = |s: &str| -> Option<f64> { if s.is_empty() { None } else { s.parse().ok() } };
    let mut rows: Vec<MetricsRow> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(Error::Report(format!("{}: malformed row", path.display())));
        }
        let row = MetricsRow {
            epoch: rec[0].parse().map_err(|_| Error::Report(format!("bad epoch {}", &rec[0])))?,
            phase: rec[1].to_string(),
            attacker_loss: parse(&rec[2]),
            defender_loss: parse(&rec[3]),
            classifier_loss: parse(&rec[4]),
            penalty_active_fraction: parse(&rec[5]),
            defense_in_band_fraction: parse(&rec[6]),
        };
        if let Some(prev) = rows.iter_mut().find(|r| r.phase == row.phase && r.epoch == row.epoch) {
            *prev = row;
        } else {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("{what} became {v}; last checkpoint retained")))
    }
}

/// Weighted running mean, weights being batch sizes.
#[derive(Default)]
struct Mean {
    sum: f64,
    n: f64,
}

impl Mean {
    fn add(&mut self, v: f64, weight: usize) {
        self.sum = (weight as f64).mul_add(v, self.sum);
        self.n += weight as f64;
    }

    fn get(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            self.sum / self.n
        }
    }
}

struct PhaseState {
    store: ParamStore,
    rng: ChaCha8Rng,
    optimizers: Vec<(String, AdamState)>,
    start_epoch: u32,
}

impl PhaseState {
    fn from_checkpoint(ck: Checkpoint) -> Result<PhaseState> {
        let rng = crate::rng::restore_state(&ck.rng)?;
        Ok(PhaseState { store: ck.store, rng, optimizers: ck.optimizers, start_epoch: ck.epoch })
    }
}

fn save_epoch(
    dirs: &RunDirs,
    phase: &str,
    epoch: u32,
    state: &PhaseState,
) -> Result<PathBuf> {
    let path = dirs.checkpoint_path(phase, epoch);
    let rng_state = save_state(&state.rng);
    let opts: Vec<(&str, &AdamState)> =
        state.optimizers.iter().map(|(n, s)| (n.as_str(), s)).collect();
    checkpoint::save(&path, phase, epoch, &state.store, &rng_state, &opts)?;
    dirs.prune_checkpoints(phase, epoch)?;
    Ok(path)
}

/// Resumes a phase from its newest checkpoint or initializes it, then
/// runs the per-epoch closure up to `epochs`, checkpointing after each.
fn run_phase(
    dirs: &RunDirs,
    phase: &str,
    epochs: u32,
    fresh: impl FnOnce() -> Result<PhaseState>,
    mut epoch_fn: impl FnMut(&mut PhaseState, u32) -> Result<MetricsRow>,
) -> Result<PathBuf> {
    let mut state = match dirs.latest_checkpoint(phase)? {
        Some((_, path)) => PhaseState::from_checkpoint(checkpoint::load(&path)?)?,
        None => {
            let st = fresh()?;
            save_epoch(dirs, phase, 0, &st)?;
            st
        }
    };
    let mut path = dirs.checkpoint_path(phase, state.start_epoch);
    for epoch in state.start_epoch + 1..=epochs {
        let row = epoch_fn(&mut state, epoch)?;
        append_metrics(&dirs.metrics(), &row)?;
        path = save_epoch(dirs, phase, epoch, &state)?;
    }
    Ok(path)
}

fn limited<'a>(full: &'a MnistSet, cfg: &TrainingConfig, holder: &'a mut Option<MnistSet>) -> &'a MnistSet {
    match cfg.train_limit {
        Some(k) if k < full.len() => holder.insert(full.first_k(k)),
        _ => full,
    }
}

/// One optimizer step minimizing mse(model(x), x) for a single
/// autoencoder. Returns the loss value.
fn recon_step(
    store: &mut ParamStore,
    model: &Autoencoder,
    x: &Tensor,
    noise: Option<Tensor>,
    opt: &mut AdamState,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bind = Binding::bind(&mut tape, store, &[&format!("{}.", model.prefix)], true);
    let xv = tape.constant(x.clone());
    let nv = noise.map(|n| tape.constant(n));
    let (_, recon) = model.forward(&mut tape, &bind, xv, nv)?;
    let loss = tape.mse_loss(recon, xv)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    bind.flush_grads(&tape, store)?;
    opt.step(store, &format!("{}.", model.prefix))?;
    check_finite(&format!("{} reconstruction loss", model.prefix), value)
}

/// Phase 1: both autoencoders trained independently on plain
/// reconstruction, the constraint ignored.
pub fn phase1_init(full: &MnistSet, cfg: &TrainingConfig, arch: ArchConfig, dirs: &RunDirs) -> Result<PathBuf> {
    cfg.validate()?;
    let mut holder = None;
    let data = limited(full, cfg, &mut holder);
    let attacker = Autoencoder::attacker(arch);
    let defender = Autoencoder::defender(arch);

    let fresh = || -> Result<PhaseState> {
        let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
        let mut store = ParamStore::new();
        attacker.init_params(&mut store, &mut init_rng);
        defender.init_params(&mut store, &mut init_rng);
        Ok(PhaseState {
            store,
            rng: stream_rng(cfg.seed, STREAM_PHASE1),
            optimizers: vec![
                (OPT_ATTACKER.into(), AdamState::new(AdamParams::with_lr(cfg.lr_attacker_init))),
                (OPT_DEFENDER.into(), AdamState::new(AdamParams::with_lr(cfg.lr_defender_init))),
            ],
            start_epoch: 0,
        })
    };

    run_phase(dirs, PHASE_INIT, cfg.epochs_init, fresh, |state, epoch| {
        let mut att_mean = Mean::default();
        let mut def_mean = Mean::default();
        for idx in data.shuffled_batches(&mut state.rng, cfg.batch) {
            let x = data.gather(&idx);
            let noise = attacker.draw_noise(&mut state.rng, idx.len());
            let (att_opt, def_opt) = two_optimizers(&mut state.optimizers);
            let la = recon_step(&mut state.store, &attacker, &x, Some(noise), att_opt)?;
            let ld = recon_step(&mut state.store, &defender, &x, None, def_opt)?;
            att_mean.add(la, idx.len());
            def_mean.add(ld, idx.len());
        }
        Ok(MetricsRow {
            epoch,
            phase: PHASE_INIT.into(),
            attacker_loss: Some(att_mean.get()),
            defender_loss: Some(def_mean.get()),
            ..MetricsRow::default()
        })
    })
}

fn two_optimizers(opts: &mut [(String, AdamState)]) -> (&mut AdamState, &mut AdamState) {
    let (a, b) = opts.split_at_mut(1);
    (&mut a[0].1, &mut b[0].1)
}

/// Phase 2: per batch, an attacker step on the penalized loss, then a
/// defender step on freshly generated adversarials. Only the attacker
/// generator and defender encoder move; the rest is frozen.
pub fn phase2_robust(full: &MnistSet, cfg: &TrainingConfig, arch: ArchConfig, dirs: &RunDirs) -> Result<PathBuf> {
    cfg.validate()?;
    let mut holder = None;
    let data = limited(full, cfg, &mut holder);
    let attacker = Autoencoder::attacker(arch);
    let defender = Autoencoder::defender(arch);

    let fresh = || -> Result<PhaseState> {
        let Some((_, path)) = dirs.latest_checkpoint(PHASE_INIT)? else {
            return Err(Error::Checkpoint("phase1 checkpoint required".into()));
        };
        let ck = checkpoint::load(&path)?;
        let mut store = ck.store;
        freeze_for_phase2(&mut store)?;
        Ok(PhaseState {
            store,
            rng: stream_rng(cfg.seed, STREAM_PHASE2),
            optimizers: vec![
                (OPT_ATTACKER.into(), AdamState::new(AdamParams::with_lr(cfg.lr_attacker_opt))),
                (OPT_DEFENDER.into(), AdamState::new(AdamParams::with_lr(cfg.lr_defender_opt))),
            ],
            start_epoch: 0,
        })
    };

    run_phase(dirs, PHASE_ROBUST, cfg.epochs_opt, fresh, |state, epoch| {
        let mut att_mean = Mean::default();
        let mut def_mean = Mean::default();
        let mut active = 0usize;
        let mut in_band = 0usize;
        let mut batches = 0usize;
        for idx in data.shuffled_batches(&mut state.rng, cfg.batch) {
            let x = data.gather(&idx);

            let la = {
                let mut tape = Tape::new();
                let bind_att = Binding::bind(&mut tape, &state.store, &["attacker."], true);
                let bind_def = Binding::bind(&mut tape, &state.store, &["defender."], false);
                let xv = tape.constant(x.clone());
                let noise = tape.constant(attacker.draw_noise(&mut state.rng, idx.len()));
                let (_, adv) = attacker.forward(&mut tape, &bind_att, xv, Some(noise))?;
                let (_, def_recon) = defender.forward(&mut tape, &bind_def, adv, None)?;
                let loss = attacker_loss_graph(&mut tape, xv, adv, def_recon, cfg)?;
                let value = tape.value(loss).item();
                tape.backward(loss)?;
                bind_att.flush_grads(&tape, &mut state.store)?;
                let (att_opt, _) = two_optimizers(&mut state.optimizers);
                att_opt.step(&mut state.store, "attacker.")?;
                check_finite("attacker loss", value)?
            };

            let ld = {
                let mut tape = Tape::new();
                let bind_att = Binding::bind(&mut tape, &state.store, &["attacker."], false);
                let bind_def = Binding::bind(&mut tape, &state.store, &["defender."], true);
                let xv = tape.constant(x);
                let noise = tape.constant(attacker.draw_noise(&mut state.rng, idx.len()));
                let (_, adv) = attacker.forward(&mut tape, &bind_att, xv, Some(noise))?;
                let (_, def_recon) = defender.forward(&mut tape, &bind_def, adv, None)?;
                let loss = tape.mse_loss(def_recon, xv)?;
                let value = tape.value(loss).item();
                tape.backward(loss)?;
                bind_def.flush_grads(&tape, &mut state.store)?;
                let (_, def_opt) = two_optimizers(&mut state.optimizers);
                def_opt.step(&mut state.store, "defender.")?;
                check_finite("defender loss", value)?
            };

            att_mean.add(la, idx.len());
            def_mean.add(ld, idx.len());
            batches += 1;
            if ld > cfg.beta {
                active += 1;
            }
            if ld >= 0.5 * cfg.beta && ld <= 2.0 * cfg.beta {
                in_band += 1;
            }
        }
        Ok(MetricsRow {
            epoch,
            phase: PHASE_ROBUST.into(),
            attacker_loss: Some(att_mean.get()),
            defender_loss: Some(def_mean.get()),
            classifier_loss: None,
            penalty_active_fraction: Some(active as f64 / batches as f64),
            defense_in_band_fraction: Some(in_band as f64 / batches as f64),
        })
    })
}

/// The attacker objective: stay close to the original while keeping the
/// defender's reconstruction error at or above beta. The penalty term is
/// hinged so it contributes nothing (value or gradient) once the
/// defender's error has reached beta.
pub fn attacker_loss_graph(
    tape: &mut Tape,
    x: crate::tensor::Var,
    adv: crate::tensor::Var,
    def_recon: crate::tensor::Var,
    cfg: &TrainingConfig,
) -> Result<crate::tensor::Var> {
    let recon_term = tape.mse_loss(adv, x)?;
    let def_err = tape.mse_loss(def_recon, x)?;
    let neg = tape.scale(def_err, -1.0);
    let shifted = tape.add_scalar(neg, cfg.beta);
    let hinge = tape.relu(shifted);
    let penalty = tape.scale(hinge, cfg.gamma);
    tape.add(recon_term, penalty)
}

/// Where a classifier phase takes its encoder from, what the phase is
/// called, and which RNG stream it consumes. Both pipelines share one
/// output directory, so the baseline uses distinct phase names.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierSource {
    pub encoder_phase: &'static str,
    pub classifier_phase: &'static str,
    pub rng_stream: u64,
    pub missing: &'static str,
}

pub const ROBUST_CLASSIFIER: ClassifierSource = ClassifierSource {
    encoder_phase: PHASE_ROBUST,
    classifier_phase: PHASE_CLASSIFIER,
    rng_stream: STREAM_CLASSIFIER,
    missing: "phase2 checkpoint required",
};

pub const BASELINE_CLASSIFIER: ClassifierSource = ClassifierSource {
    encoder_phase: PHASE_BASELINE_INIT,
    classifier_phase: PHASE_BASELINE_CLASSIFIER,
    rng_stream: STREAM_BASELINE_CLASSIFIER,
    missing: "baseline checkpoint required",
};

/// Defender features for every image, computed once since the encoder is
/// frozen during classifier training.
fn precompute_features(store: &ParamStore, arch: ArchConfig, data: &MnistSet) -> Result<Tensor> {
    let defender = Autoencoder::defender(arch);
    let n = data.len();
    let mut out = Vec::with_capacity(n * arch.feature_dim);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(512) {
        let x = data.gather(chunk);
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, store, &["defender.encoder."], false);
        let xv = tape.constant(x);
        let f = defender.encode(&mut tape, &bind, xv)?;
        out.extend_from_slice(tape.value(f).data());
    }
    Tensor::from_vec(&[n, arch.feature_dim], out)
}

/// Trains the classifier head on clean data over frozen defender
/// features.
pub fn train_classifier(
    full: &MnistSet,
    cfg: &TrainingConfig,
    arch: ArchConfig,
    dirs: &RunDirs,
    source: ClassifierSource,
) -> Result<PathBuf> {
    cfg.validate()?;
    let mut holder = None;
    let data = limited(full, cfg, &mut holder);
    let head = ClassifierHead::new(arch);

    let fresh = || -> Result<PhaseState> {
        let Some((_, path)) = dirs.latest_checkpoint(source.encoder_phase)? else {
            return Err(Error::Checkpoint(source.missing.into()));
        };
        let ck = checkpoint::load(&path)?;
        let mut store = ck.store;
        let mut rng = stream_rng(cfg.seed, source.rng_stream);
        head.init_params(&mut store, &mut rng);
        Ok(PhaseState {
            store,
            rng,
            optimizers: vec![(OPT_CLASSIFIER.into(), AdamState::new(AdamParams::with_lr(cfg.lr_classifier)))],
            start_epoch: 0,
        })
    };

    let mut features: Option<Tensor> = None;
    run_phase(dirs, source.classifier_phase, cfg.epochs_classifier, fresh, |state, epoch| {
        if features.is_none() {
            features = Some(precompute_features(&state.store, arch, data)?);
        }
        let feats = features.as_ref().expect("features cached");
        let fd = arch.feature_dim;
        let mut ce_mean = Mean::default();
        for idx in data.shuffled_batches(&mut state.rng, cfg.batch) {
            let mut fx = Vec::with_capacity(idx.len() * fd);
            let mut labels = Vec::with_capacity(idx.len());
            for &i in &idx {
                fx.extend_from_slice(&feats.data()[i * fd..(i + 1) * fd]);
                labels.push(data.labels[i] as usize);
            }
            let mut tape = Tape::new();
            let bind = Binding::bind(&mut tape, &state.store, &["classifier."], true);
            let xv = tape.constant(Tensor::from_vec(&[idx.len(), fd], fx)?);
            let logits = head.forward(&mut tape, &bind, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item();
            tape.backward(loss)?;
            bind.flush_grads(&tape, &mut state.store)?;
            state.optimizers[0].1.step(&mut state.store, "classifier.")?;
            ce_mean.add(check_finite("classifier loss", value)?, idx.len());
        }
        Ok(MetricsRow {
            epoch,
            phase: source.classifier_phase.into(),
            classifier_loss: Some(ce_mean.get()),
            ..MetricsRow::default()
        })
    })
}

/// Baseline phase 1: the defender architecture alone, plain
/// reconstruction, no attacker anywhere. Shares the run directory under
/// its own phase name and RNG stream; the classifier phase then applies
/// unchanged.
pub fn baseline_init(full: &MnistSet, cfg: &TrainingConfig, arch: ArchConfig, dirs: &RunDirs) -> Result<PathBuf> {
    cfg.validate()?;
    let mut holder = None;
    let data = limited(full, cfg, &mut holder);
    let defender = Autoencoder::defender(arch);

    let fresh = || -> Result<PhaseState> {
        let mut rng = stream_rng(cfg.seed, STREAM_BASELINE);
        let mut store = ParamStore::new();
        defender.init_params(&mut store, &mut rng);
        Ok(PhaseState {
            store,
            rng,
            optimizers: vec![(OPT_DEFENDER.into(), AdamState::new(AdamParams::with_lr(cfg.lr_defender_init)))],
            start_epoch: 0,
        })
    };

    run_phase(dirs, PHASE_BASELINE_INIT, cfg.epochs_init, fresh, |state, epoch| {
        let mut def_mean = Mean::default();
        for idx in data.shuffled_batches(&mut state.rng, cfg.batch) {
            let x = data.gather(&idx);
            let ld = recon_step(&mut state.store, &defender, &x, None, &mut state.optimizers[0].1)?;
            def_mean.add(ld, idx.len());
        }
        Ok(MetricsRow {
            epoch,
            phase: PHASE_BASELINE_INIT.into(),
            defender_loss: Some(def_mean.get()),
            ..MetricsRow::default()
        })
    })
}

/// Mean reconstruction loss of the defender over a set, in eval mode.
pub fn defender_recon_loss(store: &ParamStore, arch: ArchConfig, data: &MnistSet) -> Result<f64> {
    let defender = Autoencoder::defender(arch);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut mean = Mean::default();
    for chunk in idx.chunks(512) {
        let x = data.gather(chunk);
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, store, &["defender."], false);
        let xv = tape.constant(x);
        let (_, recon) = defender.forward(&mut tape, &bind, xv, None)?;
        let loss = tape.mse_loss(recon, xv)?;
        mean.add(tape.value(loss).item(), chunk.len());
    }
    Ok(mean.get())
}
