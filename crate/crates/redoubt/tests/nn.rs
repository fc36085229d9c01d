//! Optimizer, freezing, and checkpoint behavior: Adam against the scalar
//! reference, absolute freezing, bit-exact round trips, rejection of
//! malformed files, and bit-identical resume from a saved step.

mod common;

use common::{adam_scalar_step, splitmix_fill, SplitMix};
use rand_chacha::ChaCha8Rng;
use redoubt::checkpoint::{self, params_equal_bitwise};
use redoubt::nn::{AdamParams, AdamState, Binding, ParamStore};
use redoubt::rng::{restore_state, save_state, stream_rng, uniform};
use redoubt::tensor::{Tape, Tensor};

#[test]
fn adam_tracks_the_scalar_reference_for_100_steps() {
    let dims = [3usize];
    let mut store = ParamStore::new();
    store.insert("w", Tensor::from_vec(&dims, vec![0.7, -0.2, 1.3]).unwrap());
    let mut adam = AdamState::new(AdamParams::with_lr(0.01));

    let mut reference: Vec<(f64, f64, f64)> =
        vec![(0.7, 0.0, 0.0), (-0.2, 0.0, 0.0), (1.3, 0.0, 0.0)];
    let mut grads = SplitMix(0xADA);
    for t in 1..=100u64 {
        let g: Vec<f64> = (0..3).map(|_| grads.unit() * 4.0).collect();
        store
            .get_mut("w")
            .unwrap()
            .set_grad(Tensor::from_vec(&dims, g.clone()).unwrap());
        adam.step(&mut store, "").unwrap();
        for (slot, &gi) in reference.iter_mut().zip(&g) {
            let (w, m, v) = *slot;
            *slot = adam_scalar_step(w, gi, m, v, t, 0.01, 0.9, 0.999, 1e-8);
        }
        for (i, &(w, _, _)) in reference.iter().enumerate() {
            let got = store.get("w").unwrap().value.data()[i];
            assert!(
                (got - w).abs() <= 1e-12,
                "step {t} component {i}: {got} vs reference {w}"
            );
        }
    }
}

#[test]
fn frozen_parameters_never_change_bytes() {
    let mut store = ParamStore::new();
    store.insert("enc.w", Tensor::from_vec(&[4], splitmix_fill(1, 4)).unwrap());
    store.insert("gen.w", Tensor::from_vec(&[4], splitmix_fill(2, 4)).unwrap());
    store.freeze_prefix("gen.").unwrap();
    let frozen_before = store.bytes_under("gen.");
    let live_before = store.bytes_under("enc.");

    let mut adam = AdamState::new(AdamParams::with_lr(0.05));
    let mut grads = SplitMix(0xF0);
    for _ in 0..25 {
        for name in ["enc.w", "gen.w"] {
            let g: Vec<f64> = (0..4).map(|_| grads.unit()).collect();
            store
                .get_mut(name)
                .unwrap()
                .set_grad(Tensor::from_vec(&[4], g).unwrap());
        }
        adam.step(&mut store, "").unwrap();
    }
    assert_eq!(store.bytes_under("gen."), frozen_before, "frozen bytes moved");
    assert_ne!(store.bytes_under("enc."), live_before, "live bytes never moved");
}

fn fresh_store(seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::from_vec(&[4, 3], splitmix_fill(seed, 12)).unwrap());
    store.insert("b", Tensor::from_vec(&[3], splitmix_fill(seed + 1, 3)).unwrap());
    store
}

/// One optimizer step whose gradient depends on the parameters and on a
/// draw from `rng`, so resume bugs in either surface as divergence.
fn training_step(store: &mut ParamStore, adam: &mut AdamState, rng: &mut ChaCha8Rng) {
    let x = uniform(rng, &[2, 4]);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let bind = Binding::bind(&mut tape, store, &[""], true);
    let w = bind.var("w").unwrap();
    let b = bind.var("b").unwrap();
    let y = tape.affine(xv, w, b).unwrap();
    let act = tape.tanh(y);
    let target = tape.constant(Tensor::zeros(&[2, 3]));
    let loss = tape.mse_loss(act, target).unwrap();
    tape.backward(loss).unwrap();
    bind.flush_grads(&tape, store).unwrap();
    adam.step(store, "").unwrap();
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");

    let mut store = fresh_store(10);
    store.get_mut("b").unwrap().requires_grad = false;
    store.freeze_prefix("b").unwrap();
    let mut adam = AdamState::new(AdamParams::with_lr(0.02));
    let mut rng = stream_rng(9, 4);
    for _ in 0..3 {
        let x = uniform(&mut rng, &[2, 4]);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let bind = Binding::bind(&mut tape, &store, &[""], true);
        let y = tape.matmul(xv, bind.var("w").unwrap()).unwrap();
        let t0 = tape.constant(Tensor::zeros(&[2, 3]));
        let loss = tape.mse_loss(y, t0).unwrap();
        tape.backward(loss).unwrap();
        bind.flush_grads(&tape, &mut store).unwrap();
        adam.step(&mut store, "w").unwrap();
    }

    let rng_state = save_state(&rng);
    checkpoint::save(&path, "unit", 7, &store, &rng_state, &[("adam", &adam)]).unwrap();
    let ck = checkpoint::load(&path).unwrap();

    assert_eq!(ck.phase, "unit");
    assert_eq!(ck.epoch, 7);
    assert!(params_equal_bitwise(&ck.store, &store));
    assert_eq!(ck.store.frozen_prefixes(), store.frozen_prefixes());
    assert!(!ck.store.get("b").unwrap().requires_grad);
    assert_eq!(
        serde_json::to_string(&ck.rng).unwrap(),
        serde_json::to_string(&rng_state).unwrap()
    );

    let (name, loaded) = &ck.optimizers[0];
    assert_eq!(name, "adam");
    assert_eq!(loaded.t, adam.t);
    for (pname, (m, v)) in &adam.moments {
        let (lm, lv) = &loaded.moments[pname];
        assert_eq!(m.data(), lm.data(), "first moment {pname}");
        assert_eq!(v.data(), lv.data(), "second moment {pname}");
    }
}

#[test]
fn corrupt_or_truncated_files_are_checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    let store = fresh_store(20);
    let rng_state = save_state(&stream_rng(1, 0));
    checkpoint::save(&path, "unit", 0, &store, &rng_state, &[]).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xFF;
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(redoubt::Error::Checkpoint(_))));

    std::fs::write(&path, &good[..good.len() - 9]).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(redoubt::Error::Checkpoint(_))));

    let mut trailing = good.clone();
    trailing.push(0);
    std::fs::write(&path, &trailing).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(redoubt::Error::Checkpoint(_))));
}

#[test]
fn loading_into_a_different_architecture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    let store = fresh_store(30);
    let rng_state = save_state(&stream_rng(1, 0));
    checkpoint::save(&path, "unit", 0, &store, &rng_state, &[]).unwrap();

    let loaded = checkpoint::load_params(&path).unwrap();
    let mut other = ParamStore::new();
    other.insert("w", Tensor::zeros(&[5, 3]));
    other.insert("b", Tensor::zeros(&[3]));
    let err = checkpoint::check_same_architecture(&loaded, &other).unwrap_err();
    assert!(matches!(err, redoubt::Error::Checkpoint(_)));
    assert!(err.to_string().contains("mismatch"), "{err}");

    let same = fresh_store(31);
    checkpoint::check_same_architecture(&loaded, &same).unwrap();
}

#[test]
fn resuming_from_a_checkpoint_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");

    let mut straight = fresh_store(40);
    let mut adam_a = AdamState::new(AdamParams::with_lr(0.01));
    let mut rng_a = stream_rng(3, 2);
    training_step(&mut straight, &mut adam_a, &mut rng_a);
    training_step(&mut straight, &mut adam_a, &mut rng_a);

    let mut resumed = fresh_store(40);
    let mut adam_b = AdamState::new(AdamParams::with_lr(0.01));
    let mut rng_b = stream_rng(3, 2);
    training_step(&mut resumed, &mut adam_b, &mut rng_b);
    checkpoint::save(&path, "unit", 1, &resumed, &save_state(&rng_b), &[("adam", &adam_b)])
        .unwrap();

    let ck = checkpoint::load(&path).unwrap();
    let mut resumed = ck.store;
    let (_, mut adam_c) = ck.optimizers.into_iter().next().unwrap();
    let mut rng_c = restore_state(&ck.rng).unwrap();
    training_step(&mut resumed, &mut adam_c, &mut rng_c);

    assert!(
        params_equal_bitwise(&straight, &resumed),
        "two straight steps differ from step, save, load, step"
    );
}
