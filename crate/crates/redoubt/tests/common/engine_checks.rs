//! The engine correctness battery: finite-difference gradient checks for
//! every differentiable op, bit-exact convolution oracles, adjoint
//! identities, finiteness guards, and gradient accumulation semantics.
//! `tests/engine.rs` runs each check as its own test; the acceptance suite
//! times the whole battery in one go.

use redoubt::models::{ArchConfig, Autoencoder};
use redoubt::nn::{Binding, ParamStore};
use redoubt::tensor::{Tape, Tensor, Var};
use redoubt::Result;

use super::{
    assert_grad_close, conv2d_oracle, conv2d_transpose_oracle, finite_diff, rel_err,
    splitmix_fill, SplitMix,
};

fn filled(seed: u64, dims: &[usize]) -> Tensor {
    Tensor::from_vec(dims, splitmix_fill(seed, dims.iter().product())).expect("shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scalarizes a tensor with a fixed random weighting so the loss is
/// sensitive to every element, unlike a plain sum.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let dims = tape.value(v).dims().to_vec();
    let w = tape.constant(filled(seed, &dims));
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

/// Builds the graph twice, once for the analytic gradient of the leaf and
/// once per finite-difference probe, and compares at rtol 1e-3.
fn check_input_grad(name: &str, x: &Tensor, graph: &dyn Fn(&mut Tape, Var) -> Result<Var>) {
    let dims = x.dims().to_vec();
    let scalar = |xs: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::from_vec(&dims, xs.to_vec()).expect("shape"));
        let out = graph(&mut tape, xv).expect(name);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = graph(&mut tape, xv).expect(name);
    tape.backward(out).expect(name);
    let analytic = tape.grad(xv).expect("leaf gradient").data().to_vec();
    let numeric = finite_diff(scalar, x.data());
    assert_grad_close(&analytic, &numeric, 1e-3, name);
}

/// Finite-difference checks for every differentiable op, covering each
/// operand position, on seeded random shapes.
pub fn check_all_op_gradients() {
    let mut rng = SplitMix(0xE16);
    for round in 0..2u64 {
        let s = 100 * round;
        let (a, b) = (rng.pick(1, 4), rng.pick(1, 5));
        let x2 = filled(s + 1, &[a, b]);

        check_input_grad("add", &x2, &|t, x| {
            let c = t.constant(filled(s + 2, &[a, b]));
            let y = t.add(x, c)?;
            weighted_sum(t, y, s + 3)
        });
        check_input_grad("sub, left", &x2, &|t, x| {
            let c = t.constant(filled(s + 4, &[a, b]));
            let y = t.sub(x, c)?;
            weighted_sum(t, y, s + 5)
        });
        check_input_grad("sub, right", &x2, &|t, x| {
            let c = t.constant(filled(s + 6, &[a, b]));
            let y = t.sub(c, x)?;
            weighted_sum(t, y, s + 7)
        });
        check_input_grad("mul", &x2, &|t, x| {
            let c = t.constant(filled(s + 8, &[a, b]));
            let y = t.mul(x, c)?;
            weighted_sum(t, y, s + 9)
        });
        check_input_grad("scale", &x2, &|t, x| {
            let y = t.scale(x, -1.7);
            weighted_sum(t, y, s + 10)
        });
        check_input_grad("add_scalar", &x2, &|t, x| {
            let y = t.add_scalar(x, 0.31);
            weighted_sum(t, y, s + 11)
        });

        let k = rng.pick(1, 4);
        check_input_grad("matmul, left", &x2, &|t, x| {
            let c = t.constant(filled(s + 12, &[b, k]));
            let y = t.matmul(x, c)?;
            weighted_sum(t, y, s + 13)
        });
        check_input_grad("matmul, right", &x2, &|t, x| {
            let c = t.constant(filled(s + 14, &[k, a]));
            let y = t.matmul(c, x)?;
            weighted_sum(t, y, s + 15)
        });

        let m = rng.pick(2, 5);
        check_input_grad("affine, input", &x2, &|t, x| {
            let w = t.constant(filled(s + 16, &[b, m]));
            let bias = t.constant(filled(s + 17, &[m]));
            let y = t.affine(x, w, bias)?;
            weighted_sum(t, y, s + 18)
        });
        let w2 = filled(s + 19, &[b, m]);
        check_input_grad("affine, weight", &w2, &|t, w| {
            let x = t.constant(filled(s + 20, &[a, b]));
            let bias = t.constant(filled(s + 21, &[m]));
            let y = t.affine(x, w, bias)?;
            weighted_sum(t, y, s + 22)
        });
        let bias1 = filled(s + 23, &[m]);
        check_input_grad("affine, bias", &bias1, &|t, bias| {
            let x = t.constant(filled(s + 24, &[a, b]));
            let w = t.constant(filled(s + 25, &[b, m]));
            let y = t.affine(x, w, bias)?;
            weighted_sum(t, y, s + 26)
        });

        let (n, c, h, w, f) = (rng.pick(1, 2), rng.pick(1, 3), rng.pick(2, 6), rng.pick(2, 6), rng.pick(1, 3));
        let img = filled(s + 27, &[n, c, h, w]);
        check_input_grad("conv2d, input", &img, &|t, x| {
            let kv = t.constant(filled(s + 28, &[f, c, 3, 3]));
            let bv = t.constant(filled(s + 29, &[f]));
            let y = t.conv2d(x, kv, bv)?;
            weighted_sum(t, y, s + 30)
        });
        let kern = filled(s + 31, &[f, c, 3, 3]);
        check_input_grad("conv2d, kernel", &kern, &|t, kv| {
            let x = t.constant(filled(s + 32, &[n, c, h, w]));
            let bv = t.constant(filled(s + 33, &[f]));
            let y = t.conv2d(x, kv, bv)?;
            weighted_sum(t, y, s + 34)
        });
        let cbias = filled(s + 35, &[f]);
        check_input_grad("conv2d, bias", &cbias, &|t, bv| {
            let x = t.constant(filled(s + 36, &[n, c, h, w]));
            let kv = t.constant(filled(s + 37, &[f, c, 3, 3]));
            let y = t.conv2d(x, kv, bv)?;
            weighted_sum(t, y, s + 38)
        });

        let (oh, ow) = (2 * h - rng.pick(0, 1), 2 * w - rng.pick(0, 1));
        let feat = filled(s + 39, &[n, f, h, w]);
        check_input_grad("conv2d_transpose, input", &feat, &|t, x| {
            let kv = t.constant(filled(s + 40, &[f, c, 3, 3]));
            let bv = t.constant(filled(s + 41, &[c]));
            let y = t.conv2d_transpose(x, kv, bv, oh, ow)?;
            weighted_sum(t, y, s + 42)
        });
        check_input_grad("conv2d_transpose, kernel", &kern, &|t, kv| {
            let x = t.constant(filled(s + 43, &[n, f, h, w]));
            let bv = t.constant(filled(s + 44, &[c]));
            let y = t.conv2d_transpose(x, kv, bv, oh, ow)?;
            weighted_sum(t, y, s + 45)
        });
        let tbias = filled(s + 46, &[c]);
        check_input_grad("conv2d_transpose, bias", &tbias, &|t, bv| {
            let x = t.constant(filled(s + 47, &[n, f, h, w]));
            let kv = t.constant(filled(s + 48, &[f, c, 3, 3]));
            let y = t.conv2d_transpose(x, kv, bv, oh, ow)?;
            weighted_sum(t, y, s + 49)
        });

        // Push relu inputs away from the kink so finite differences stay
        // one-sided.
        let mut away = filled(s + 50, &[a, b]);
        for v in away.data_mut() {
            *v += if *v >= 0.0 { 0.05 } else { -0.05 };
        }
        check_input_grad("relu", &away, &|t, x| {
            let y = t.relu(x);
            weighted_sum(t, y, s + 51)
        });
        check_input_grad("tanh", &x2, &|t, x| {
            let y = t.tanh(x);
            weighted_sum(t, y, s + 52)
        });
        check_input_grad("out_act", &x2, &|t, x| {
            let y = t.out_act(x);
            weighted_sum(t, y, s + 53)
        });

        check_input_grad("concat, left, axis 0", &x2, &|t, x| {
            let c = t.constant(filled(s + 54, &[2, b]));
            let y = t.concat(x, c, 0)?;
            weighted_sum(t, y, s + 55)
        });
        check_input_grad("concat, right, axis 1", &x2, &|t, x| {
            let c = t.constant(filled(s + 56, &[a, 3]));
            let y = t.concat(c, x, 1)?;
            weighted_sum(t, y, s + 57)
        });
        check_input_grad("reshape", &x2, &|t, x| {
            let y = t.reshape(x, &[b, a])?;
            weighted_sum(t, y, s + 58)
        });
        check_input_grad("sum", &x2, &|t, x| Ok(t.sum(x)));

        let classes = rng.pick(2, 10);
        let rows = rng.pick(1, 4);
        let logits = filled(s + 59, &[rows, classes]);
        let labels: Vec<usize> = (0..rows).map(|_| rng.pick(0, classes - 1)).collect();
        let picked = labels.clone();
        check_input_grad("pick_sum", &logits, &|t, x| t.pick_sum(x, &picked));
        let labelled = labels.clone();
        check_input_grad("softmax_cross_entropy", &logits, &|t, x| {
            t.softmax_cross_entropy(x, &labelled)
        });

        check_input_grad("mse_loss, pred", &x2, &|t, x| {
            let c = t.constant(filled(s + 60, &[a, b]));
            t.mse_loss(x, c)
        });
        check_input_grad("mse_loss, target", &x2, &|t, x| {
            let c = t.constant(filled(s + 61, &[a, b]));
            t.mse_loss(c, x)
        });
    }
}

/// Finite differences on four seeded parameter components of the full
/// defender forward, the exact graph a training step differentiates.
pub fn check_defender_forward_gradient() {
    let arch = ArchConfig { channels: [2, 3, 4], feature_dim: 6, noise_dim: 0, classifier_hidden: 5 };
    let defender = Autoencoder::defender(arch);
    let mut store = ParamStore::new();
    let mut init_rng = redoubt::rng::stream_rng(7, 0);
    defender.init_params(&mut store, &mut init_rng);
    let img = filled(14, &[2, 1, 28, 28]);

    let mut tape = Tape::new();
    let xv = tape.constant(img.clone());
    let bind = Binding::bind(&mut tape, &store, &["defender."], true);
    let (_, recon) = defender.forward(&mut tape, &bind, xv, None).expect("forward");
    let loss = tape.mse_loss(recon, xv).expect("loss");
    tape.backward(loss).expect("backward");

    let loss_at = |store: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let x = t.constant(img.clone());
        let b = Binding::bind(&mut t, store, &["defender."], false);
        let (_, r) = defender.forward(&mut t, &b, x, None).expect("forward");
        let l = t.mse_loss(r, x).expect("loss");
        t.value(l).item()
    };

    let names: Vec<String> = store.names().cloned().collect();
    let mut rng = SplitMix(41);
    for probe in 0..4 {
        let name = names[rng.pick(0, names.len() - 1)].clone();
        let numel = store.get(&name).unwrap().value.numel();
        let idx = rng.pick(0, numel - 1);
        let analytic = tape
            .grad(bind.var(&name).unwrap())
            .map(|g| g.data()[idx])
            .unwrap_or(0.0);
        let h = 1e-5;
        let x0 = store.get(&name).unwrap().value.data()[idx];
        store.get_mut(&name).unwrap().value.data_mut()[idx] = x0 + h;
        let fp = loss_at(&store);
        store.get_mut(&name).unwrap().value.data_mut()[idx] = x0 - h;
        let fm = loss_at(&store);
        store.get_mut(&name).unwrap().value.data_mut()[idx] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        assert!(
            err < 1e-3,
            "defender probe {probe} at {name}[{idx}]: analytic {analytic} vs numeric {numeric}"
        );
    }
}

const CONV_SHAPES: &[(usize, usize, usize, usize, usize)] = &[
    (1, 1, 1, 1, 1),
    (2, 1, 28, 28, 16),
    (1, 4, 5, 7, 3),
    (3, 2, 4, 4, 2),
    (1, 3, 3, 5, 4),
    (2, 2, 14, 14, 8),
    (1, 1, 7, 7, 32),
];

/// conv2d must agree with the naive 4-loop oracle to the last bit.
pub fn check_conv_oracle_exact() {
    for (case, &(n, c, h, w, f)) in CONV_SHAPES.iter().enumerate() {
        let seed = 900 + case as u64 * 10;
        let x = splitmix_fill(seed, n * c * h * w);
        let k = splitmix_fill(seed + 1, f * c * 9);
        let b = splitmix_fill(seed + 2, f);
        let (want, _, _) = conv2d_oracle(&x, &k, &b, n, c, h, w, f);

        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::from_vec(&[n, c, h, w], x).unwrap());
        let kv = tape.constant(Tensor::from_vec(&[f, c, 3, 3], k).unwrap());
        let bv = tape.constant(Tensor::from_vec(&[f], b).unwrap());
        let out = tape.conv2d(xv, kv, bv).unwrap();
        let got = tape.value(out).data();
        assert_eq!(got.len(), want.len(), "case {case}: shape");
        for (i, (g, o)) in got.iter().zip(&want).enumerate() {
            assert!(
                g.to_bits() == o.to_bits(),
                "case {case} ({n},{c},{h},{w},{f}) elem {i}: {g:e} vs oracle {o:e}"
            );
        }
    }
}

const DECONV_SHAPES: &[(usize, usize, usize, usize, usize, usize, usize)] = &[
    (1, 1, 1, 1, 1, 1, 1),
    (1, 2, 2, 2, 1, 4, 4),
    (1, 2, 2, 2, 1, 3, 3),
    (2, 4, 7, 7, 2, 14, 14),
    (1, 3, 7, 7, 1, 13, 13),
    (1, 16, 14, 14, 8, 28, 28),
    (2, 2, 3, 5, 3, 5, 10),
];

/// conv2d_transpose must agree with its scatter oracle to the last bit.
pub fn check_deconv_oracle_exact() {
    for (case, &(n, f, h, w, c, oh, ow)) in DECONV_SHAPES.iter().enumerate() {
        let seed = 1700 + case as u64 * 10;
        let x = splitmix_fill(seed, n * f * h * w);
        let k = splitmix_fill(seed + 1, f * c * 9);
        let b = splitmix_fill(seed + 2, c);
        let want = conv2d_transpose_oracle(&x, &k, &b, n, f, h, w, c, oh, ow);

        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::from_vec(&[n, f, h, w], x).unwrap());
        let kv = tape.constant(Tensor::from_vec(&[f, c, 3, 3], k).unwrap());
        let bv = tape.constant(Tensor::from_vec(&[c], b).unwrap());
        let out = tape.conv2d_transpose(xv, kv, bv, oh, ow).unwrap();
        let got = tape.value(out).data();
        assert_eq!(got.len(), want.len(), "case {case}: shape");
        for (i, (g, o)) in got.iter().zip(&want).enumerate() {
            assert!(
                g.to_bits() == o.to_bits(),
                "case {case} ({n},{f},{h},{w},{c},{oh},{ow}) elem {i}: {g:e} vs oracle {o:e}"
            );
        }
    }
}

fn conv_value_and_input_grad(
    x: &Tensor,
    k: &Tensor,
    y: &Tensor,
    transpose: Option<(usize, usize)>,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let kv = tape.constant(k.clone());
    let out = match transpose {
        None => {
            let bv = tape.constant(Tensor::zeros(&[k.dims()[0]]));
            tape.conv2d(xv, kv, bv).unwrap()
        }
        Some((oh, ow)) => {
            let bv = tape.constant(Tensor::zeros(&[k.dims()[1]]));
            tape.conv2d_transpose(xv, kv, bv, oh, ow).unwrap()
        }
    };
    let yv = tape.constant(y.clone());
    let p = tape.mul(out, yv).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    (tape.value(s).item(), tape.grad(xv).unwrap().data().to_vec())
}

/// Adjoint identities at rtol 1e-10: each conv backward against its own
/// forward, and the transposed convolution against the convolution it is
/// the adjoint of.
pub fn check_adjoint_identity() {
    for (case, &(n, c, h, w, f)) in CONV_SHAPES.iter().enumerate() {
        let seed = 2600 + case as u64 * 10;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let x = filled(seed, &[n, c, h, w]);
        let k = filled(seed + 1, &[f, c, 3, 3]);
        let y = filled(seed + 2, &[n, f, oh, ow]);

        let (fwd_dot, dx) = conv_value_and_input_grad(&x, &k, &y, None);
        let bwd_dot = dot(x.data(), &dx);
        assert!(
            rel_err(fwd_dot, bwd_dot) < 1e-10,
            "conv adjoint case {case}: <Ax,y> {fwd_dot} vs <x,A'y> {bwd_dot}"
        );

        let (t_fwd_dot, dy) = conv_value_and_input_grad(&y, &k, &x, Some((h, w)));
        let t_bwd_dot = dot(y.data(), &dy);
        assert!(
            rel_err(t_fwd_dot, t_bwd_dot) < 1e-10,
            "deconv adjoint case {case}: {t_fwd_dot} vs {t_bwd_dot}"
        );

        // <conv(x), y> == <x, deconv(y)> makes deconv the adjoint of conv,
        // not merely self-consistent.
        assert!(
            rel_err(fwd_dot, t_fwd_dot) < 1e-10,
            "conv pair case {case}: <Ax,y> {fwd_dot} vs <x,A'y> {t_fwd_dot}"
        );
    }
}

/// Finite inputs within |x| <= 50 never produce NaN or Inf in values or
/// gradients, including the saturating activations and the softmax.
pub fn check_no_nonfinite() {
    let mut rng = SplitMix(0xF1);
    for round in 0..6u64 {
        let (a, b) = (rng.pick(1, 4), rng.pick(2, 8));
        let mut x = filled(3000 + round, &[a, b]);
        for v in x.data_mut() {
            *v *= 100.0;
        }
        // Force the advertised boundary into every round.
        x.data_mut()[0] = 50.0;
        if a * b > 1 {
            x.data_mut()[1] = -50.0;
        }

        let labels: Vec<usize> = (0..a).map(|_| rng.pick(0, b - 1)).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let th = tape.tanh(xv);
        let oa = tape.out_act(xv);
        let re = tape.relu(xv);
        let ce = tape.softmax_cross_entropy(xv, &labels).unwrap();
        let cat = tape.concat(th, oa, 1).unwrap();
        let prod = tape.mul(re, xv).unwrap();
        let ws = weighted_sum(&mut tape, cat, 3100 + round).unwrap();
        let ws2 = weighted_sum(&mut tape, prod, 3200 + round).unwrap();
        let total0 = tape.add(ws, ws2).unwrap();
        let total = tape.add(total0, ce).unwrap();
        tape.backward(total).unwrap();
        for var in [th, oa, re, ce, total] {
            assert!(
                tape.value(var).data().iter().all(|v| v.is_finite()),
                "round {round}: non-finite forward value"
            );
        }
        assert!(
            tape.grad(xv).unwrap().data().iter().all(|v| v.is_finite()),
            "round {round}: non-finite gradient"
        );
    }
}

/// Two backward sweeps of the same root accumulate exactly twice the
/// gradient, bit for bit.
pub fn check_backward_accumulates() {
    let mut rng = SplitMix(0xACC);
    for round in 0..4u64 {
        let (n, c) = (rng.pick(1, 2), rng.pick(1, 2));
        let (h, w) = (rng.pick(3, 6), rng.pick(3, 6));
        let f = rng.pick(1, 3);
        let x = filled(4000 + round, &[n, c, h, w]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let kv = tape.leaf(filled(4100 + round, &[f, c, 3, 3]));
        let bv = tape.leaf(filled(4200 + round, &[f]));
        let conv = tape.conv2d(xv, kv, bv).unwrap();
        let act = tape.tanh(conv);
        let loss = weighted_sum(&mut tape, act, 4300 + round).unwrap();

        tape.backward(loss).unwrap();
        let once: Vec<Vec<f64>> = [xv, kv, bv]
            .iter()
            .map(|&v| tape.grad(v).unwrap().data().to_vec())
            .collect();
        tape.backward(loss).unwrap();
        for (leaf, baseline) in [xv, kv, bv].iter().zip(&once) {
            let twice = tape.grad(*leaf).unwrap().data();
            for (t2, t1) in twice.iter().zip(baseline) {
                assert!(
                    t2.to_bits() == (2.0 * t1).to_bits(),
                    "round {round}: backward twice gave {t2} not {}",
                    2.0 * t1
                );
            }
        }
    }
}

/// Runs the whole battery once, returning the number of checks.
pub fn run_full_battery() -> usize {
    check_all_op_gradients();
    check_defender_forward_gradient();
    check_conv_oracle_exact();
    check_deconv_oracle_exact();
    check_adjoint_identity();
    check_no_nonfinite();
    check_backward_accumulates();
    7
}
