//! Checks the tape's gradients against central finite differences on a
//! small random problem per op family, including one composite graph that
//! chains every layer the models use. Prints the worst relative error per
//! check; everything should land well under 1e-6 at the 1e-5 step used
//! here.

use redoubt::nn::{Binding, ParamStore};
use redoubt::tensor::{Tape, Tensor, Var};
use redoubt::Result;

fn splitmix(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *seed;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

fn filled(seed: u64, dims: &[usize]) -> Tensor {
    let mut s = seed;
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = splitmix(&mut s);
    }
    t
}

fn zeros_like(tape: &mut Tape, v: Var) -> Var {
    let dims = tape.value(v).dims().to_vec();
    tape.constant(Tensor::zeros(&dims))
}

/// Central finite differences of `f` at `x`, step 1e-5.
fn finite_diff(f: &dyn Fn(&Tensor) -> Result<f64>, x: &Tensor) -> Result<Vec<f64>> {
    let h = 1e-5;
    let mut xs = x.clone();
    let mut g = vec![0.0; x.data().len()];
    for (i, gi) in g.iter_mut().enumerate() {
        let x0 = xs.data()[i];
        xs.data_mut()[i] = x0 + h;
        let fp = f(&xs)?;
        xs.data_mut()[i] = x0 - h;
        let fm = f(&xs)?;
        xs.data_mut()[i] = x0;
        *gi = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn check(name: &str, x: &Tensor, graph: &dyn Fn(&mut Tape, Var) -> Result<Var>) -> Result<()> {
    let scalar = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(t.clone());
        let out = graph(&mut tape, xv)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = graph(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad(xv).expect("leaf gradient").data().to_vec();
    let numeric = finite_diff(&scalar, x)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    println!("{name:<28} max rel err {worst:.3e}");
    assert!(worst < 1e-4, "{name}: gradient mismatch");
    Ok(())
}

fn main() -> Result<()> {
    let x4 = filled(11, &[2, 3, 8, 8]);
    check("conv2d + relu", &x4, &|tape, xv| {
        let k = tape.leaf(filled(21, &[5, 3, 3, 3]));
        let b = tape.leaf(filled(22, &[5]));
        let y = tape.conv2d(xv, k, b)?;
        let y = tape.relu(y);
        let z = zeros_like(tape, y);
        tape.mse_loss(y, z)
    })?;

    let xt = filled(12, &[2, 5, 4, 4]);
    check("conv2d_transpose + out_act", &xt, &|tape, xv| {
        let k = tape.leaf(filled(23, &[5, 3, 3, 3]));
        let b = tape.leaf(filled(24, &[3]));
        let y = tape.conv2d_transpose(xv, k, b, 7, 7)?;
        let y = tape.out_act(y);
        let z = zeros_like(tape, y);
        tape.mse_loss(y, z)
    })?;

    let x2 = filled(13, &[4, 6]);
    check("affine + softmax-ce", &x2, &|tape, xv| {
        let w = tape.leaf(filled(25, &[6, 3]));
        let b = tape.leaf(filled(26, &[3]));
        let logits = tape.affine(xv, w, b)?;
        tape.softmax_cross_entropy(logits, &[0, 2, 1, 0])
    })?;

    check("concat + reshape + mse", &x2, &|tape, xv| {
        let other = tape.constant(filled(27, &[4, 2]));
        let cat = tape.concat(xv, other, 1)?;
        let flat = tape.reshape(cat, &[2, 16])?;
        let z = zeros_like(tape, flat);
        tape.mse_loss(flat, z)
    })?;

    // The defender end to end: every op a training step differentiates.
    let arch = redoubt::models::ArchConfig {
        channels: [2, 3, 4],
        feature_dim: 6,
        noise_dim: 0,
        classifier_hidden: 5,
    };
    let defender = redoubt::models::Autoencoder::defender(arch);
    let mut store = ParamStore::new();
    let mut rng = redoubt::rng::stream_rng(7, 0);
    defender.init_params(&mut store, &mut rng);
    let img = filled(14, &[2, 1, 28, 28]);
    check("defender forward, full", &img, &|tape, xv| {
        let bind = Binding::bind(tape, &store, &["defender."], false);
        let (_, recon) = defender.forward(tape, &bind, xv, None)?;
        tape.mse_loss(recon, xv)
    })?;

    println!("all gradient checks passed");
    Ok(())
}
