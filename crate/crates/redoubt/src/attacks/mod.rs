//! White-box attacks against any differentiable classifier: the
//! gradient-sign family here, hyperplane projection in `deepfool`,
//! query-based pixel searches in `pixel`.
//!
//! Attacks never mutate the model. Every successful outcome carries the
//! adversarial image (already clipped to [0,1]) and its Euclidean
//! distance from the original; a failed attack is a normal return value,
//! not an error.

mod deepfool;
mod pixel;

pub use deepfool::{deepfool, DeepfoolNorm};
pub use pixel::{local_search, single_pixel, LocalSearchParams};

use crate::error::Result;
use crate::models::ClassifierModel;
use crate::tensor::{Tape, Tensor, Var};

/// What an attack needs from a model: pure forward logits, and the input
/// gradient of any scalar built from the logits.
pub trait TargetModel {
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
    fn input_grad(
        &self,
        x: &Tensor,
        loss_of_logits: &dyn Fn(&mut Tape, Var) -> Result<Var>,
    ) -> Result<Tensor>;
}

impl TargetModel for ClassifierModel<'_> {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        ClassifierModel::logits(self, x)
    }

    fn input_grad(
        &self,
        x: &Tensor,
        loss_of_logits: &dyn Fn(&mut Tape, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        ClassifierModel::input_grad(self, x, loss_of_logits)
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub success: bool,
    /// Present only on success; always within [0,1].
    pub adversarial: Option<Tensor>,
    /// Euclidean distance to the original; present only on success.
    pub noise: Option<f64>,
    /// Iterations for gradient attacks, model queries for search attacks.
    pub queries_or_iters: u32,
    pub original_label: usize,
    pub adversarial_label: Option<usize>,
}

impl AttackOutcome {
    pub fn failed(original_label: usize, queries_or_iters: u32) -> AttackOutcome {
        AttackOutcome {
            success: false,
            adversarial: None,
            noise: None,
            queries_or_iters,
            original_label,
            adversarial_label: None,
        }
    }

    pub fn succeeded(
        original: &Tensor,
        adversarial: Tensor,
        original_label: usize,
        adversarial_label: usize,
        queries_or_iters: u32,
    ) -> AttackOutcome {
        let noise = original.dist2(&adversarial).sqrt();
        AttackOutcome {
            success: true,
            adversarial: Some(adversarial),
            noise: Some(noise),
            queries_or_iters,
            original_label,
            adversarial_label: Some(adversarial_label),
        }
    }
}

/// Index of the row maximum, first occurrence winning ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted label of a single [1,1,28,28] image.
pub fn predict(model: &dyn TargetModel, x: &Tensor) -> Result<usize> {
    let logits = model.logits(x)?;
    Ok(argmax(logits.data()))
}

/// Numerically stable softmax of one logits row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Sign with sign(0) = 0, so a zero gradient moves nothing.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn clip01(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Shared core of the gradient-sign attacks: `steps` rounds of
/// clip_ball(clip01(x + step·sign(∇J))), stopping early on a label flip.
fn iterative_sign(
    model: &dyn TargetModel,
    x0: &Tensor,
    y: usize,
    eps: f64,
    steps: u32,
    step_size: f64,
) -> Result<AttackOutcome> {
    let loss = |t: &mut Tape, logits: Var| t.softmax_cross_entropy(logits, &[y]);
    let mut x = x0.clone();
    for iter in 1..=steps {
        let g = model.input_grad(&x, &loss)?;
        for ((v, &gv), &orig) in x.data_mut().iter_mut().zip(g.data()).zip(x0.data()) {
            let moved = (*v + step_size * sign0(gv)).clamp(0.0, 1.0);
            *v = moved.clamp(orig - eps, orig + eps);
        }
        let label = predict(model, &x)?;
        if label != y {
            return Ok(AttackOutcome::succeeded(x0, x, y, label, iter));
        }
    }
    Ok(AttackOutcome::failed(y, steps))
}

/// One gradient-sign step of magnitude eps.
pub fn fgsm(model: &dyn TargetModel, x: &Tensor, y: usize, eps: f64) -> Result<AttackOutcome> {
    iterative_sign(model, x, y, eps, 1, eps)
}

/// Iterated gradient-sign steps projected into the L-inf eps-ball around
/// the original.
pub fn bim(
    model: &dyn TargetModel,
    x: &Tensor,
    y: usize,
    eps: f64,
    steps: u32,
    step_size: f64,
) -> Result<AttackOutcome> {
    iterative_sign(model, x, y, eps, steps, step_size)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// A linear softmax model over flattened pixels: logits = W·x + b.
    /// Differentiable through the same tape machinery as the real one.
    pub struct LinearModel {
        pub w: Tensor,
        pub b: Tensor,
    }

    impl LinearModel {
        pub fn new(classes: usize, pixels: usize, f: impl Fn(usize, usize) -> f64) -> LinearModel {
            let mut w = Tensor::zeros(&[pixels, classes]);
            for p in 0..pixels {
                for c in 0..classes {
                    w.data_mut()[p * classes + c] = f(c, p);
                }
            }
            LinearModel { w, b: Tensor::zeros(&[classes]) }
        }
    }

    impl TargetModel for LinearModel {
        fn logits(&self, x: &Tensor) -> Result<Tensor> {
            let n = x.dims()[0];
            let pixels = x.numel() / n;
            let mut tape = Tape::new();
            let xv = tape.constant(x.reshaped(&[n, pixels])?);
            let w = tape.constant(self.w.clone());
            let b = tape.constant(self.b.clone());
            let out = tape.affine(xv, w, b)?;
            Ok(tape.value(out).clone())
        }

        fn input_grad(
            &self,
            x: &Tensor,
            loss_of_logits: &dyn Fn(&mut Tape, Var) -> Result<Var>,
        ) -> Result<Tensor> {
            let n = x.dims()[0];
            let pixels = x.numel() / n;
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let flat = tape.reshape(xv, &[n, pixels])?;
            let w = tape.constant(self.w.clone());
            let b = tape.constant(self.b.clone());
            let logits = tape.affine(flat, w, b)?;
            let loss = loss_of_logits(&mut tape, logits)?;
            tape.backward(loss)?;
            Ok(tape.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.dims())))
        }
    }

    /// Ignores its input entirely; no attack can succeed.
    pub struct ConstantModel;

    impl TargetModel for ConstantModel {
        fn logits(&self, x: &Tensor) -> Result<Tensor> {
            let n = x.dims()[0];
            let mut t = Tensor::zeros(&[n, 10]);
            for r in 0..n {
                t.data_mut()[r * 10 + 3] = 5.0;
            }
            Ok(t)
        }

        fn input_grad(
            &self,
            x: &Tensor,
            _loss: &dyn Fn(&mut Tape, Var) -> Result<Var>,
        ) -> Result<Tensor> {
            Ok(Tensor::zeros(x.dims()))
        }
    }
}
