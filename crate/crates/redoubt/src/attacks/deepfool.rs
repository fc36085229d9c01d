//! Minimal-perturbation attack by iterated projection onto the nearest
//! linearized decision boundary, multiclass, in L2 or L-inf flavor.

use super::{argmax, AttackOutcome, TargetModel};
use crate::error::Result;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeepfoolNorm {
    L2,
    Linf,
}

impl DeepfoolNorm {
    pub fn parse(s: &str) -> Option<DeepfoolNorm> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Some(DeepfoolNorm::L2),
            "linf" => Some(DeepfoolNorm::Linf),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DeepfoolNorm::L2 => "l2",
            DeepfoolNorm::Linf => "linf",
        }
    }
}

fn tile_rows(x: &Tensor, copies: usize) -> Tensor {
    let mut dims = x.dims().to_vec();
    dims[0] = copies;
    let mut data = Vec::with_capacity(x.numel() * copies);
    for _ in 0..copies {
        data.extend_from_slice(x.data());
    }
    Tensor::from_vec(&dims, data).expect("tiled shape")
}

/// Projects toward the closest class boundary until the label flips or
/// the budget runs out. The per-class gradients come from one batched
/// backward pass over a stack of identical inputs, one row per class.
///
/// `queries_or_iters` counts completed projection steps, so the outcome
/// at any smaller budget b is recoverable: success iff it succeeded here
/// within b steps.
pub fn deepfool(
    model: &dyn TargetModel,
    x0: &Tensor,
    y: usize,
    norm: DeepfoolNorm,
    max_iter: u32,
    overshoot: f64,
) -> Result<AttackOutcome> {
    let pixels = x0.numel();
    let mut x = x0.clone();
    let mut r_total = vec![0.0f64; pixels];
    let mut steps = 0u32;
    loop {
        let logits = model.logits(&x)?;
        let classes = logits.numel();
        let label = argmax(logits.data());
        if label != y {
            return Ok(AttackOutcome::succeeded(x0, x, y, label, steps));
        }
        if steps == max_iter {
            return Ok(AttackOutcome::failed(y, steps));
        }
        steps += 1;

        let stacked = tile_rows(&x, classes);
        let rows: Vec<usize> = (0..classes).collect();
        let grads = model.input_grad(&stacked, &|t, l| t.pick_sum(l, &rows))?;
        let gd = grads.data();
        let g_label = &gd[label * pixels..(label + 1) * pixels];

        let mut best: Option<(f64, usize)> = None;
        for k in 0..classes {
            if k == label {
                continue;
            }
            let g_k = &gd[k * pixels..(k + 1) * pixels];
            let mut dual = 0.0f64;
            for (a, b) in g_k.iter().zip(g_label) {
                let w = a - b;
                match norm {
                    DeepfoolNorm::L2 => dual = w.mul_add(w, dual),
                    DeepfoolNorm::Linf => dual += w.abs(),
                }
            }
            let dual = match norm {
                DeepfoolNorm::L2 => dual.sqrt(),
                DeepfoolNorm::Linf => dual,
            };
            if dual < 1e-12 {
                continue;
            }
            let fk = (logits.data()[k] - logits.data()[label]).abs();
            let ratio = fk / dual;
            if best.is_none_or(|(r, _)| ratio < r) {
                best = Some((ratio, k));
            }
        }
        let Some((_, l)) = best else {
            return Ok(AttackOutcome::failed(y, steps));
        };

        let g_l = &gd[l * pixels..(l + 1) * pixels];
        let fl = (logits.data()[l] - logits.data()[label]).abs();
        match norm {
            DeepfoolNorm::L2 => {
                let mut l2sq = 0.0f64;
                for (a, b) in g_l.iter().zip(g_label) {
                    let w = a - b;
                    l2sq = w.mul_add(w, l2sq);
                }
                let coef = fl / l2sq;
                for (i, (a, b)) in g_l.iter().zip(g_label).enumerate() {
                    r_total[i] = coef.mul_add(a - b, r_total[i]);
                }
            }
            DeepfoolNorm::Linf => {
                let mut l1 = 0.0f64;
                for (a, b) in g_l.iter().zip(g_label) {
                    l1 += (a - b).abs();
                }
                let coef = fl / l1;
                for (i, (a, b)) in g_l.iter().zip(g_label).enumerate() {
                    let w = a - b;
                    let s = if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    r_total[i] = coef.mul_add(s, r_total[i]);
                }
            }
        }
        for (v, (&orig, &r)) in x.data_mut().iter_mut().zip(x0.data().iter().zip(&r_total)) {
            *v = (1.0 + overshoot).mul_add(r, orig).clamp(0.0, 1.0);
        }
    }
}
