//! Query-based attacks that only ever read model predictions: a random
//! single-pixel saturation search and a greedy multi-pixel local search.

use super::{argmax, softmax, AttackOutcome, TargetModel};
use crate::error::Result;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Tries up to `max_trials` randomly ordered pixels, setting each to 0
/// then to 1 and keeping the first assignment that flips the label. The
/// pixel is restored before moving on.
pub fn single_pixel(
    model: &dyn TargetModel,
    x: &Tensor,
    y: usize,
    max_trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AttackOutcome> {
    let mut order: Vec<usize> = (0..x.numel()).collect();
    order.shuffle(rng);
    order.truncate(max_trials);

    let mut probe = x.clone();
    let mut queries = 0u32;
    for &p in &order {
        let orig = probe.data()[p];
        for value in [0.0, 1.0] {
            probe.data_mut()[p] = value;
            queries += 1;
            let logits = model.logits(&probe)?;
            let label = argmax(logits.data());
            if label != y {
                return Ok(AttackOutcome::succeeded(x, probe.clone(), y, label, queries));
            }
        }
        probe.data_mut()[p] = orig;
    }
    Ok(AttackOutcome::failed(y, queries))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSearchParams {
    pub rounds: u32,
    /// Number of best-scoring pixel perturbations applied per round.
    pub top_t: usize,
    /// Magnitude pixels are pushed by before clipping.
    pub perturb: f64,
    /// Chebyshev radius of the candidate refresh around applied pixels.
    pub neighborhood: usize,
    /// Share of all pixels seeding the first candidate set.
    pub init_fraction: f64,
}

impl Default for LocalSearchParams {
    fn default() -> Self {
        LocalSearchParams { rounds: 150, top_t: 5, perturb: 1.0, neighborhood: 1, init_fraction: 0.1 }
    }
}

fn true_class_prob(model: &dyn TargetModel, x: &Tensor, y: usize) -> Result<f64> {
    let logits = model.logits(x)?;
    Ok(softmax(logits.data())[y])
}

/// Greedy score-based search. Each round scores every candidate pixel by
/// how much pushing it by ±perturb (clipped) lowers the true-class
/// probability, applies the `top_t` best pushes, then refreshes the
/// candidate set to the neighborhood of the pixels just changed.
pub fn local_search(
    model: &dyn TargetModel,
    x: &Tensor,
    y: usize,
    params: &LocalSearchParams,
    rng: &mut ChaCha8Rng,
) -> Result<AttackOutcome> {
    let dims = x.dims().to_vec();
    let (h, w) = (dims[2], dims[3]);
    let pixels = h * w;

    let mut all: Vec<usize> = (0..pixels).collect();
    all.shuffle(rng);
    let seed_count = ((pixels as f64 * params.init_fraction).round() as usize).clamp(1, pixels);
    let mut candidates: Vec<usize> = all[..seed_count].to_vec();
    candidates.sort_unstable();

    let mut current = x.clone();
    let mut queries = 0u32;
    for _ in 0..params.rounds {
        queries += 1;
        let base = true_class_prob(model, &current, y)?;

        // Distinct pushed values per candidate, skipping no-ops.
        let mut moves: Vec<(usize, f64)> = Vec::with_capacity(candidates.len() * 2);
        for &p in &candidates {
            let v = current.data()[p];
            for dir in [params.perturb, -params.perturb] {
                let pushed = (v + dir).clamp(0.0, 1.0);
                if pushed != v && !moves.iter().any(|&(q, u)| q == p && u == pushed) {
                    moves.push((p, pushed));
                }
            }
        }
        if moves.is_empty() {
            return Ok(AttackOutcome::failed(y, queries));
        }

        // Score all moves in batched queries.
        let mut scored: Vec<(f64, usize, f64)> = Vec::with_capacity(moves.len());
        for chunk in moves.chunks(128) {
            let mut batch = Vec::with_capacity(chunk.len() * pixels);
            for &(p, value) in chunk {
                let start = batch.len();
                batch.extend_from_slice(current.data());
                batch[start + p] = value;
            }
            let mut bdims = dims.clone();
            bdims[0] = chunk.len();
            let logits = model.logits(&Tensor::from_vec(&bdims, batch)?)?;
            queries += chunk.len() as u32;
            let classes = logits.numel() / chunk.len();
            for (row, &(p, value)) in chunk.iter().enumerate() {
                let prob = softmax(&logits.data()[row * classes..(row + 1) * classes])[y];
                scored.push((base - prob, p, value));
            }
        }

        // Best push per pixel, then the strongest pixels overall.
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut applied: Vec<usize> = Vec::with_capacity(params.top_t);
        for &(_, p, value) in &scored {
            if applied.contains(&p) {
                continue;
            }
            current.data_mut()[p] = value;
            applied.push(p);
            if applied.len() == params.top_t {
                break;
            }
        }

        queries += 1;
        let logits = model.logits(&current)?;
        let label = argmax(logits.data());
        if label != y {
            return Ok(AttackOutcome::succeeded(x, current, y, label, queries));
        }

        let d = params.neighborhood as isize;
        let mut next: Vec<usize> = Vec::new();
        for &p in &applied {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for dr in -d..=d {
                for dc in -d..=d {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr >= 0 && nr < h as isize && nc >= 0 && nc < w as isize {
                        next.push(nr as usize * w + nc as usize);
                    }
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        candidates = next;
    }
    Ok(AttackOutcome::failed(y, queries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::testing::{ConstantModel, LinearModel};
    use crate::attacks::predict;
    use crate::rng::stream_rng;

    #[test]
    fn constant_model_defeats_both_searches() {
        let model = ConstantModel;
        let x = Tensor::filled(&[1, 1, 4, 4], 0.5);
        let mut rng = stream_rng(9, 0);
        let sp = single_pixel(&model, &x, 3, 16, &mut rng).unwrap();
        assert!(!sp.success);
        let ls = local_search(&model, &x, 3, &LocalSearchParams::default(), &mut rng).unwrap();
        assert!(!ls.success);
    }

    #[test]
    fn single_pixel_finds_the_critical_pixel_and_changes_only_it() {
        // Class 0 wins until pixel 0 saturates to 1.
        let mut model = LinearModel::new(2, 16, |c, p| if (c, p) == (0, 0) { -2.0 } else { 0.0 });
        model.b.data_mut()[0] = 1.0;
        model.b.data_mut()[1] = 0.5;
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert_eq!(predict(&model, &x).unwrap(), 0);
        let mut rng = stream_rng(9, 1);
        let out = single_pixel(&model, &x, 0, 16, &mut rng).unwrap();
        assert!(out.success);
        let adv = out.adversarial.as_ref().unwrap();
        let changed: Vec<usize> = adv
            .data()
            .iter()
            .zip(x.data())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(changed, vec![0]);
        assert_eq!(out.noise, Some(1.0));
        assert!(x.data().iter().all(|&v| v == 0.0), "input must stay untouched");
    }

    #[test]
    fn single_pixel_is_seed_deterministic() {
        let model = ConstantModel;
        let x = Tensor::filled(&[1, 1, 4, 4], 0.25);
        let run = |seed| {
            let mut rng = stream_rng(seed, 2);
            single_pixel(&model, &x, 3, 5, &mut rng).unwrap().queries_or_iters
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn local_search_flips_a_sum_sensitive_model() {
        // Class 0 logit falls as pixels light up; four lit pixels flip it.
        let mut model = LinearModel::new(2, 16, |c, p| if c == 0 && p < 8 { -1.0 } else { 0.0 });
        model.b.data_mut()[0] = 2.5;
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert_eq!(predict(&model, &x).unwrap(), 0);
        let mut rng = stream_rng(9, 3);
        let params = LocalSearchParams { rounds: 10, init_fraction: 0.5, ..Default::default() };
        let out = local_search(&model, &x, 0, &params, &mut rng).unwrap();
        assert!(out.success, "greedy search should lift enough pixels");
        let adv = out.adversarial.as_ref().unwrap();
        assert!(adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(predict(&model, adv).unwrap(), 0);
        assert!(out.noise.unwrap() >= 1.9, "several pixels must move: {:?}", out.noise);
    }
}
