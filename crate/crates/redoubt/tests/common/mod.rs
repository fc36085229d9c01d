//! Reference oracles the engine is tested against. Everything here is
//! written directly from the math over flat slices, with no dependency on
//! the crate's own kernels: naive 4-loop convolutions, central finite
//! differences, and a scalar Adam implementation.
#![allow(dead_code)]

pub mod engine_checks;

/// Central finite differences of a scalar function, step 1e-5.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let x0 = xs[i];
        xs[i] = x0 + h;
        let fp = f(&xs);
        xs[i] = x0 - h;
        let fm = f(&xs);
        xs[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Asserts `analytic` against `numeric` elementwise with a relative
/// tolerance and a small absolute floor for near-zero entries.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rtol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = rtol * a.abs().max(n.abs()) + 1e-7;
        assert!(
            (a - n).abs() <= tol,
            "{what}: grad[{i}] analytic {a} vs numeric {n} (tol {tol})"
        );
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Naive stride-2 pad-1 3x3 cross-correlation. Padding is handled by
/// multiplying an explicit 0.0 so the accumulation sequence (ci, then
/// kernel row, then kernel column, fused multiply-add from 0.0, bias last)
/// is the contract the fast path must match bit for bit.
pub fn conv2d_oracle(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; n * f * oh * ow];
    for img in 0..n {
        for fo in 0..f {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..c {
                        for u in 0..3 {
                            for v in 0..3 {
                                let ii = (2 * oi + u) as isize - 1;
                                let jj = (2 * oj + v) as isize - 1;
                                let xv = if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    x[((img * c + ci) * h + ii as usize) * w + jj as usize]
                                } else {
                                    0.0
                                };
                                acc = k[((fo * c + ci) * 3 + u) * 3 + v].mul_add(xv, acc);
                            }
                        }
                    }
                    out[((img * f + fo) * oh + oi) * ow + oj] = acc + bias[fo];
                }
            }
        }
    }
    (out, oh, ow)
}

/// Naive transposed convolution: the exact adjoint of `conv2d_oracle`'s
/// linear map, written as a scatter. `x` is [n,f,h,w], kernel [f,c,3,3],
/// output [n,c,out_hw,out_hw] with out_hw in {2h-1, 2h}.
pub fn conv2d_transpose_oracle(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    n: usize,
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    assert!(out_h.div_ceil(2) == h && out_w.div_ceil(2) == w, "bad output size");
    let mut out = vec![0.0; n * c * out_h * out_w];
    for img in 0..n {
        for ci in 0..c {
            for u in 0..3 {
                for v in 0..3 {
                    for i in 0..h {
                        for j in 0..w {
                            let ii = (2 * i + u) as isize - 1;
                            let jj = (2 * j + v) as isize - 1;
                            if ii < 0 || jj < 0 || ii as usize >= out_h || jj as usize >= out_w {
                                continue;
                            }
                            let mut s = 0.0f64;
                            for fo in 0..f {
                                s = k[((fo * c + ci) * 3 + u) * 3 + v]
                                    .mul_add(x[((img * f + fo) * h + i) * w + j], s);
                            }
                            out[((img * c + ci) * out_h + ii as usize) * out_w + jj as usize] += s;
                        }
                    }
                }
            }
        }
    }
    for img in 0..n {
        for ci in 0..c {
            for p in 0..out_h * out_w {
                out[(img * c + ci) * out_h * out_w + p] += bias[ci];
            }
        }
    }
    out
}

/// One scalar Adam step with bias correction, returning the new
/// (param, m, v).
pub fn adam_scalar_step(
    w: f64,
    g: f64,
    m: f64,
    v: f64,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> (f64, f64, f64) {
    let m = beta1 * m + (1.0 - beta1) * g;
    let v = beta2 * v + (1.0 - beta2) * g * g;
    let mhat = m / (1.0 - beta1.powi(t as i32));
    let vhat = v / (1.0 - beta2.powi(t as i32));
    (w - lr * mhat / (vhat.sqrt() + eps), m, v)
}

/// Splitmix64 stream for seeded draws in property checks, independent of
/// the crate's RNG.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-0.5, 0.5).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn pick(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

/// Deterministic pseudo-random fill mapped into [-0.5, 0.5).
pub fn splitmix_fill(seed: u64, len: usize) -> Vec<f64> {
    let mut s = SplitMix(seed);
    (0..len).map(|_| s.unit()).collect()
}
