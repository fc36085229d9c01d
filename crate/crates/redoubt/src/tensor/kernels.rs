//! Fixed-order f64 matrix kernels.
//!
//! Every kernel accumulates with `f64::mul_add` in a deterministic index
//! order. `matmul` additionally guarantees, for each output element, the
//! exact summation sequence of the naive three-loop product (k ascending,
//! fused multiply-add from 0.0), so convolution built on it is bit-equal
//! to a naive loop oracle while still running at register-tile speed:
//! the 4x32 micro-tile only widens the set of outputs computed in
//! parallel, never the per-output order.

/// out[m,n] = a[m,k] · b[k,n], row-major, fresh write.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (r0, rest) = out[i * n..].split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, rest) = rest.split_at_mut(n);
        let r3 = &mut rest[..n];
        row4(&a[i * k..], b, k, n, r0, r1, r2, r3);
        i += 4;
    }
    while i < m {
        row1(&a[i * k..(i + 1) * k], b, k, n, &mut out[i * n..(i + 1) * n]);
        i += 1;
    }
}

fn row4(
    a: &[f64],
    b: &[f64],
    k: usize,
    n: usize,
    r0: &mut [f64],
    r1: &mut [f64],
    r2: &mut [f64],
    r3: &mut [f64],
) {
    let (a0, a1, a2, a3) = (&a[..k], &a[k..2 * k], &a[2 * k..3 * k], &a[3 * k..4 * k]);
    let mut j = 0;
    while j + 32 <= n {
        let mut c0 = [0.0f64; 32];
        let mut c1 = [0.0f64; 32];
        let mut c2 = [0.0f64; 32];
        let mut c3 = [0.0f64; 32];
        for kk in 0..k {
            let brow = &b[kk * n + j..kk * n + j + 32];
            let (v0, v1, v2, v3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for l in 0..32 {
                let bv = brow[l];
                c0[l] = v0.mul_add(bv, c0[l]);
                c1[l] = v1.mul_add(bv, c1[l]);
                c2[l] = v2.mul_add(bv, c2[l]);
                c3[l] = v3.mul_add(bv, c3[l]);
            }
        }
        r0[j..j + 32].copy_from_slice(&c0);
        r1[j..j + 32].copy_from_slice(&c1);
        r2[j..j + 32].copy_from_slice(&c2);
        r3[j..j + 32].copy_from_slice(&c3);
        j += 32;
    }
    while j + 8 <= n {
        let mut c0 = [0.0f64; 8];
        let mut c1 = [0.0f64; 8];
        let mut c2 = [0.0f64; 8];
        let mut c3 = [0.0f64; 8];
        for kk in 0..k {
            let brow = &b[kk * n + j..kk * n + j + 8];
            let (v0, v1, v2, v3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for l in 0..8 {
                let bv = brow[l];
                c0[l] = v0.mul_add(bv, c0[l]);
                c1[l] = v1.mul_add(bv, c1[l]);
                c2[l] = v2.mul_add(bv, c2[l]);
                c3[l] = v3.mul_add(bv, c3[l]);
            }
        }
        r0[j..j + 8].copy_from_slice(&c0);
        r1[j..j + 8].copy_from_slice(&c1);
        r2[j..j + 8].copy_from_slice(&c2);
        r3[j..j + 8].copy_from_slice(&c3);
        j += 8;
    }
    while j < n {
        let (mut c0, mut c1, mut c2, mut c3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for kk in 0..k {
            let bv = b[kk * n + j];
            c0 = a0[kk].mul_add(bv, c0);
            c1 = a1[kk].mul_add(bv, c1);
            c2 = a2[kk].mul_add(bv, c2);
            c3 = a3[kk].mul_add(bv, c3);
        }
        r0[j] = c0;
        r1[j] = c1;
        r2[j] = c2;
        r3[j] = c3;
        j += 1;
    }
}

fn row1(a: &[f64], b: &[f64], k: usize, n: usize, r: &mut [f64]) {
    let mut j = 0;
    while j + 8 <= n {
        let mut c = [0.0f64; 8];
        for kk in 0..k {
            let av = a[kk];
            let brow = &b[kk * n + j..kk * n + j + 8];
            for l in 0..8 {
                c[l] = av.mul_add(brow[l], c[l]);
            }
        }
        r[j..j + 8].copy_from_slice(&c);
        j += 8;
    }
    while j < n {
        let mut c = 0.0f64;
        for kk in 0..k {
            c = a[kk].mul_add(b[kk * n + j], c);
        }
        r[j] = c;
        j += 1;
    }
}

/// out[k,n] += aᵀ[k,m] · g[m,n] where a is [m,k] row-major. Row-by-row
/// rank-1 updates: deterministic (i ascending) and contiguous on g and out.
pub fn matmul_at_b_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &coef) in arow.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = coef.mul_add(gv, *o);
            }
        }
    }
}

/// out[m,n] += a[m,k] · bᵀ where b is [n,k] row-major: pairwise row dot
/// products, eight interleaved accumulator lanes per dot, lanes reduced in
/// a fixed order.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            orow[j] += dot8(arow, brow);
        }
    }
}

fn dot8(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (ca, cb) in ac.by_ref().zip(bc.by_ref()) {
        for l in 0..8 {
            lanes[l] = ca[l].mul_add(cb[l], lanes[l]);
        }
    }
    for (l, (&av, &bv)) in ac.remainder().iter().zip(bc.remainder()).enumerate() {
        lanes[l] = av.mul_add(bv, lanes[l]);
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    (s01 + s23) + (s45 + s67)
}

/// y += alpha * x, elementwise.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = alpha.mul_add(xv, *yv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for kk in 0..k {
                    acc = a[i * k + kk].mul_add(b[kk * n + j], acc);
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    fn fill(seed: u64, len: usize) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn matmul_matches_naive_bitwise() {
        for &(m, k, n) in &[(1, 1, 1), (4, 9, 32), (5, 7, 49), (13, 288, 196), (6, 64, 3), (9, 17, 41)] {
            let a = fill(m as u64 * 31 + n as u64, m * k);
            let b = fill(k as u64 * 17 + 5, k * n);
            let mut out = vec![0.0; m * n];
            matmul(&a, &b, m, k, n, &mut out);
            let want = naive(&a, &b, m, k, n);
            for (got, want) in out.iter().zip(&want) {
                assert_eq!(got.to_bits(), want.to_bits(), "m={m} k={k} n={n}");
            }
        }
    }

    #[test]
    fn transposed_forms_match_naive() {
        let (m, k, n) = (7, 19, 11);
        let a = fill(1, m * k);
        let g = fill(2, m * n);
        let mut out = vec![0.0; k * n];
        matmul_at_b_acc(&a, &g, m, k, n, &mut out);
        for kk in 0..k {
            for j in 0..n {
                let want: f64 = (0..m).map(|i| a[i * k + kk] * g[i * n + j]).sum();
                assert!((out[kk * n + j] - want).abs() < 1e-12);
            }
        }
        let b = fill(3, n * k);
        let mut out2 = vec![0.0; m * n];
        matmul_a_bt_acc(&a, &b, m, n, k, &mut out2);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|kk| a[i * k + kk] * b[j * k + kk]).sum();
                assert!((out2[i * n + j] - want).abs() < 1e-12);
            }
        }
    }
}
