//! 3x3 stride-2 pad-1 convolution primitives (cross-correlation), plus the
//! exact adjoint used for decoding. Layouts follow the tape: images are
//! [n,c,h,w] row-major, kernels [f,c,3,3].
//!
//! Forward conv lowers each image to a [c*9, p] patch matrix so that the
//! oracle-exact `matmul` performs the contraction with k ascending in
//! (channel, kernel-row, kernel-col) order, the same sequence a naive
//! 4-loop implementation uses. The adjoint directions contract against the
//! transposed kernel, materialized once per call, which keeps them on the
//! same `matmul` kernel with f ascending per output element.

use super::kernels::{matmul, matmul_a_bt_acc};

/// Output spatial size of the stride-2 pad-1 3x3 convolution.
pub fn conv_out(h: usize) -> usize {
    h.div_ceil(2)
}

/// Patch matrix for one [c,h,w] image: cols[ck * p_count + p] with
/// ck = (ci*3 + u)*3 + v and p = oi*ow + oj. Out-of-bounds taps are 0.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let (oh, ow) = (conv_out(h), conv_out(w));
    let pcount = oh * ow;
    debug_assert_eq!(cols.len(), c * 9 * pcount);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for u in 0..3 {
            for v in 0..3 {
                let ck = (ci * 3 + u) * 3 + v;
                let row = &mut cols[ck * pcount..(ck + 1) * pcount];
                for oi in 0..oh {
                    let ii = (2 * oi + u) as isize - 1;
                    for oj in 0..ow {
                        let jj = (2 * oj + v) as isize - 1;
                        row[oi * ow + oj] =
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                plane[ii as usize * w + jj as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add the patch matrix back onto an image.
fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, x: &mut [f64]) {
    let (oh, ow) = (conv_out(h), conv_out(w));
    let pcount = oh * ow;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for u in 0..3 {
            for v in 0..3 {
                let ck = (ci * 3 + u) * 3 + v;
                let row = &cols[ck * pcount..(ck + 1) * pcount];
                for oi in 0..oh {
                    let ii = (2 * oi + u) as isize - 1;
                    if ii < 0 || ii as usize >= h {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (2 * oj + v) as isize - 1;
                        if jj < 0 || jj as usize >= w {
                            continue;
                        }
                        plane[ii as usize * w + jj as usize] += row[oi * ow + oj];
                    }
                }
            }
        }
    }
}

/// kt[ck, f] <- k[f, ck].
fn transpose_kernel(k: &[f64], f: usize, ck: usize) -> Vec<f64> {
    let mut kt = vec![0.0; ck * f];
    for fo in 0..f {
        for kk in 0..ck {
            kt[kk * f + fo] = k[fo * ck + kk];
        }
    }
    kt
}

/// out[n,f,oh,ow] = conv(x[n,c,h,w]; k[f,c,3,3]) + bias[f].
pub fn conv2d_fwd(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (conv_out(h), conv_out(w));
    let (ck, p) = (c * 9, oh * ow);
    let mut cols = vec![0.0; ck * p];
    for img in 0..n {
        im2col(&x[img * c * h * w..(img + 1) * c * h * w], c, h, w, &mut cols);
        let o = &mut out[img * f * p..(img + 1) * f * p];
        matmul(k, &cols, f, ck, p, o);
        for fo in 0..f {
            let b = bias[fo];
            for v in &mut o[fo * p..(fo + 1) * p] {
                *v += b;
            }
        }
    }
}

/// Gradients of `conv2d_fwd` given upstream g[n,f,oh,ow]. Accumulates into
/// dx, dk, db (callers pass zeroed buffers).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd(
    x: &[f64],
    k: &[f64],
    g: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    dx: &mut [f64],
    dk: &mut [f64],
    db: &mut [f64],
) {
    let (oh, ow) = (conv_out(h), conv_out(w));
    let (ckn, p) = (c * 9, oh * ow);
    let kt = transpose_kernel(k, f, ckn);
    let mut cols = vec![0.0; ckn * p];
    let mut dcols = vec![0.0; ckn * p];
    for img in 0..n {
        let gi = &g[img * f * p..(img + 1) * f * p];
        im2col(&x[img * c * h * w..(img + 1) * c * h * w], c, h, w, &mut cols);
        matmul_a_bt_acc(gi, &cols, f, ckn, p, dk);
        matmul(&kt, gi, ckn, f, p, &mut dcols);
        col2im_add(&dcols, c, h, w, &mut dx[img * c * h * w..(img + 1) * c * h * w]);
        for fo in 0..f {
            db[fo] += gi[fo * p..(fo + 1) * p].iter().sum::<f64>();
        }
    }
}

/// Transposed convolution: the exact adjoint of `conv2d_fwd`'s linear map.
/// x is [n,f,h,w]; output [n,c,out_h,out_w] with out_h in {2h-1, 2h}.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_transpose_fwd(
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
    out: &mut [f64],
) {
    debug_assert!(conv_out(out_h) == h && conv_out(out_w) == w);
    let (ckn, p) = (c * 9, h * w);
    let opix = out_h * out_w;
    let kt = transpose_kernel(k, f, ckn);
    let mut tmp = vec![0.0; ckn * p];
    for img in 0..n {
        matmul(&kt, &x[img * f * p..(img + 1) * f * p], ckn, f, p, &mut tmp);
        let o = &mut out[img * c * opix..(img + 1) * c * opix];
        o.fill(0.0);
        col2im_add(&tmp, c, out_h, out_w, o);
        for ci in 0..c {
            let b = bias[ci];
            for v in &mut o[ci * opix..(ci + 1) * opix] {
                *v += b;
            }
        }
    }
}

/// Gradients of `conv2d_transpose_fwd` given upstream g[n,c,out_h,out_w].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_transpose_bwd(
    x: &[f64],
    k: &[f64],
    g: &[f64],
    n: usize,
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
    dx: &mut [f64],
    dk: &mut [f64],
    db: &mut [f64],
) {
    let (ckn, p) = (c * 9, h * w);
    let opix = out_h * out_w;
    let mut gcols = vec![0.0; ckn * p];
    let mut dxf = vec![0.0; f * p];
    for img in 0..n {
        let gi = &g[img * c * opix..(img + 1) * c * opix];
        let xi = &x[img * f * p..(img + 1) * f * p];
        im2col(gi, c, out_h, out_w, &mut gcols);
        let dxi = &mut dx[img * f * p..(img + 1) * f * p];
        matmul(k, &gcols, f, ckn, p, &mut dxf);
        for (d, v) in dxi.iter_mut().zip(&dxf) {
            *d += v;
        }
        matmul_a_bt_acc(xi, &gcols, f, ckn, p, dk);
        for ci in 0..c {
            db[ci] += gi[ci * opix..(ci + 1) * opix].iter().sum::<f64>();
        }
    }
}
