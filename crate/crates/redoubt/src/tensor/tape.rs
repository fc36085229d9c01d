//! Wengert-list reverse-mode differentiation.
//!
//! Operations append nodes to a [`Tape`] and hand back [`Var`] indices.
//! `backward` clears node gradients, seeds the scalar root with 1 and
//! sweeps the list once in reverse recording order. Gradient flow follows
//! `needs_grad`: nodes whose whole subtree is constant are never touched,
//! which is both the gradient-isolation contract for frozen parameters and
//! the main compute saving (an inactive loss branch backpropagates
//! nothing).

use super::conv::{conv2d_bwd, conv2d_fwd, conv2d_transpose_bwd, conv2d_transpose_fwd, conv_out};
use super::kernels::{axpy, matmul, matmul_a_bt_acc, matmul_at_b_acc};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul(usize, usize),
    Affine { x: usize, w: usize, b: usize },
    Conv2d { x: usize, k: usize, b: usize },
    ConvT2d { x: usize, k: usize, b: usize, out_h: usize, out_w: usize },
    Relu(usize),
    Tanh(usize),
    OutAct(usize),
    Concat { a: usize, b: usize, axis: usize },
    Reshape(usize),
    Sum(usize),
    PickSum { logits: usize, idx: Vec<usize> },
    MseLoss { pred: usize, target: usize },
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, softmax: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

/// Recorded computation, in topological (recording) order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-differentiable input; backward never reaches it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root w.r.t. this node, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(shape_err(format!(
                "{what}: {} vs {}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, self.needs(a) || self.needs(b), Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, self.needs(a) || self.needs(b), Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, self.needs(a) || self.needs(b), Op::Mul(a.0, b.0)))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.dims(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, self.needs(a), Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, self.needs(a), Op::AddScalar(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da.len() != 2 || db.len() != 2 || da[1] != db[0] {
            return Err(shape_err(format!("matmul: {da:?} x {db:?}")));
        }
        let (m, k, n) = (da[0], da[1], db[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        Ok(self.push(out, self.needs(a) || self.needs(b), Op::Matmul(a.0, b.0)))
    }

    /// x[n,k] · w[k,m] + bias[m] broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (dx, dw, db) = (self.value(x).dims(), self.value(w).dims(), self.value(b).dims());
        if dx.len() != 2 || dw.len() != 2 || dx[1] != dw[0] || db != [dw[1]] {
            return Err(shape_err(format!("affine: x{dx:?} w{dw:?} b{db:?}")));
        }
        let (n, k, m) = (dx[0], dx[1], dw[1]);
        let mut out = Tensor::zeros(&[n, m]);
        matmul(self.value(x).data(), self.value(w).data(), n, k, m, out.data_mut());
        {
            let bias = self.value(b).data().to_vec();
            let o = out.data_mut();
            for row in 0..n {
                for (ov, bv) in o[row * m..(row + 1) * m].iter_mut().zip(&bias) {
                    *ov += bv;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, ng, Op::Affine { x: x.0, w: w.0, b: b.0 }))
    }

    /// 3x3 stride-2 pad-1 cross-correlation, x[n,c,h,w], k[f,c,3,3], b[f].
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (dx, dk, db) = (self.value(x).dims(), self.value(k).dims(), self.value(b).dims());
        if dx.len() != 4 || dk.len() != 4 || dk[2] != 3 || dk[3] != 3 || dk[1] != dx[1] || db != [dk[0]] {
            return Err(shape_err(format!("conv2d: x{dx:?} k{dk:?} b{db:?}")));
        }
        let (n, c, h, w, f) = (dx[0], dx[1], dx[2], dx[3], dk[0]);
        let mut out = Tensor::zeros(&[n, f, conv_out(h), conv_out(w)]);
        conv2d_fwd(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            n,
            c,
            h,
            w,
            f,
            out.data_mut(),
        );
        let ng = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(out, ng, Op::Conv2d { x: x.0, k: k.0, b: b.0 }))
    }

    /// Adjoint of `conv2d`: x[n,f,h,w], k[f,c,3,3], b[c], output spatial
    /// size (out_h, out_w) with out in {2h-1, 2h} per axis.
    pub fn conv2d_transpose(&mut self, x: Var, k: Var, b: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (dx, dk, db) = (self.value(x).dims(), self.value(k).dims(), self.value(b).dims());
        if dx.len() != 4 || dk.len() != 4 || dk[2] != 3 || dk[3] != 3 || dk[0] != dx[1] || db != [dk[1]] {
            return Err(shape_err(format!("conv2d_transpose: x{dx:?} k{dk:?} b{db:?}")));
        }
        let (n, f, h, w, c) = (dx[0], dx[1], dx[2], dx[3], dk[1]);
        if conv_out(out_h) != h || conv_out(out_w) != w {
            return Err(shape_err(format!(
                "conv2d_transpose: output {out_h}x{out_w} incompatible with input {h}x{w}"
            )));
        }
        let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
        conv2d_transpose_fwd(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            n,
            f,
            h,
            w,
            c,
            out_h,
            out_w,
            out.data_mut(),
        );
        let ng = self.needs(x) || self.needs(k) || self.needs(b);
        Ok(self.push(out, ng, Op::ConvT2d { x: x.0, k: k.0, b: b.0, out_h, out_w }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, self.needs(a), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, self.needs(a), Op::Tanh(a.0))
    }

    /// (1 + tanh(x)) / 2, kept strictly inside (0,1) by clamping the
    /// pre-activation to ±18 (tanh saturates to exactly ±1.0 in f64 just
    /// beyond that).
    pub fn out_act(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| (1.0 + x.clamp(-18.0, 18.0).tanh()) / 2.0);
        self.push(v, self.needs(a), Op::OutAct(a.0))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (da, db) = (self.value(a).dims().to_vec(), self.value(b).dims().to_vec());
        if da.len() != db.len() || axis >= da.len() {
            return Err(shape_err(format!("concat axis {axis}: {da:?} vs {db:?}")));
        }
        for (i, (x, y)) in da.iter().zip(&db).enumerate() {
            if i != axis && x != y {
                return Err(shape_err(format!("concat axis {axis}: {da:?} vs {db:?}")));
            }
        }
        let mut dims = da.clone();
        dims[axis] += db[axis];
        let outer: usize = da[..axis].iter().product();
        let inner: usize = da[axis + 1..].iter().product();
        let (ba, bb) = (da[axis] * inner, db[axis] * inner);
        let mut data = Vec::with_capacity(outer * (ba + bb));
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        for o in 0..outer {
            data.extend_from_slice(&ta[o * ba..(o + 1) * ba]);
            data.extend_from_slice(&tb[o * bb..(o + 1) * bb]);
        }
        let out = Tensor::from_vec(&dims, data)?;
        Ok(self.push(out, self.needs(a) || self.needs(b), Op::Concat { a: a.0, b: b.0, axis }))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(dims)?;
        Ok(self.push(v, self.needs(a), Op::Reshape(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(v, self.needs(a), Op::Sum(a.0))
    }

    /// Σᵢ logits[i, idx[i]]; the batched-Jacobian workhorse.
    pub fn pick_sum(&mut self, logits: Var, idx: &[usize]) -> Result<Var> {
        let d = self.value(logits).dims();
        if d.len() != 2 || idx.len() != d[0] || idx.iter().any(|&i| i >= d[1]) {
            return Err(shape_err(format!("pick_sum: logits {d:?}, idx len {}", idx.len())));
        }
        let m = d[1];
        let s = idx
            .iter()
            .enumerate()
            .map(|(i, &c)| self.value(logits).data()[i * m + c])
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            self.needs(logits),
            Op::PickSum { logits: logits.0, idx: idx.to_vec() },
        ))
    }

    /// Mean over all elements of (pred - target)².
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let n = self.value(pred).numel() as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::scalar(s / n),
            self.needs(pred) || self.needs(target),
            Op::MseLoss { pred: pred.0, target: target.0 },
        ))
    }

    /// Mean over the batch of -log softmax(logits)[label], max-stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let d = self.value(logits).dims();
        if d.len() != 2 || labels.len() != d[0] {
            return Err(shape_err(format!("softmax_cross_entropy: {d:?}, {} labels", labels.len())));
        }
        let (n, m) = (d[0], d[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::Data(format!("label {bad} out of range 0..{m}")));
        }
        let x = self.value(logits).data();
        let mut softmax = vec![0.0; n * m];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                softmax[i * m + j] = e;
                z += e;
            }
            for v in &mut softmax[i * m..(i + 1) * m] {
                *v /= z;
            }
            loss -= (row[labels[i]] - mx) - z.ln();
        }
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            self.needs(logits),
            Op::SoftmaxCrossEntropy { logits: logits.0, labels: labels.to_vec(), softmax },
        ))
    }

    /// Reverse sweep from a scalar root. Each call computes the full
    /// gradient of the root in a scratch pass, then adds it onto whatever
    /// previous calls left behind, so sweeping the same root twice yields
    /// exactly twice the gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Engine("backward on empty tape".into()));
        }
        if self.value(root).numel() != 1 {
            return Err(Error::Engine(format!(
                "backward root must be scalar, got {}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].needs_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        pass[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad || pass[i].is_none() {
                continue;
            }
            let g = pass[i].take().expect("checked");
            self.propagate(i, &g, &mut pass);
            pass[i] = Some(g);
        }
        for (i, slot) in pass.into_iter().enumerate() {
            if let Some(g) = slot {
                acc_slot(&mut self.nodes[i].grad, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, pass: &mut [Option<Tensor>]) {
        // Collect (operand, contribution) pairs read-only, then accumulate.
        let mut contribs: Vec<(usize, Tensor)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if self.nodes[a].needs_grad {
                    contribs.push((a, g.clone()));
                }
                if self.nodes[b].needs_grad {
                    contribs.push((b, g.clone()));
                }
            }
            &Op::Sub(a, b) => {
                if self.nodes[a].needs_grad {
                    contribs.push((a, g.clone()));
                }
                if self.nodes[b].needs_grad {
                    contribs.push((b, g.map(|v| -v)));
                }
            }
            &Op::Mul(a, b) => {
                if self.nodes[a].needs_grad {
                    let t = zip2(g, &self.nodes[b].value, |gv, bv| gv * bv);
                    contribs.push((a, t));
                }
                if self.nodes[b].needs_grad {
                    let t = zip2(g, &self.nodes[a].value, |gv, av| gv * av);
                    contribs.push((b, t));
                }
            }
            &Op::Scale(a, c) => {
                if self.nodes[a].needs_grad {
                    contribs.push((a, g.map(|v| c * v)));
                }
            }
            &Op::AddScalar(a) => {
                if self.nodes[a].needs_grad {
                    contribs.push((a, g.clone()));
                }
            }
            &Op::Matmul(a, b) => {
                let (m, k) = {
                    let d = self.nodes[a].value.dims();
                    (d[0], d[1])
                };
                let n = self.nodes[b].value.dims()[1];
                if self.nodes[a].needs_grad {
                    let mut da = Tensor::zeros(&[m, k]);
                    matmul_a_bt_acc(g.data(), self.nodes[b].value.data(), m, k, n, da.data_mut());
                    contribs.push((a, da));
                }
                if self.nodes[b].needs_grad {
                    let mut db = Tensor::zeros(&[k, n]);
                    matmul_at_b_acc(self.nodes[a].value.data(), g.data(), m, k, n, db.data_mut());
                    contribs.push((b, db));
                }
            }
            &Op::Affine { x, w, b } => {
                let (n, k) = {
                    let d = self.nodes[x].value.dims();
                    (d[0], d[1])
                };
                let m = self.nodes[w].value.dims()[1];
                if self.nodes[x].needs_grad {
                    let mut dx = Tensor::zeros(&[n, k]);
                    matmul_a_bt_acc(g.data(), self.nodes[w].value.data(), n, k, m, dx.data_mut());
                    contribs.push((x, dx));
                }
                if self.nodes[w].needs_grad {
                    let mut dw = Tensor::zeros(&[k, m]);
                    matmul_at_b_acc(self.nodes[x].value.data(), g.data(), n, k, m, dw.data_mut());
                    contribs.push((w, dw));
                }
                if self.nodes[b].needs_grad {
                    let mut db = Tensor::zeros(&[m]);
                    for row in 0..n {
                        axpy(1.0, &g.data()[row * m..(row + 1) * m], db.data_mut());
                    }
                    contribs.push((b, db));
                }
            }
            &Op::Conv2d { x, k, b } => {
                let (n, c, h, w) = {
                    let d = self.nodes[x].value.dims();
                    (d[0], d[1], d[2], d[3])
                };
                let f = self.nodes[k].value.dims()[0];
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let mut dk = Tensor::zeros(&[f, c, 3, 3]);
                let mut db = Tensor::zeros(&[f]);
                conv2d_bwd(
                    self.nodes[x].value.data(),
                    self.nodes[k].value.data(),
                    g.data(),
                    n,
                    c,
                    h,
                    w,
                    f,
                    dx.data_mut(),
                    dk.data_mut(),
                    db.data_mut(),
                );
                if self.nodes[x].needs_grad {
                    contribs.push((x, dx));
                }
                if self.nodes[k].needs_grad {
                    contribs.push((k, dk));
                }
                if self.nodes[b].needs_grad {
                    contribs.push((b, db));
                }
            }
            &Op::ConvT2d { x, k, b, out_h, out_w } => {
                let (n, f, h, w) = {
                    let d = self.nodes[x].value.dims();
                    (d[0], d[1], d[2], d[3])
                };
                let c = self.nodes[k].value.dims()[1];
                let mut dx = Tensor::zeros(&[n, f, h, w]);
                let mut dk = Tensor::zeros(&[f, c, 3, 3]);
                let mut db = Tensor::zeros(&[c]);
                conv2d_transpose_bwd(
                    self.nodes[x].value.data(),
                    self.nodes[k].value.data(),
                    g.data(),
                    n,
                    f,
                    h,
                    w,
                    c,
                    out_h,
                    out_w,
                    dx.data_mut(),
                    dk.data_mut(),
                    db.data_mut(),
                );
                if self.nodes[x].needs_grad {
                    contribs.push((x, dx));
                }
                if self.nodes[k].needs_grad {
                    contribs.push((k, dk));
                }
                if self.nodes[b].needs_grad {
                    contribs.push((b, db));
                }
            }
            &Op::Relu(a) => {
                if self.nodes[a].needs_grad {
                    let t = zip2(g, &self.nodes[a].value, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    contribs.push((a, t));
                }
            }
            &Op::Tanh(a) => {
                if self.nodes[a].needs_grad {
                    let t = zip2(g, &self.nodes[i].value, |gv, yv| gv * (1.0 - yv * yv));
                    contribs.push((a, t));
                }
            }
            &Op::OutAct(a) => {
                if self.nodes[a].needs_grad {
                    let t = zip2(g, &self.nodes[i].value, |gv, yv| gv * 2.0 * yv * (1.0 - yv));
                    contribs.push((a, t));
                }
            }
            &Op::Concat { a, b, axis } => {
                let da = self.nodes[a].value.dims().to_vec();
                let db = self.nodes[b].value.dims().to_vec();
                let outer: usize = da[..axis].iter().product();
                let inner: usize = da[axis + 1..].iter().product();
                let (ba, bb) = (da[axis] * inner, db[axis] * inner);
                if self.nodes[a].needs_grad {
                    let mut ga = Vec::with_capacity(outer * ba);
                    for o in 0..outer {
                        ga.extend_from_slice(&g.data()[o * (ba + bb)..o * (ba + bb) + ba]);
                    }
                    contribs.push((a, Tensor::from_vec(&da, ga).expect("split")));
                }
                if self.nodes[b].needs_grad {
                    let mut gb = Vec::with_capacity(outer * bb);
                    for o in 0..outer {
                        gb.extend_from_slice(&g.data()[o * (ba + bb) + ba..(o + 1) * (ba + bb)]);
                    }
                    contribs.push((b, Tensor::from_vec(&db, gb).expect("split")));
                }
            }
            &Op::Reshape(a) => {
                if self.nodes[a].needs_grad {
                    let dims = self.nodes[a].value.dims().to_vec();
                    contribs.push((a, g.reshaped(&dims).expect("same numel")));
                }
            }
            &Op::Sum(a) => {
                if self.nodes[a].needs_grad {
                    let dims = self.nodes[a].value.dims().to_vec();
                    contribs.push((a, Tensor::filled(&dims, g.item())));
                }
            }
            Op::PickSum { logits, idx } => {
                let (logits, idx) = (*logits, idx.clone());
                if self.nodes[logits].needs_grad {
                    let dims = self.nodes[logits].value.dims().to_vec();
                    let m = dims[1];
                    let mut d = Tensor::zeros(&dims);
                    for (row, &c) in idx.iter().enumerate() {
                        d.data_mut()[row * m + c] += g.item();
                    }
                    contribs.push((logits, d));
                }
            }
            &Op::MseLoss { pred, target } => {
                let n = self.nodes[pred].value.numel() as f64;
                let coef = 2.0 * g.item() / n;
                if self.nodes[pred].needs_grad {
                    let t = zip2(&self.nodes[pred].value, &self.nodes[target].value, |p, tv| {
                        coef * (p - tv)
                    });
                    contribs.push((pred, t));
                }
                if self.nodes[target].needs_grad {
                    let t = zip2(&self.nodes[pred].value, &self.nodes[target].value, |p, tv| {
                        -coef * (p - tv)
                    });
                    contribs.push((target, t));
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, softmax } => {
                let l = *logits;
                if self.nodes[l].needs_grad {
                    let dims = self.nodes[l].value.dims().to_vec();
                    let (n, m) = (dims[0], dims[1]);
                    let coef = g.item() / n as f64;
                    let mut d = vec![0.0; n * m];
                    for i2 in 0..n {
                        for j in 0..m {
                            let onehot = if labels[i2] == j { 1.0 } else { 0.0 };
                            d[i2 * m + j] = coef * (softmax[i2 * m + j] - onehot);
                        }
                    }
                    contribs.push((l, Tensor::from_vec(&dims, d).expect("dims")));
                }
            }
        }
        for (idx, t) in contribs {
            acc_slot(&mut pass[idx], t);
        }
    }
}

fn acc_slot(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn zip2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(b.dims(), data).expect("same shape")
}
