//! Tape of executed operations and its reverse sweep.
//!
//! Every call on [`Graph`] evaluates one operation eagerly, appends a node
//! holding its value and whatever the backward pass needs, and returns a
//! [`Var`] handle. [`Graph::backward`] walks the nodes in exact reverse
//! order. A graph is single-threaded; independent graphs may run in
//! parallel.

use std::collections::{BTreeMap, HashMap};

use super::gemm::{gemm, Trans};
use super::{chamfer_forward, Parameter, Tensor, BN_EPS};
use crate::geometry::dist2;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Per-channel statistics of one batchnorm call in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    AddRow { x: Var, row: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Scale { x: Var, factor: f64 },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    ConcatBroadcast { per_point: Var, global: Var },
    Reshape { x: Var },
    MaskColumn { x: Var, col: usize },
    Coupling { coords: Var, s: Var, t: Var, col: usize, exp_s: Vec<f64> },
    Chamfer { pred: Var, target: Tensor, pred_nn: Vec<usize>, target_nn: Vec<usize> },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{name} produced a non-finite value (node {})",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a parameter. Registering the same name twice returns the same
    /// leaf, so its gradient is accumulated once.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.param_index.get(&p.name) {
            return v;
        }
        let v = self.input(p.value.clone());
        self.params.push((p.name.clone(), v));
        self.param_index.insert(p.name.clone(), v);
        v
    }

    /// `x·W + b` applied to every row: a 1×1 convolution over points.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs[1] != ws[0] {
            return Err(Error::shape("linear", format!("input {xs:?} with weight {ws:?}")));
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut out = Tensor::zeros(n, m);
        gemm(
            Trans::No,
            Trans::No,
            n,
            k,
            m,
            self.value(x).data(),
            self.value(w).data(),
            0.0,
            out.data_mut(),
        );
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [1, m] {
                return Err(Error::shape("linear", format!("bias {bs:?} for {m} outputs")));
            }
            add_row_in_place(&mut out, self.value(b));
        }
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push("linear", out, Op::Linear { x, w, b }, rg)
    }

    /// Adds a `1×C` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.value(x).shape(), self.value(row).shape());
        if rs != [1, xs[1]] {
            return Err(Error::shape("add_row", format!("{xs:?} + {rs:?}")));
        }
        let mut out = self.value(x).clone();
        add_row_in_place(&mut out, self.value(row));
        let rg = self.requires(x) || self.requires(row);
        self.push("add_row", out, Op::AddRow { x, row }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires(x);
        self.push("relu", out, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        let rg = self.requires(x);
        self.push("tanh", out, Op::Tanh { x }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.requires(x);
        self.push("scale", out, Op::Scale { x, factor }, rg)
    }

    /// Batchnorm over the point (row) axis using the statistics of `x`.
    /// Returns the batch statistics for the caller's running averages.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let [n, c] = self.value(x).shape();
        if n < 2 {
            return Err(Error::Config(format!(
                "batchnorm in train mode needs at least 2 points, got {n}"
            )));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let y = self.bn_apply(x, gamma, beta, &mean, &var, true)?;
        Ok((y, BatchStats { mean, var }))
    }

    /// Batchnorm with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        self.bn_apply(x, gamma, beta, mean, var, false)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        train: bool,
    ) -> Result<Var> {
        let [n, c] = self.value(x).shape();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [1, c] {
                return Err(Error::shape(
                    "batchnorm",
                    format!("{name} {:?} for {c} channels", self.value(v).shape()),
                ));
            }
        }
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batchnorm", "statistics length"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * c);
        let mut out = Tensor::zeros(n, c);
        {
            let (g, b) = (self.value(gamma).data(), self.value(beta).data());
            let xv = self.value(x).data();
            let od = out.data_mut();
            for i in 0..n {
                for j in 0..c {
                    let h = (xv[i * c + j] - mean[j]) * inv_std[j];
                    xhat.push(h);
                    od[i * c + j] = h * g[j] + b[j];
                }
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            "batchnorm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        )
    }

    /// Per-channel maximum over points (`N×C → 1×C`). The gradient goes to
    /// the first row holding the maximum.
    pub fn maxpool(&mut self, x: Var) -> Result<Var> {
        let [n, c] = self.value(x).shape();
        if n == 0 {
            return Err(Error::shape("maxpool", "no points"));
        }
        let xv = self.value(x);
        let mut best = xv.row(0).to_vec();
        let mut argmax = vec![0usize; c];
        for i in 1..n {
            for (j, v) in xv.row(i).iter().enumerate() {
                if *v > best[j] {
                    best[j] = *v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.requires(x);
        self.push("maxpool", Tensor::row_vector(best), Op::MaxPool { x, argmax }, rg)
    }

    /// `[per_point | global]` with the `1×C2` global row repeated for every point.
    pub fn concat_broadcast(&mut self, per_point: Var, global: Var) -> Result<Var> {
        let (ps, gs) = (self.value(per_point).shape(), self.value(global).shape());
        if gs[0] != 1 {
            return Err(Error::shape("concat_broadcast", format!("global {gs:?} is not a row")));
        }
        let (n, c1, c2) = (ps[0], ps[1], gs[1]);
        let mut out = Vec::with_capacity(n * (c1 + c2));
        for i in 0..n {
            out.extend_from_slice(self.value(per_point).row(i));
            out.extend_from_slice(self.value(global).data());
        }
        let rg = self.requires(per_point) || self.requires(global);
        let t = Tensor::from_vec(n, c1 + c2, out)?;
        self.push("concat_broadcast", t, Op::ConcatBroadcast { per_point, global }, rg)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x).clone().reshape(rows, cols)?;
        let rg = self.requires(x);
        self.push("reshape", t, Op::Reshape { x }, rg)
    }

    /// Copy of `x` with column `col` set to zero.
    pub fn mask_column(&mut self, x: Var, col: usize) -> Result<Var> {
        let [n, c] = self.value(x).shape();
        if col >= c {
            return Err(Error::shape("mask_column", format!("column {col} of {c}")));
        }
        let mut t = self.value(x).clone();
        for i in 0..n {
            t.set(i, col, 0.0);
        }
        let rg = self.requires(x);
        self.push("mask_column", t, Op::MaskColumn { x, col }, rg)
    }

    /// Affine coupling update: column `col` of `coords` becomes
    /// `z·exp(s) + t`; other columns are copied. `s`, `t` are `N×1`.
    pub fn coupling(&mut self, coords: Var, s: Var, t: Var, col: usize) -> Result<Var> {
        let [n, c] = self.value(coords).shape();
        if col >= c || self.value(s).shape() != [n, 1] || self.value(t).shape() != [n, 1] {
            return Err(Error::shape(
                "coupling",
                format!(
                    "coords {:?}, s {:?}, t {:?}, column {col}",
                    [n, c],
                    self.value(s).shape(),
                    self.value(t).shape()
                ),
            ));
        }
        let mut out = self.value(coords).clone();
        let mut exp_s = Vec::with_capacity(n);
        for i in 0..n {
            let e = self.value(s).data()[i].exp();
            exp_s.push(e);
            let z = out.get(i, col);
            out.set(i, col, z * e + self.value(t).data()[i]);
        }
        let rg = self.requires(coords) || self.requires(s) || self.requires(t);
        self.push(
            "coupling",
            out,
            Op::Coupling {
                coords,
                s,
                t,
                col,
                exp_s,
            },
            rg,
        )
    }

    /// Symmetric mean squared-nearest-distance between `pred` (`N×3`) and a
    /// fixed target cloud (`M×3`).
    pub fn chamfer(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let ps = self.value(pred).shape();
        if ps[1] != 3 || target.cols() != 3 || ps[0] == 0 || target.rows() == 0 {
            return Err(Error::shape(
                "chamfer",
                format!("pred {ps:?}, target {:?}", target.shape()),
            ));
        }
        let p = self.value(pred).to_points()?;
        let t = target.to_points()?;
        let m = chamfer_forward(&p, &t);
        let rg = self.requires(pred);
        self.push(
            "chamfer",
            Tensor::scalar(m.value),
            Op::Chamfer {
                pred,
                target: target.clone(),
                pred_nn: m.pred_nn,
                target_nn: m.target_nn,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.requires(x);
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// `Σ x ⊙ weights` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        if self.value(x).shape() != weights.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs {:?}", self.value(x).shape(), weights.shape()),
            ));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        let rg = self.requires(x);
        self.push(
            "weighted_sum",
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            rg,
        )
    }

    /// Smallest distance of any recorded non-smooth point (ReLU input at 0,
    /// max-pool runner-up, chamfer second-nearest) from switching. Used by
    /// gradient checks to reject inputs sitting on a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.value(*x).data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    for (j, &a) in argmax.iter().enumerate() {
                        let top = xv.get(a, j);
                        for i in 0..xv.rows() {
                            if i != a {
                                margin = margin.min(top - xv.get(i, j));
                            }
                        }
                    }
                }
                Op::Chamfer { pred, target, .. } => {
                    let p = self.value(*pred).to_points().unwrap_or_default();
                    let t = target.to_points().unwrap_or_default();
                    margin = margin.min(second_nearest_gap(&p, &t));
                    margin = margin.min(second_nearest_gap(&t, &p));
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.requires(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [n, k] = xv.shape();
                let m = wv.cols();
                if self.requires(*x) {
                    let mut dx = Tensor::zeros(n, k);
                    gemm(Trans::No, Trans::Yes, n, m, k, g.data(), wv.data(), 0.0, dx.data_mut());
                    acc(*x, dx);
                }
                if self.requires(*w) {
                    let mut dw = Tensor::zeros(k, m);
                    gemm(Trans::Yes, Trans::No, k, n, m, xv.data(), g.data(), 0.0, dw.data_mut());
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, g.column_sums());
                }
            }
            Op::AddRow { x, row } => {
                acc(*x, g.clone());
                acc(*row, g.column_sums());
            }
            Op::Relu { x } => {
                let mut dx = g.clone();
                for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if *y <= 0.0 {
                        *d = 0.0;
                    }
                }
                acc(*x, dx);
            }
            Op::Tanh { x } => {
                let mut dx = g.clone();
                for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= 1.0 - y * y;
                }
                acc(*x, dx);
            }
            Op::Scale { x, factor } => acc(*x, g.map(|v| v * factor)),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let [n, c] = g.shape();
                let gd = g.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for i in 0..n {
                    for j in 0..c {
                        sum_g[j] += gd[i * c + j];
                        sum_gx[j] += gd[i * c + j] * xhat[i * c + j];
                    }
                }
                if self.requires(*x) {
                    let gam = self.value(*gamma).data();
                    let mut dx = Tensor::zeros(n, c);
                    let dd = dx.data_mut();
                    let nf = n as f64;
                    for i in 0..n {
                        for j in 0..c {
                            let k = i * c + j;
                            dd[k] = if *train {
                                gam[j] * inv_std[j] / nf
                                    * (nf * gd[k] - sum_g[j] - xhat[k] * sum_gx[j])
                            } else {
                                gd[k] * gam[j] * inv_std[j]
                            };
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, Tensor::row_vector(sum_gx));
                acc(*beta, Tensor::row_vector(sum_g));
            }
            Op::MaxPool { x, argmax } => {
                let [n, c] = self.value(*x).shape();
                let mut dx = Tensor::zeros(n, c);
                for (j, &a) in argmax.iter().enumerate() {
                    dx.set(a, j, g.data()[j]);
                }
                acc(*x, dx);
            }
            Op::ConcatBroadcast { per_point, global } => {
                let [n, c1] = self.value(*per_point).shape();
                let c2 = self.value(*global).cols();
                let mut dp = Vec::with_capacity(n * c1);
                let mut dg = vec![0.0; c2];
                for i in 0..n {
                    let row = g.row(i);
                    dp.extend_from_slice(&row[..c1]);
                    for (d, v) in dg.iter_mut().zip(&row[c1..]) {
                        *d += v;
                    }
                }
                acc(*per_point, Tensor::from_vec(n, c1, dp).expect("shape"));
                acc(*global, Tensor::row_vector(dg));
            }
            Op::Reshape { x } => {
                let [r, c] = self.value(*x).shape();
                acc(*x, g.clone().reshape(r, c).expect("shape"));
            }
            Op::MaskColumn { x, col } => {
                let mut dx = g.clone();
                for i in 0..dx.rows() {
                    dx.set(i, *col, 0.0);
                }
                acc(*x, dx);
            }
            Op::Coupling {
                coords,
                s,
                t,
                col,
                exp_s,
            } => {
                let n = g.rows();
                let zc = self.value(*coords);
                let mut dcoords = g.clone();
                let mut ds = Vec::with_capacity(n);
                let mut dt = Vec::with_capacity(n);
                for (i, &e) in exp_s.iter().enumerate() {
                    let go = g.get(i, *col);
                    dcoords.set(i, *col, go * e);
                    ds.push(go * zc.get(i, *col) * e);
                    dt.push(go);
                }
                acc(*coords, dcoords);
                acc(*s, Tensor::from_vec(n, 1, ds).expect("shape"));
                acc(*t, Tensor::from_vec(n, 1, dt).expect("shape"));
            }
            Op::Chamfer {
                pred,
                target,
                pred_nn,
                target_nn,
            } => {
                let pv = self.value(*pred);
                let (n, m) = (pv.rows(), target.rows());
                let scale = g.data()[0];
                let mut dp = Tensor::zeros(n, 3);
                let cf = 2.0 * scale / n as f64;
                for (i, &j) in pred_nn.iter().enumerate() {
                    for k in 0..3 {
                        let d = pv.get(i, k) - target.get(j, k);
                        dp.data_mut()[i * 3 + k] += cf * d;
                    }
                }
                let cb = 2.0 * scale / m as f64;
                for (j, &i) in target_nn.iter().enumerate() {
                    for k in 0..3 {
                        let d = pv.get(i, k) - target.get(j, k);
                        dp.data_mut()[i * 3 + k] += cb * d;
                    }
                }
                acc(*pred, dp);
            }
            Op::Sum { x } => {
                let [r, c] = self.value(*x).shape();
                acc(*x, Tensor::filled(r, c, g.data()[0]));
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                acc(*x, weights.map(|w| w * s));
            }
        }
    }
}

fn add_row_in_place(out: &mut Tensor, row: &Tensor) {
    let c = out.cols();
    let r = row.data();
    for chunk in out.data_mut().chunks_exact_mut(c.max(1)) {
        for (o, b) in chunk.iter_mut().zip(r) {
            *o += b;
        }
    }
}

fn second_nearest_gap(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    if to.len() < 2 {
        return f64::INFINITY;
    }
    let mut gap = f64::INFINITY;
    for p in from {
        let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
        for q in to {
            let d = dist2(p, q);
            if d < d1 {
                d2 = d1;
                d1 = d;
            } else if d < d2 {
                d2 = d;
            }
        }
        gap = gap.min(d2 - d1);
    }
    gap
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let [r, c] = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
    }

    /// Gradient of every registered parameter by name (zeros if unused).
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, v)| (name.clone(), self.wrt(*v)))
            .collect()
    }
}
