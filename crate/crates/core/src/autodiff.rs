//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Handles ([`Var`])
//! are plain indices into the tape, so building a graph never fights the
//! borrow checker. The tape is rebuilt for each sample: claim-evidence graphs
//! differ in size, so there is no static graph to reuse.
//!
//! ```
//! use dualpath_core::autodiff::Tape;
//! use dualpath_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let w = tape.param(Tensor::scalar(2.0));
//! let x = tape.constant(Tensor::scalar(3.0));
//! let wx = tape.mul(w, x).unwrap();
//! let loss = tape.mul(wx, wx).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().item(), 36.0);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{c, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Mean(Var, usize),
    Sum(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var, usize),
    L2Norm(Var),
    GatherRows(Var, Vec<usize>),
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w: Var,
        b: Var,
    },
    GaussianSample {
        mu: Var,
        sigma: Var,
        eps: Tensor<T>,
    },
    CrossEntropy(Var, usize),
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    // Saved forward intermediates (LSTM gates, softmax of logits).
    aux: Vec<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    a.len() == 2 && b.len() == 2 && (b[0] == 1 || b[0] == a[0]) && (b[1] == 1 || b[1] == a[1])
}

fn broadcast_binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if !broadcast_ok(a.shape(), b.shape()) {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (r, cc) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let mut out = Vec::with_capacity(r * cc);
    for i in 0..r {
        let bi = if br == 1 { 0 } else { i };
        for j in 0..cc {
            let bj = if bc == 1 { 0 } else { j };
            out.push(f(a.at(i, j), b.at(bi, bj)));
        }
    }
    Tensor::new(vec![r, cc], out)
}

/// Sum `g` (shaped like the broadcast output) down to `shape`.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let (br, bc) = (shape[0], shape[1]);
    for i in 0..g.rows() {
        let bi = if br == 1 { 0 } else { i };
        for j in 0..g.cols() {
            let bj = if bc == 1 { 0 } else { j };
            let v = out.at(bi, bj) + g.at(i, j);
            out.set(bi, bj, v);
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.push_aux(value, op, needs_grad, Vec::new())
    }

    fn push_aux(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, aux: Vec<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        let t = t.with_grad(true);
        self.push(t, Op::Leaf, true)
    }

    /// Leaf whose `requires_grad` flag decides whether it receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let g = t.requires_grad();
        self.push(t, Op::Leaf, g)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a + b`, where `b` may broadcast along either axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product; `b` may broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = c::<T>(s);
        let out = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            t.expect_matrix("concat")?;
            let ok = match axis {
                0 => t.cols() == first[1],
                1 => t.rows() == first[0],
                _ => return Err(Error::invalid("concat", format!("axis {axis}"))),
            };
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            cols += t.cols();
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(rows * first[1]);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![rows, first[1]], data)?
        } else {
            let r = first[0];
            let mut data = Vec::with_capacity(r * cols);
            for i in 0..r {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            Tensor::new(vec![r, cols], data)?
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        t.expect_matrix("slice_cols")?;
        if start + len > t.cols() {
            return Err(Error::invalid(
                "slice_cols",
                format!("{start}+{len} exceeds {} columns", t.cols()),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let out = Tensor::new(vec![t.rows(), len], data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    /// Mean along `axis` (0: over rows → `1 × c`; 1: over columns → `r × 1`).
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        t.expect_matrix("mean")?;
        let (r, cc) = (t.rows(), t.cols());
        let out = match axis {
            0 => {
                if r == 0 {
                    return Err(Error::Empty("mean over zero rows".into()));
                }
                let mut o = vec![T::zero(); cc];
                for i in 0..r {
                    for (acc, &v) in o.iter_mut().zip(t.row_slice(i)) {
                        *acc = *acc + v;
                    }
                }
                let n = c::<T>(r as f64);
                Tensor::new(vec![1, cc], o.into_iter().map(|v| v / n).collect())?
            }
            1 => {
                if cc == 0 {
                    return Err(Error::Empty("mean over zero columns".into()));
                }
                let n = c::<T>(cc as f64);
                let o = (0..r).map(|i| t.row_slice(i).iter().copied().sum::<T>() / n).collect();
                Tensor::new(vec![r, 1], o)?
            }
            _ => return Err(Error::invalid("mean", format!("axis {axis}"))),
        };
        let ng = self.ng(a);
        Ok(self.push(out, Op::Mean(a, axis), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.exp());
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a, axis), ng))
    }

    /// Frobenius / Euclidean norm of the whole tensor, as `1 × 1`.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).l2_norm());
        let ng = self.ng(a);
        self.push(out, Op::L2Norm(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        t.expect_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            if i >= t.rows() {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row {i} out of {} rows", t.rows()),
                ));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![idx.len(), t.cols()], data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// One long short-term memory step.
    ///
    /// `x: 1 × I`, `h, c: 1 × H`, `w: (I + H) × 4H`, `b: 1 × 4H`, gate order
    /// input, forget, output, candidate. Returns a `2 × H` tensor whose rows
    /// are the new hidden and cell states.
    pub fn lstm_cell(&mut self, x: Var, h: Var, cell: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, ht, ct, wt, bt) = (
            self.value(x),
            self.value(h),
            self.value(cell),
            self.value(w),
            self.value(b),
        );
        let hd = ht.cols();
        let id = xt.cols();
        let shapes_ok = xt.rows() == 1
            && ht.rows() == 1
            && ct.shape() == ht.shape()
            && wt.shape() == [id + hd, 4 * hd]
            && bt.shape() == [1, 4 * hd];
        if !shapes_ok {
            return Err(Error::Shape {
                op: "lstm_cell",
                lhs: vec![id, hd],
                rhs: wt.shape().to_vec(),
            });
        }
        let mut z = bt.data().to_vec();
        let xh: Vec<T> = xt.data().iter().chain(ht.data()).copied().collect();
        for (p, &v) in xh.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            for (zj, &wv) in z.iter_mut().zip(wt.row_slice(p)) {
                *zj = *zj + v * wv;
            }
        }
        // aux layout: i, f, o, g, tanh(c') each of width H
        let mut aux = vec![T::zero(); 5 * hd];
        let mut out = vec![T::zero(); 2 * hd];
        for k in 0..hd {
            let ig = sigmoid(z[k]);
            let fg = sigmoid(z[hd + k]);
            let og = sigmoid(z[2 * hd + k]);
            let gg = z[3 * hd + k].tanh();
            let cn = fg * ct.data()[k] + ig * gg;
            let tc = cn.tanh();
            aux[k] = ig;
            aux[hd + k] = fg;
            aux[2 * hd + k] = og;
            aux[3 * hd + k] = gg;
            aux[4 * hd + k] = tc;
            out[k] = og * tc;
            out[hd + k] = cn;
        }
        let ng = [x, h, cell, w, b].iter().any(|&v| self.ng(v));
        let out = Tensor::new(vec![2, hd], out)?;
        Ok(self.push_aux(
            out,
            Op::LstmCell {
                x,
                h,
                c: cell,
                w,
                b,
            },
            ng,
            aux,
        ))
    }

    /// Reparameterized Gaussian draw `mu + sigma * eps`; `eps` is a constant.
    pub fn gaussian_sample(&mut self, mu: Var, sigma: Var, eps: Tensor<T>) -> Result<Var> {
        let (m, s) = (self.value(mu), self.value(sigma));
        if m.shape() != s.shape() || m.shape() != eps.shape() {
            return Err(Error::Shape {
                op: "gaussian_sample",
                lhs: m.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let data = m
            .data()
            .iter()
            .zip(s.data())
            .zip(eps.data())
            .map(|((&a, &b), &e)| a + b * e)
            .collect();
        let out = Tensor::new(m.shape().to_vec(), data)?;
        let ng = self.ng(mu) || self.ng(sigma);
        Ok(self.push(out, Op::GaussianSample { mu, sigma, eps }, ng))
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`, logits `1 × N`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rows() != 1 || target >= t.cols() {
            return Err(Error::invalid(
                "cross_entropy",
                format!("target {target} for logits {:?}", t.shape()),
            ));
        }
        let p = t.softmax(1)?;
        let mx = t.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + t.data().iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
        let value = lse - t.data()[target];
        let ng = self.ng(logits);
        Ok(self.push_aux(
            Tensor::scalar(value),
            Op::CrossEntropy(logits, target),
            ng,
            p.into_data(),
        ))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every leaf created with a gradient gets an entry, zero when it does
    /// not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf) && n.needs_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(n.value.shape()));
            }
            if !n.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, g.matmul(&bv.transpose()?)?);
                }
                if self.ng(*b) {
                    self.acc(grads, *b, av.transpose()?.matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    self.acc(grads, *b, reduce_to(g, self.value(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    let r = reduce_to(g, self.value(*b).shape());
                    self.acc(grads, *b, r.scale(-T::one()));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let ga = broadcast_binary("mul", g, bv, |x, y| x * y)?;
                    self.acc(grads, *a, ga);
                }
                if self.ng(*b) {
                    let full = g.zip_map(av, |x, y| x * y);
                    self.acc(grads, *b, reduce_to(&full, bv.shape()));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.scale(*s)),
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let part = if *axis == 0 {
                        let n = pv.numel();
                        let d = g.data()[offset * pv.cols()..offset * pv.cols() + n].to_vec();
                        offset += pv.rows();
                        Tensor::new(pv.shape().to_vec(), d)?
                    } else {
                        let mut d = Vec::with_capacity(pv.numel());
                        for i in 0..pv.rows() {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + pv.cols()]);
                        }
                        offset += pv.cols();
                        Tensor::new(pv.shape().to_vec(), d)?
                    };
                    self.acc(grads, p, part);
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut full = Tensor::zeros(av.shape());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        full.set(i, start + j, g.at(i, j));
                    }
                }
                self.acc(grads, *a, full);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()?),
            Op::Mean(a, axis) => {
                let av = self.value(*a);
                let (r, cc) = (av.rows(), av.cols());
                let mut full = Tensor::zeros(av.shape());
                if *axis == 0 {
                    let n = c::<T>(r as f64);
                    for i in 0..r {
                        for j in 0..cc {
                            full.set(i, j, g.at(0, j) / n);
                        }
                    }
                } else {
                    let n = c::<T>(cc as f64);
                    for i in 0..r {
                        for j in 0..cc {
                            full.set(i, j, g.at(i, 0) / n);
                        }
                    }
                }
                self.acc(grads, *a, full);
            }
            Op::Sum(a) => {
                let s = g.item();
                self.acc(grads, *a, Tensor::full(self.value(*a).shape(), s));
            }
            Op::Tanh(_) | Op::Sigmoid(_) | Op::Relu(_) | Op::Exp(_) => {
                let (a, local): (Var, Tensor<T>) = match &node.op {
                    Op::Tanh(a) => (*a, node.value.map(|y| T::one() - y * y)),
                    Op::Sigmoid(a) => (*a, node.value.map(|y| y * (T::one() - y))),
                    Op::Relu(a) => (
                        *a,
                        self.value(*a)
                            .map(|x| if x > T::zero() { T::one() } else { T::zero() }),
                    ),
                    Op::Exp(a) => (*a, node.value.clone()),
                    _ => unreachable!(),
                };
                self.acc(grads, a, g.zip_map(&local, |x, y| x * y));
            }
            Op::Softmax(a, axis) => {
                let s = &node.value;
                let (r, cc) = (s.rows(), s.cols());
                let mut out = Tensor::zeros(s.shape());
                if *axis == 1 {
                    for i in 0..r {
                        let dot: T = (0..cc).map(|j| g.at(i, j) * s.at(i, j)).sum();
                        for j in 0..cc {
                            out.set(i, j, s.at(i, j) * (g.at(i, j) - dot));
                        }
                    }
                } else {
                    for j in 0..cc {
                        let dot: T = (0..r).map(|i| g.at(i, j) * s.at(i, j)).sum();
                        for i in 0..r {
                            out.set(i, j, s.at(i, j) * (g.at(i, j) - dot));
                        }
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::L2Norm(a) => {
                let n = node.value.item();
                let gs = g.item();
                let local = if n > T::zero() {
                    self.value(*a).map(|x| gs * x / n)
                } else {
                    Tensor::zeros(self.value(*a).shape())
                };
                self.acc(grads, *a, local);
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut full = Tensor::zeros(av.shape());
                let cc = av.cols();
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..cc {
                        let v = full.at(i, j) + g.at(k, j);
                        full.set(i, j, v);
                    }
                }
                self.acc(grads, *a, full);
            }
            Op::LstmCell { x, h, c: cell, w, b } => {
                self.lstm_backward(node, g, grads, [*x, *h, *cell, *w, *b])?;
            }
            Op::GaussianSample { mu, sigma, eps } => {
                self.acc(grads, *mu, g.clone());
                if self.ng(*sigma) {
                    self.acc(grads, *sigma, g.zip_map(eps, |x, e| x * e));
                }
            }
            Op::CrossEntropy(logits, target) => {
                let gs = g.item();
                let mut d = node.aux.clone();
                d[*target] = d[*target] - T::one();
                let n = d.len();
                let t = Tensor::new(vec![1, n], d.into_iter().map(|v| v * gs).collect())?;
                self.acc(grads, *logits, t);
            }
        }
        Ok(())
    }

    fn lstm_backward(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        [x, h, cell, w, b]: [Var; 5],
    ) -> Result<()> {
        let hd = node.value.cols();
        let a = &node.aux;
        let cprev = self.value(cell).data();
        let one = T::one();
        let mut dz = vec![T::zero(); 4 * hd];
        let mut dc_prev = vec![T::zero(); hd];
        for k in 0..hd {
            let (ig, fg, og, gg, tc) = (a[k], a[hd + k], a[2 * hd + k], a[3 * hd + k], a[4 * hd + k]);
            let dh = g.at(0, k);
            let dc = g.at(1, k) + dh * og * (one - tc * tc);
            let d_o = dh * tc;
            let d_i = dc * gg;
            let d_g = dc * ig;
            let d_f = dc * cprev[k];
            dc_prev[k] = dc * fg;
            dz[k] = d_i * ig * (one - ig);
            dz[hd + k] = d_f * fg * (one - fg);
            dz[2 * hd + k] = d_o * og * (one - og);
            dz[3 * hd + k] = d_g * (one - gg * gg);
        }
        let dz_t = Tensor::new(vec![1, 4 * hd], dz)?;
        let (xv, hv, wv) = (self.value(x), self.value(h), self.value(w));
        let id = xv.cols();
        if self.ng(w) {
            let xh: Vec<T> = xv.data().iter().chain(hv.data()).copied().collect();
            let xh = Tensor::new(vec![id + hd, 1], xh)?;
            self.acc(grads, w, xh.matmul(&dz_t)?);
        }
        if self.ng(b) {
            self.acc(grads, b, dz_t.clone());
        }
        if self.ng(x) || self.ng(h) {
            let dxh = dz_t.matmul(&wv.transpose()?)?;
            let d = dxh.data();
            if self.ng(x) {
                self.acc(grads, x, Tensor::new(vec![1, id], d[..id].to_vec())?);
            }
            if self.ng(h) {
                self.acc(grads, h, Tensor::new(vec![1, hd], d[id..].to_vec())?);
            }
        }
        if self.ng(cell) {
            self.acc(grads, cell, Tensor::new(vec![1, hd], dc_prev)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64_rows(&[&[1.0, -2.0], &[0.5, 4.0]]).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn chain_rule_by_hand() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::scalar(2.0));
        let x = tape.constant(Tensor::scalar(3.0));
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.mul(wx, wx).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 36.0);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn detached_receives_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::scalar(2.0));
        let d = tape.detach(w);
        let y = tape.mul(d, d).unwrap();
        let z = tape.add(y, w).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 1.0);
        assert!(g.get(d).is_none());
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::row(vec![1.0, 2.0]));
        let b = tape.param(Tensor::row(vec![3.0]));
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::zeros(&[3, 2]));
        let b = tape.param(Tensor::row(vec![1.0, 1.0]));
        let y = tape.add(a, b).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn repeated_backward_is_deterministic() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::row(vec![0.3, -1.2, 2.0]));
        let t = tape.tanh(x);
        let s = tape.softmax(t, 1).unwrap();
        let n = tape.l2_norm(s);
        let g1 = tape.backward(n).unwrap();
        let g2 = tape.backward(n).unwrap();
        assert_eq!(g1.get(x).unwrap(), g2.get(x).unwrap());
    }
}
