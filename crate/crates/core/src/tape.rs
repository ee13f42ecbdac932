//! Dynamic reverse-mode tape.
//!
//! Each forward pass appends nodes to a fresh [`Tape`]; a node's inputs are
//! always earlier nodes, so the tape is topologically ordered by
//! construction. [`Tape::backward`] replays the recorded rules in reverse.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, shape_err, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-supplied op: `(inputs, output, output grad) -> input grads`.
pub type BackwardFn<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom },
    BatchNorm(crate::nn::norm::BnNode<T>),
    Relu(Var),
    Relu6(Var),
    Sigmoid(Var),
    Softmax(Var),
    GlobalAvgPool(Var),
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Upsample { x: Var, factor: usize },
    CrossEntropy(crate::nn::loss::CeNode<T>),
    Custom { inputs: Vec<Var>, backward: BackwardFn<T> },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Reshape(x)
            | Op::Slice { x, .. }
            | Op::Sum(x)
            | Op::Relu(x)
            | Op::Relu6(x)
            | Op::Sigmoid(x)
            | Op::Softmax(x)
            | Op::GlobalAvgPool(x)
            | Op::GlobalMaxPool { x, .. }
            | Op::MaxPool2d { x, .. }
            | Op::Upsample { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::ConvTranspose2d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm(node) => vec![node.x, node.gamma, node.beta],
            Op::CrossEntropy(node) => vec![node.logits],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Piecewise decisions of one forward pass in recording order: the active
/// side of each ReLU/ReLU6 input and each max-pool argmax.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Branches(Vec<Branch>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Branch {
    /// Bit 0: input > 0. Bit 1: input < 6.
    Mask(Vec<u8>),
    Argmax(Vec<usize>),
}

impl Branches {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Recorded forward computation.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    pinned: Option<(Vec<Branch>, usize)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), pinned: None }
    }

    /// Forward-only tape whose ReLU, ReLU6 and max-pool ops follow `branches`
    /// instead of their inputs. Replaying a graph with the same piecewise ops
    /// in the same order evaluates the smooth piece `branches` came from.
    /// Backward on such a tape is not meaningful.
    pub fn pinned(branches: Branches) -> Self {
        Self { nodes: Vec::new(), pinned: Some((branches.0, 0)) }
    }

    pub(crate) fn next_pinned(&mut self) -> Option<Branch> {
        let (list, next) = self.pinned.as_mut()?;
        let b = list.get(*next).cloned().expect("pinned tape replayed more piecewise ops than recorded");
        *next += 1;
        Some(b)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Every piecewise decision of the recorded pass.
    pub fn branches(&self) -> Branches {
        let six = T::from_f64(6.0);
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    out.push(Branch::Mask(self.nodes[x.0].value.data().iter().map(|&v| (v > T::ZERO) as u8 | 2).collect()))
                }
                Op::Relu6(x) => out.push(Branch::Mask(
                    self.nodes[x.0].value.data().iter().map(|&v| (v > T::ZERO) as u8 | (((v < six) as u8) << 1)).collect(),
                )),
                Op::GlobalMaxPool { argmax, .. } | Op::MaxPool2d { argmax, .. } => out.push(Branch::Argmax(argmax.clone())),
                _ => {}
            }
        }
        Branches(out)
    }

    /// Hash of [`Tape::branches`]. Two evaluations with equal signatures lie
    /// on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for (i, b) in self.branches().0.iter().enumerate() {
            eat(i as u64);
            match b {
                Branch::Mask(m) => m.iter().for_each(|&v| eat(v as u64)),
                Branch::Argmax(a) => a.iter().for_each(|&v| eat(v as u64 | 1 << 40)),
            }
        }
        h
    }

    /// Records an op with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward })
    }

    /// Populates the gradient of every `requires_grad` leaf with `∂loss/∂leaf`.
    ///
    /// Leaves the loss does not depend on get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(
            self.nodes[loss.0].value.numel() == 1,
            Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            ))
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.op_backward(i, &g)?;
            for (v, dv) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(dv.data()) {
                            *a += *d;
                        }
                    }
                    slot @ None => *slot = Some(dv),
                }
            }
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                node.grad = Some(
                    grads
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
                );
            }
        }
        Ok(())
    }

    fn op_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                if need(*b) {
                    out.push((*b, reduce_to(g, val(*b).shape())));
                }
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                if need(*b) {
                    out.push((*b, reduce_to(g, val(*b).shape()).map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if need(*a) {
                    out.push((*a, broadcast_zip(g, bv, |x, y| x * y)));
                }
                if need(*b) {
                    let mut prod = g.clone();
                    for (p, &x) in prod.data_mut().iter_mut().zip(av.data()) {
                        *p *= x;
                    }
                    out.push((*b, reduce_to(&prod, bv.shape())));
                }
            }
            Op::Scale(x, c) => out.push((*x, g.map(|v| v * *c))),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if need(*a) {
                    let mut da = vec![T::ZERO; m * k];
                    kernels::gemm_nt(m, k, n, g.data(), bv.data(), &mut da);
                    out.push((*a, Tensor::from_vec(&[m, k], da)?));
                }
                if need(*b) {
                    let mut db = vec![T::ZERO; k * n];
                    kernels::gemm_tn(k, n, m, av.data(), g.data(), &mut db);
                    out.push((*b, Tensor::from_vec(&[k, n], db)?));
                }
            }
            Op::Reshape(x) => out.push((*x, g.reshape(val(*x).shape())?)),
            Op::Concat(xs) => {
                let (outer, inner) = (g.shape()[0], g.shape()[2..].iter().product::<usize>());
                let total_c = g.shape()[1];
                let mut offset = 0;
                for &x in xs {
                    let cx = val(x).shape()[1];
                    if need(x) {
                        let mut d = Vec::with_capacity(outer * cx * inner);
                        for o in 0..outer {
                            let base = (o * total_c + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + cx * inner]);
                        }
                        out.push((x, Tensor::from_vec(val(x).shape(), d)?));
                    }
                    offset += cx;
                }
            }
            Op::Slice { x, start } => {
                let xs = val(*x).shape();
                let (outer, cx, inner) = (xs[0], xs[1], xs[2..].iter().product::<usize>());
                let len = g.shape()[1];
                let mut d = Tensor::zeros(xs);
                for o in 0..outer {
                    let dst = (o * cx + start) * inner;
                    d.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, d));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape(), g.data()[0]))),
            Op::Conv2d { x, w, b, geom } => {
                if need(*x) {
                    let dx = kernels::conv_backward_input(geom, g.data(), val(*w).data());
                    out.push((*x, Tensor::from_vec(val(*x).shape(), dx)?));
                }
                if need(*w) {
                    let dw = kernels::conv_backward_weight(geom, val(*x).data(), g.data());
                    out.push((*w, Tensor::from_vec(val(*w).shape(), dw)?));
                }
                if let Some(b) = b {
                    if need(*b) {
                        let db = kernels::channel_sums(g.data(), geom.n, geom.cout, geom.oh * geom.ow);
                        out.push((*b, Tensor::from_vec(val(*b).shape(), db)?));
                    }
                }
            }
            Op::ConvTranspose2d { x, w, geom } => {
                if need(*x) {
                    let dx = kernels::conv_forward(geom, g.data(), val(*w).data(), None);
                    out.push((*x, Tensor::from_vec(val(*x).shape(), dx)?));
                }
                if need(*w) {
                    let dw = kernels::conv_backward_weight(geom, g.data(), val(*x).data());
                    out.push((*w, Tensor::from_vec(val(*w).shape(), dw)?));
                }
            }
            Op::BatchNorm(bn) => bn.backward(val(bn.x), val(bn.gamma), g, &need, &mut out)?,
            Op::Relu(x) => {
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(val(*x).data()) {
                    if xv <= T::ZERO {
                        *dv = T::ZERO;
                    }
                }
                out.push((*x, d));
            }
            Op::Relu6(x) => {
                let six = T::from_f64(6.0);
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(val(*x).data()) {
                    if xv <= T::ZERO || xv >= six {
                        *dv = T::ZERO;
                    }
                }
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *dv *= y * (T::ONE - y);
                }
                out.push((*x, d));
            }
            Op::Softmax(x) => {
                let (n, c, h, w) = node.value.dims4()?;
                let hw = h * w;
                let y = node.value.data();
                let mut d = Tensor::zeros(node.value.shape());
                for b in 0..n {
                    for p in 0..hw {
                        let idx = |k: usize| (b * c + k) * hw + p;
                        let dotp: T = (0..c).map(|k| g.data()[idx(k)] * y[idx(k)]).sum();
                        for k in 0..c {
                            d.data_mut()[idx(k)] = y[idx(k)] * (g.data()[idx(k)] - dotp);
                        }
                    }
                }
                out.push((*x, d));
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = val(*x).dims4()?;
                let hw = h * w;
                let inv = T::ONE / T::from_usize(hw);
                let mut d = Tensor::zeros(val(*x).shape());
                for nc in 0..n * c {
                    let gv = g.data()[nc] * inv;
                    d.data_mut()[nc * hw..(nc + 1) * hw].fill(gv);
                }
                out.push((*x, d));
            }
            Op::GlobalMaxPool { x, argmax } | Op::MaxPool2d { x, argmax } => {
                let mut d = Tensor::zeros(val(*x).shape());
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d.data_mut()[src] += gv;
                }
                out.push((*x, d));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, cin, cout) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                if need(*x) {
                    let mut dx = vec![T::ZERO; n * cin];
                    kernels::gemm_nt(n, cin, cout, g.data(), wv.data(), &mut dx);
                    out.push((*x, Tensor::from_vec(&[n, cin], dx)?));
                }
                if need(*w) {
                    let mut dw = vec![T::ZERO; cin * cout];
                    kernels::gemm_tn(cin, cout, n, xv.data(), g.data(), &mut dw);
                    out.push((*w, Tensor::from_vec(&[cin, cout], dw)?));
                }
                if let Some(b) = b {
                    if need(*b) {
                        let mut db = vec![T::ZERO; cout];
                        for row in g.data().chunks(cout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        out.push((*b, Tensor::from_vec(&[cout], db)?));
                    }
                }
            }
            Op::Upsample { x, factor } => {
                let dx = crate::nn::upsample::bilinear_backward(val(*x).shape(), *factor, g)?;
                out.push((*x, dx));
            }
            Op::CrossEntropy(ce) => out.push((ce.logits, ce.backward(val(ce.logits).shape(), g)?)),
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let grads = backward(&ins, &node.value, g);
                ensure!(
                    grads.len() == inputs.len(),
                    Error::Contract(alloc::format!(
                        "custom backward returned {} gradients for {} inputs",
                        grads.len(),
                        inputs.len()
                    ))
                );
                for (&v, dv) in inputs.iter().zip(grads) {
                    ensure!(
                        dv.shape() == val(v).shape(),
                        shape_err!(
                            "custom backward gradient {:?} does not match input {:?}",
                            dv.shape(),
                            val(v).shape()
                        )
                    );
                    out.push((v, dv));
                }
            }
        }
        Ok(out)
    }

    // ---- tensor primitives -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product; `b` may have extent 1 along any axis of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    fn broadcast_binary(&self, op: &str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        ensure!(
            broadcastable(av.shape(), bv.shape()),
            shape_err!("{op}: {:?} does not broadcast onto {:?}", bv.shape(), av.shape())
        );
        Ok(broadcast_zip(av, bv, f))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        ensure!(
            av.rank() == 2 && bv.rank() == 2 && av.shape()[1] == bv.shape()[0],
            shape_err!("matmul: cannot multiply {:?} by {:?}", av.shape(), bv.shape())
        );
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut c = vec![T::ZERO; m * n];
        kernels::gemm_nn(m, n, k, av.data(), bv.data(), &mut c);
        let value = Tensor::from_vec(&[m, n], c)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Concatenation along axis 1 (channels).
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), shape_err!("concat of zero tensors"));
        let first = self.value(xs[0]).shape().to_vec();
        ensure!(first.len() >= 2, shape_err!("concat needs rank ≥ 2, got {first:?}"));
        let mut total_c = 0;
        for &x in xs {
            let s = self.value(x).shape();
            ensure!(
                s.len() == first.len() && s[0] == first[0] && s[2..] == first[2..],
                shape_err!("concat: {s:?} does not match {first:?} outside the channel axis")
            );
            total_c += s[1];
        }
        let (outer, inner) = (first[0], first[2..].iter().product::<usize>());
        let mut data = Vec::with_capacity(outer * total_c * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let cx = v.shape()[1];
                data.extend_from_slice(&v.data()[o * cx * inner..(o + 1) * cx * inner]);
            }
        }
        let mut shape = first;
        shape[1] = total_c;
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec())))
    }

    /// Channels `start..start + len` of a rank ≥ 2 tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        ensure!(
            xs.len() >= 2 && len > 0 && start + len <= xs[1],
            shape_err!("slice {start}..{} out of range for {xs:?}", start + len)
        );
        let (outer, cx, inner) = (xs[0], xs[1], xs[2..].iter().product::<usize>());
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * cx + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[1] = len;
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(value, Op::Slice { x, start }))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }
}

pub(crate) fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| x == y || y == 1)
}

/// Index of `b` (broadcast onto `a`'s shape) for every element of `a`.
fn broadcast_map(a: &[usize], b: &[usize]) -> Vec<usize> {
    let numel: usize = a.iter().product();
    let mut bstride = vec![0usize; a.len()];
    let mut s = 1;
    for d in (0..b.len()).rev() {
        bstride[d] = if b[d] == 1 { 0 } else { s };
        s *= b[d];
    }
    let mut idx = vec![0usize; a.len()];
    let mut out = Vec::with_capacity(numel);
    let mut bi = 0usize;
    for _ in 0..numel {
        out.push(bi);
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            bi += bstride[d];
            if idx[d] < a[d] {
                break;
            }
            bi -= bstride[d] * a[d];
            idx[d] = 0;
        }
    }
    out
}

fn broadcast_zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        broadcast_map(a.shape(), b.shape())
            .into_iter()
            .zip(a.data())
            .map(|(bi, &x)| f(x, b.data()[bi]))
            .collect()
    };
    Tensor::from_vec(a.shape(), data).expect("broadcast preserves the shape of a")
}

/// Sums `g` over the axes along which `shape` has extent 1.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    for (bi, &v) in broadcast_map(g.shape(), shape).into_iter().zip(g.data()) {
        out.data_mut()[bi] += v;
    }
    out
}
