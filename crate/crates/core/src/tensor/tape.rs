use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::{Bound, Float, Module, Parameter, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::Linear { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::MaxPool2 { input, .. }
            | Op::Relu { input }
            | Op::Reshape { input }
            | Op::Scale { input, .. }
            | Op::Sum { input } => vec![*input],
            Op::Add { lhs, rhs } | Op::Mul { lhs, rhs } => vec![*lhs, *rhs],
            Op::SoftmaxCrossEntropy { logits, .. } | Op::SigmoidBce { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated once.
///
/// Nodes are appended in execution order, so every operation's inputs
/// precede it. A tape supports a single `backward`; build a new tape for the
/// next forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_rank<T: Float>(op: &'static str, what: &str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::dim(
            op,
            format!("{what} must be rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, leaf_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = leaf_grad || op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Validation(format!("variable {} does not belong to this tape", v.0)))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("input", value, Op::Leaf, false)
    }

    /// A leaf whose gradient is computed by `backward`.
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("input", value, Op::Leaf, true)
    }

    /// Records a parameter. It is differentiated only when `track` is set
    /// and the parameter is not frozen.
    pub fn param(&mut self, p: &Parameter<T>, track: bool) -> Result<Var> {
        self.push("parameter", p.value().clone(), Op::Leaf, track && !p.is_frozen())
    }

    pub fn bind<M: Module<T> + ?Sized>(&mut self, module: &M, track: bool) -> Result<Bound> {
        let vars = module
            .parameters()
            .into_iter()
            .map(|p| self.param(p, track))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound(vars))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Cross-correlation with no padding and stride 1.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "conv2d";
        let (x, w, b) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        expect_rank(OP, "input", x, 4)?;
        expect_rank(OP, "weight", w, 4)?;
        expect_rank(OP, "bias", b, 1)?;
        let (xs, ws) = (x.shape(), w.shape());
        if ws[1] != xs[1] {
            return Err(Error::dim(
                OP,
                format!("axis 1 (channels): input has {}, weight expects {}", xs[1], ws[1]),
            ));
        }
        if ws[2] != ws[3] {
            return Err(Error::dim(
                OP,
                format!("axis 2/3 (kernel): kernel must be square, got {}x{}", ws[2], ws[3]),
            ));
        }
        if ws[2] > xs[2] {
            return Err(Error::dim(
                OP,
                format!("axis 2 (height): kernel {} exceeds input {}", ws[2], xs[2]),
            ));
        }
        if ws[3] > xs[3] {
            return Err(Error::dim(
                OP,
                format!("axis 3 (width): kernel {} exceeds input {}", ws[3], xs[3]),
            ));
        }
        if b.numel() != ws[0] {
            return Err(Error::dim(
                OP,
                format!("axis 0 (out channels): bias has {}, weight has {}", b.numel(), ws[0]),
            ));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            k: ws[2],
        };
        let (out, cols) = kernels::conv2d_forward(&geom, x.data(), w.data(), b.data());
        let value = Tensor::new([geom.n, geom.cout, geom.ho(), geom.wo()], out)?;
        self.push(
            OP,
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            false,
        )
    }

    /// Non-overlapping 2x2 max pooling.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let x = self.check(input)?;
        expect_rank(OP, "input", x, 4)?;
        let s = x.shape();
        if s[2] % 2 != 0 {
            return Err(Error::dim(OP, format!("axis 2 (height) must be even, got {}", s[2])));
        }
        if s[3] % 2 != 0 {
            return Err(Error::dim(OP, format!("axis 3 (width) must be even, got {}", s[3])));
        }
        let shape = [s[0], s[1], s[2] / 2, s[3] / 2];
        let (out, argmax) = kernels::maxpool2_forward(s[0] * s[1], s[2], s[3], x.data());
        let value = Tensor::new(shape, out)?;
        self.push(OP, value, Op::MaxPool2 { input, argmax }, false)
    }

    /// `input · weightᵀ + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let (x, w, b) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        expect_rank(OP, "input", x, 2)?;
        expect_rank(OP, "weight", w, 2)?;
        let (n, din) = (x.shape()[0], x.shape()[1]);
        let dout = w.shape()[0];
        if w.shape()[1] != din {
            return Err(Error::dim(
                OP,
                format!("axis 1 (features): input has {din}, weight expects {}", w.shape()[1]),
            ));
        }
        if b.numel() != dout {
            return Err(Error::dim(
                OP,
                format!("axis 0 (outputs): bias has {}, weight has {dout}", b.numel()),
            ));
        }
        let out = kernels::linear_forward(n, din, dout, x.data(), w.data(), b.data());
        let value = Tensor::new([n, dout], out)?;
        self.push(OP, value, Op::Linear { input, weight, bias }, false)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.check(input)?.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", value, Op::Relu { input }, false)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.check(input)?.clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape { input }, false)
    }

    /// Collapses all axes after the first.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.check(input)?.shape();
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    fn same_shape(&self, op: &'static str, lhs: Var, rhs: Var) -> Result<()> {
        let (a, b) = (self.check(lhs)?, self.check(rhs)?);
        if a.shape() != b.shape() {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("add", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(a.shape(), data)?;
        self.push("add", value, Op::Add { lhs, rhs }, false)
    }

    /// Elementwise product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.same_shape("mul", lhs, rhs)?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(a.shape(), data)?;
        self.push("mul", value, Op::Mul { lhs, rhs }, false)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let value = self.check(input)?.map(|v| v * factor);
        self.push("scale", value, Op::Scale { input, factor }, false)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.check(input)?.data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum { input }, false)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let z = self.check(logits)?;
        expect_rank(OP, "logits", z, 2)?;
        let (n, classes) = (z.shape()[0], z.shape()[1]);
        if labels.len() != n {
            return Err(Error::dim(
                OP,
                format!("axis 0 (batch): {n} logits rows, {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Validation(format!("label {bad} outside [0, {classes})")));
        }
        let mut probs = Vec::with_capacity(n * classes);
        let mut total = 0.0f64;
        for (row, &label) in z.data().chunks_exact(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            total += (log_norm - row[label]).to_f64();
            probs.extend(row.iter().map(|&v| (v - max).exp() / sum_exp));
        }
        let loss = T::from_f64(total / n as f64);
        self.push(
            OP,
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            false,
        )
    }

    /// Mean binary cross entropy of `sigmoid(logit)` against 0/1 targets, in
    /// the stable form `max(z,0) - z·t + log(1 + e^-|z|)`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        const OP: &str = "sigmoid_bce";
        let z = self.check(logits)?;
        let n = z.shape()[0];
        if z.numel() != n || targets.len() != n {
            return Err(Error::dim(
                OP,
                format!(
                    "axis 0 (batch): logits shape {:?}, {} targets",
                    z.shape(),
                    targets.len()
                ),
            ));
        }
        if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(Error::Validation("sigmoid_bce targets must be 0 or 1".into()));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| (z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()).to_f64())
            .sum();
        let loss = T::from_f64(total / n as f64);
        self.push(
            OP,
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            false,
        )
    }

    /// Hash of every ReLU mask and max-pool selection on the tape. Two
    /// evaluations with equal signatures sit in the same piecewise-smooth
    /// region.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.nodes[input.0].value.data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.check(loss)?.shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            self.backprop_node(node, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Takes the gradient slot of `v` if it needs one, allocating zeros.
        let slot = |grads: &mut [Option<Vec<T>>], v: Var| -> Option<Vec<T>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            Some(
                grads[v.0]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.numel()]),
            )
        };
        let put = |grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>| {
            if g.is_some() {
                grads[v.0] = g;
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let (mut gx, mut gw, mut gb) = (slot(grads, *input), slot(grads, *weight), slot(grads, *bias));
                kernels::conv2d_backward(
                    geom,
                    cols,
                    nodes[weight.0].value.data(),
                    gy,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                put(grads, *input, gx);
                put(grads, *weight, gw);
                put(grads, *bias, gb);
            }
            Op::MaxPool2 { input, argmax } => {
                if let Some(mut gx) = slot(grads, *input) {
                    for (&src, &g) in argmax.iter().zip(gy) {
                        gx[src] += g;
                    }
                    put(grads, *input, Some(gx));
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = &nodes[input.0].value;
                let w = &nodes[weight.0].value;
                let (n, din, dout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                let (mut gx, mut gw, mut gb) = (slot(grads, *input), slot(grads, *weight), slot(grads, *bias));
                kernels::linear_backward(
                    n,
                    din,
                    dout,
                    x.data(),
                    w.data(),
                    gy,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                put(grads, *input, gx);
                put(grads, *weight, gw);
                put(grads, *bias, gb);
            }
            Op::Relu { input } => {
                if let Some(mut gx) = slot(grads, *input) {
                    for ((d, &x), &g) in gx.iter_mut().zip(nodes[input.0].value.data()).zip(gy) {
                        if x > T::zero() {
                            *d += g;
                        }
                    }
                    put(grads, *input, Some(gx));
                }
            }
            Op::Reshape { input } => {
                if let Some(mut gx) = slot(grads, *input) {
                    for (d, &g) in gx.iter_mut().zip(gy) {
                        *d += g;
                    }
                    put(grads, *input, Some(gx));
                }
            }
            Op::Add { lhs, rhs } => {
                for v in [*lhs, *rhs] {
                    if let Some(mut gx) = slot(grads, v) {
                        for (d, &g) in gx.iter_mut().zip(gy) {
                            *d += g;
                        }
                        put(grads, v, Some(gx));
                    }
                }
            }
            Op::Mul { lhs, rhs } => {
                for (v, other) in [(*lhs, *rhs), (*rhs, *lhs)] {
                    if let Some(mut gx) = slot(grads, v) {
                        for ((d, &o), &g) in gx.iter_mut().zip(nodes[other.0].value.data()).zip(gy) {
                            *d += g * o;
                        }
                        put(grads, v, Some(gx));
                    }
                }
            }
            Op::Scale { input, factor } => {
                if let Some(mut gx) = slot(grads, *input) {
                    for (d, &g) in gx.iter_mut().zip(gy) {
                        *d += g * *factor;
                    }
                    put(grads, *input, Some(gx));
                }
            }
            Op::Sum { input } => {
                if let Some(mut gx) = slot(grads, *input) {
                    for d in gx.iter_mut() {
                        *d += gy[0];
                    }
                    put(grads, *input, Some(gx));
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                if let Some(mut gz) = slot(grads, *logits) {
                    let n = labels.len();
                    let classes = probs.len() / n;
                    let scale = gy[0] / T::from_f64(n as f64);
                    for (i, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { T::one() } else { T::zero() };
                            gz[i * classes + c] += scale * (probs[i * classes + c] - onehot);
                        }
                    }
                    put(grads, *logits, Some(gz));
                }
            }
            Op::SigmoidBce { logits, targets } => {
                if let Some(mut gz) = slot(grads, *logits) {
                    let scale = gy[0] / T::from_f64(targets.len() as f64);
                    for ((d, &z), &t) in gz.iter_mut().zip(nodes[logits.0].value.data()).zip(targets) {
                        *d += scale * (sigmoid(z) - t);
                    }
                    put(grads, *logits, Some(gz));
                }
            }
        }
    }
}

pub fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
