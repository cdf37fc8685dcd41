use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Result, TensorError};
use crate::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    },
    Act {
        x: NodeId,
        kind: Activation,
    },
    AvgPool {
        x: NodeId,
        k: usize,
        stride: usize,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    InstanceNorm {
        x: NodeId,
        inv_std: Vec<T>,
    },
    PixelShuffle {
        x: NodeId,
        r: usize,
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Affine {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    Linear {
        v: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
    },
    L1 {
        pred: NodeId,
        target: NodeId,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Record of executed operations.
///
/// Nodes are appended in execution order; backward traverses them in exact
/// reverse. Leaves created with [`Graph::param`] receive gradients, leaves
/// created with [`Graph::input`] do not.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

fn check_finite<T: Scalar>(t: &Tensor<T>, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Computation(format!(
            "{op}: non-finite input value"
        )))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, false, Op::Leaf)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient; `None` for nodes that do not require one or
    /// that no path from the loss reached.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_value(&mut self, id: NodeId) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    /// Clear all gradients so that backward may run again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// 2-D convolution. `w` is `(out, in, k, k)`, `b` is `(out, 1, 1, 1)`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let [batch, in_ch, h, wd] = self.shape(x);
        let [out_ch, w_in, k, k2] = self.shape(w);
        if k != k2 || !(k == 1 || k == 3) {
            return Err(param_err!("conv2d: kernel must be 1x1 or 3x3, got {k}x{k2}"));
        }
        if !(stride == 1 || stride == 2) || padding > 1 {
            return Err(param_err!(
                "conv2d: unsupported stride {stride} / padding {padding}"
            ));
        }
        if w_in != in_ch {
            return Err(param_err!(
                "conv2d: weight expects {w_in} input channels, input has {in_ch}"
            ));
        }
        if self.shape(b) != [out_ch, 1, 1, 1] {
            return Err(param_err!(
                "conv2d: bias shape {:?} does not match {out_ch} outputs",
                self.shape(b)
            ));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(param_err!("conv2d: input {h}x{wd} smaller than kernel"));
        }
        check_finite(self.value(x), "conv2d")?;
        let geom = ConvGeom {
            in_ch,
            out_ch,
            k,
            stride,
            pad: padding,
            h,
            w: wd,
            oh: (h + 2 * padding - k) / stride + 1,
            ow: (wd + 2 * padding - k) / stride + 1,
        };
        let out = conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
            batch,
        );
        let t = Tensor::from_vec([batch, out_ch, geom.oh, geom.ow], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, rg, Op::Conv2d { x, w, b, geom }))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        if let Activation::LeakyRelu(s) = kind {
            if !(s > 0.0 && s < 1.0) {
                return Err(param_err!("leaky_relu slope must lie in (0, 1), got {s}"));
            }
        }
        let xv = self.value(x);
        check_finite(xv, "activation")?;
        let out = match kind {
            Activation::Relu => xv.map(|v| v.max(T::zero())),
            Activation::LeakyRelu(s) => {
                let s = T::from_f64(s);
                xv.map(|v| if v > T::zero() { v } else { v * s })
            }
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Act { x, kind }))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    /// Mean over `k×k` windows placed every `stride` pixels, no padding.
    pub fn avg_pool(&mut self, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let [b, c, h, w] = self.shape(x);
        if k == 0 || stride == 0 {
            return Err(param_err!("avg_pool: k and stride must be positive"));
        }
        if h < k || w < k {
            return Err(param_err!("avg_pool: input {h}x{w} smaller than window {k}"));
        }
        if k == stride && (h % stride != 0 || w % stride != 0) {
            return Err(param_err!(
                "avg_pool: {h}x{w} not divisible by stride {stride}"
            ));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xv = self.value(x);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let out = Tensor::from_fn([b, c, oh, ow], |[bi, ci, oy, ox]| {
            let mut acc = T::zero();
            for dy in 0..k {
                for dx in 0..k {
                    acc = acc + xv.at([bi, ci, oy * stride + dy, ox * stride + dx]);
                }
            }
            acc * inv
        });
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::AvgPool { x, k, stride }))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let [b, c, h, w] = self.shape(x);
        if h == 0 || w == 0 {
            return Err(param_err!("global_avg_pool: empty spatial extent"));
        }
        let xv = self.value(x);
        let hw = h * w;
        let inv = T::from_f64(1.0 / hw as f64);
        let data = xv
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec([b, c, 1, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::GlobalAvgPool { x }))
    }

    /// Per (sample, channel) standardization with biased variance; no affine.
    pub fn instance_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let [b, c, h, w] = self.shape(x);
        let hw = h * w;
        if hw < 2 {
            return Err(param_err!("instance_norm: needs at least 2 pixels, got {hw}"));
        }
        let xv = self.value(x);
        let n = T::from_f64(hw as f64);
        let eps = T::from_f64(eps);
        let mut out = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(b * c);
        for plane in xv.data().chunks(hw) {
            let mean = plane.iter().copied().sum::<T>() / n;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(plane.iter().map(|&v| (v - mean) * is));
        }
        let out = Tensor::from_vec([b, c, h, w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::InstanceNorm { x, inv_std }))
    }

    /// Depth-to-space: `(B, C·r², H, W) → (B, C, H·r, W·r)` with
    /// `out[c, h·r + i, w·r + j] = in[c·r² + i·r + j, h, w]`.
    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let [b, c, h, w] = self.shape(x);
        if r == 0 || c % (r * r) != 0 {
            return Err(param_err!(
                "pixel_shuffle: {c} channels not divisible by r²={}",
                r * r
            ));
        }
        let oc = c / (r * r);
        let xv = self.value(x);
        let out = Tensor::from_fn([b, oc, h * r, w * r], |[bi, ci, y, xx]| {
            let (i, j) = (y % r, xx % r);
            xv.at([bi, ci * r * r + i * r + j, y / r, xx / r])
        });
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::PixelShuffle { x, r }))
    }

    /// Inverted dropout. In inference mode the input node is returned as is.
    pub fn feature_dropout(
        &mut self,
        x: NodeId,
        p: f64,
        training: bool,
        seed: u64,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(param_err!("dropout probability must lie in [0, 1), got {p}"));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(xv.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Dropout { x, mask }))
    }

    /// `scale · x + shift` with per-channel `(B or 1, C, 1, 1)` factors.
    pub fn affine_modulate(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    ) -> Result<NodeId> {
        let [b, c, h, w] = self.shape(x);
        for (name, id) in [("scale", scale), ("shift", shift)] {
            let [sb, sc, sh, sw] = self.shape(id);
            if sc != c || sh != 1 || sw != 1 || !(sb == b || sb == 1) {
                return Err(param_err!(
                    "affine_modulate: {name} shape {:?} incompatible with {:?}",
                    self.shape(id),
                    [b, c, h, w]
                ));
            }
        }
        let (xv, sv, tv) = (self.value(x), self.value(scale), self.value(shift));
        let hw = h * w;
        let mut data = Vec::with_capacity(xv.len());
        for (i, plane) in xv.data().chunks(hw.max(1)).enumerate() {
            let (bi, ci) = (i / c, i % c);
            let s = sv.at([bi.min(sv.batch() - 1), ci, 0, 0]);
            let t = tv.at([bi.min(tv.batch() - 1), ci, 0, 0]);
            data.extend(plane.iter().map(|&v| s * v + t));
        }
        let out = Tensor::from_vec([b, c, h, w], data)?;
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(out, rg, Op::Affine { x, scale, shift }))
    }

    /// Dense layer on `(B, F, 1, 1)` vectors; `w` is `(O, F, 1, 1)`, `b` is `(O, 1, 1, 1)`.
    pub fn fully_connected(&mut self, v: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let [batch, f, vh, vw] = self.shape(v);
        let [o, wf, wh, ww] = self.shape(w);
        if vh != 1 || vw != 1 || wh != 1 || ww != 1 || wf != f {
            return Err(param_err!(
                "fully_connected: weight {:?} incompatible with vector {:?}",
                self.shape(w),
                self.shape(v)
            ));
        }
        if self.shape(b) != [o, 1, 1, 1] {
            return Err(param_err!("fully_connected: bias must be ({o},1,1,1)"));
        }
        let mut out = vec![T::zero(); batch * o];
        let (vv, wv, bv) = (self.value(v), self.value(w), self.value(b));
        // out (B×O) = V (B×F) · Wᵀ (F×O)
        T::gemm(
            batch,
            f,
            o,
            T::one(),
            (vv.data(), f as isize, 1),
            (wv.data(), 1, f as isize),
            T::zero(),
            (&mut out, o as isize, 1),
        );
        for row in out.chunks_mut(o.max(1)) {
            for (y, &bb) in row.iter_mut().zip(bv.data()) {
                *y = *y + bb;
            }
        }
        let t = Tensor::from_vec([batch, o, 1, 1], out)?;
        let rg = self.rg(&[v, w, b]);
        Ok(self.push(t, rg, Op::Linear { v, w, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Mul { a, b }))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        if !c.is_finite() {
            return Err(param_err!("scale: non-finite factor {c}"));
        }
        let c = T::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Scale { x, c }))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [ba, ca, ha, wa] = self.shape(a);
        let [bb, cb, hb, wb] = self.shape(b);
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(param_err!(
                "concat: {:?} and {:?} differ outside the channel axis",
                self.shape(a),
                self.shape(b)
            ));
        }
        let (pa, pb) = (ca * ha * wa, cb * hb * wb);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..ba {
            data.extend_from_slice(&av[i * pa..(i + 1) * pa]);
            data.extend_from_slice(&bv[i * pb..(i + 1) * pb]);
        }
        let out = Tensor::from_vec([ba, ca + cb, ha, wa], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Concat { a, b }))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = T::from_f64(p.len().max(1) as f64);
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>();
        let out = Tensor::from_vec([1, 1, 1, 1], vec![s / n])?;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(out, rg, Op::Mse { pred, target }))
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(pred, target, "l1_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = T::from_f64(p.len().max(1) as f64);
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum::<T>();
        let out = Tensor::from_vec([1, 1, 1, 1], vec![s / n])?;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(out, rg, Op::L1 { pred, target }))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(param_err!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor<T>) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    /// Back-propagate from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::State(
                "backward already ran on this graph; call reset() first".into(),
            ));
        }
        if self.shape(loss) != [1, 1, 1, 1] {
            return Err(param_err!(
                "backward: loss must be a scalar, got {:?}",
                self.shape(loss)
            ));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Tensor::full([1, 1, 1, 1], T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        // The op is moved out temporarily so that input values can be read
        // while gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let res = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        res
    }

    fn propagate_op(&mut self, i: usize, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.requires_grad(x), self.requires_grad(w), self.requires_grad(b));
                let batch = self.shape(x)[0];
                let grads = conv2d_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    g.data(),
                    &geom,
                    batch,
                    need,
                );
                if let Some(dx) = grads.dx {
                    let t = Tensor::from_vec(self.shape(x), dx)?;
                    self.accumulate(x, t);
                }
                if let Some(dw) = grads.dw {
                    let t = Tensor::from_vec(self.shape(w), dw)?;
                    self.accumulate(w, t);
                }
                if let Some(db) = grads.db {
                    let t = Tensor::from_vec(self.shape(b), db)?;
                    self.accumulate(b, t);
                }
            }
            Op::Act { x, kind } => {
                if self.requires_grad(x) {
                    let slope = match kind {
                        Activation::Relu => T::zero(),
                        Activation::LeakyRelu(s) => T::from_f64(s),
                    };
                    let xv = self.value(x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { gv * slope })
                        .collect();
                    let t = Tensor::from_vec(xv.shape(), data)?;
                    self.accumulate(x, t);
                }
            }
            Op::AvgPool { x, k, stride } => {
                if self.requires_grad(x) {
                    let shape = self.shape(x);
                    let mut dx = Tensor::zeros(shape);
                    let inv = T::from_f64(1.0 / (k * k) as f64);
                    let [b, c, oh, ow] = g.shape();
                    for bi in 0..b {
                        for ci in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g.at([bi, ci, oy, ox]) * inv;
                                    for dy in 0..k {
                                        for dxx in 0..k {
                                            let idx = [bi, ci, oy * stride + dy, ox * stride + dxx];
                                            let o = dx.offset(idx);
                                            dx.data_mut()[o] = dx.data()[o] + gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.requires_grad(x) {
                    let shape = self.shape(x);
                    let hw = shape[2] * shape[3];
                    let inv = T::from_f64(1.0 / hw as f64);
                    let mut data = Vec::with_capacity(shape.iter().product());
                    for &gv in g.data() {
                        data.extend(std::iter::repeat(gv * inv).take(hw));
                    }
                    self.accumulate(x, Tensor::from_vec(shape, data)?);
                }
            }
            Op::InstanceNorm { x, ref inv_std } => {
                if self.requires_grad(x) {
                    let y = &self.nodes[i].value;
                    let shape = y.shape();
                    let hw = shape[2] * shape[3];
                    let n = T::from_f64(hw as f64);
                    let mut dx = Vec::with_capacity(y.len());
                    for ((yp, gp), &is) in y.data().chunks(hw).zip(g.data().chunks(hw)).zip(inv_std) {
                        let mean_g = gp.iter().copied().sum::<T>() / n;
                        let mean_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / n;
                        dx.extend(
                            gp.iter()
                                .zip(yp)
                                .map(|(&gv, &yv)| is * (gv - mean_g - yv * mean_gy)),
                        );
                    }
                    let t = Tensor::from_vec(shape, dx)?;
                    self.accumulate(x, t);
                }
            }
            Op::PixelShuffle { x, r } => {
                if self.requires_grad(x) {
                    let shape = self.shape(x);
                    let dx = Tensor::from_fn(shape, |[bi, ci, y, xx]| {
                        let oc = ci / (r * r);
                        let rem = ci % (r * r);
                        g.at([bi, oc, y * r + rem / r, xx * r + rem % r])
                    });
                    self.accumulate(x, dx);
                }
            }
            Op::Dropout { x, ref mask } => {
                if self.requires_grad(x) {
                    let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    let t = Tensor::from_vec(g.shape(), data)?;
                    self.accumulate(x, t);
                }
            }
            Op::Affine { x, scale, shift } => {
                let [b, c, h, w] = self.shape(x);
                let hw = h * w;
                let (xv, sv) = (self.value(x), self.value(scale));
                let mut dscale = Tensor::zeros(self.shape(scale));
                let mut dshift = Tensor::zeros(self.shape(shift));
                let mut dx = Vec::with_capacity(xv.len());
                let need_x = self.requires_grad(x);
                for (k, (xp, gp)) in xv.data().chunks(hw.max(1)).zip(g.data().chunks(hw.max(1))).enumerate() {
                    let (bi, ci) = (k / c, k % c);
                    let s = sv.at([bi.min(sv.batch() - 1), ci, 0, 0]);
                    let si = [bi.min(dscale.batch() - 1), ci, 0, 0];
                    let ti = [bi.min(dshift.batch() - 1), ci, 0, 0];
                    let ds = xp.iter().zip(gp).map(|(&a, &gg)| a * gg).sum::<T>();
                    let dt = gp.iter().copied().sum::<T>();
                    dscale.set(si, dscale.at(si) + ds);
                    dshift.set(ti, dshift.at(ti) + dt);
                    if need_x {
                        dx.extend(gp.iter().map(|&gg| gg * s));
                    }
                }
                let _ = b;
                if need_x {
                    let t = Tensor::from_vec(self.shape(x), dx)?;
                    self.accumulate(x, t);
                }
                self.accumulate(scale, dscale);
                self.accumulate(shift, dshift);
            }
            Op::Linear { v, w, b } => {
                let [batch, f, _, _] = self.shape(v);
                let o = self.shape(w)[0];
                if self.requires_grad(v) {
                    // dV (B×F) = G (B×O) · W (O×F)
                    let mut dv = vec![T::zero(); batch * f];
                    T::gemm(
                        batch,
                        o,
                        f,
                        T::one(),
                        (g.data(), o as isize, 1),
                        (self.value(w).data(), f as isize, 1),
                        T::zero(),
                        (&mut dv, f as isize, 1),
                    );
                    let t = Tensor::from_vec(self.shape(v), dv)?;
                    self.accumulate(v, t);
                }
                if self.requires_grad(w) {
                    // dW (O×F) = Gᵀ (O×B) · V (B×F)
                    let mut dw = vec![T::zero(); o * f];
                    T::gemm(
                        o,
                        batch,
                        f,
                        T::one(),
                        (g.data(), 1, o as isize),
                        (self.value(v).data(), f as isize, 1),
                        T::zero(),
                        (&mut dw, f as isize, 1),
                    );
                    let t = Tensor::from_vec(self.shape(w), dw)?;
                    self.accumulate(w, t);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); o];
                    for row in g.data().chunks(o) {
                        for (acc, &gv) in db.iter_mut().zip(row) {
                            *acc = *acc + gv;
                        }
                    }
                    let t = Tensor::from_vec(self.shape(b), db)?;
                    self.accumulate(b, t);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Mul { a, b } => {
                if self.requires_grad(a) {
                    let bv = self.value(b);
                    let data = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    let t = Tensor::from_vec(g.shape(), data)?;
                    self.accumulate(a, t);
                }
                if self.requires_grad(b) {
                    let av = self.value(a);
                    let data = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    let t = Tensor::from_vec(g.shape(), data)?;
                    self.accumulate(b, t);
                }
            }
            Op::Scale { x, c } => {
                if self.requires_grad(x) {
                    self.accumulate(x, g.map(|v| v * c));
                }
            }
            Op::Concat { a, b } => {
                let [bs, ca, h, w] = self.shape(a);
                let cb = self.shape(b)[1];
                let (pa, pb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(bs * pa);
                let mut db = Vec::with_capacity(bs * pb);
                for chunk in g.data().chunks(pa + pb) {
                    da.extend_from_slice(&chunk[..pa]);
                    db.extend_from_slice(&chunk[pa..]);
                }
                let ta = Tensor::from_vec(self.shape(a), da)?;
                let tb = Tensor::from_vec(self.shape(b), db)?;
                self.accumulate(a, ta);
                self.accumulate(b, tb);
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(pred), self.value(target));
                let scale = g.data()[0] * T::from_f64(2.0 / p.len().max(1) as f64);
                let dp: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * scale).collect();
                let shape = p.shape();
                if self.requires_grad(target) {
                    let dt = dp.iter().map(|&v| -v).collect();
                    self.accumulate(target, Tensor::from_vec(shape, dt)?);
                }
                self.accumulate(pred, Tensor::from_vec(shape, dp)?);
            }
            Op::L1 { pred, target } => {
                let (p, t) = (self.value(pred), self.value(target));
                let scale = g.data()[0] * T::from_f64(1.0 / p.len().max(1) as f64);
                let dp: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        let d = a - b;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let shape = p.shape();
                if self.requires_grad(target) {
                    let dt = dp.iter().map(|&v| -v).collect();
                    self.accumulate(target, Tensor::from_vec(shape, dt)?);
                }
                self.accumulate(pred, Tensor::from_vec(shape, dp)?);
            }
        }
        Ok(())
    }
}
