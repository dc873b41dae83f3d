use std::collections::HashMap;

use super::conv::{self, ConvGeom, DepthwiseGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    /// Right operand is a single value.
    ScalarRhs,
    /// Left operand is a single value.
    ScalarLhs,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    Depthwise { x: Var, k: Var, b: Var, geom: DepthwiseGeom },
    Upsample2x { x: Var },
    PixelUnshuffle { x: Var, factor: usize },
    PixelShuffle { x: Var, factor: usize },
    SimpleGate { x: Var },
    LayerNormC { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Add { a: Var, b: Var, bc: Bcast },
    Sub { a: Var, b: Var, bc: Bcast },
    Mul { a: Var, b: Var, bc: Bcast },
    Scale { a: Var, c: T },
    Abs { a: Var },
    L1Mean { a: Var, b: Var },
    Sum { a: Var },
    Mean { a: Var },
    /// Scalar output whose gradient w.r.t. `x` was computed during the forward pass.
    ScalarFn { x: Var, local_grad: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape. Nodes are appended in execution order, which is a
/// topological order, so backward is a single reverse sweep.
///
/// A graph is single-threaded scratch space for one forward/backward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf treated as a constant by `backward`.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of `x: [N,C,H,W]` with `k: [Co,C,kh,kw]` plus `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        let [n, c, h, w] = self.value(x).dims4("conv2d")?;
        let [co, ci, kh, kw] = self.value(k).dims4("conv2d kernel")?;
        if ci != c {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ks });
        }
        if self.value(b).shape() != [co] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: ks,
                rhs: self.value(b).shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if hp < kh || wp < kw || (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(Error::ShapeMismatch { op: "conv2d (non-integral output size)", lhs: xs, rhs: ks });
        }
        let geom = ConvGeom {
            n,
            c_in: c,
            h,
            w,
            c_out: co,
            kh,
            kw,
            stride,
            pad: padding,
            h_out: (hp - kh) / stride + 1,
            w_out: (wp - kw) / stride + 1,
        };
        let data = conv::conv2d_forward(&geom, self.value(x).data(), self.value(k).data(), self.value(b).data());
        let out = Tensor::new([n, co, geom.h_out, geom.w_out], data)?;
        self.push("conv2d", out, Op::Conv2d { x, k, b, geom }, &[x, k, b])
    }

    /// Per-channel (depthwise) stride-1 convolution, `k: [C,1,kh,kw]`, `b: [C]`.
    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, b: Var, padding: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("depthwise_conv2d")?;
        let [kc, one, kh, kw] = self.value(k).dims4("depthwise_conv2d kernel")?;
        if kc != c || one != 1 || self.value(b).shape() != [c] || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::ShapeMismatch {
                op: "depthwise_conv2d",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(k).shape().to_vec(),
            });
        }
        let geom = DepthwiseGeom { n, c, h, w, kh, kw, pad: padding };
        let data = conv::depthwise_forward(&geom, self.value(x).data(), self.value(k).data(), self.value(b).data());
        let out = Tensor::new([n, c, geom.h_out(), geom.w_out()], data)?;
        self.push("depthwise_conv2d", out, Op::Depthwise { x, k, b, geom }, &[x, k, b])
    }

    /// Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("upsample_nearest2x")?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(p * h2 + y) * w2 + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new([n, c, h2, w2], out)?;
        self.push("upsample_nearest2x", out, Op::Upsample2x { x }, &[x])
    }

    /// Space-to-depth: `[N,C,H,W] -> [N,C·f²,H/f,W/f]`.
    pub fn pixel_unshuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pixel_unshuffle")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::InvalidShape {
                op: "pixel_unshuffle",
                shape: self.value(x).shape().to_vec(),
                reason: format!("spatial extents not divisible by {factor}"),
            });
        }
        let out = shuffle_data(self.value(x).data(), [n, c, h, w], factor, false);
        let out = Tensor::new([n, c * factor * factor, h / factor, w / factor], out)?;
        self.push("pixel_unshuffle", out, Op::PixelUnshuffle { x, factor }, &[x])
    }

    /// Depth-to-space, inverse of [`Graph::pixel_unshuffle`].
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pixel_shuffle")?;
        if factor == 0 || c % (factor * factor) != 0 {
            return Err(Error::InvalidShape {
                op: "pixel_shuffle",
                shape: self.value(x).shape().to_vec(),
                reason: format!("channels not divisible by {}", factor * factor),
            });
        }
        let cf = c / (factor * factor);
        let out = shuffle_data(self.value(x).data(), [n, cf, h * factor, w * factor], factor, true);
        let out = Tensor::new([n, cf, h * factor, w * factor], out)?;
        self.push("pixel_shuffle", out, Op::PixelShuffle { x, factor }, &[x])
    }

    /// Splits channels in half and multiplies the halves.
    pub fn simple_gate(&mut self, x: Var) -> Result<Var> {
        let [n, c2, h, w] = self.value(x).dims4("simple_gate")?;
        if c2 % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "simple_gate",
                shape: self.value(x).shape().to_vec(),
                reason: "channel count must be even".into(),
            });
        }
        let c = c2 / 2;
        let plane = c * h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * plane);
        for b in 0..n {
            let lo = &src[b * 2 * plane..b * 2 * plane + plane];
            let hi = &src[b * 2 * plane + plane..(b + 1) * 2 * plane];
            out.extend(lo.iter().zip(hi).map(|(&p, &q)| p * q));
        }
        let out = Tensor::new([n, c, h, w], out)?;
        self.push("simple_gate", out, Op::SimpleGate { x }, &[x])
    }

    /// Layer norm across the channel axis at every `(n, h, w)` position.
    pub fn layer_norm_channels(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("layer_norm_channels")?;
        if self.value(gain).shape() != [c] || self.value(bias).shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm_channels",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        if eps <= T::zero() {
            return Err(Error::invalid("layer_norm_channels eps must be positive"));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let bb = self.value(bias).data();
        let inv_c = T::one() / T::from_usize(c).unwrap();
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); n * hw];
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean += src[base + ch * hw + p];
                }
                mean *= inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = src[base + ch * hw + p] - mean;
                    var += d * d;
                }
                var *= inv_c;
                let is = T::one() / (var + eps).sqrt();
                inv_std[b * hw + p] = is;
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    let xh = (src[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bb[ch];
                }
            }
        }
        let out = Tensor::new([n, c, h, w], out)?;
        self.push(
            "layer_norm_channels",
            out,
            Op::LayerNormC { x, gain, bias, xhat, inv_std },
            &[x, gain, bias],
        )
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(Bcast::Same)
        } else if sb.is_scalar() {
            Ok(Bcast::ScalarRhs)
        } else if sa.is_scalar() {
            Ok(Bcast::ScalarLhs)
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.shape().to_vec(),
                rhs: sb.shape().to_vec(),
            })
        }
    }

    fn binary(&self, bc: Bcast, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        match bc {
            Bcast::Same => Tensor {
                shape: ta.shape().to_vec(),
                data: ta.data().iter().zip(tb.data()).map(|(&p, &q)| f(p, q)).collect(),
            },
            Bcast::ScalarRhs => {
                let q = tb.item();
                ta.map(|p| f(p, q))
            }
            Bcast::ScalarLhs => {
                let p = ta.item();
                tb.map(|q| f(p, q))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("add", a, b)?;
        let out = self.binary(bc, a, b, |p, q| p + q);
        self.push("add", out, Op::Add { a, b, bc }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("sub", a, b)?;
        let out = self.binary(bc, a, b, |p, q| p - q);
        self.push("sub", out, Op::Sub { a, b, bc }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("mul", a, b)?;
        let out = self.binary(bc, a, b, |p, q| p * q);
        self.push("mul", out, Op::Mul { a, b, bc }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push("scale", out, Op::Scale { a, c }, &[a])
    }

    /// `|a|` with subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.abs());
        self.push("abs", out, Op::Abs { a }, &[a])
    }

    /// Mean absolute difference `mean(|a - b|)` as a scalar.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "l1_mean",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        if ta.is_empty() {
            return Err(Error::Empty("l1_mean"));
        }
        let s: T = ta.data().iter().zip(tb.data()).map(|(&p, &q)| (p - q).abs()).sum();
        let out = Tensor::scalar(s / T::from_usize(ta.len()).unwrap());
        self.push("l1_mean", out, Op::L1Mean { a, b }, &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let out = Tensor::scalar(t.sum() / T::from_usize(t.len()).unwrap());
        self.push("mean", out, Op::Mean { a }, &[a])
    }

    /// Records a scalar function of `x` whose value and gradient the caller
    /// already computed. Used by the sort- and spectrum-based losses.
    pub fn scalar_fn(&mut self, op_name: &'static str, x: Var, value: T, local_grad: Tensor<T>) -> Result<Var> {
        if local_grad.shape() != self.value(x).shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.value(x).shape().to_vec(),
                rhs: local_grad.shape().to_vec(),
            });
        }
        if !local_grad.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.push(op_name, Tensor::scalar(value), Op::ScalarFn { x, local_grad }, &[x])
    }

    /// Reverse-mode sweep from a scalar `loss`. Returns a gradient for every
    /// leaf created with `requires_grad`, zeros where the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape().to_vec(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.backward_node(node, &dy, &mut grads);
            // Interior gradients are no longer needed once propagated.
        }

        let mut out = HashMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                out.insert(id, g);
            }
        }
        Ok(Gradients { map: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, g: Vec<T>| accumulate(grads, v, self.value(v).shape(), g);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, geom } => {
                let want = [self.wants(*x), self.wants(*k), self.wants(*b)];
                let (dx, dk, db) =
                    conv::conv2d_backward(geom, self.value(*x).data(), self.value(*k).data(), dy.data(), want);
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dk {
                    acc(*k, d);
                }
                if let Some(d) = db {
                    acc(*b, d);
                }
            }
            Op::Depthwise { x, k, b, geom } => {
                let want = [self.wants(*x), self.wants(*k), self.wants(*b)];
                let (dx, dk, db) =
                    conv::depthwise_backward(geom, self.value(*x).data(), self.value(*k).data(), dy.data(), want);
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dk {
                    acc(*k, d);
                }
                if let Some(d) = db {
                    acc(*b, d);
                }
            }
            Op::Upsample2x { x } => {
                let [n, c, h, w] = self.value(*x).dims4("upsample").unwrap();
                let (h2, w2) = (2 * h, 2 * w);
                let d = dy.data();
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(p * h + y / 2) * w + xx / 2] += d[(p * h2 + y) * w2 + xx];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::PixelUnshuffle { x, factor } => {
                let dims = self.value(*x).dims4("pixel_unshuffle").unwrap();
                acc(*x, shuffle_data(dy.data(), dims, *factor, true));
            }
            Op::PixelShuffle { x, factor } => {
                let dims = node.value.dims4("pixel_shuffle").unwrap();
                acc(*x, shuffle_data(dy.data(), dims, *factor, false));
            }
            Op::SimpleGate { x } => {
                let [n, c, h, w] = node.value.dims4("simple_gate").unwrap();
                let plane = c * h * w;
                let src = self.value(*x).data();
                let d = dy.data();
                let mut dx = vec![T::zero(); src.len()];
                for b in 0..n {
                    let base = b * 2 * plane;
                    for i in 0..plane {
                        let g = d[b * plane + i];
                        dx[base + i] = g * src[base + plane + i];
                        dx[base + plane + i] = g * src[base + i];
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNormC { x, gain, bias, xhat, inv_std } => {
                let [n, c, h, w] = node.value.dims4("layer_norm_channels").unwrap();
                let hw = h * w;
                let g = self.value(*gain).data();
                let d = dy.data();
                let inv_c = T::one() / T::from_usize(c).unwrap();
                if self.wants(*gain) || self.wants(*bias) {
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            for p in 0..hw {
                                dg[ch] += d[off + p] * xhat[off + p];
                                db[ch] += d[off + p];
                            }
                        }
                    }
                    if self.wants(*gain) {
                        acc(*gain, dg);
                    }
                    if self.wants(*bias) {
                        acc(*bias, db);
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); d.len()];
                    for b in 0..n {
                        let base = b * c * hw;
                        for p in 0..hw {
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for ch in 0..c {
                                let i = base + ch * hw + p;
                                let dxh = d[i] * g[ch];
                                m1 += dxh;
                                m2 += dxh * xhat[i];
                            }
                            m1 *= inv_c;
                            m2 *= inv_c;
                            let is = inv_std[b * hw + p];
                            for ch in 0..c {
                                let i = base + ch * hw + p;
                                dx[i] = is * (d[i] * g[ch] - m1 - xhat[i] * m2);
                            }
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Add { a, b, bc } => {
                self.bcast_back(*bc, *a, *b, dy, |g, _, _| g, |g, _, _| g, &mut acc);
            }
            Op::Sub { a, b, bc } => {
                self.bcast_back(*bc, *a, *b, dy, |g, _, _| g, |g, _, _| -g, &mut acc);
            }
            Op::Mul { a, b, bc } => {
                self.bcast_back(*bc, *a, *b, dy, |g, _, q| g * q, |g, p, _| g * p, &mut acc);
            }
            Op::Scale { a, c } => acc(*a, dy.data().iter().map(|&g| g * *c).collect()),
            Op::Abs { a } => {
                let src = self.value(*a).data();
                acc(*a, dy.data().iter().zip(src).map(|(&g, &v)| g * sign(v)).collect());
            }
            Op::L1Mean { a, b } => {
                let g = dy.item() / T::from_usize(self.value(*a).len()).unwrap();
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let base: Vec<T> = ta.iter().zip(tb).map(|(&p, &q)| g * sign(p - q)).collect();
                if self.wants(*b) {
                    acc(*b, base.iter().map(|&v| -v).collect());
                }
                if self.wants(*a) {
                    acc(*a, base);
                }
            }
            Op::Sum { a } => acc(*a, vec![dy.item(); self.value(*a).len()]),
            Op::Mean { a } => {
                let n = self.value(*a).len();
                acc(*a, vec![dy.item() / T::from_usize(n).unwrap(); n]);
            }
            Op::ScalarFn { x, local_grad } => {
                let g = dy.item();
                acc(*x, local_grad.data().iter().map(|&v| v * g).collect());
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn bcast_back(
        &self,
        bc: Bcast,
        a: Var,
        b: Var,
        dy: &Tensor<T>,
        da: impl Fn(T, T, T) -> T,
        db: impl Fn(T, T, T) -> T,
        acc: &mut impl FnMut(Var, Vec<T>),
    ) {
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let d = dy.data();
        let at = |i: usize| match bc {
            Bcast::ScalarLhs => ta[0],
            _ => ta[i],
        };
        let bt = |i: usize| match bc {
            Bcast::ScalarRhs => tb[0],
            _ => tb[i],
        };
        if self.wants(a) {
            let full: Vec<T> = (0..d.len()).map(|i| da(d[i], at(i), bt(i))).collect();
            match bc {
                Bcast::ScalarLhs => acc(a, vec![full.into_iter().sum()]),
                _ => acc(a, full),
            }
        }
        if self.wants(b) {
            let full: Vec<T> = (0..d.len()).map(|i| db(d[i], at(i), bt(i))).collect();
            match bc {
                Bcast::ScalarRhs => acc(b, vec![full.into_iter().sum()]),
                _ => acc(b, full),
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], g: Vec<T>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (d, s) in t.data_mut().iter_mut().zip(g) {
                *d += s;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: g,
            })
        }
    }
}

/// Moves data between `[N,C,H,W]` (given as `dims`) and `[N,C·f²,H/f,W/f]`.
/// `to_space = false` gathers into the low-resolution layout; `true` scatters back.
fn shuffle_data<T: Real>(src: &[T], dims: [usize; 4], f: usize, to_space: bool) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (hs, ws) = (h / f, w / f);
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let hi = ((b * c + ch) * h + y) * w + x;
                    let sub = ch * f * f + (y % f) * f + (x % f);
                    let lo = ((b * c * f * f + sub) * hs + y / f) * ws + x / f;
                    if to_space {
                        out[hi] = src[lo];
                    } else {
                        out[lo] = src[hi];
                    }
                }
            }
        }
    }
    out
}

/// Gradients keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.map.get(&v.0)
    }

    pub fn wrt(&self, v: Var) -> Result<&Tensor<T>> {
        self.get(v)
            .ok_or_else(|| Error::invalid(format!("no gradient recorded for node {}", v.0)))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
