//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends its output to the tape, so the tape order is a
//! topological order and `backward` is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims, UpDims};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    UpConv {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: UpDims,
    },
    Concat {
        a: usize,
        b: usize,
        batch: usize,
        a_plane: usize,
        b_plane: usize,
    },
    Crop {
        input: usize,
        top: usize,
        left: usize,
    },
    Relu {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        input: usize,
    },
    WeightedBce {
        logits: usize,
        target: Vec<T>,
        pos_weight: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    tensor: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape4(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 4]> {
    match t.shape[..] {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::Shape(format!("{what} must be 4-d, got {:?}", t.shape))),
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic function in the branch-by-sign form, clamped into the open interval (0, 1).
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let top = T::one() - T::epsilon() / (T::one() + T::one());
    s.max(T::min_positive_value()).min(top)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Gradient("variable does not belong to this graph".into()));
        }
        Ok(v.index)
    }

    fn push(&mut self, mut tensor: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        tensor.requires_grad = inputs.iter().any(|&i| self.nodes[i].tensor.requires_grad);
        tensor.grad = None;
        self.nodes.push(Node { tensor, op });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records an input tensor; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.nodes.push(Node { tensor, op: Op::Leaf });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("foreign variable")].tensor
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.tensor(v).values
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.tensor(v).grad.as_deref()
    }

    /// Clears every stored gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.tensor.grad = None;
        }
    }

    /// 3x3 (or any odd square) same-padded convolution, stride 1.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (i, k, b) = (self.idx(input)?, self.idx(kernel)?, self.idx(bias)?);
        let [batch, cin, h, w] = shape4(&self.nodes[i].tensor, "conv input")?;
        let [cout, kcin, kh, kw] = shape4(&self.nodes[k].tensor, "conv kernel")?;
        if kcin != cin {
            return Err(Error::Shape(format!(
                "conv kernel expects {kcin} input channels, got {cin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv kernel must be odd and square, got {kh}x{kw}"
            )));
        }
        if self.nodes[b].tensor.shape != [cout] {
            return Err(Error::Shape(format!(
                "conv bias must be [{cout}], got {:?}",
                self.nodes[b].tensor.shape
            )));
        }
        let dims = ConvDims {
            batch,
            cin,
            cout,
            h,
            w,
            k: kh,
        };
        let out = kernels::conv2d_forward(
            &self.nodes[i].tensor.values,
            &self.nodes[k].tensor.values,
            &self.nodes[b].tensor.values,
            &dims,
        );
        let t = Tensor::new(vec![batch, cout, h, w], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                input: i,
                kernel: k,
                bias: b,
                dims,
            },
            &[i, k, b],
        ))
    }

    pub fn max_pool_2x2(&mut self, input: Var) -> Result<Var> {
        let i = self.idx(input)?;
        let [batch, c, h, w] = shape4(&self.nodes[i].tensor, "pool input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("max pool needs even spatial dims, got {h}x{w}")));
        }
        let (out, argmax) = kernels::max_pool_forward(&self.nodes[i].tensor.values, batch * c, h, w);
        let t = Tensor::new(vec![batch, c, h / 2, w / 2], out)?;
        Ok(self.push(t, Op::MaxPool { input: i, argmax }, &[i]))
    }

    /// Stride-2 2x2 transposed convolution; kernel shape `[cin, cout, 2, 2]`.
    pub fn transposed_conv_2x2(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (i, k, b) = (self.idx(input)?, self.idx(kernel)?, self.idx(bias)?);
        let [batch, cin, h, w] = shape4(&self.nodes[i].tensor, "up-conv input")?;
        let [kcin, cout, kh, kw] = shape4(&self.nodes[k].tensor, "up-conv kernel")?;
        if kcin != cin {
            return Err(Error::Shape(format!(
                "up-conv kernel expects {kcin} input channels, got {cin}"
            )));
        }
        if (kh, kw) != (2, 2) {
            return Err(Error::Shape(format!("up-conv kernel must be 2x2, got {kh}x{kw}")));
        }
        if self.nodes[b].tensor.shape != [cout] {
            return Err(Error::Shape(format!("up-conv bias must be [{cout}]")));
        }
        let dims = UpDims { batch, cin, cout, h, w };
        let out = kernels::tconv_forward(
            &self.nodes[i].tensor.values,
            &self.nodes[k].tensor.values,
            &self.nodes[b].tensor.values,
            &dims,
        );
        let t = Tensor::new(vec![batch, cout, 2 * h, 2 * w], out)?;
        Ok(self.push(
            t,
            Op::UpConv {
                input: i,
                kernel: k,
                bias: b,
                dims,
            },
            &[i, k, b],
        ))
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let [ba, ca, ha, wa] = shape4(&self.nodes[ia].tensor, "concat lhs")?;
        let [bb, cb, hb, wb] = shape4(&self.nodes[ib].tensor, "concat rhs")?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::Shape(format!(
                "concat needs matching batch and spatial dims, got {:?} and {:?}",
                self.nodes[ia].tensor.shape, self.nodes[ib].tensor.shape
            )));
        }
        let (pa, pb) = (ca * ha * wa, cb * hb * wb);
        let mut out = Vec::with_capacity(ba * (pa + pb));
        for n in 0..ba {
            out.extend_from_slice(&self.nodes[ia].tensor.values[n * pa..(n + 1) * pa]);
            out.extend_from_slice(&self.nodes[ib].tensor.values[n * pb..(n + 1) * pb]);
        }
        let t = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        Ok(self.push(
            t,
            Op::Concat {
                a: ia,
                b: ib,
                batch: ba,
                a_plane: pa,
                b_plane: pb,
            },
            &[ia, ib],
        ))
    }

    /// Spatial window `[top, top + h) x [left, left + w)`.
    pub fn crop(&mut self, input: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let [batch, c, ih, iw] = shape4(&self.nodes[i].tensor, "crop input")?;
        if top + h > ih || left + w > iw {
            return Err(Error::Shape(format!("crop {h}x{w}+{top}+{left} exceeds {ih}x{iw}")));
        }
        let src = &self.nodes[i].tensor.values;
        let mut out = Vec::with_capacity(batch * c * h * w);
        for p in 0..batch * c {
            for y in 0..h {
                let start = p * ih * iw + (y + top) * iw + left;
                out.extend_from_slice(&src[start..start + w]);
            }
        }
        let t = Tensor::new(vec![batch, c, h, w], out)?;
        Ok(self.push(t, Op::Crop { input: i, top, left }, &[i]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let src = &self.nodes[i].tensor;
        let t = Tensor::new(
            src.shape.clone(),
            src.values.iter().map(|&v| v.max(T::zero())).collect(),
        )?;
        Ok(self.push(t, Op::Relu { input: i }, &[i]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let src = &self.nodes[i].tensor;
        let t = Tensor::new(
            src.shape.clone(),
            src.values.iter().map(|&v| sigmoid_scalar(v)).collect(),
        )?;
        Ok(self.push(t, Op::Sigmoid { input: i }, &[i]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ia].tensor.shape != self.nodes[ib].tensor.shape {
            return Err(Error::Shape("mul needs equal shapes".into()));
        }
        let values = self.nodes[ia]
            .tensor
            .values
            .iter()
            .zip(&self.nodes[ib].tensor.values)
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.nodes[ia].tensor.shape.clone(), values)?;
        Ok(self.push(t, Op::Mul { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let s = self.nodes[i].tensor.values.iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input: i }, &[i]))
    }

    /// Mean over all pixels of `pos_weight * y * softplus(-z) + (1 - y) * softplus(z)`.
    pub fn weighted_bce_with_logits(&mut self, logits: Var, target: &[T], pos_weight: T) -> Result<Var> {
        let i = self.idx(logits)?;
        let z = &self.nodes[i].tensor;
        if z.values.len() != target.len() {
            return Err(Error::Shape(format!(
                "logits have {} values, target has {}",
                z.values.len(),
                target.len()
            )));
        }
        if !(pos_weight > T::zero()) {
            return Err(Error::InvalidArgument("pos_weight must be > 0".into()));
        }
        if target.iter().any(|&y| y != T::zero() && y != T::one()) {
            return Err(Error::InvalidArgument("target must be binary".into()));
        }
        if target.is_empty() {
            return Err(Error::Shape("empty loss input".into()));
        }
        let n = T::from_usize(target.len()).expect("count");
        let total: T = z
            .values
            .iter()
            .zip(target)
            .map(|(&z, &y)| pos_weight * y * softplus(-z) + (T::one() - y) * softplus(z))
            .sum();
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::WeightedBce {
                logits: i,
                target: target.to_vec(),
                pos_weight,
            },
            &[i],
        ))
    }

    /// Propagates d(loss)/d(node) to every node with `requires_grad`,
    /// adding to gradients already stored.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let l = self.idx(loss)?;
        if self.nodes[l].tensor.values.len() != 1 {
            return Err(Error::Gradient(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[l].tensor.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=l).map(|_| None).collect();
        grads[l] = Some(vec![T::one()]);
        for idx in (0..=l).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].tensor.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |i: usize| self.nodes[i].tensor.requires_grad;
        let mut add = |i: usize, contrib: Vec<T>| {
            if !self.nodes[i].tensor.requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |i: usize| &self.nodes[i].tensor.values;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                dims,
            } => {
                let cg = kernels::conv2d_backward(val(*input), val(*kernel), g, dims, wants(*input));
                if let Some(d) = cg.input {
                    add(*input, d);
                }
                add(*kernel, cg.kernel);
                add(*bias, cg.bias);
            }
            Op::UpConv {
                input,
                kernel,
                bias,
                dims,
            } => {
                let cg = kernels::tconv_backward(val(*input), val(*kernel), g, dims, wants(*input));
                if let Some(d) = cg.input {
                    add(*input, d);
                }
                add(*kernel, cg.kernel);
                add(*bias, cg.bias);
            }
            Op::MaxPool { input, argmax } => {
                let mut d = vec![T::zero(); val(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    d[src] += gv;
                }
                add(*input, d);
            }
            Op::Concat {
                a,
                b,
                batch,
                a_plane,
                b_plane,
            } => {
                let stride = a_plane + b_plane;
                let mut da = Vec::with_capacity(batch * a_plane);
                let mut db = Vec::with_capacity(batch * b_plane);
                for n in 0..*batch {
                    da.extend_from_slice(&g[n * stride..n * stride + a_plane]);
                    db.extend_from_slice(&g[n * stride + a_plane..(n + 1) * stride]);
                }
                add(*a, da);
                add(*b, db);
            }
            Op::Crop { input, top, left } => {
                let ishape = &self.nodes[*input].tensor.shape;
                let oshape = &self.nodes[idx].tensor.shape;
                let (ih, iw) = (ishape[2], ishape[3]);
                let (h, w) = (oshape[2], oshape[3]);
                let mut d = vec![T::zero(); val(*input).len()];
                for p in 0..oshape[0] * oshape[1] {
                    for y in 0..h {
                        let dst = p * ih * iw + (y + top) * iw + left;
                        d[dst..dst + w].copy_from_slice(&g[(p * h + y) * w..(p * h + y + 1) * w]);
                    }
                }
                add(*input, d);
            }
            Op::Relu { input } => {
                let d = val(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                add(*input, d);
            }
            Op::Sigmoid { input } => {
                let out = &self.nodes[idx].tensor.values;
                let d = out.iter().zip(g).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
                add(*input, d);
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    add(*a, vb.iter().zip(g).map(|(&y, &gv)| y * gv).collect());
                }
                if wants(*b) {
                    add(*b, va.iter().zip(g).map(|(&x, &gv)| x * gv).collect());
                }
            }
            Op::Sum { input } => {
                add(*input, vec![g[0]; val(*input).len()]);
            }
            Op::WeightedBce {
                logits,
                target,
                pos_weight,
            } => {
                let n = T::from_usize(target.len()).expect("count");
                let scale = g[0] / n;
                let d = val(*logits)
                    .iter()
                    .zip(target)
                    .map(|(&z, &y)| {
                        // d/dz softplus(z) = sigmoid(z); d/dz softplus(-z) = -sigmoid(-z)
                        let sp = sigmoid_exact(z);
                        let sn = sigmoid_exact(-z);
                        scale * ((T::one() - y) * sp - *pos_weight * y * sn)
                    })
                    .collect();
                add(*logits, d);
            }
        }
    }
}

/// Unclamped logistic function for gradient formulas.
fn sigmoid_exact<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, -2.0, 5.0]).with_grad());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_grad_and_accumulation() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(g.backward(x).is_err());
        let mut other = Graph::<f64>::new();
        let y = other.leaf(t(&[1], &[1.0]));
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let tiny = sigmoid_scalar(-1000.0f64);
        assert!(tiny > 0.0 && tiny <= 1e-300);
        let big = sigmoid_scalar(1000.0f64);
        assert!(big < 1.0 && big > 0.999);
        assert!(sigmoid_scalar(-1000.0f32) > 0.0);
    }

    #[test]
    fn relu_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[-3.0, 3.0]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r), &[0.0, 3.0]);
    }

    #[test]
    fn conv_hand_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 3, 3], &[1.0; 9]));
        let k = g.leaf(t(&[1, 1, 3, 3], &[1.0; 9]));
        let b = g.leaf(t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b).unwrap();
        assert_eq!(g.value(y), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);

        let vals: Vec<f64> = (0..16).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = g.leaf(t(&[1, 1, 4, 4], &vals));
        let mut delta = [0.0; 9];
        delta[4] = 1.0;
        let k = g.leaf(t(&[1, 1, 3, 3], &delta));
        let y = g.conv2d(x, k, b).unwrap();
        assert_eq!(g.value(y), &vals[..]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let k = g.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.leaf(Tensor::zeros(&[1]));
        assert!(g.conv2d(x, k, b).is_err());
    }

    #[test]
    fn pool_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.max_pool_2x2(x).unwrap();
        assert_eq!(g.value(p), &[4.0]);

        let c = g.leaf(t(&[1, 1, 2, 4], &[7.0; 8]).with_grad());
        let p = g.max_pool_2x2(c).unwrap();
        assert_eq!(g.value(p), &[7.0, 7.0]);
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(c).unwrap(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let odd = g.leaf(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(g.max_pool_2x2(odd).is_err());
    }

    #[test]
    fn upconv_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 1, 1], &[2.0]));
        let k = g.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(t(&[1], &[0.0]));
        let y = g.transposed_conv_2x2(x, k, b).unwrap();
        assert_eq!(g.tensor(y).shape, vec![1, 1, 2, 2]);
        assert_eq!(g.value(y), &[2.0, 4.0, 6.0, 8.0]);

        let z = g.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        let k2 = g.leaf(t(&[1, 2, 2, 2], &[1.0; 8]));
        let b2 = g.leaf(t(&[2], &[0.5, -1.5]));
        let y = g.transposed_conv_2x2(z, k2, b2).unwrap();
        let v = g.value(y);
        assert!(v[..16].iter().all(|&e| e == 0.5));
        assert!(v[16..].iter().all(|&e| e == -1.5));
    }

    #[test]
    fn concat_examples() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[1, 1, 2, 2], &[1.0; 4]).with_grad());
        let b = g.leaf(t(&[1, 1, 2, 2], &[2.0; 4]));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.tensor(c).shape, vec![1, 2, 2, 2]);
        assert_eq!(&g.value(c)[..4], g.value(a));
        assert_eq!(&g.value(c)[4..], &[2.0; 4]);
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0; 4]);
        assert!(g.grad(b).is_none());

        let bad = g.leaf(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(g.concat_channels(a, bad).is_err());
    }

    #[test]
    fn bce_examples() {
        let mut g = Graph::new();
        let z = g.leaf(t(&[1, 1, 1, 1], &[0.0]));
        let l = g.weighted_bce_with_logits(z, &[1.0], 1.0).unwrap();
        assert!((g.value(l)[0] - std::f64::consts::LN_2).abs() < 1e-12);

        // y = 0 everywhere: independent of pos_weight
        let z = g.leaf(t(&[1, 1, 1, 3], &[-2.0, 0.3, 4.0]));
        let a = g.weighted_bce_with_logits(z, &[0.0; 3], 1.0).unwrap();
        let b = g.weighted_bce_with_logits(z, &[0.0; 3], 37.0).unwrap();
        assert_eq!(g.value(a), g.value(b));

        // pos_weight 1 equals the plain binary cross-entropy
        let zs = [-2.0, 0.3, 4.0];
        let ys = [1.0, 0.0, 1.0];
        let u = g.weighted_bce_with_logits(z, &ys, 1.0).unwrap();
        let plain: f64 = zs
            .iter()
            .zip(&ys)
            .map(|(&z, &y): (&f64, &f64)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((g.value(u)[0] - plain).abs() < 1e-12);

        assert!(g.weighted_bce_with_logits(z, &[0.0, 0.5, 1.0], 1.0).is_err());
        assert!(g.weighted_bce_with_logits(z, &[0.0, 1.0], 1.0).is_err());
        assert!(g.weighted_bce_with_logits(z, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn bce_is_finite_for_huge_logits() {
        let mut g = Graph::new();
        let z = g.leaf(t(&[1, 1, 1, 4], &[1e4, -1e4, 1e4, -1e4]).with_grad());
        let l = g.weighted_bce_with_logits(z, &[1.0, 1.0, 0.0, 0.0], 3.0).unwrap();
        assert!(g.value(l)[0].is_finite());
        g.backward(l).unwrap();
        assert!(g.grad(z).unwrap().iter().all(|v| v.is_finite()));
    }
}
