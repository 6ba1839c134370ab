//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in insertion order. Inputs always
//! precede outputs, so the recording is acyclic and `backward` simply walks
//! the nodes in reverse. Gradients are only computed for nodes that depend
//! on a leaf created with `requires_grad`; leaves without it act as
//! constants, which is how sub-networks are frozen during alternating
//! updates.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to probabilities before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Default negative slope of [`Graph::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.2;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Dense {
        input: Var,
        weight: Var,
    },
    DenseBias {
        pre: Var,
        bias: Var,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Tanh {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    ConcatColumns {
        lhs: Var,
        rhs: Var,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    Mse {
        lhs: Var,
        rhs: Var,
    },
    Bce {
        predicted: Var,
        target: Vec<T>,
    },
    BceLogits {
        logits: Var,
        target: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
}

/// A single-threaded recording of tensor operations.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_ndim<T: Scalar>(t: &Tensor<T>, ndim: usize, what: &str) -> Result<()> {
    if t.ndim() != ndim {
        return Err(Error::Shape(format!(
            "{what}: expected {ndim}-d tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sign of every leaky-ReLU input in recording order. Two evaluations
    /// with different signatures sit on different linear pieces.
    pub fn kink_signature(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { input, .. } => Some(input),
                _ => None,
            })
            .flat_map(|input| self.value(input).data().iter().map(|&v| v >= T::zero()))
            .collect()
    }

    /// Adds a leaf; it is differentiated iff `tensor.requires_grad`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        self.push(Op::Leaf, tensor)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it was computed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(op, value.with_requires_grad(rg))
    }

    fn map_unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push_derived(op, value, &[input])
    }

    /// 2-D correlation with zero padding. `input` is `[N,C,H,W]`, `kernel`
    /// `[F,C,kh,kw]`, `bias` `[F]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        expect_ndim(x, 4, "conv2d input")?;
        expect_ndim(k, 4, "conv2d kernel")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (f, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d: kernel expects {kc} input channels, input has {c}"
            )));
        }
        if b.shape() != [f] {
            return Err(Error::Shape(format!(
                "conv2d: bias shape {:?}, expected [{f}]",
                b.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d: stride must be at least 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let geom = ConvGeometry {
            batch: n,
            channels: c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let cols = kernels::im2col(x.data(), &geom);
        let out = kernels::conv2d_forward(&cols, k.data(), b.data(), f, &geom);
        let value = Tensor::new(&[n, f, geom.out_h, geom.out_w], out)?;
        value.check_finite("conv2d")?;
        Ok(self.push_derived(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            value,
            &[input, kernel, bias],
        ))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`]). `input` is
    /// `[N,C,H,W]`, `kernel` `[C,F,kh,kw]`, `bias` `[F]`; output side is
    /// `(H-1)*stride - 2*pad + kh + output_pad`.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        expect_ndim(x, 4, "conv2d_transpose input")?;
        expect_ndim(k, 4, "conv2d_transpose kernel")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kc, f, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d_transpose: kernel expects {kc} input channels, input has {c}"
            )));
        }
        if b.shape() != [f] {
            return Err(Error::Shape(format!(
                "conv2d_transpose: bias shape {:?}, expected [{f}]",
                b.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d_transpose: stride must be at least 1".into()));
        }
        if output_pad >= stride {
            return Err(Error::Shape(format!(
                "conv2d_transpose: output padding {output_pad} must be below stride {stride}"
            )));
        }
        let full_h = (h - 1) * stride + kh + output_pad;
        let full_w = (w - 1) * stride + kw + output_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::Shape(format!(
                "conv2d_transpose: padding {pad} consumes the whole {full_h}x{full_w} output"
            )));
        }
        let geom = ConvGeometry {
            batch: n,
            channels: f,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let cols = kernels::conv_transpose_cols(x.data(), k.data(), c, &geom);
        let mut out = kernels::col2im(&cols, &geom);
        let area = geom.h * geom.w;
        for (i, plane) in out.chunks_mut(area).enumerate() {
            let bf = b.data()[i % f];
            plane.iter_mut().for_each(|v| *v = *v + bf);
        }
        let value = Tensor::new(&[n, f, geom.h, geom.w], out)?;
        value.check_finite("conv2d_transpose")?;
        Ok(self.push_derived(
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            },
            value,
            &[input, kernel, bias],
        ))
    }

    /// Affine map `input[N,D] · weight[D,K] + bias[K]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        expect_ndim(x, 2, "dense input")?;
        expect_ndim(wt, 2, "dense weight")?;
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let (wd, k) = (wt.shape()[0], wt.shape()[1]);
        if wd != d {
            return Err(Error::Shape(format!(
                "dense: input has {d} features, weight expects {wd}"
            )));
        }
        if b.shape() != [k] {
            return Err(Error::Shape(format!(
                "dense: bias shape {:?}, expected [{k}]",
                b.shape()
            )));
        }
        let mut out = vec![T::zero(); n * k];
        T::gemm(
            n,
            d,
            k,
            T::one(),
            x.data(),
            (d, 1),
            wt.data(),
            (k, 1),
            T::zero(),
            &mut out,
            (k, 1),
        );
        let pre = Tensor::new(&[n, k], out)?;
        let pre = self.push_derived(Op::Dense { input, weight }, pre, &[input, weight]);
        let pv = self.value(pre);
        let b = self.value(bias);
        let data = pv
            .data()
            .chunks(k)
            .flat_map(|row| row.iter().zip(b.data()).map(|(&a, &c)| a + c))
            .collect();
        let value = Tensor::new(&[n, k], data)?;
        value.check_finite("dense")?;
        Ok(self.push_derived(Op::DenseBias { pre, bias }, value, &[pre, bias]))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.map_unary(input, Op::LeakyRelu { input, slope: s }, move |v| {
            if v >= T::zero() {
                v
            } else {
                s * v
            }
        })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.map_unary(input, Op::Tanh { input }, |v| v.tanh())
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.map_unary(input, Op::Sigmoid { input }, sigmoid)
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "add: shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(a.shape(), data)?;
        Ok(self.push_derived(Op::Add { lhs, rhs }, value, &[lhs, rhs]))
    }

    /// Joins `[N,A]` and `[N,B]` into `[N,A+B]`.
    pub fn concat_columns(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        expect_ndim(a, 2, "concat lhs")?;
        expect_ndim(b, 2, "concat rhs")?;
        let (n, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        if b.shape()[0] != n {
            return Err(Error::Shape(format!(
                "concat: batch sizes {n} and {} differ",
                b.shape()[0]
            )));
        }
        let mut data = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
            data.extend_from_slice(&b.data()[i * db..(i + 1) * db]);
        }
        let value = Tensor::new(&[n, da + db], data)?;
        Ok(self.push_derived(Op::ConcatColumns { lhs, rhs }, value, &[lhs, rhs]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.push_derived(Op::Reshape { input }, value, &[input]))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push_derived(Op::Sum { input }, Tensor::scalar(s), &[input])
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, _) in terms {
            if self.value(v).numel() != 1 {
                return Err(Error::Usage("weighted_sum: every term must be a scalar".into()));
            }
        }
        let terms: Vec<(Var, T)> = terms.iter().map(|&(v, w)| (v, T::from_f64(w))).collect();
        for &(v, w) in &terms {
            total = total + w * self.value(v).data()[0];
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let value = Tensor::scalar(total);
        value.check_finite("weighted_sum")?;
        Ok(self.push_derived(Op::WeightedSum { terms }, value, &inputs))
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "mse_loss: shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )));
        }
        let total: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(total / T::from_f64(a.numel() as f64));
        value.check_finite("mse_loss")?;
        Ok(self.push_derived(Op::Mse { lhs, rhs }, value, &[lhs, rhs]))
    }

    /// Mean binary cross-entropy of probabilities against constant targets.
    /// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, predicted: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(predicted);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "bce_loss: shapes {:?} and {:?} differ",
                p.shape(),
                target.shape()
            )));
        }
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let pc = clamp_prob(p);
                -(t * pc.ln() + (T::one() - t) * (T::one() - pc).ln())
            })
            .sum();
        let value = Tensor::scalar(total / T::from_f64(p.numel() as f64));
        value.check_finite("bce_loss")?;
        Ok(self.push_derived(
            Op::Bce {
                predicted,
                target: target.data().to_vec(),
            },
            value,
            &[predicted],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `target`,
    /// evaluated in logit space so the gradient never vanishes.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "bce_with_logits: shapes {:?} and {:?} differ",
                x.shape(),
                target.shape()
            )));
        }
        let total: T = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln())
            .sum();
        let value = Tensor::scalar(total / T::from_f64(x.numel() as f64));
        value.check_finite("bce_with_logits")?;
        Ok(self.push_derived(
            Op::BceLogits {
                logits,
                target: target.data().to_vec(),
            },
            value,
            &[logits],
        ))
    }

    /// Back-propagates from a scalar `loss`, filling the gradient of every
    /// node that depends on a trainable leaf. Gradients from earlier calls
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.requires_grad(loss) {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            self.nodes[id].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].value.requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let f = self.value(*kernel).shape()[0];
                let (dcols, dk) = kernels::conv2d_backward(
                    cols,
                    self.value(*kernel).data(),
                    g,
                    f,
                    geom,
                    needs(*input),
                    needs(*kernel),
                );
                if let Some(dcols) = dcols {
                    accumulate(grads, *input, kernels::col2im(&dcols, geom));
                }
                if let Some(dk) = dk {
                    accumulate(grads, *kernel, dk);
                }
                if needs(*bias) {
                    accumulate(grads, *bias, kernels::channel_sums(g, geom.batch, f, geom.out_area()));
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let in_ch = self.value(*input).shape()[1];
                if needs(*input) || needs(*kernel) {
                    let gcols = kernels::im2col(g, geom);
                    let (dx, dk) = kernels::conv_transpose_backward(
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &gcols,
                        in_ch,
                        geom,
                        needs(*input),
                        needs(*kernel),
                    );
                    if let Some(dx) = dx {
                        accumulate(grads, *input, dx);
                    }
                    if let Some(dk) = dk {
                        accumulate(grads, *kernel, dk);
                    }
                }
                if needs(*bias) {
                    accumulate(
                        grads,
                        *bias,
                        kernels::channel_sums(g, geom.batch, geom.channels, geom.h * geom.w),
                    );
                }
            }
            Op::Dense { input, weight } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let k = w.shape()[1];
                if needs(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(
                        n,
                        k,
                        d,
                        T::one(),
                        g,
                        (k, 1),
                        w.data(),
                        (1, k),
                        T::zero(),
                        &mut dx,
                        (d, 1),
                    );
                    accumulate(grads, *input, dx);
                }
                if needs(*weight) {
                    let mut dw = vec![T::zero(); d * k];
                    T::gemm(
                        d,
                        n,
                        k,
                        T::one(),
                        x.data(),
                        (1, d),
                        g,
                        (k, 1),
                        T::zero(),
                        &mut dw,
                        (k, 1),
                    );
                    accumulate(grads, *weight, dw);
                }
            }
            Op::DenseBias { pre, bias } => {
                if needs(*pre) {
                    accumulate(grads, *pre, g.to_vec());
                }
                if needs(*bias) {
                    let k = self.value(*bias).numel();
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v >= T::zero() { gv } else { *slope * gv })
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::Tanh { input } => {
                let y = node.value.data();
                let dx = y.iter().zip(g).map(|(&t, &gv)| gv * (T::one() - t * t)).collect();
                accumulate(grads, *input, dx);
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let dx = y.iter().zip(g).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
                accumulate(grads, *input, dx);
            }
            Op::Add { lhs, rhs } => {
                for v in [*lhs, *rhs] {
                    if needs(v) {
                        accumulate(grads, v, g.to_vec());
                    }
                }
            }
            Op::ConcatColumns { lhs, rhs } => {
                let da = self.value(*lhs).shape()[1];
                let db = self.value(*rhs).shape()[1];
                if needs(*lhs) {
                    let dl = g.chunks(da + db).flat_map(|r| r[..da].iter().copied()).collect();
                    accumulate(grads, *lhs, dl);
                }
                if needs(*rhs) {
                    let dr = g.chunks(da + db).flat_map(|r| r[da..].iter().copied()).collect();
                    accumulate(grads, *rhs, dr);
                }
            }
            Op::Reshape { input } => accumulate(grads, *input, g.to_vec()),
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                accumulate(grads, *input, vec![g[0]; n]);
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    if needs(v) {
                        accumulate(grads, v, vec![w * g[0]]);
                    }
                }
            }
            Op::Mse { lhs, rhs } => {
                let (a, b) = (self.value(*lhs).data(), self.value(*rhs).data());
                let scale = T::from_f64(2.0) * g[0] / T::from_f64(a.len() as f64);
                let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| scale * (x - y)).collect();
                if needs(*rhs) {
                    accumulate(grads, *rhs, diff.iter().map(|&d| -d).collect());
                }
                if needs(*lhs) {
                    accumulate(grads, *lhs, diff);
                }
            }
            Op::Bce { predicted, target } => {
                let p = self.value(*predicted).data();
                let scale = g[0] / T::from_f64(p.len() as f64);
                let lo = T::from_f64(BCE_EPS);
                let hi = T::one() - lo;
                let dp = p
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        if p < lo || p > hi {
                            T::zero()
                        } else {
                            scale * ((p - t) / (p * (T::one() - p)))
                        }
                    })
                    .collect();
                accumulate(grads, *predicted, dp);
            }
            Op::BceLogits { logits, target } => {
                let x = self.value(*logits).data();
                let scale = g[0] / T::from_f64(x.len() as f64);
                let dx = x.iter().zip(target).map(|(&x, &t)| scale * (sigmoid(x) - t)).collect();
                accumulate(grads, *logits, dx);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::from_f64(BCE_EPS);
    p.max(lo).min(T::one() - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t64(&[3], &[0.0, 2.0, -1.0]));
        let y = g.leaky_relu(x, LEAKY_SLOPE);
        assert_eq!(g.value(y).data(), &[0.0, 2.0, -0.2]);
    }

    #[test]
    fn tanh_and_sigmoid_at_zero_and_saturation() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[3], vec![0.0, 50.0, -1e4]).unwrap());
        let t = g.tanh(x);
        let s = g.sigmoid(x);
        assert_eq!(g.value(t).data()[0], 0.0);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert!(g.value(t).data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        assert!(g.value(s).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conv_trivial_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[4.0]);

        let z = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let k = g.constant(t64(&[1, 1, 2, 2], &[0.3, -1.0, 2.0, 4.0]));
        let y = g.conv2d(z, k, b, 1, 0).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_transpose_single_stamp_and_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t64(&[1, 1, 1, 1], &[1.0]));
        let k = g.constant(t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d_transpose(x, k, b, 1, 0, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let zero = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let k = g.constant(Tensor::full(&[2, 3, 5, 5], 0.7));
        let b = g.constant(t64(&[3], &[0.5, -1.0, 2.0]));
        let y = g.conv2d_transpose(zero, k, b, 2, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 6, 6]);
        for (i, plane) in g.value(y).data().chunks(36).enumerate() {
            assert!(plane.iter().all(|&v| v == [0.5, -1.0, 2.0][i]));
        }
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, k, b, 1, 0), Err(Error::Shape(_))));
        let k = g.constant(Tensor::zeros(&[1, 2, 7, 7]));
        assert!(matches!(g.conv2d(x, k, b, 1, 1), Err(Error::Shape(_))));
        let k = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(matches!(g.conv2d(x, k, b, 0, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let eye = g.constant(t64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let zb = g.constant(Tensor::zeros(&[3]));
        let y = g.dense(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let zw = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(t64(&[2], &[7.0, -1.0]));
        let y = g.dense(x, zw, b).unwrap();
        assert_eq!(g.value(y).data(), &[7.0, -1.0, 7.0, -1.0]);

        let bad = g.constant(Tensor::zeros(&[4, 2]));
        assert!(g.dense(x, bad, b).is_err());
    }

    #[test]
    fn mse_trivial_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t64(&[2, 2], &[1.5, 2.5, 3.5, 4.5]));
        let same = g.mse_loss(a, a).unwrap();
        let shifted = g.mse_loss(a, b).unwrap();
        assert_eq!(g.value(same).data(), &[0.0]);
        assert_eq!(g.value(shifted).data(), &[0.25]);
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.mse_loss(a, c).is_err());
    }

    #[test]
    fn bce_trivial_values() {
        let mut g = Graph::<f64>::new();
        let half = g.constant(Tensor::full(&[4], 0.5));
        let l = g.bce_loss(half, &t64(&[4], &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let exact = g.constant(t64(&[4], &[0.0, 1.0, 1.0, 0.0]));
        let l = g.bce_loss(exact, &t64(&[4], &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-6);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(&[2, 3, 4], 0.3));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_mse_against_zero() {
        let mut g = Graph::<f64>::new();
        let data = [1.0, -2.0, 0.5, 3.0, 0.0];
        let x = g.param(t64(&[5], &data));
        let z = g.constant(Tensor::zeros(&[5]));
        let l = g.mse_loss(x, z).unwrap();
        g.backward(l).unwrap();
        for (gv, xv) in g.grad(x).unwrap().iter().zip(data) {
            assert!((gv - 2.0 * xv / 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t64(&[2], &[1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t64(&[2], &[1.0, 2.0]));
        let c = g.constant(t64(&[2], &[3.0, 4.0]));
        let y = g.add(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_some());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t64(&[1], &[f64::MAX]));
        let b = g.constant(t64(&[1], &[-f64::MAX]));
        assert!(matches!(g.mse_loss(a, b), Err(Error::Numeric(_))));
    }
}
