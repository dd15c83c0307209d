//! Forward kernels and vector-Jacobian products for every recorded primitive.

use super::graph::{Graph, Node, Op, Var};
use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a valid (unpadded) sliding window.
pub fn valid_extent(len: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || window == 0 || len < window {
        None
    } else {
        Some((len - window) / stride + 1)
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

impl<S: Scalar> Graph<S> {
    /// Valid 1D cross-correlation. `input` is `[T, C_in]`, `kernel` is
    /// `[C_out, C_in, K]`, output is `[T', C_out]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let x = self.node(input)?;
        let w = self.node(kernel)?;
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::shape("conv1d", xs, ws));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d", "stride must be at least 1"));
        }
        let (t_in, c_in, c_out, k) = (xs[0], xs[1], ws[0], ws[2]);
        let t_out = valid_extent(t_in, k, stride).ok_or_else(|| Error::shape("conv1d", xs, ws))?;
        let (xd, wd) = (x.data(), w.data());
        let mut out = vec![S::zero(); t_out * c_out];
        for t in 0..t_out {
            let start = t * stride;
            for o in 0..c_out {
                let mut acc = S::zero();
                for c in 0..c_in {
                    let wrow = &wd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    for (j, &wv) in wrow.iter().enumerate() {
                        acc += wv * xd[(start + j) * c_in + c];
                    }
                }
                out[t * c_out + o] = acc;
            }
        }
        let value = Tensor::new(vec![t_out, c_out], out)?;
        let (i, kk) = (input.index, kernel.index);
        Ok(self.push(value, Op::Conv1d { input: i, kernel: kk, stride }, &[i, kk]))
    }

    /// Valid 3D cross-correlation over (T, H, W). `input` is `[T, C_in, H, W]`,
    /// `kernel` is `[C_out, C_in, Kt, Kh, Kw]`, output is `[T', C_out, H', W']`.
    pub fn conv3d(&mut self, input: Var, kernel: Var, stride: [usize; 3]) -> Result<Var> {
        let x = self.node(input)?;
        let w = self.node(kernel)?;
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 5 || xs[1] != ws[1] {
            return Err(Error::shape("conv3d", xs, ws));
        }
        if stride.contains(&0) {
            return Err(Error::invalid("conv3d", "strides must be at least 1"));
        }
        let geom = Conv3dGeom::new(xs, ws, stride).ok_or_else(|| Error::shape("conv3d", xs, ws))?;
        let mut out = vec![S::zero(); geom.out_len()];
        let (xd, wd) = (x.data(), w.data());
        geom.for_each_tap(|xoff, ooff, widx, kw| {
            let wv = wd[widx];
            for ho in 0..geom.ho {
                let xrow = xoff + ho * geom.sh * geom.w;
                let orow = ooff + ho * geom.wo;
                for wo in 0..geom.wo {
                    out[orow + wo] += wv * xd[xrow + wo * geom.sw + kw];
                }
            }
        });
        let value = Tensor::new(vec![geom.to, geom.c_out, geom.ho, geom.wo], out)?;
        let (i, kk) = (input.index, kernel.index);
        Ok(self.push(value, Op::Conv3d { input: i, kernel: kk, stride }, &[i, kk]))
    }

    /// Valid max pooling over every axis, with one window/stride extent per
    /// input axis. Ties resolve to the first element in row-major order.
    pub fn maxpool(&mut self, input: Var, window: &[usize], stride: &[usize]) -> Result<Var> {
        let margin = {
            self.check(input)?;
            self.kink_margin_for(input.index)
        };
        let x = self.node(input)?;
        let xs = x.shape().to_vec();
        if window.len() != xs.len() || stride.len() != xs.len() {
            return Err(Error::shape("maxpool", &xs, window));
        }
        let mut out_shape = Vec::with_capacity(xs.len());
        for d in 0..xs.len() {
            match valid_extent(xs[d], window[d], stride[d]) {
                Some(e) => out_shape.push(e),
                None => return Err(Error::shape("maxpool", &xs, window)),
            }
        }
        let in_strides = row_major_strides(&xs);
        let out_strides = row_major_strides(&out_shape);
        // flat offsets of every window element, in row-major window order
        let mut offsets = vec![0usize];
        for d in 0..xs.len() {
            let mut next = Vec::with_capacity(offsets.len() * window[d]);
            for &base in &offsets {
                for j in 0..window[d] {
                    next.push(base + j * in_strides[d]);
                }
            }
            offsets = next;
        }
        let n_out = numel(&out_shape);
        let xd = x.data();
        let mut out = Vec::with_capacity(n_out);
        let mut argmax = Vec::with_capacity(n_out);
        let mut near = false;
        for o in 0..n_out {
            let mut rem = o;
            let mut base = 0;
            for d in 0..out_shape.len() {
                let idx = rem / out_strides[d];
                rem %= out_strides[d];
                base += idx * stride[d] * in_strides[d];
            }
            let mut best = base + offsets[0];
            let mut runner_up: Option<S> = None;
            for &off in &offsets[1..] {
                let v = xd[base + off];
                if v > xd[best] || (v.is_nan() && !xd[best].is_nan()) {
                    runner_up = Some(xd[best]);
                    best = base + off;
                } else if runner_up.is_none_or(|r| v > r) {
                    runner_up = Some(v);
                }
            }
            if let (Some(m), Some(r)) = (margin, runner_up) {
                // Exact zero ties come from clamped relu outputs; they stay
                // tied under small perturbations unless a relu input crosses
                // its own kink, which relu flags itself.
                let clamped = xd[best] == S::zero() && r == S::zero();
                if xd[best] - r < m && !clamped {
                    near = true;
                }
            }
            out.push(xd[best]);
            argmax.push(best);
        }
        if near {
            self.flag_kink();
        }
        let value = Tensor::new(out_shape, out)?;
        let i = input.index;
        Ok(self.push(value, Op::MaxPool { input: i, argmax }, &[i]))
    }

    /// `weights · input + bias` for `input [N]`, `weights [M, N]`, `bias [M]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let x = self.node(input)?;
        let w = self.node(weights)?;
        let b = self.node(bias)?;
        let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
        if ws.len() != 2 || xs != [ws[1]] {
            return Err(Error::shape("dense", xs, ws));
        }
        if bs != [ws[0]] {
            return Err(Error::shape("dense", ws, bs));
        }
        let (m, n) = (ws[0], ws[1]);
        let (xd, wd) = (x.data(), w.data());
        let out: Vec<S> = (0..m)
            .map(|r| {
                let row = &wd[r * n..(r + 1) * n];
                let mut acc = b.data()[r];
                for (wv, xv) in row.iter().zip(xd) {
                    acc += *wv * *xv;
                }
                acc
            })
            .collect();
        let value = Tensor::vector(out);
        let (i, wi, bi) = (input.index, weights.index, bias.index);
        Ok(self.push(value, Op::Dense { input: i, weights: wi, bias: bi }, &[i, wi, bi]))
    }

    /// Adds a per-channel bias along `axis`.
    pub fn add_bias(&mut self, input: Var, bias: Var, axis: usize) -> Result<Var> {
        let x = self.node(input)?;
        let b = self.node(bias)?;
        let xs = x.shape();
        if axis >= xs.len() || b.shape() != [xs[axis]] {
            return Err(Error::shape("add_bias", xs, b.shape()));
        }
        let inner: usize = xs[axis + 1..].iter().product();
        let channels = xs[axis];
        let bd = b.data();
        let out: Vec<S> = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v + bd[(k / inner) % channels])
            .collect();
        let value = Tensor::new(xs.to_vec(), out)?;
        let (i, bi) = (input.index, bias.index);
        Ok(self.push(value, Op::AddBias { input: i, bias: bi, inner }, &[i, bi]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let margin = self.kink_margin_for(input.index);
        let x = self.node(input)?;
        let near = margin.is_some_and(|m| x.data().iter().any(|v| v.abs() < m));
        // NaN passes through so a poisoned input still surfaces in the loss.
        let out = x.data().iter().map(|&v| if v > S::zero() || v.is_nan() { v } else { S::zero() }).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        if near {
            self.flag_kink();
        }
        Ok(self.push(value, Op::Relu { input: input.index }, &[input.index]))
    }

    /// `x - log(sum(exp(x)))` over all elements, shifted by the max for stability.
    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.node(input)?;
        if x.numel() == 0 {
            return Err(Error::EmptyInput("log_softmax"));
        }
        let max = x.data().iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + x.data().iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        let out = x.data().iter().map(|&v| v - lse).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LogSoftmax { input: input.index }, &[input.index]))
    }

    /// Population mean and standard deviation over all elements.
    pub fn mean_std(&mut self, input: Var) -> Result<(Var, Var)> {
        self.check(input)?;
        let margin = self.kink_margin_for(input.index);
        let x = self.node(input)?;
        let n = x.numel();
        if n == 0 {
            return Err(Error::EmptyInput("mean_std"));
        }
        let nf = S::from_usize(n).unwrap();
        let mean = x.data().iter().copied().sum::<S>() / nf;
        let var = x.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nf;
        let std = var.sqrt();
        if margin.is_some_and(|m| std < m) {
            self.flag_kink();
        }
        let i = input.index;
        let mean_var = self.push(Tensor::scalar(mean), Op::Mean { input: i }, &[i]);
        let std_var = self.push(Tensor::scalar(std), Op::Std { input: i, mean }, &[i]);
        Ok((mean_var, std_var))
    }

    /// Squared Euclidean distance `sum((a - b)^2)`.
    pub fn l2_sq_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.node(a)?, self.node(b)?);
        if x.shape() != y.shape() {
            return Err(Error::shape("l2_sq_distance", x.shape(), y.shape()));
        }
        let d = x.data().iter().zip(y.data()).map(|(&p, &q)| (p - q) * (p - q)).sum();
        Ok(self.push(Tensor::scalar(d), Op::L2Sq { a: a.index, b: b.index }, &[a.index, b.index]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add { a: a.index, b: b.index }, &[a.index, b.index]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub { a: a.index, b: b.index }, &[a.index, b.index]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul { a: a.index, b: b.index }, &[a.index, b.index]))
    }

    pub fn scale(&mut self, input: Var, factor: S) -> Result<Var> {
        let out = self.map("scale", input, |v| v * factor)?;
        Ok(self.push(out, Op::Scale { input: input.index, factor }, &[input.index]))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, input: Var, constant: S) -> Result<Var> {
        let out = self.map("offset", input, |v| v + constant)?;
        Ok(self.push(out, Op::Offset { input: input.index }, &[input.index]))
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        let out = self.map("square", input, |v| v * v)?;
        Ok(self.push(out, Op::Square { input: input.index }, &[input.index]))
    }

    pub fn abs(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let margin = self.kink_margin_for(input.index);
        let out = self.map("abs", input, |v| v.abs())?;
        if margin.is_some_and(|m| out.data().iter().any(|&v| v < m)) {
            self.flag_kink();
        }
        Ok(self.push(out, Op::Abs { input: input.index }, &[input.index]))
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        let out = self.map("exp", input, |v| v.exp())?;
        Ok(self.push(out, Op::Exp { input: input.index }, &[input.index]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let x = self.node(input)?;
        let s = x.data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input: input.index }, &[input.index]))
    }

    /// Selects one element (flat index) as a scalar.
    pub fn pick(&mut self, input: Var, index: usize) -> Result<Var> {
        let x = self.node(input)?;
        if index >= x.numel() {
            return Err(Error::shape("pick", x.shape(), &[index]));
        }
        let v = x.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick { input: input.index, index }, &[input.index]))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let x = self.node(input)?;
        let value = x.clone().with_requires_grad(false).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input: input.index }, &[input.index]))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.node(input)?.numel();
        self.reshape(input, vec![n])
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::EmptyInput("add_n"))?;
        let shape = self.node(first)?.shape().to_vec();
        let mut acc = vec![S::zero(); numel(&shape)];
        for &v in inputs {
            let t = self.node(v)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("add_n", &shape, t.shape()));
            }
            for (a, &b) in acc.iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let idx: Vec<usize> = inputs.iter().map(|v| v.index).collect();
        let value = Tensor::new(shape, acc)?;
        Ok(self.push(value, Op::AddN { inputs: idx.clone() }, &idx))
    }

    /// Arithmetic mean of equally shaped tensors.
    pub fn mean_of(&mut self, inputs: &[Var]) -> Result<Var> {
        let total = self.add_n(inputs)?;
        self.scale(total, S::one() / S::from_usize(inputs.len()).unwrap())
    }

    fn map(&self, _op: &'static str, input: Var, f: impl Fn(S) -> S) -> Result<Tensor<S>> {
        let x = self.node(input)?;
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (x, y) = (self.node(a)?, self.node(b)?);
        if x.shape() != y.shape() {
            return Err(Error::shape(op, x.shape(), y.shape()));
        }
        let out = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Shape bookkeeping shared by the conv3d forward and backward kernels.
struct Conv3dGeom {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    st: usize,
    sh: usize,
    sw: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

impl Conv3dGeom {
    fn new(xs: &[usize], ws: &[usize], stride: [usize; 3]) -> Option<Self> {
        Some(Conv3dGeom {
            c_in: xs[1],
            c_out: ws[0],
            h: xs[2],
            w: xs[3],
            kt: ws[2],
            kh: ws[3],
            kw: ws[4],
            st: stride[0],
            sh: stride[1],
            sw: stride[2],
            to: valid_extent(xs[0], ws[2], stride[0])?,
            ho: valid_extent(xs[2], ws[3], stride[1])?,
            wo: valid_extent(xs[3], ws[4], stride[2])?,
        })
    }

    fn out_len(&self) -> usize {
        self.to * self.c_out * self.ho * self.wo
    }

    /// Calls `f(x_offset, out_offset, weight_index, kw)` for every
    /// (output frame, output channel, kernel tap) where `x_offset` points at
    /// the input row block for the tap's (t, c, kh) and `out_offset` at the
    /// output plane.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let plane = self.h * self.w;
        for to in 0..self.to {
            for o in 0..self.c_out {
                let ooff = (to * self.c_out + o) * self.ho * self.wo;
                for c in 0..self.c_in {
                    for kt in 0..self.kt {
                        let t_in = to * self.st + kt;
                        let xplane = (t_in * self.c_in + c) * plane;
                        for kh in 0..self.kh {
                            for kw in 0..self.kw {
                                let widx = (((o * self.c_in + c) * self.kt + kt) * self.kh + kh) * self.kw + kw;
                                f(xplane + kh * self.w, ooff, widx, kw);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn needs<S>(nodes: &[Node<S>], idx: usize) -> bool {
    nodes[idx].value.requires_grad
}

fn accumulate<S: Scalar>(nodes: &mut [Node<S>], idx: usize, contrib: &[S]) {
    if !needs(nodes, idx) {
        return;
    }
    let grad = nodes[idx].value.grad_mut_or_zeros();
    for (g, &c) in grad.iter_mut().zip(contrib) {
        *g += c;
    }
}

/// Propagates `grad_out` of one node into the gradients of its inputs.
pub(crate) fn backward_node<S: Scalar>(op: &Op<S>, out: &Tensor<S>, grad_out: &[S], nodes: &mut [Node<S>]) {
    match op {
        Op::Leaf => {}
        Op::Conv1d { input, kernel, stride } => {
            let (input, kernel, stride) = (*input, *kernel, *stride);
            let x = &nodes[input].value;
            let w = &nodes[kernel].value;
            let (c_in, k) = (x.shape()[1], w.shape()[2]);
            let (t_out, c_out) = (out.shape()[0], out.shape()[1]);
            let (xd, wd) = (x.data(), w.data());
            let gx = needs(nodes, input).then(|| {
                let mut gx = vec![S::zero(); xd.len()];
                for t in 0..t_out {
                    for o in 0..c_out {
                        let g = grad_out[t * c_out + o];
                        for c in 0..c_in {
                            for j in 0..k {
                                gx[(t * stride + j) * c_in + c] += g * wd[(o * c_in + c) * k + j];
                            }
                        }
                    }
                }
                gx
            });
            let gw = needs(nodes, kernel).then(|| {
                let mut gw = vec![S::zero(); wd.len()];
                for t in 0..t_out {
                    for o in 0..c_out {
                        let g = grad_out[t * c_out + o];
                        for c in 0..c_in {
                            for j in 0..k {
                                gw[(o * c_in + c) * k + j] += g * xd[(t * stride + j) * c_in + c];
                            }
                        }
                    }
                }
                gw
            });
            if let Some(gx) = gx {
                accumulate(nodes, input, &gx);
            }
            if let Some(gw) = gw {
                accumulate(nodes, kernel, &gw);
            }
        }
        Op::Conv3d { input, kernel, stride } => {
            let (input, kernel) = (*input, *kernel);
            let x = &nodes[input].value;
            let w = &nodes[kernel].value;
            let geom = Conv3dGeom::new(x.shape(), w.shape(), *stride).expect("validated in forward");
            let (xd, wd) = (x.data(), w.data());
            let gx = needs(nodes, input).then(|| {
                let mut gx = vec![S::zero(); xd.len()];
                geom.for_each_tap(|xoff, ooff, widx, kw| {
                    let wv = wd[widx];
                    for ho in 0..geom.ho {
                        let xrow = xoff + ho * geom.sh * geom.w;
                        let orow = ooff + ho * geom.wo;
                        for wo in 0..geom.wo {
                            gx[xrow + wo * geom.sw + kw] += wv * grad_out[orow + wo];
                        }
                    }
                });
                gx
            });
            let gw = needs(nodes, kernel).then(|| {
                let mut gw = vec![S::zero(); wd.len()];
                geom.for_each_tap(|xoff, ooff, widx, kw| {
                    let mut acc = S::zero();
                    for ho in 0..geom.ho {
                        let xrow = xoff + ho * geom.sh * geom.w;
                        let orow = ooff + ho * geom.wo;
                        for wo in 0..geom.wo {
                            acc += grad_out[orow + wo] * xd[xrow + wo * geom.sw + kw];
                        }
                    }
                    gw[widx] += acc;
                });
                gw
            });
            if let Some(gx) = gx {
                accumulate(nodes, input, &gx);
            }
            if let Some(gw) = gw {
                accumulate(nodes, kernel, &gw);
            }
        }
        Op::MaxPool { input, argmax } => {
            if needs(nodes, *input) {
                let grad = nodes[*input].value.grad_mut_or_zeros();
                for (&src, &g) in argmax.iter().zip(grad_out) {
                    grad[src] += g;
                }
            }
        }
        Op::Dense { input, weights, bias } => {
            let (input, weights, bias) = (*input, *weights, *bias);
            let x = nodes[input].value.data();
            let w = &nodes[weights].value;
            let n = w.shape()[1];
            let gx = needs(nodes, input).then(|| {
                let mut gx = vec![S::zero(); n];
                for (r, &g) in grad_out.iter().enumerate() {
                    for (acc, &wv) in gx.iter_mut().zip(&w.data()[r * n..(r + 1) * n]) {
                        *acc += g * wv;
                    }
                }
                gx
            });
            let gw = needs(nodes, weights).then(|| {
                let mut gw = Vec::with_capacity(w.numel());
                for &g in grad_out {
                    gw.extend(x.iter().map(|&xv| g * xv));
                }
                gw
            });
            if let Some(gx) = gx {
                accumulate(nodes, input, &gx);
            }
            if let Some(gw) = gw {
                accumulate(nodes, weights, &gw);
            }
            accumulate(nodes, bias, grad_out);
        }
        Op::AddBias { input, bias, inner } => {
            accumulate(nodes, *input, grad_out);
            if needs(nodes, *bias) {
                let channels = nodes[*bias].value.numel();
                let mut gb = vec![S::zero(); channels];
                for (k, &g) in grad_out.iter().enumerate() {
                    gb[(k / inner) % channels] += g;
                }
                accumulate(nodes, *bias, &gb);
            }
        }
        Op::Relu { input } => {
            let x = nodes[*input].value.data();
            let g: Vec<S> = x
                .iter()
                .zip(grad_out)
                .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
                .collect();
            accumulate(nodes, *input, &g);
        }
        Op::LogSoftmax { input } => {
            let total: S = grad_out.iter().copied().sum();
            let g: Vec<S> = out
                .data()
                .iter()
                .zip(grad_out)
                .map(|(&y, &g)| g - y.exp() * total)
                .collect();
            accumulate(nodes, *input, &g);
        }
        Op::Mean { input } => {
            let n = nodes[*input].value.numel();
            let g = grad_out[0] / S::from_usize(n).unwrap();
            accumulate(nodes, *input, &vec![g; n]);
        }
        Op::Std { input, mean } => {
            let std = out.item();
            let x = nodes[*input].value.data();
            let g: Vec<S> = if std > S::zero() {
                let scale = grad_out[0] / (S::from_usize(x.len()).unwrap() * std);
                x.iter().map(|&v| (v - *mean) * scale).collect()
            } else {
                vec![S::zero(); x.len()]
            };
            accumulate(nodes, *input, &g);
        }
        Op::L2Sq { a, b } => {
            let two = S::from_f64_lossy(2.0) * grad_out[0];
            let diff: Vec<S> = nodes[*a]
                .value
                .data()
                .iter()
                .zip(nodes[*b].value.data())
                .map(|(&p, &q)| two * (p - q))
                .collect();
            accumulate(nodes, *a, &diff);
            if needs(nodes, *b) {
                let neg: Vec<S> = diff.iter().map(|&d| -d).collect();
                accumulate(nodes, *b, &neg);
            }
        }
        Op::Add { a, b } => {
            accumulate(nodes, *a, grad_out);
            accumulate(nodes, *b, grad_out);
        }
        Op::Sub { a, b } => {
            accumulate(nodes, *a, grad_out);
            if needs(nodes, *b) {
                let neg: Vec<S> = grad_out.iter().map(|&g| -g).collect();
                accumulate(nodes, *b, &neg);
            }
        }
        Op::Mul { a, b } => {
            let ga: Vec<S> = nodes[*b].value.data().iter().zip(grad_out).map(|(&q, &g)| q * g).collect();
            let gb: Vec<S> = nodes[*a].value.data().iter().zip(grad_out).map(|(&p, &g)| p * g).collect();
            accumulate(nodes, *a, &ga);
            accumulate(nodes, *b, &gb);
        }
        Op::Scale { input, factor } => {
            let g: Vec<S> = grad_out.iter().map(|&g| g * *factor).collect();
            accumulate(nodes, *input, &g);
        }
        Op::Offset { input } | Op::Reshape { input } => accumulate(nodes, *input, grad_out),
        Op::Square { input } => {
            let two = S::from_f64_lossy(2.0);
            let g: Vec<S> = nodes[*input].value.data().iter().zip(grad_out).map(|(&v, &g)| two * v * g).collect();
            accumulate(nodes, *input, &g);
        }
        Op::Abs { input } => {
            let g: Vec<S> = nodes[*input]
                .value
                .data()
                .iter()
                .zip(grad_out)
                .map(|(&v, &g)| {
                    if v > S::zero() {
                        g
                    } else if v < S::zero() {
                        -g
                    } else {
                        S::zero()
                    }
                })
                .collect();
            accumulate(nodes, *input, &g);
        }
        Op::Exp { input } => {
            let g: Vec<S> = out.data().iter().zip(grad_out).map(|(&y, &g)| y * g).collect();
            accumulate(nodes, *input, &g);
        }
        Op::Sum { input } => {
            let n = nodes[*input].value.numel();
            accumulate(nodes, *input, &vec![grad_out[0]; n]);
        }
        Op::Pick { input, index } => {
            if needs(nodes, *input) {
                nodes[*input].value.grad_mut_or_zeros()[*index] += grad_out[0];
            }
        }
        Op::AddN { inputs } => {
            for &i in inputs {
                accumulate(nodes, i, grad_out);
            }
        }
    }
}
