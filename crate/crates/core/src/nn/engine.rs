//! Forward and backward kernels over a reusable workspace.
//!
//! Activations are stored batch-major (NCHW for feature maps). Convolutions
//! lower each example to a column matrix and hand the product to GEMM; the
//! column matrices are kept for the weight-gradient pass.

use crate::arch::LayerSpec;
use crate::scalar::Scalar;

use super::network::{Gradients, Network};

pub struct Engine<T> {
    capacity: usize,
    /// `acts[i]` is the output of layer `i`.
    acts: Vec<Vec<T>>,
    cols: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    grad_out: Vec<T>,
    grad_in: Vec<T>,
    scratch_a: Vec<T>,
    scratch_b: Vec<T>,
    probs: Vec<T>,
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_geom(layer: &LayerSpec, input: &[usize], output: &[usize]) -> ConvGeom {
    match *layer {
        LayerSpec::Conv2d {
            kernel_h,
            kernel_w,
            stride,
            padding,
            ..
        } => ConvGeom {
            c: input[0],
            h: input[1],
            w: input[2],
            kh: kernel_h,
            kw: kernel_w,
            stride,
            pad: padding,
            oh: output[1],
            ow: output[2],
        },
        _ => unreachable!("not a convolution"),
    }
}

/// Writes one example's column matrix into `cols`, whose rows have stride
/// `ld`, starting at column `offset`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, offset: usize) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[((ci * g.kh + ki) * g.kw + kj) * ld + offset..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 && g.pad == 0 {
                        out.copy_from_slice(&src[kj..kj + g.ow]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *o = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds one example's columns back onto a zeroed input gradient.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, ld: usize, offset: usize, dx: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[((ci * g.kh + ki) * g.kw + kj) * ld + offset..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Branch-free select of the running maximum; ties keep the earlier index.
#[inline(always)]
fn keep_max<T: Scalar>(val: &mut T, best: &mut usize, v: T, idx: usize) {
    let better = v > *val;
    *val = if better { v } else { *val };
    *best ^= (*best ^ idx) & (better as usize).wrapping_neg();
}

fn pool2x2<T: Scalar>(src: &[T], w: usize, oh: usize, ow: usize, y: &mut [T], am: &mut [u32]) {
    for oy in 0..oh {
        let top = &src[2 * oy * w..2 * oy * w + 2 * ow];
        let bottom = &src[(2 * oy + 1) * w..(2 * oy + 1) * w + 2 * ow];
        let yrow = &mut y[oy * ow..(oy + 1) * ow];
        let arow = &mut am[oy * ow..(oy + 1) * ow];
        for (ox, ((t, bt), (yv, av))) in top
            .chunks_exact(2)
            .zip(bottom.chunks_exact(2))
            .zip(yrow.iter_mut().zip(arow.iter_mut()))
            .enumerate()
        {
            let origin = 2 * oy * w + 2 * ox;
            let mut val = t[0];
            let mut best = origin;
            keep_max(&mut val, &mut best, t[1], origin + 1);
            keep_max(&mut val, &mut best, bt[0], origin + w);
            keep_max(&mut val, &mut best, bt[1], origin + w + 1);
            *yv = val;
            *av = best as u32;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pool_generic<T: Scalar>(
    src: &[T],
    w: usize,
    window: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    y: &mut [T],
    am: &mut [u32],
) {
    for oy in 0..oh {
        for ox in 0..ow {
            let origin = oy * stride * w + ox * stride;
            let mut best = origin;
            let mut val = src[origin];
            for ki in 0..window {
                let row = &src[origin + ki * w..origin + ki * w + window];
                for (kj, &v) in row.iter().enumerate() {
                    keep_max(&mut val, &mut best, v, origin + ki * w + kj);
                }
            }
            y[oy * ow + ox] = val;
            am[oy * ow + ox] = best as u32;
        }
    }
}

/// Row-wise softmax, numerically stabilised by the row maximum.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize, out: &mut [T]) {
    for (row, dst) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (d, &l) in dst.iter_mut().zip(row) {
            *d = (l - m).exp();
            s += *d;
        }
        for d in dst.iter_mut() {
            *d /= s;
        }
    }
}

impl<T: Scalar> Engine<T> {
    pub fn new(net: &Network<T>, capacity: usize) -> Self {
        let shapes = net.shapes();
        let layers = &net.arch().layers;
        let size = |s: &Vec<usize>| s.iter().product::<usize>();
        let max_act = shapes.iter().map(size).max().unwrap_or(0);
        let mut cols = Vec::with_capacity(layers.len());
        let mut argmax = Vec::with_capacity(layers.len());
        let (mut max_out, mut max_cols) = (0, 0);
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv2d { .. } => {
                    let g = conv_geom(layer, &shapes[i], &shapes[i + 1]);
                    max_cols = max_cols.max(capacity * g.rows() * g.positions());
                    max_out = max_out.max(capacity * size(&shapes[i + 1]));
                    cols.push(vec![T::zero(); capacity * g.rows() * g.positions()]);
                    argmax.push(Vec::new());
                }
                LayerSpec::MaxPool2d { .. } => {
                    cols.push(Vec::new());
                    argmax.push(vec![0; capacity * size(&shapes[i + 1])]);
                }
                _ => {
                    cols.push(Vec::new());
                    argmax.push(Vec::new());
                }
            }
        }
        Engine {
            capacity,
            acts: shapes[1..]
                .iter()
                .map(|s| vec![T::zero(); capacity * size(s)])
                .collect(),
            cols,
            argmax,
            grad_out: vec![T::zero(); capacity * max_act],
            grad_in: vec![T::zero(); capacity * max_act],
            scratch_a: vec![T::zero(); max_out],
            scratch_b: vec![T::zero(); max_cols],
            probs: vec![T::zero(); capacity * net.num_classes()],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Runs the network on `b` examples laid out contiguously in `input`;
    /// returns the `(b, classes)` logits.
    pub fn forward(&mut self, net: &Network<T>, input: &[T], b: usize) -> &[T] {
        assert!(b <= self.capacity, "batch exceeds engine capacity");
        let shapes = net.shapes();
        let layers = &net.arch().layers;
        for (i, layer) in layers.iter().enumerate() {
            let in_size: usize = shapes[i].iter().product();
            let out_size: usize = shapes[i + 1].iter().product();
            let (before, rest) = self.acts.split_at_mut(i);
            let x: &[T] = if i == 0 {
                &input[..b * in_size]
            } else {
                &before[i - 1][..b * in_size]
            };
            let y = &mut rest[0][..b * out_size];
            match *layer {
                LayerSpec::Conv2d { out_channels, .. } => {
                    let p = &net.params()[net.param_slot(i).unwrap()];
                    let g = conv_geom(layer, &shapes[i], &shapes[i + 1]);
                    let (rows, pos) = (g.rows(), g.positions());
                    let ld = b * pos;
                    let cols = &mut self.cols[i][..rows * ld];
                    for e in 0..b {
                        im2col(&x[e * in_size..(e + 1) * in_size], &g, cols, ld, e * pos);
                    }
                    // (out_channels, b·pos) = W · cols, then scatter to NCHW
                    let tmp = &mut self.scratch_a[..out_channels * ld];
                    T::gemm(
                        out_channels,
                        rows,
                        ld,
                        T::one(),
                        p.weight.data(),
                        rows as isize,
                        1,
                        cols,
                        ld as isize,
                        1,
                        T::zero(),
                        tmp,
                        ld as isize,
                        1,
                    );
                    for e in 0..b {
                        for co in 0..out_channels {
                            let bias = p.bias.data()[co];
                            let src = &tmp[co * ld + e * pos..][..pos];
                            let dst = &mut y[e * out_size + co * pos..][..pos];
                            for (d, &v) in dst.iter_mut().zip(src) {
                                *d = v + bias;
                            }
                        }
                    }
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let (c, h, w) = (shapes[i][0], shapes[i][1], shapes[i][2]);
                    let (oh, ow) = (shapes[i + 1][1], shapes[i + 1][2]);
                    let am = &mut self.argmax[i][..b * out_size];
                    for plane in 0..b * c {
                        let src = &x[plane * h * w..(plane + 1) * h * w];
                        let yo = &mut y[plane * oh * ow..(plane + 1) * oh * ow];
                        let ao = &mut am[plane * oh * ow..(plane + 1) * oh * ow];
                        if window == 2 && stride == 2 {
                            pool2x2(src, w, oh, ow, yo, ao);
                        } else {
                            pool_generic(src, w, window, stride, oh, ow, yo, ao);
                        }
                    }
                }
                LayerSpec::Relu => {
                    for (o, &v) in y.iter_mut().zip(x) {
                        *o = if v > T::zero() { v } else { T::zero() };
                    }
                }
                LayerSpec::Tanh => {
                    for (o, &v) in y.iter_mut().zip(x) {
                        *o = v.tanh();
                    }
                }
                LayerSpec::Flatten => y.copy_from_slice(x),
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let p = &net.params()[net.param_slot(i).unwrap()];
                    for row in y.chunks_exact_mut(out_features) {
                        row.copy_from_slice(p.bias.data());
                    }
                    T::gemm(
                        b,
                        in_features,
                        out_features,
                        T::one(),
                        x,
                        in_features as isize,
                        1,
                        p.weight.data(),
                        1,
                        in_features as isize,
                        T::one(),
                        y,
                        out_features as isize,
                        1,
                    );
                }
            }
        }
        let classes = net.num_classes();
        &self.acts.last().unwrap()[..b * classes]
    }

    /// Softmax probabilities of the last forward pass.
    pub fn probabilities(&mut self, net: &Network<T>, b: usize) -> &[T] {
        let classes = net.num_classes();
        let logits = &self.acts.last().unwrap()[..b * classes];
        softmax_rows(logits, classes, &mut self.probs[..b * classes]);
        &self.probs[..b * classes]
    }

    /// Forward plus backward pass for the mean softmax cross-entropy.
    /// Gradients are written into `grads` (previous contents discarded).
    pub fn loss_and_gradients(
        &mut self,
        net: &Network<T>,
        input: &[T],
        labels: &[usize],
        grads: &mut Gradients<T>,
    ) -> T {
        let b = labels.len();
        self.forward(net, input, b);
        let classes = net.num_classes();
        let shapes = net.shapes();
        let layers = &net.arch().layers;

        // loss and d(loss)/d(logits)
        let logits = &self.acts.last().unwrap()[..b * classes];
        let mut loss = T::zero();
        let inv_b = T::one() / T::from_usize(b).unwrap();
        {
            let probs = &mut self.probs[..b * classes];
            softmax_rows(logits, classes, probs);
            let g = &mut self.grad_out[..b * classes];
            for e in 0..b {
                let row = &logits[e * classes..(e + 1) * classes];
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&l| (l - m).exp()).sum::<T>().ln() + m;
                loss += lse - row[labels[e]];
                for k in 0..classes {
                    let target = if k == labels[e] { T::one() } else { T::zero() };
                    g[e * classes + k] = (probs[e * classes + k] - target) * inv_b;
                }
            }
        }
        loss *= inv_b;

        grads.clear();
        for i in (0..layers.len()).rev() {
            let layer = &layers[i];
            let in_size: usize = shapes[i].iter().product();
            let out_size: usize = shapes[i + 1].iter().product();
            let x: &[T] = if i == 0 {
                &input[..b * in_size]
            } else {
                &self.acts[i - 1][..b * in_size]
            };
            let y = &self.acts[i][..b * out_size];
            let dy = &self.grad_out[..b * out_size];
            let need_dx = i > 0;
            let dx = &mut self.grad_in[..b * in_size];
            match *layer {
                LayerSpec::Conv2d { out_channels, .. } => {
                    let slot = net.param_slot(i).unwrap();
                    let p = &net.params()[slot];
                    let g = conv_geom(layer, &shapes[i], &shapes[i + 1]);
                    let (rows, pos) = (g.rows(), g.positions());
                    let ld = b * pos;
                    let cols = &self.cols[i][..rows * ld];
                    // gather dy into (out_channels, b·pos)
                    let dyc = &mut self.scratch_a[..out_channels * ld];
                    for e in 0..b {
                        for co in 0..out_channels {
                            dyc[co * ld + e * pos..][..pos]
                                .copy_from_slice(&dy[e * out_size + co * pos..][..pos]);
                        }
                    }
                    T::gemm(
                        out_channels,
                        ld,
                        rows,
                        T::one(),
                        dyc,
                        ld as isize,
                        1,
                        cols,
                        1,
                        ld as isize,
                        T::one(),
                        grads.weights[slot].data_mut(),
                        rows as isize,
                        1,
                    );
                    let db = grads.biases[slot].data_mut();
                    for (co, d) in db.iter_mut().enumerate() {
                        // per-example partial sums keep each accumulation short
                        for e in 0..b {
                            *d += dyc[co * ld + e * pos..][..pos].iter().copied().sum::<T>();
                        }
                    }
                    if need_dx {
                        let dcols = &mut self.scratch_b[..rows * ld];
                        T::gemm(
                            rows,
                            out_channels,
                            ld,
                            T::one(),
                            p.weight.data(),
                            1,
                            rows as isize,
                            dyc,
                            ld as isize,
                            1,
                            T::zero(),
                            dcols,
                            ld as isize,
                            1,
                        );
                        dx.fill(T::zero());
                        for e in 0..b {
                            col2im(dcols, &g, ld, e * pos, &mut dx[e * in_size..(e + 1) * in_size]);
                        }
                    }
                }
                LayerSpec::MaxPool2d { .. } => {
                    if need_dx {
                        let c = shapes[i][0];
                        let plane_in = shapes[i][1] * shapes[i][2];
                        let plane_out = shapes[i + 1][1] * shapes[i + 1][2];
                        dx.fill(T::zero());
                        let am = &self.argmax[i];
                        for plane in 0..b * c {
                            let dst = &mut dx[plane * plane_in..(plane + 1) * plane_in];
                            for o in plane * plane_out..(plane + 1) * plane_out {
                                dst[am[o] as usize] += dy[o];
                            }
                        }
                    }
                }
                LayerSpec::Relu => {
                    if need_dx {
                        for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(y) {
                            *d = if v > T::zero() { g } else { T::zero() };
                        }
                    }
                }
                LayerSpec::Tanh => {
                    if need_dx {
                        for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(y) {
                            *d = g * (T::one() - v * v);
                        }
                    }
                }
                LayerSpec::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(dy);
                    }
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let slot = net.param_slot(i).unwrap();
                    let p = &net.params()[slot];
                    T::gemm(
                        out_features,
                        b,
                        in_features,
                        T::one(),
                        dy,
                        1,
                        out_features as isize,
                        x,
                        in_features as isize,
                        1,
                        T::one(),
                        grads.weights[slot].data_mut(),
                        in_features as isize,
                        1,
                    );
                    let db = grads.biases[slot].data_mut();
                    for row in dy.chunks_exact(out_features) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    if need_dx {
                        T::gemm(
                            b,
                            out_features,
                            in_features,
                            T::one(),
                            dy,
                            out_features as isize,
                            1,
                            p.weight.data(),
                            in_features as isize,
                            1,
                            T::zero(),
                            dx,
                            in_features as isize,
                            1,
                        );
                    }
                }
            }
            if need_dx {
                std::mem::swap(&mut self.grad_out, &mut self.grad_in);
            }
        }
        loss
    }
}
