//! Layer definitions with explicit forward and backward passes.
//!
//! Batches are `Array2<Real>` of shape `[batch, features]`. Image layers use
//! channel-major flattening: feature index = `ch * h * w + row * w + col`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamEntry;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Relu,
    Sigmoid,
    /// Square convolution with odd kernel, stride 1 and same-padding.
    Conv2 { in_ch: usize, out_ch: usize, kernel: usize, height: usize, width: usize },
    /// 2x2 average pooling with stride 2.
    AvgPool2 { channels: usize, height: usize, width: usize },
}

impl LayerSpec {
    /// Output feature count given the incoming feature count.
    pub fn out_dim(&self, in_dim: usize) -> Result<usize> {
        match *self {
            LayerSpec::Dense { input, output } => {
                if input != in_dim {
                    return Err(Error::shape(format!(
                        "dense expects {input} inputs, got {in_dim}"
                    )));
                }
                Ok(output)
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(in_dim),
            LayerSpec::Conv2 { in_ch, out_ch, kernel, height, width } => {
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(Error::invalid("conv kernel must be odd"));
                }
                if in_ch * height * width != in_dim {
                    return Err(Error::shape(format!(
                        "conv expects {} inputs ({in_ch}x{height}x{width}), got {in_dim}",
                        in_ch * height * width
                    )));
                }
                Ok(out_ch * height * width)
            }
            LayerSpec::AvgPool2 { channels, height, width } => {
                if height % 2 != 0 || width % 2 != 0 {
                    return Err(Error::invalid(
                        "avg pool needs even height and width",
                    ));
                }
                if channels * height * width != in_dim {
                    return Err(Error::shape(format!(
                        "pool expects {} inputs ({channels}x{height}x{width}), got {in_dim}",
                        channels * height * width
                    )));
                }
                Ok(channels * (height / 2) * (width / 2))
            }
        }
    }

    /// Named parameter tensors of this layer, prefixed by its position.
    pub fn param_entries(&self, index: usize) -> Vec<ParamEntry> {
        match *self {
            LayerSpec::Dense { input, output } => vec![
                ParamEntry::new(format!("l{index}.dense.w"), vec![input, output]),
                ParamEntry::new(format!("l{index}.dense.b"), vec![output]),
            ],
            LayerSpec::Conv2 { in_ch, out_ch, kernel, .. } => vec![
                ParamEntry::new(
                    format!("l{index}.conv.w"),
                    vec![out_ch, in_ch, kernel, kernel],
                ),
                ParamEntry::new(format!("l{index}.conv.b"), vec![out_ch]),
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_len(&self) -> usize {
        self.param_entries(0).iter().map(|e| e.len()).sum()
    }

    /// Fan-in used for uniform init bounds. Zero for parameterless layers.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv2 { in_ch, kernel, .. } => in_ch * kernel * kernel,
            _ => 0,
        }
    }

    pub fn forward(&self, params: &[Real], x: &Array2<Real>) -> Array2<Real> {
        match *self {
            LayerSpec::Dense { input, output } => {
                let w = ndarray::ArrayView2::from_shape((input, output), &params[..input * output])
                    .expect("dense weight slice");
                let b = &params[input * output..];
                let mut y = x.dot(&w);
                for mut row in y.rows_mut() {
                    for (v, bias) in row.iter_mut().zip(b) {
                        *v += *bias;
                    }
                }
                y
            }
            LayerSpec::Relu => x.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            LayerSpec::Sigmoid => x.mapv(sigmoid),
            LayerSpec::Conv2 { in_ch, out_ch, kernel, height, width } => {
                conv_forward(params, x, in_ch, out_ch, kernel, height, width)
            }
            LayerSpec::AvgPool2 { channels, height, width } => {
                pool_forward(x, channels, height, width)
            }
        }
    }

    /// Gradients of a scalar loss w.r.t. this layer's parameters and input,
    /// given the gradient w.r.t. its output and the input it saw forward.
    pub fn backward(
        &self,
        params: &[Real],
        input: &Array2<Real>,
        grad_out: &Array2<Real>,
    ) -> (Vec<Real>, Array2<Real>) {
        match *self {
            LayerSpec::Dense { input: n_in, output: n_out } => {
                let w = ndarray::ArrayView2::from_shape((n_in, n_out), &params[..n_in * n_out])
                    .expect("dense weight slice");
                let grad_w = input.t().dot(grad_out);
                let mut grad_b = vec![0.0 as Real; n_out];
                for row in grad_out.rows() {
                    for (g, v) in grad_b.iter_mut().zip(row) {
                        *g += *v;
                    }
                }
                let grad_in = grad_out.dot(&w.t());
                let mut grads = Vec::with_capacity(n_in * n_out + n_out);
                grads.extend(grad_w.iter().copied());
                grads.extend(grad_b);
                (grads, grad_in)
            }
            LayerSpec::Relu => {
                let grad_in = ndarray::Zip::from(input)
                    .and(grad_out)
                    .map_collect(|&x, &g| if x > 0.0 { g } else { 0.0 });
                (Vec::new(), grad_in)
            }
            LayerSpec::Sigmoid => {
                let grad_in = ndarray::Zip::from(input)
                    .and(grad_out)
                    .map_collect(|&x, &g| {
                        let y = sigmoid(x);
                        g * y * (1.0 - y)
                    });
                (Vec::new(), grad_in)
            }
            LayerSpec::Conv2 { in_ch, out_ch, kernel, height, width } => {
                conv_backward(params, input, grad_out, in_ch, out_ch, kernel, height, width)
            }
            LayerSpec::AvgPool2 { channels, height, width } => {
                (Vec::new(), pool_backward(grad_out, channels, height, width))
            }
        }
    }
}

fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_forward(
    params: &[Real],
    x: &Array2<Real>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    height: usize,
    width: usize,
) -> Array2<Real> {
    let batch = x.nrows();
    let pad = (kernel / 2) as isize;
    let w_len = out_ch * in_ch * kernel * kernel;
    let weights = &params[..w_len];
    let bias = &params[w_len..];
    let mut out = Array2::<Real>::zeros((batch, out_ch * height * width));
    for b in 0..batch {
        let row = x.row(b);
        let src = row.as_slice().expect("contiguous batch row");
        let mut dst = out.row_mut(b);
        let dst = dst.as_slice_mut().expect("contiguous output row");
        for o in 0..out_ch {
            for y in 0..height {
                for xx in 0..width {
                    let mut acc = bias[o] as f64;
                    for i in 0..in_ch {
                        for ky in 0..kernel {
                            let sy = y as isize + ky as isize - pad;
                            if sy < 0 || sy >= height as isize {
                                continue;
                            }
                            for kx in 0..kernel {
                                let sx = xx as isize + kx as isize - pad;
                                if sx < 0 || sx >= width as isize {
                                    continue;
                                }
                                let wv = weights
                                    [((o * in_ch + i) * kernel + ky) * kernel + kx];
                                let xv = src[i * height * width
                                    + sy as usize * width
                                    + sx as usize];
                                acc += wv as f64 * xv as f64;
                            }
                        }
                    }
                    dst[o * height * width + y * width + xx] = acc as Real;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    params: &[Real],
    input: &Array2<Real>,
    grad_out: &Array2<Real>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    height: usize,
    width: usize,
) -> (Vec<Real>, Array2<Real>) {
    let batch = input.nrows();
    let pad = (kernel / 2) as isize;
    let w_len = out_ch * in_ch * kernel * kernel;
    let weights = &params[..w_len];
    let mut grad_w = vec![0.0f64; w_len];
    let mut grad_b = vec![0.0f64; out_ch];
    let mut grad_in = Array2::<Real>::zeros(input.dim());
    for b in 0..batch {
        let in_row = input.row(b);
        let src = in_row.as_slice().expect("contiguous batch row");
        let go_row = grad_out.row(b);
        let go = go_row.as_slice().expect("contiguous grad row");
        let mut gi_row = grad_in.row_mut(b);
        let gi = gi_row.as_slice_mut().expect("contiguous grad row");
        for o in 0..out_ch {
            for y in 0..height {
                for xx in 0..width {
                    let g = go[o * height * width + y * width + xx] as f64;
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[o] += g;
                    for i in 0..in_ch {
                        for ky in 0..kernel {
                            let sy = y as isize + ky as isize - pad;
                            if sy < 0 || sy >= height as isize {
                                continue;
                            }
                            for kx in 0..kernel {
                                let sx = xx as isize + kx as isize - pad;
                                if sx < 0 || sx >= width as isize {
                                    continue;
                                }
                                let widx = ((o * in_ch + i) * kernel + ky) * kernel + kx;
                                let sidx = i * height * width
                                    + sy as usize * width
                                    + sx as usize;
                                grad_w[widx] += g * src[sidx] as f64;
                                gi[sidx] += (g * weights[widx] as f64) as Real;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut grads = Vec::with_capacity(w_len + out_ch);
    grads.extend(grad_w.into_iter().map(|v| v as Real));
    grads.extend(grad_b.into_iter().map(|v| v as Real));
    (grads, grad_in)
}

fn pool_forward(x: &Array2<Real>, channels: usize, height: usize, width: usize) -> Array2<Real> {
    let batch = x.nrows();
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Array2::<Real>::zeros((batch, channels * oh * ow));
    for b in 0..batch {
        let row = x.row(b);
        let src = row.as_slice().expect("contiguous batch row");
        let mut dst_row = out.row_mut(b);
        let dst = dst_row.as_slice_mut().expect("contiguous output row");
        for c in 0..channels {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = c * height * width + 2 * y * width + 2 * xx;
                    let sum = src[base] + src[base + 1] + src[base + width] + src[base + width + 1];
                    dst[c * oh * ow + y * ow + xx] = sum * 0.25;
                }
            }
        }
    }
    out
}

fn pool_backward(
    grad_out: &Array2<Real>,
    channels: usize,
    height: usize,
    width: usize,
) -> Array2<Real> {
    let batch = grad_out.nrows();
    let (oh, ow) = (height / 2, width / 2);
    let mut grad_in = Array2::<Real>::zeros((batch, channels * height * width));
    for b in 0..batch {
        let go_row = grad_out.row(b);
        let go = go_row.as_slice().expect("contiguous grad row");
        let mut gi_row = grad_in.row_mut(b);
        let gi = gi_row.as_slice_mut().expect("contiguous grad row");
        for c in 0..channels {
            for y in 0..oh {
                for xx in 0..ow {
                    let g = go[c * oh * ow + y * ow + xx] * 0.25;
                    let base = c * height * width + 2 * y * width + 2 * xx;
                    gi[base] += g;
                    gi[base + 1] += g;
                    gi[base + width] += g;
                    gi[base + width + 1] += g;
                }
            }
        }
    }
    grad_in
}
