//! Network architectures, forward/backward plumbing, and the two model
//! roles used by the lab: classifiers and input generators.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::LayerSpec;
use crate::nn::params::{FlatParams, ParamEntry};
use crate::seeding;
use crate::Real;

/// A validated layer stack with known input and output widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerSpec>,
}

impl Arch {
    /// Builds an architecture, checking that consecutive layer shapes chain.
    pub fn from_layers(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Arch> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if layers.is_empty() {
            return Err(Error::invalid("architecture needs at least one layer"));
        }
        let mut dim = input_dim;
        for layer in &layers {
            dim = layer.out_dim(dim)?;
        }
        Ok(Arch { input_dim, output_dim: dim, layers })
    }

    /// Single-hidden-layer MLP with ReLU.
    pub fn mlp(input: usize, hidden: usize, classes: usize) -> Result<Arch> {
        Arch::from_layers(
            input,
            vec![
                LayerSpec::Dense { input, output: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { input: hidden, output: classes },
            ],
        )
    }

    /// Two conv/pool blocks followed by a dense head, for one-channel
    /// `height x width` inputs with both sides divisible by 4.
    pub fn tiny_cnn(height: usize, width: usize, classes: usize) -> Result<Arch> {
        if height % 4 != 0 || width % 4 != 0 {
            return Err(Error::invalid(
                "tiny cnn needs height and width divisible by 4",
            ));
        }
        let (h2, w2) = (height / 2, width / 2);
        let (h4, w4) = (height / 4, width / 4);
        Arch::from_layers(
            height * width,
            vec![
                LayerSpec::Conv2 { in_ch: 1, out_ch: 8, kernel: 3, height, width },
                LayerSpec::Relu,
                LayerSpec::AvgPool2 { channels: 8, height, width },
                LayerSpec::Conv2 { in_ch: 8, out_ch: 16, kernel: 3, height: h2, width: w2 },
                LayerSpec::Relu,
                LayerSpec::AvgPool2 { channels: 16, height: h2, width: w2 },
                LayerSpec::Dense { input: 16 * h4 * w4, output: classes },
            ],
        )
    }

    /// Latent-to-input generator: dense, ReLU, dense, sigmoid.
    pub fn generator(latent: usize, hidden: usize, output: usize) -> Result<Arch> {
        Arch::from_layers(
            latent,
            vec![
                LayerSpec::Dense { input: latent, output: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { input: hidden, output },
                LayerSpec::Sigmoid,
            ],
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Named parameter tensors in storage order.
    pub fn layout(&self) -> Vec<ParamEntry> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_entries(i))
            .collect()
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(|l| l.param_len()).sum()
    }

    /// Per-layer ranges into the flat parameter vector.
    fn segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            let n = layer.param_len();
            out.push(offset..offset + n);
            offset += n;
        }
        out
    }

    /// Seeded uniform init in `(-s, s)` with `s = 1 / sqrt(fan_in)`.
    pub fn init_params(&self, seed: u64) -> FlatParams {
        let mut rng = seeding::rng(seed);
        let mut values = Vec::with_capacity(self.param_len());
        for layer in &self.layers {
            let n = layer.param_len();
            if n == 0 {
                continue;
            }
            let s = 1.0 / (layer.fan_in() as f64).sqrt();
            for _ in 0..n {
                values.push(rng.random_range(-s..s) as Real);
            }
        }
        FlatParams::from_vec(values)
    }

    fn check_batch(&self, x: &Array2<Real>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "batch has {} features, architecture expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &FlatParams) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::shape(format!(
                "parameter vector has {} values, architecture expects {}",
                params.len(),
                self.param_len()
            )));
        }
        Ok(())
    }
}

/// Layer inputs captured during a forward pass, for backprop.
pub struct Trace {
    /// `inputs[i]` is what layer `i` saw; the last entry is the output.
    pub inputs: Vec<Array2<Real>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<Real> {
        self.inputs.last().expect("trace holds at least the input")
    }
}

/// Runs the network on a batch.
pub fn forward(arch: &Arch, params: &FlatParams, x: &Array2<Real>) -> Result<Array2<Real>> {
    arch.check_batch(x)?;
    arch.check_params(params)?;
    let segments = arch.segments();
    let mut cur = x.clone();
    for (layer, seg) in arch.layers().iter().zip(&segments) {
        cur = layer.forward(&params.values()[seg.clone()], &cur);
    }
    Ok(cur)
}

/// Runs the network and keeps every intermediate activation.
pub fn forward_trace(arch: &Arch, params: &FlatParams, x: &Array2<Real>) -> Result<Trace> {
    arch.check_batch(x)?;
    arch.check_params(params)?;
    let segments = arch.segments();
    let mut inputs = Vec::with_capacity(arch.layers().len() + 1);
    inputs.push(x.clone());
    for (layer, seg) in arch.layers().iter().zip(&segments) {
        let next = layer.forward(&params.values()[seg.clone()], inputs.last().unwrap());
        inputs.push(next);
    }
    Ok(Trace { inputs })
}

/// Backpropagates `grad_out` through a traced forward pass. Returns the
/// gradient w.r.t. every parameter (flat, aligned with the parameter
/// vector) and w.r.t. the network input.
pub fn backward(
    arch: &Arch,
    params: &FlatParams,
    trace: &Trace,
    grad_out: &Array2<Real>,
) -> Result<(Vec<Real>, Array2<Real>)> {
    arch.check_params(params)?;
    if trace.inputs.len() != arch.layers().len() + 1 {
        return Err(Error::shape("trace does not match architecture"));
    }
    if grad_out.dim() != trace.output().dim() {
        return Err(Error::shape(format!(
            "output gradient has shape {:?}, output has {:?}",
            grad_out.dim(),
            trace.output().dim()
        )));
    }
    let segments = arch.segments();
    let mut param_grads = vec![0.0 as Real; params.len()];
    let mut grad = grad_out.clone();
    for (i, layer) in arch.layers().iter().enumerate().rev() {
        let seg = segments[i].clone();
        let (layer_grads, grad_in) =
            layer.backward(&params.values()[seg.clone()], &trace.inputs[i], &grad);
        param_grads[seg].copy_from_slice(&layer_grads);
        grad = grad_in;
    }
    Ok((param_grads, grad))
}

/// A classifier: architecture plus current parameters. The final layer
/// emits one logit per class.
#[derive(Clone, Debug)]
pub struct Classifier {
    arch: Arch,
    params: FlatParams,
}

impl Classifier {
    pub fn new(arch: Arch, seed: u64) -> Classifier {
        let params = arch.init_params(seed);
        Classifier { arch, params }
    }

    pub fn with_params(arch: Arch, params: FlatParams) -> Result<Classifier> {
        arch.check_params(&params)?;
        Ok(Classifier { arch, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FlatParams {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn logits(&self, batch: &Array2<Real>) -> Result<Array2<Real>> {
        forward(&self.arch, &self.params, batch)
    }

    /// Argmax class per row, ties resolved to the lowest index.
    pub fn predict(&self, batch: &Array2<Real>) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits.rows().into_iter().map(|r| argmax(r.as_slice().unwrap())).collect())
    }
}

pub(crate) fn argmax(row: &[Real]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// A generator mapping standard-normal latent vectors to inputs in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Generator {
    latent_dim: usize,
    arch: Arch,
    params: FlatParams,
}

impl Generator {
    pub fn new(latent_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Result<Generator> {
        let arch = Arch::generator(latent_dim, hidden, output_dim)?;
        let params = arch.init_params(seed);
        Ok(Generator { latent_dim, arch, params })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FlatParams {
        &mut self.params
    }

    pub fn sample_latent(&self, batch: usize, rng: &mut impl Rng) -> Array2<Real> {
        let mut z = Array2::<Real>::zeros((batch, self.latent_dim));
        for v in z.iter_mut() {
            *v = rng.sample::<Real, _>(rand_distr::StandardNormal);
        }
        z
    }

    pub fn forward(&self, z: &Array2<Real>) -> Result<Array2<Real>> {
        forward(&self.arch, &self.params, z)
    }
}
