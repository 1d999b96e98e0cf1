//! Sequential networks built from [`LayerSpec`] lists.
//!
//! Parameters are Gaussian-initialized (mean 0, stddev 0.1) for kernels and
//! dense weights; biases start at 0.1. Flattening keeps the row-major
//! `[height][width][channel]` order, so the first dense layer of the canonical
//! model sees `7 * 7 * 64 = 3136` inputs laid out channel-fastest.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, network_from_bytes, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{
    canonical_config, propagate_shapes, variant_config, LayerSpec, NetworkConfig, Variant,
    MNIST_INPUT, NUM_CLASSES,
};
pub use train::{evaluate, train, Evaluation, LossSink};

use crate::error::{Error, Result};
use crate::layers::{
    relu, relu_backward, softmax, softmax_jacobian_vp, ConvLayer, DenseLayer, DropoutLayer,
    MaxPoolLayer, Mode,
};
use crate::optim::{batch_rows, output_delta, GradientSet};
use crate::rng::{Rng, STREAM_DROPOUT, STREAM_INIT};
use crate::tensor::Tensor;

pub const INIT_STDDEV: f64 = 0.1;
pub const INIT_BIAS: f64 = 0.1;

#[derive(Debug, Clone)]
enum Node {
    Conv { layer: ConvLayer, input: Option<Tensor> },
    Pool(MaxPoolLayer),
    Dense { layer: DenseLayer, input: Option<Tensor> },
    Relu { input: Option<Tensor> },
    Softmax { output: Option<Tensor> },
    Dropout(DropoutLayer),
    Flatten { input_shape: Option<Vec<usize>> },
}

impl Node {
    fn clear(&mut self) {
        match self {
            Node::Conv { input, .. } | Node::Dense { input, .. } | Node::Relu { input } => *input = None,
            Node::Softmax { output } => *output = None,
            Node::Flatten { input_shape } => *input_shape = None,
            Node::Pool(_) | Node::Dropout(_) => {}
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    name: String,
    input: [usize; 3],
    specs: Vec<LayerSpec>,
    nodes: Vec<Node>,
    dropout_rng: Rng,
    mode: Mode,
    output: Option<Tensor>,
}

impl Network {
    /// Builds and initializes the network described by a validated config.
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Self::from_specs(
            &config.name,
            config.input,
            &config.layers,
            config.hyper.keep_prob,
            config.hyper.seed,
        )
    }

    /// Builds any shape-consistent layer stack, without the 10-class softmax
    /// requirement `NetworkConfig::validate` imposes.
    pub fn from_specs(
        name: &str,
        input: [usize; 3],
        specs: &[LayerSpec],
        keep_prob: f64,
        seed: u64,
    ) -> Result<Self> {
        let shapes = propagate_shapes(&input, specs)?;
        let mut rng = Rng::with_stream(seed, STREAM_INIT);
        let mut nodes = Vec::with_capacity(specs.len());
        for (spec, in_shape) in specs.iter().zip(&shapes) {
            let node = match *spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let c = in_shape[2];
                    let k = Tensor::gaussian_fill(&[filters, kernel, kernel, c], 0.0, INIT_STDDEV, &mut rng)?;
                    let b = Tensor::filled(&[filters], INIT_BIAS)?;
                    Node::Conv {
                        layer: ConvLayer::new(k, b, stride, padding)?,
                        input: None,
                    }
                }
                LayerSpec::Maxpool { window, stride } => Node::Pool(MaxPoolLayer::new(window, stride)?),
                LayerSpec::Dense { units } => {
                    let w = Tensor::gaussian_fill(&[units, in_shape[0]], 0.0, INIT_STDDEV, &mut rng)?;
                    let b = Tensor::filled(&[units], INIT_BIAS)?;
                    Node::Dense {
                        layer: DenseLayer::new(w, b)?,
                        input: None,
                    }
                }
                LayerSpec::Relu => Node::Relu { input: None },
                LayerSpec::Softmax => Node::Softmax { output: None },
                LayerSpec::Dropout { keep_prob: own } => {
                    Node::Dropout(DropoutLayer::new(own.unwrap_or(keep_prob))?)
                }
                LayerSpec::Flatten => Node::Flatten { input_shape: None },
            };
            nodes.push(node);
        }
        Ok(Self {
            name: name.to_string(),
            input,
            specs: specs.to_vec(),
            nodes,
            dropout_rng: Rng::with_stream(seed, STREAM_DROPOUT),
            mode: Mode::Train,
            output: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        for node in &mut self.nodes {
            if let Node::Dropout(d) = node {
                d.set_mode(mode);
            }
        }
    }

    /// Current dropout random state; restoring it replays the same masks.
    pub fn dropout_rng(&self) -> &Rng {
        &self.dropout_rng
    }

    pub fn set_dropout_rng(&mut self, rng: Rng) {
        self.dropout_rng = rng;
    }

    /// Parameter tensors in declaration order: for each conv or dense layer,
    /// its weights then its biases.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node {
                Node::Conv { layer, .. } => out.extend([layer.kernels(), layer.biases()]),
                Node::Dense { layer, .. } => out.extend([layer.weights(), layer.biases()]),
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match node {
                Node::Conv { layer, .. } => out.extend(layer.params_mut()),
                Node::Dense { layer, .. } => out.extend(layer.params_mut()),
                _ => {}
            }
        }
        out
    }

    /// Human-readable names matching [`Network::parameters`], e.g. `conv1.kernels`.
    pub fn parameter_names(&self) -> Vec<String> {
        let (mut conv, mut dense) = (0, 0);
        let mut out = Vec::new();
        for node in &self.nodes {
            match node {
                Node::Conv { .. } => {
                    conv += 1;
                    out.push(format!("conv{conv}.kernels"));
                    out.push(format!("conv{conv}.biases"));
                }
                Node::Dense { .. } => {
                    dense += 1;
                    out.push(format!("dense{dense}.weights"));
                    out.push(format!("dense{dense}.biases"));
                }
                _ => {}
            }
        }
        out
    }

    /// Replaces every parameter tensor; shapes must match exactly.
    pub fn set_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::shape(format!(
                "{} tensors supplied for {} parameters",
                values.len(),
                params.len()
            )));
        }
        if let Some((p, v)) = params.iter().zip(&values).find(|(p, v)| p.shape() != v.shape()) {
            return Err(Error::shape(format!(
                "parameter {:?} cannot take a {:?} tensor",
                p.shape(),
                v.shape()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            **p = v;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        let tail = if shape.len() == 4 { &shape[1..] } else { shape };
        if tail != self.input {
            return Err(Error::shape(format!(
                "network expects input {:?} (optionally batched), got {shape:?}",
                self.input
            )));
        }
        Ok(())
    }

    /// Inference pass that leaves no caches behind; dropout is the identity.
    ///
    /// Accepts one `[h, w, c]` image or a batch `[n, h, w, c]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = x.clone();
        for node in &self.nodes {
            a = match node {
                Node::Conv { layer, .. } => layer.forward(&a)?,
                Node::Pool(p) => p.apply(&a)?.0,
                Node::Dense { layer, .. } => layer.forward(&a)?,
                Node::Relu { .. } => relu(&a),
                Node::Softmax { .. } => softmax(&a)?,
                Node::Dropout(_) => a,
                Node::Flatten { .. } => flatten(a)?,
            };
        }
        Ok(a)
    }

    /// Forward pass. In training mode every layer caches what its backward
    /// pass needs; in inference mode this is [`Network::predict`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.output = None;
        for node in &mut self.nodes {
            node.clear();
        }
        if self.mode == Mode::Infer {
            return self.predict(x);
        }
        self.check_input(x)?;
        let mut a = x.clone();
        for node in &mut self.nodes {
            a = match node {
                Node::Conv { layer, input } => {
                    let out = layer.forward(&a)?;
                    *input = Some(a);
                    out
                }
                Node::Pool(p) => p.forward(&a)?,
                Node::Dense { layer, input } => {
                    let out = layer.forward(&a)?;
                    *input = Some(a);
                    out
                }
                Node::Relu { input } => {
                    let out = relu(&a);
                    *input = Some(a);
                    out
                }
                Node::Softmax { output } => {
                    let out = softmax(&a)?;
                    *output = Some(out.clone());
                    out
                }
                Node::Dropout(d) => d.forward(&a, Some(&mut self.dropout_rng))?,
                Node::Flatten { input_shape } => {
                    *input_shape = Some(a.shape().to_vec());
                    flatten(a)?
                }
            };
        }
        self.output = Some(a.clone());
        Ok(a)
    }

    /// Gradients of the quadratic cost `1/(2n) sum |y - a|^2` for the batch seen
    /// by the last training-mode forward pass.
    pub fn backward(&mut self, targets: &Tensor) -> Result<GradientSet> {
        let output = self
            .output
            .as_ref()
            .ok_or_else(|| Error::state("backward needs a preceding training-mode forward pass"))?;
        let mut delta = output_delta(output, targets, batch_rows(output))?;
        let mut grads = Vec::new();
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let missing = || Error::state("layer cache missing; run forward first");
            delta = match node {
                Node::Softmax { output } => softmax_jacobian_vp(output.as_ref().ok_or_else(missing)?, &delta)?,
                Node::Dense { layer, input } => {
                    let g = layer.backward(input.as_ref().ok_or_else(missing)?, &delta)?;
                    grads.push(g.grad_b);
                    grads.push(g.grad_w);
                    g.delta_in
                }
                Node::Relu { input } => relu_backward(input.as_ref().ok_or_else(missing)?, &delta)?,
                Node::Dropout(d) => d.backward(&delta)?,
                Node::Flatten { input_shape } => {
                    delta.reshape(input_shape.as_ref().ok_or_else(missing)?)?
                }
                Node::Pool(p) => p.backward(&delta)?,
                Node::Conv { layer, input } => {
                    let input = input.as_ref().ok_or_else(missing)?;
                    let g = if i == 0 {
                        layer.backward_params(input, &delta)?
                    } else {
                        layer.backward(input, &delta)?
                    };
                    grads.push(g.grad_biases);
                    grads.push(g.grad_kernels);
                    match g.delta_in {
                        Some(d) => d,
                        None => break,
                    }
                }
            };
        }
        grads.reverse();
        Ok(GradientSet::new(grads))
    }
}

/// Collapses `[h, w, c]` to `[h*w*c]` and `[n, h, w, c]` to `[n, h*w*c]`.
fn flatten(a: Tensor) -> Result<Tensor> {
    let shape = a.shape().to_vec();
    match shape.len() {
        4 => a.reshape(&[shape[0], shape[1..].iter().product()]),
        _ => {
            let len = a.len();
            a.reshape(&[len])
        }
    }
}
