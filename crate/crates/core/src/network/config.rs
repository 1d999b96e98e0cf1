use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{check_keep_prob, Padding};
use crate::layers::conv_geometry;
use crate::optim::Hyperparams;

pub const MNIST_INPUT: [usize; 3] = [28, 28, 1];
pub const NUM_CLASSES: usize = 10;

fn default_stride() -> usize {
    1
}

fn default_padding() -> Padding {
    Padding::Same
}

fn default_input() -> [usize; 3] {
    MNIST_INPUT
}

/// One entry of a sequential topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    Maxpool {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
    /// Uses the run's `keep_prob` unless overridden here.
    Dropout {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        keep_prob: Option<f64>,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::Maxpool { window: 2, stride: 2 }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn dropout() -> Self {
        LayerSpec::Dropout { keep_prob: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let image = |what: &str| match *input {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!(
                "{what} layer needs an [h, w, c] input, got {input:?}"
            ))),
        };
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::param(format!("invalid conv spec {self:?}")));
                }
                let (oh, ow) = conv_geometry(image("conv")?, kernel, stride, padding)?;
                Ok(vec![oh, ow, filters])
            }
            LayerSpec::Maxpool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::param(format!("invalid pool spec {self:?}")));
                }
                let (h, w, c) = image("maxpool")?;
                if h < window || w < window {
                    return Err(Error::shape(format!(
                        "pool window {window} exceeds input {input:?}"
                    )));
                }
                Ok(vec![(h - window) / stride + 1, (w - window) / stride + 1, c])
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::param("dense layer needs at least one unit"));
                }
                if input.len() != 1 {
                    return Err(Error::shape(format!(
                        "dense layer needs a flat input, got {input:?} (add a flatten layer)"
                    )));
                }
                Ok(vec![units])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::shape(format!("softmax needs a flat input, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Dropout { keep_prob } => {
                if let Some(p) = keep_prob {
                    check_keep_prob(p)?;
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Per-example shapes after each layer, starting with the input shape.
pub fn propagate_shapes(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let next = layer
            .output_shape(shapes.last().unwrap())
            .map_err(|e| Error::Config(format!("layer {i} ({}): {e}", layer.kind())))?;
        shapes.push(next);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    #[serde(default = "default_input")]
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub hyper: Hyperparams,
}

impl NetworkConfig {
    /// Checks the topology end to end: input to a 10-way softmax output.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        self.hyper
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.input.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {:?}", self.input)));
        }
        let shapes = propagate_shapes(&self.input, &self.layers)?;
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::Config("the last layer must be softmax".into()));
        }
        let out = shapes.last().unwrap();
        if out.as_slice() != [NUM_CLASSES] {
            return Err(Error::Config(format!(
                "network output must be [{NUM_CLASSES}], got {out:?}"
            )));
        }
        Ok(shapes)
    }

    /// Width of the vector produced by the first flatten layer, if any.
    pub fn flatten_width(&self) -> Result<Option<usize>> {
        let shapes = propagate_shapes(&self.input, &self.layers)?;
        Ok(self
            .layers
            .iter()
            .position(|l| *l == LayerSpec::Flatten)
            .map(|i| shapes[i + 1][0]))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetworkConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// The seven-layer classifier: two conv/pool stages, a 1024-unit hidden layer
/// with dropout, and a 10-way softmax output.
pub fn canonical_config() -> NetworkConfig {
    variant_config(Variant::A).with_name("canonical")
}

impl NetworkConfig {
    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn with_hyper(mut self, hyper: Hyperparams) -> Self {
        self.hyper = hyper;
        self
    }
}

/// The four layer orderings compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// conv, pool, conv, pool; with dropout.
    A,
    /// conv, conv, pool, pool; with dropout.
    B,
    /// conv, pool, conv, pool; no dropout.
    C,
    /// conv, conv, pool, pool; no dropout.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn stacked_convs(self) -> bool {
        matches!(self, Variant::B | Variant::D)
    }

    pub fn has_dropout(self) -> bool {
        matches!(self, Variant::A | Variant::B)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            "D" | "d" => Ok(Variant::D),
            other => Err(Error::param(format!(
                "unknown variant {other:?}; expected one of A, B, C, D"
            ))),
        }
    }
}

pub fn variant_config(variant: Variant) -> NetworkConfig {
    let mut layers = if variant.stacked_convs() {
        vec![
            LayerSpec::conv(32, 5),
            LayerSpec::Relu,
            LayerSpec::conv(64, 5),
            LayerSpec::Relu,
            LayerSpec::pool2(),
            LayerSpec::pool2(),
        ]
    } else {
        vec![
            LayerSpec::conv(32, 5),
            LayerSpec::Relu,
            LayerSpec::pool2(),
            LayerSpec::conv(64, 5),
            LayerSpec::Relu,
            LayerSpec::pool2(),
        ]
    };
    layers.extend([LayerSpec::Flatten, LayerSpec::dense(1024), LayerSpec::Relu]);
    if variant.has_dropout() {
        layers.push(LayerSpec::dropout());
    }
    layers.extend([LayerSpec::dense(NUM_CLASSES), LayerSpec::Softmax]);
    NetworkConfig {
        name: format!("variant-{variant}"),
        input: MNIST_INPUT,
        layers,
        hyper: Hyperparams::default(),
    }
}
