use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::NnError;
use crate::dataset::NUM_CLASSES;

/// Convolution kernels are 3x3, stride 1, valid padding.
pub const KERNEL: usize = 3;
/// Max-pooling windows are 2x2 with stride 2, floor mode.
pub const POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Layer {
    Conv { filters: usize },
    MaxPool,
    Relu,
    Flatten,
    Dense { units: usize },
    /// Marks the logits as softmax class scores; identity in the forward pass.
    SoftmaxOutput,
}

/// Activation shape of one sample (the batch axis is implicit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ActShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl ActShape {
    pub fn size(self) -> usize {
        match self {
            ActShape::Spatial { h, w, c } => h * w * c,
            ActShape::Flat(n) => n,
        }
    }

    /// Tensor shape for a batch of `batch` samples.
    pub fn batched(self, batch: usize) -> Vec<usize> {
        match self {
            ActShape::Spatial { h, w, c } => vec![batch, h, w, c],
            ActShape::Flat(n) => vec![batch, n],
        }
    }
}

/// Static description of a trainable layer's parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub layer: usize,
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
    pub fan_in: usize,
}

/// A validated layer stack from a `28x28x1` image to ten class scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelArch {
    input: ActShape,
    layers: Vec<Layer>,
    shapes: Vec<ActShape>,
}

impl ModelArch {
    pub fn new(input: ActShape, layers: Vec<Layer>) -> Result<Self, NnError> {
        let bad = |i: usize, why: String| NnError::InvalidArch(format!("layer {i}: {why}"));
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input;
        for (i, layer) in layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (Layer::Conv { filters }, ActShape::Spatial { h, w, .. }) => {
                    if h < KERNEL || w < KERNEL || filters == 0 {
                        return Err(bad(i, format!("conv cannot apply to {h}x{w}")));
                    }
                    ActShape::Spatial {
                        h: h - KERNEL + 1,
                        w: w - KERNEL + 1,
                        c: filters,
                    }
                }
                (Layer::MaxPool, ActShape::Spatial { h, w, c }) => {
                    if h < POOL || w < POOL {
                        return Err(bad(i, format!("pool cannot apply to {h}x{w}")));
                    }
                    ActShape::Spatial {
                        h: h / POOL,
                        w: w / POOL,
                        c,
                    }
                }
                (Layer::Relu, s) => s,
                (Layer::Flatten, s @ ActShape::Spatial { .. }) => ActShape::Flat(s.size()),
                (Layer::Dense { units }, ActShape::Flat(_)) if units > 0 => ActShape::Flat(units),
                (Layer::SoftmaxOutput, s @ ActShape::Flat(_)) if i + 1 == layers.len() => s,
                (l, s) => return Err(bad(i, format!("{l:?} cannot follow shape {s:?}"))),
            };
            shapes.push(cur);
        }
        if layers.last() != Some(&Layer::SoftmaxOutput) || cur != ActShape::Flat(NUM_CLASSES) {
            return Err(NnError::InvalidArch(format!(
                "stack must end in a {NUM_CLASSES}-way SoftmaxOutput, ends in {cur:?}"
            )));
        }
        Ok(Self {
            input,
            layers,
            shapes,
        })
    }

    pub fn input(&self) -> ActShape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape after each layer.
    pub fn shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    /// Input shape of layer `i`.
    pub fn input_shape(&self, i: usize) -> ActShape {
        if i == 0 {
            self.input
        } else {
            self.shapes[i - 1]
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (mut convs, mut denses) = (0, 0);
        let mut specs = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match (*layer, self.input_shape(i)) {
                (Layer::Conv { filters }, ActShape::Spatial { c, .. }) => {
                    convs += 1;
                    specs.push(ParamSpec {
                        layer: i,
                        name: format!("conv{convs}"),
                        weight_shape: vec![filters, KERNEL, KERNEL, c],
                        bias_shape: vec![filters],
                        fan_in: KERNEL * KERNEL * c,
                    });
                }
                (Layer::Dense { units }, ActShape::Flat(n)) => {
                    denses += 1;
                    specs.push(ParamSpec {
                        layer: i,
                        name: format!("dense{denses}"),
                        weight_shape: vec![units, n],
                        bias_shape: vec![units],
                        fan_in: n,
                    });
                }
                _ => {}
            }
        }
        specs
    }

    pub fn num_params(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|s| s.weight_shape.iter().product::<usize>() + s.bias_shape.iter().product::<usize>())
            .sum()
    }

    /// Canonical one-line description, e.g. `28x28x1|conv16|relu|pool|...`.
    pub fn describe(&self) -> String {
        let mut s = match self.input {
            ActShape::Spatial { h, w, c } => format!("{h}x{w}x{c}"),
            ActShape::Flat(n) => format!("{n}"),
        };
        for layer in &self.layers {
            let _ = match layer {
                Layer::Conv { filters } => write!(s, "|conv{filters}"),
                Layer::MaxPool => write!(s, "|pool"),
                Layer::Relu => write!(s, "|relu"),
                Layer::Flatten => write!(s, "|flatten"),
                Layer::Dense { units } => write!(s, "|dense{units}"),
                Layer::SoftmaxOutput => write!(s, "|softmax"),
            };
        }
        s
    }

    /// First eight bytes of the SHA-256 of [`describe`](Self::describe).
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// Conv16-ReLU-Pool-Conv12-ReLU-Pool-Conv10-ReLU-Flatten-Dense10-Softmax.
pub fn default_arch() -> ModelArch {
    ModelArch::new(
        ActShape::Spatial { h: 28, w: 28, c: 1 },
        vec![
            Layer::Conv { filters: 16 },
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv { filters: 12 },
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv { filters: 10 },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense { units: NUM_CLASSES },
            Layer::SoftmaxOutput,
        ],
    )
    .expect("default architecture chains")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain() {
        let arch = default_arch();
        let spatial: Vec<usize> = arch
            .shapes()
            .iter()
            .filter_map(|s| match s {
                ActShape::Spatial { h, .. } => Some(*h),
                ActShape::Flat(_) => None,
            })
            .collect();
        // conv, relu, pool per stage
        assert_eq!(spatial, vec![26, 26, 13, 11, 11, 5, 3, 3]);
        assert_eq!(arch.shapes()[0], ActShape::Spatial { h: 26, w: 26, c: 16 });
        assert_eq!(arch.shapes()[2], ActShape::Spatial { h: 13, w: 13, c: 16 });
        assert_eq!(arch.shapes()[3], ActShape::Spatial { h: 11, w: 11, c: 12 });
        assert_eq!(arch.shapes()[5], ActShape::Spatial { h: 5, w: 5, c: 12 });
        assert_eq!(arch.shapes()[6], ActShape::Spatial { h: 3, w: 3, c: 10 });
        assert_eq!(arch.shapes()[8], ActShape::Flat(90));
        assert_eq!(arch.shapes()[10], ActShape::Flat(10));
    }

    #[test]
    fn default_param_count() {
        // 16*9+16 + 12*144+12 + 10*108+10 + 10*90+10
        assert_eq!(default_arch().num_params(), 160 + 1740 + 1090 + 910);
        let names: Vec<_> = default_arch().param_specs().into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["conv1", "conv2", "conv3", "dense1"]);
    }

    #[test]
    fn rejects_illegal_chains() {
        let input = ActShape::Spatial { h: 28, w: 28, c: 1 };
        assert!(ModelArch::new(input, vec![Layer::Dense { units: 10 }, Layer::SoftmaxOutput]).is_err());
        assert!(ModelArch::new(input, vec![Layer::Flatten, Layer::Dense { units: 5 }, Layer::SoftmaxOutput]).is_err());
        assert!(ModelArch::new(input, vec![Layer::Flatten, Layer::Dense { units: 10 }]).is_err());
        assert!(ModelArch::new(input, vec![Layer::Flatten, Layer::Dense { units: 10 }, Layer::SoftmaxOutput]).is_ok());
        let tiny = ActShape::Spatial { h: 2, w: 2, c: 1 };
        assert!(ModelArch::new(tiny, vec![Layer::Conv { filters: 1 }, Layer::Flatten, Layer::SoftmaxOutput]).is_err());
    }

    #[test]
    fn fingerprint_tracks_description() {
        let a = default_arch();
        assert_eq!(a.describe(), "28x28x1|conv16|relu|pool|conv12|relu|pool|conv10|relu|flatten|dense10|softmax");
        assert_eq!(a.fingerprint(), default_arch().fingerprint());
        let other = ModelArch::new(a.input(), vec![Layer::Flatten, Layer::Dense { units: 10 }, Layer::SoftmaxOutput]).unwrap();
        assert_ne!(a.fingerprint(), other.fingerprint());
    }
}
