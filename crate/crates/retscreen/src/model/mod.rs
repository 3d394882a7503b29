//! Declarative model specs and their runtime realization.
//!
//! Two architectures exist: a small baseline CNN on 64x64 input with a
//! sigmoid scalar head, and a frozen VGG16 backbone on 254x254 input with a
//! two-unit softmax head. The spec is the single source of truth; the
//! runtime propagates shapes analytically, so parameter counts are exact
//! and testable before any training happens.
//!
//! ```
//! use retscreen::model::{baseline_cnn_spec, instantiate, transfer_head_spec};
//!
//! let baseline = instantiate(&baseline_cnn_spec(), 0, None).unwrap();
//! assert_eq!(baseline.parameter_counts().trainable, 1_625_281);
//!
//! let transfer = instantiate(&transfer_head_spec(), 0, None).unwrap();
//! assert_eq!(transfer.parameter_counts().trainable, 12_594_802);
//! assert_eq!(transfer.parameter_counts().frozen, 14_714_688);
//! ```

pub mod ops;
pub mod vgg16;

use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::preprocess::{HeadKind, ImageTensor, PixelScale};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model spec `{0}`")]
    UnknownSpec(String),
    #[error("shape mismatch at layer `{layer}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weights file {path}: {reason}")]
    WeightsIo { path: PathBuf, reason: String },
    #[error("input shape mismatch: expected {expected}x{expected}x3 got {found:?}")]
    InputShape { expected: usize, found: Vec<usize> },
    #[error("inputs must be rescaled to [0,1] before prediction")]
    NotRescaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
    /// The pretrained VGG16 convolutional stack, expanded at instantiation.
    Backbone,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    BaselineCnn,
    Vgg16Transfer,
}

impl std::fmt::Display for ModelName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelName::BaselineCnn => write!(f, "baseline_cnn"),
            ModelName::Vgg16Transfer => write!(f, "vgg16_transfer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    pub head_kind: HeadKind,
}

/// Baseline: conv(32) -> pool -> conv(64) -> pool -> flatten ->
/// dense(128) -> dense(1, sigmoid). 3x3 valid convolutions, 2x2 pools,
/// everything trainable.
pub fn baseline_cnn_spec() -> ModelSpec {
    let conv = |filters| LayerSpec {
        kind: LayerKind::Conv2d { filters, kernel: (3, 3), padding: 0 },
        activation: Activation::Relu,
        trainable: true,
    };
    let pool = LayerSpec {
        kind: LayerKind::MaxPool { size: 2 },
        activation: Activation::None,
        trainable: true,
    };
    ModelSpec {
        name: ModelName::BaselineCnn,
        input_size: 64,
        layers: vec![
            conv(32),
            pool.clone(),
            conv(64),
            pool,
            LayerSpec {
                kind: LayerKind::Flatten,
                activation: Activation::None,
                trainable: true,
            },
            LayerSpec {
                kind: LayerKind::Dense { units: 128 },
                activation: Activation::Relu,
                trainable: true,
            },
            LayerSpec {
                kind: LayerKind::Dense { units: 1 },
                activation: Activation::Sigmoid,
                trainable: true,
            },
        ],
        head_kind: HeadKind::SigmoidScalar,
    }
}

/// Transfer model: frozen VGG16 backbone -> flatten -> dense(500) ->
/// dense(100) -> dense(2, softmax). Only the three dense layers train.
pub fn transfer_head_spec() -> ModelSpec {
    let dense = |units, activation| LayerSpec {
        kind: LayerKind::Dense { units },
        activation,
        trainable: true,
    };
    ModelSpec {
        name: ModelName::Vgg16Transfer,
        input_size: 254,
        layers: vec![
            LayerSpec {
                kind: LayerKind::Backbone,
                activation: Activation::None,
                trainable: false,
            },
            LayerSpec {
                kind: LayerKind::Flatten,
                activation: Activation::None,
                trainable: true,
            },
            dense(500, Activation::Relu),
            dense(100, Activation::Relu),
            dense(2, Activation::Softmax),
        ],
        head_kind: HeadKind::SoftmaxPair,
    }
}

pub fn spec_by_name(name: ModelName) -> ModelSpec {
    match name {
        ModelName::BaselineCnn => baseline_cnn_spec(),
        ModelName::Vgg16Transfer => transfer_head_spec(),
    }
}

/// Feature shape during analytic propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatShape {
    Map { c: usize, h: usize, w: usize },
    Vec { dim: usize },
}

/// Propagate the input shape through a spec, returning the shape after each
/// layer. Backbone counts as one step (its output map).
pub fn propagate_shapes(spec: &ModelSpec) -> Result<Vec<FeatShape>, ModelError> {
    let mut shape = FeatShape::Map { c: 3, h: spec.input_size, w: spec.input_size };
    let mut out = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        shape = match (&layer.kind, shape) {
            (LayerKind::Conv2d { filters, kernel, padding }, FeatShape::Map { h, w, .. }) => {
                FeatShape::Map {
                    c: *filters,
                    h: h + 2 * padding - kernel.0 + 1,
                    w: w + 2 * padding - kernel.1 + 1,
                }
            }
            (LayerKind::MaxPool { size }, FeatShape::Map { c, h, w }) => {
                FeatShape::Map { c, h: h / size, w: w / size }
            }
            (LayerKind::Flatten, FeatShape::Map { c, h, w }) => FeatShape::Vec { dim: c * h * w },
            (LayerKind::Dense { units }, FeatShape::Vec { .. }) => FeatShape::Vec { dim: *units },
            (LayerKind::Backbone, FeatShape::Map { h, w, .. }) => {
                // five 2x2 floor-poolings; 512 output channels
                let mut hh = h;
                let mut ww = w;
                for _ in 0..5 {
                    hh /= 2;
                    ww /= 2;
                }
                FeatShape::Map { c: 512, h: hh, w: ww }
            }
            (kind, shape) => {
                return Err(ModelError::ShapeMismatch {
                    layer: format!("layer {i} ({kind:?})"),
                    expected: vec![],
                    found: match shape {
                        FeatShape::Map { c, h, w } => vec![c, h, w],
                        FeatShape::Vec { dim } => vec![dim],
                    },
                })
            }
        };
        out.push(shape);
    }
    Ok(out)
}

/// The flatten dimension of a spec (analytic).
pub fn flatten_dim(spec: &ModelSpec) -> Result<usize, ModelError> {
    propagate_shapes(spec)?
        .into_iter()
        .find_map(|s| match s {
            FeatShape::Vec { dim } => Some(dim),
            _ => None,
        })
        .ok_or_else(|| ModelError::UnknownSpec("spec has no flatten layer".to_string()))
}

#[derive(Debug, Clone)]
pub enum RuntimeLayer {
    Conv {
        name: String,
        w: Array4<f32>,
        b: Array1<f32>,
        padding: usize,
        activation: Activation,
        trainable: bool,
    },
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        name: String,
        w: Array2<f32>,
        b: Array1<f32>,
        activation: Activation,
        trainable: bool,
    },
}

impl RuntimeLayer {
    pub fn parameter_count(&self) -> usize {
        match self {
            RuntimeLayer::Conv { w, b, .. } => w.len() + b.len(),
            RuntimeLayer::Dense { w, b, .. } => w.len() + b.len(),
            _ => 0,
        }
    }

    pub fn trainable(&self) -> bool {
        match self {
            RuntimeLayer::Conv { trainable, .. } => *trainable,
            RuntimeLayer::Dense { trainable, .. } => *trainable,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    pub trainable: usize,
    pub frozen: usize,
}

impl ParameterCount {
    pub fn total(&self) -> usize {
        self.trainable + self.frozen
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<RuntimeLayer>,
    /// Set when a transfer model was built without a real weights file; the
    /// backbone then holds deterministic pseudo-random weights, good for
    /// shape and contract tests but not for real screening.
    pub untrained_backbone: bool,
    pub seed: u64,
}

/// Per-layer gradients, aligned with `Model::layers`. `None` for layers
/// without parameters or outside the trained region.
pub struct Gradients(pub Vec<Option<ParamGrad>>);

pub enum ParamGrad {
    Conv(Array4<f32>, Array1<f32>),
    Dense(Array2<f32>, Array1<f32>),
}

/// Intermediate feature during forward/backward.
#[derive(Debug, Clone)]
pub enum Feat {
    Map(Array3<f32>),
    Vec(Array1<f32>),
}

enum Cache {
    /// Layer ran but is below the trained region; nothing retained.
    Skip,
    Conv { input: Array3<f32>, pre: Array3<f32> },
    Pool { input_dim: (usize, usize, usize), argmax: Vec<usize> },
    Flatten { dim: (usize, usize, usize) },
    Dense { input: Array1<f32>, pre: Array1<f32> },
}

fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> impl FnMut() -> f32 + '_ {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    move || rng.gen_range(-limit..limit)
}

fn layer_rng(seed: u64, layer_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer_index);
    rng
}

/// Build a runtime model from a spec. For the transfer spec, `weights_path`
/// supplies the pretrained backbone; without it the backbone is filled with
/// seeded pseudo-random values and the model is tagged `untrained_backbone`.
pub fn instantiate(
    spec: &ModelSpec,
    seed: u64,
    weights_path: Option<&Path>,
) -> Result<Model, ModelError> {
    let shapes = propagate_shapes(spec)?;
    let mut layers = Vec::new();
    let mut untrained_backbone = false;
    let mut in_shape = FeatShape::Map { c: 3, h: spec.input_size, w: spec.input_size };
    let mut dense_no = 0usize;
    let mut conv_no = 0usize;

    for (i, layer) in spec.layers.iter().enumerate() {
        match &layer.kind {
            LayerKind::Conv2d { filters, kernel, padding } => {
                let FeatShape::Map { c: in_c, .. } = in_shape else {
                    return Err(ModelError::UnknownSpec(format!(
                        "conv layer {i} fed a vector"
                    )));
                };
                conv_no += 1;
                let mut rng = layer_rng(seed, i as u64);
                let fan_in = in_c * kernel.0 * kernel.1;
                let fan_out = filters * kernel.0 * kernel.1;
                let mut gen = glorot_uniform(&mut rng, fan_in, fan_out);
                let w = Array4::from_shape_simple_fn((*filters, in_c, kernel.0, kernel.1), &mut gen);
                layers.push(RuntimeLayer::Conv {
                    name: format!("conv{conv_no}"),
                    w,
                    b: Array1::zeros(*filters),
                    padding: *padding,
                    activation: layer.activation,
                    trainable: layer.trainable,
                });
            }
            LayerKind::MaxPool { size } => layers.push(RuntimeLayer::MaxPool { size: *size }),
            LayerKind::Flatten => layers.push(RuntimeLayer::Flatten),
            LayerKind::Dense { units } => {
                let FeatShape::Vec { dim } = in_shape else {
                    return Err(ModelError::UnknownSpec(format!(
                        "dense layer {i} fed a feature map"
                    )));
                };
                dense_no += 1;
                let mut rng = layer_rng(seed, i as u64);
                let mut gen = glorot_uniform(&mut rng, dim, *units);
                let w = Array2::from_shape_simple_fn((*units, dim), &mut gen);
                layers.push(RuntimeLayer::Dense {
                    name: format!("dense{dense_no}"),
                    w,
                    b: Array1::zeros(*units),
                    activation: layer.activation,
                    trainable: layer.trainable,
                });
            }
            LayerKind::Backbone => {
                let loaded = match weights_path {
                    Some(path) => Some(vgg16::load_backbone_weights(path)?),
                    None => {
                        untrained_backbone = true;
                        None
                    }
                };
                let mut tensor_idx = 0usize;
                let mut in_c = 3usize;
                for (block_no, block) in vgg16::VGG16_BLOCKS.iter().enumerate() {
                    for &(name, filters) in *block {
                        let wshape = (filters, in_c, 3, 3);
                        let (w, b) = match &loaded {
                            Some(tensors) => {
                                let (_, _, wdata) = &tensors[tensor_idx];
                                let (_, _, bdata) = &tensors[tensor_idx + 1];
                                tensor_idx += 2;
                                (
                                    Array4::from_shape_vec(wshape, wdata.clone())
                                        .expect("validated shape"),
                                    Array1::from_vec(bdata.clone()),
                                )
                            }
                            None => {
                                let mut rng = layer_rng(seed, (i as u64) << 8 | tensor_idx as u64);
                                tensor_idx += 2;
                                let mut gen =
                                    glorot_uniform(&mut rng, in_c * 9, filters * 9);
                                (
                                    Array4::from_shape_simple_fn(wshape, &mut gen),
                                    Array1::zeros(filters),
                                )
                            }
                        };
                        layers.push(RuntimeLayer::Conv {
                            name: name.to_string(),
                            w,
                            b,
                            padding: 1,
                            activation: Activation::Relu,
                            trainable: false,
                        });
                        in_c = filters;
                    }
                    layers.push(RuntimeLayer::MaxPool { size: 2 });
                    let _ = block_no;
                }
            }
        }
        in_shape = shapes[i];
    }
    Ok(Model {
        spec: spec.clone(),
        layers,
        untrained_backbone,
        seed,
    })
}

impl Model {
    pub fn parameter_counts(&self) -> ParameterCount {
        let mut counts = ParameterCount { trainable: 0, frozen: 0 };
        for layer in &self.layers {
            let n = layer.parameter_count();
            if layer.trainable() {
                counts.trainable += n;
            } else {
                counts.frozen += n;
            }
        }
        counts
    }

    /// Index of the first trainable runtime layer; backward never descends
    /// below it.
    fn first_trainable(&self) -> usize {
        self.layers
            .iter()
            .position(RuntimeLayer::trainable)
            .unwrap_or(self.layers.len())
    }

    /// Run one preprocessed image (channels-last, unit scale) through the
    /// network. Returns the post-activation output.
    pub fn forward(&self, img: &Array3<f32>) -> Result<Array1<f32>, ModelError> {
        let (out, _) = self.forward_inner(img, false)?;
        Ok(out)
    }

    fn forward_inner(
        &self,
        img: &Array3<f32>,
        keep_caches: bool,
    ) -> Result<(Array1<f32>, Vec<Cache>), ModelError> {
        let shape = img.shape();
        if shape != [self.spec.input_size, self.spec.input_size, 3] {
            return Err(ModelError::InputShape {
                expected: self.spec.input_size,
                found: shape.to_vec(),
            });
        }
        // channels-last to channels-first
        let chw = Array3::from_shape_fn(
            (3, self.spec.input_size, self.spec.input_size),
            |(c, y, x)| img[(y, x, c)],
        );
        let first_trainable = self.first_trainable();
        let mut feat = Feat::Map(chw);
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let cache_this = keep_caches && i >= first_trainable;
            match (layer, feat) {
                (RuntimeLayer::Conv { w, b, padding, activation, .. }, Feat::Map(input)) => {
                    let pre = ops::conv_forward(&input, w, b, *padding);
                    let post = match activation {
                        Activation::Relu => ops::relu_map(&pre),
                        Activation::None => pre.clone(),
                        _ => unreachable!("conv layers use relu or none"),
                    };
                    caches.push(if cache_this {
                        Cache::Conv { input, pre }
                    } else {
                        Cache::Skip
                    });
                    feat = Feat::Map(post);
                }
                (RuntimeLayer::MaxPool { size }, Feat::Map(input)) => {
                    let input_dim = input.dim();
                    let (out, argmax) = ops::maxpool_forward(&input, *size);
                    caches.push(if cache_this {
                        Cache::Pool { input_dim, argmax }
                    } else {
                        Cache::Skip
                    });
                    feat = Feat::Map(out);
                }
                (RuntimeLayer::Flatten, Feat::Map(input)) => {
                    let dim = input.dim();
                    let flat = input
                        .into_shape_with_order(dim.0 * dim.1 * dim.2)
                        .expect("contiguous map");
                    caches.push(if keep_caches { Cache::Flatten { dim } } else { Cache::Skip });
                    feat = Feat::Vec(flat);
                }
                (RuntimeLayer::Dense { w, b, activation, .. }, Feat::Vec(input)) => {
                    let pre = ops::dense_forward(&input, w, b);
                    let post = match activation {
                        Activation::Relu => ops::relu_vec(&pre),
                        Activation::Sigmoid => ops::sigmoid_vec(&pre),
                        Activation::Softmax => ops::softmax_vec(&pre),
                        Activation::None => pre.clone(),
                    };
                    caches.push(if cache_this {
                        Cache::Dense { input, pre }
                    } else {
                        Cache::Skip
                    });
                    feat = Feat::Vec(post);
                }
                (layer, f) => {
                    return Err(ModelError::UnknownSpec(format!(
                        "layer {i} ({layer:?}) fed incompatible feature {}",
                        match f {
                            Feat::Map(_) => "map",
                            Feat::Vec(_) => "vector",
                        }
                    )))
                }
            }
        }
        match feat {
            Feat::Vec(v) => Ok((v, caches)),
            Feat::Map(_) => Err(ModelError::UnknownSpec(
                "model does not end in a vector output".to_string(),
            )),
        }
    }

    /// Forward pass retaining what backward needs. Returns the output and an
    /// opaque tape.
    pub fn forward_train(&self, img: &Array3<f32>) -> Result<(Array1<f32>, Tape), ModelError> {
        let (out, caches) = self.forward_inner(img, true)?;
        Ok((out, Tape { caches }))
    }

    /// Backpropagate from `dpre_out`, the loss gradient at the final layer's
    /// pre-activation (sigmoid and softmax heads both reduce to
    /// `p - target` under their matched losses).
    pub fn backward(&self, tape: &Tape, dpre_out: Array1<f32>) -> Gradients {
        let first_trainable = self.first_trainable();
        let mut grads: Vec<Option<ParamGrad>> = (0..self.layers.len()).map(|_| None).collect();
        let mut dfeat = Feat::Vec(dpre_out);
        for i in (first_trainable..self.layers.len()).rev() {
            let need_dinput = i > first_trainable;
            match (&self.layers[i], &tape.caches[i], dfeat) {
                (
                    RuntimeLayer::Dense { w, activation, trainable, .. },
                    Cache::Dense { input, pre },
                    Feat::Vec(dout),
                ) => {
                    // the output layer receives dpre directly from the loss
                    let dpre = if i == self.layers.len() - 1 {
                        dout
                    } else {
                        match activation {
                            Activation::Relu => {
                                ndarray::Zip::from(&dout).and(pre).map_collect(|&d, &p| {
                                    if p > 0.0 {
                                        d
                                    } else {
                                        0.0
                                    }
                                })
                            }
                            Activation::None => dout,
                            _ => unreachable!("hidden dense layers use relu or none"),
                        }
                    };
                    let (dw, db, dx) = ops::dense_backward(input, w, &dpre, need_dinput);
                    if *trainable {
                        grads[i] = Some(ParamGrad::Dense(dw, db));
                    }
                    dfeat = Feat::Vec(dx.unwrap_or_default());
                }
                (RuntimeLayer::Flatten, Cache::Flatten { dim }, Feat::Vec(dout)) => {
                    let dmap = dout.into_shape_with_order(*dim).expect("flatten backward");
                    dfeat = Feat::Map(dmap);
                }
                (RuntimeLayer::MaxPool { .. }, Cache::Pool { input_dim, argmax }, Feat::Map(dout)) => {
                    dfeat = Feat::Map(ops::maxpool_backward(&dout, argmax, *input_dim));
                }
                (
                    RuntimeLayer::Conv { w, padding, activation, trainable, .. },
                    Cache::Conv { input, pre },
                    Feat::Map(dout),
                ) => {
                    let dpre = match activation {
                        Activation::Relu => {
                            ndarray::Zip::from(&dout).and(pre).map_collect(|&d, &p| {
                                if p > 0.0 {
                                    d
                                } else {
                                    0.0
                                }
                            })
                        }
                        Activation::None => dout,
                        _ => unreachable!("conv layers use relu or none"),
                    };
                    let (dw, db, dx) = ops::conv_backward(input, w, *padding, &dpre, need_dinput);
                    if *trainable {
                        grads[i] = Some(ParamGrad::Conv(dw, db));
                    }
                    dfeat = Feat::Map(dx.unwrap_or_else(|| Array3::zeros((1, 1, 1))));
                }
                _ => unreachable!("tape misaligned with layers"),
            }
        }
        Gradients(grads)
    }

    /// Batch prediction. Inputs must be unit-scale, spec-sized tensors.
    pub fn predict(&self, batch: &[ImageTensor]) -> Result<Vec<Vec<f32>>, ModelError> {
        batch
            .iter()
            .map(|img| {
                if img.scale != PixelScale::Unit {
                    return Err(ModelError::NotRescaled);
                }
                self.forward(&img.data).map(|v| v.to_vec())
            })
            .collect()
    }

    fn tensor_bytes(&self, frozen_only: bool) -> Vec<u8> {
        let mut bytes = Vec::new();
        for layer in &self.layers {
            if frozen_only && layer.trainable() {
                continue;
            }
            match layer {
                RuntimeLayer::Conv { w, b, .. } => {
                    for &v in w.iter().chain(b.iter()) {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                RuntimeLayer::Dense { w, b, .. } => {
                    for &v in w.iter().chain(b.iter()) {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                _ => {}
            }
        }
        bytes
    }

    /// SHA-256 over every weight tensor, little-endian f32.
    pub fn weights_checksum(&self) -> String {
        hex_digest(&self.tensor_bytes(false))
    }

    /// SHA-256 over frozen tensors only; must not move during training.
    pub fn frozen_checksum(&self) -> String {
        hex_digest(&self.tensor_bytes(true))
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                RuntimeLayer::Conv { name, w, b, .. } => {
                    out.push((
                        format!("{name}_kernel"),
                        w.shape().to_vec(),
                        w.iter().cloned().collect(),
                    ));
                    out.push((format!("{name}_bias"), vec![b.len()], b.to_vec()));
                }
                RuntimeLayer::Dense { name, w, b, .. } => {
                    out.push((
                        format!("{name}_kernel"),
                        w.shape().to_vec(),
                        w.iter().cloned().collect(),
                    ));
                    out.push((format!("{name}_bias"), vec![b.len()], b.to_vec()));
                }
                _ => {}
            }
        }
        out
    }

    /// Export all weights to the binary tensor format.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        vgg16::write_tensor_file(path, &self.named_tensors())
    }

    /// Rebuild a model from a spec and a tensor file written by [`Model::save`].
    pub fn load(spec: &ModelSpec, path: &Path) -> Result<Model, ModelError> {
        let mut model = instantiate(spec, 0, None)?;
        let tensors = vgg16::read_tensor_file(path)?;
        let expected = model.named_tensors();
        if tensors.len() != expected.len() {
            return Err(ModelError::WeightsIo {
                path: path.to_path_buf(),
                reason: format!(
                    "tensor count mismatch: expected {}, found {}",
                    expected.len(),
                    tensors.len()
                ),
            });
        }
        let mut iter = tensors.into_iter();
        for layer in &mut model.layers {
            match layer {
                RuntimeLayer::Conv { name, w, b, .. } => {
                    let (tname, tshape, tdata) = iter.next().expect("count checked");
                    if tname != format!("{name}_kernel") || tshape != w.shape() {
                        return Err(ModelError::ShapeMismatch {
                            layer: name.clone(),
                            expected: w.shape().to_vec(),
                            found: tshape,
                        });
                    }
                    *w = Array4::from_shape_vec(w.dim(), tdata).expect("validated shape");
                    let (_, _, bdata) = iter.next().expect("count checked");
                    *b = Array1::from_vec(bdata);
                }
                RuntimeLayer::Dense { name, w, b, .. } => {
                    let (tname, tshape, tdata) = iter.next().expect("count checked");
                    if tname != format!("{name}_kernel") || tshape != w.shape() {
                        return Err(ModelError::ShapeMismatch {
                            layer: name.clone(),
                            expected: w.shape().to_vec(),
                            found: tshape,
                        });
                    }
                    *w = Array2::from_shape_vec(w.dim(), tdata).expect("validated shape");
                    let (_, _, bdata) = iter.next().expect("count checked");
                    *b = Array1::from_vec(bdata);
                }
                _ => {}
            }
        }
        model.untrained_backbone = false;
        Ok(model)
    }
}

/// Opaque backward tape from [`Model::forward_train`].
pub struct Tape {
    caches: Vec<Cache>,
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::PixelScale;

    #[test]
    fn baseline_spec_layer_sequence() {
        let spec = baseline_cnn_spec();
        assert_eq!(spec.layers.len(), 7);
        assert_eq!(spec.input_size, 64);
        assert_eq!(spec.head_kind, HeadKind::SigmoidScalar);
        let sizes: Vec<Option<usize>> = spec
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv2d { filters, .. } => Some(filters),
                LayerKind::Dense { units } => Some(units),
                _ => None,
            })
            .collect();
        assert_eq!(sizes, vec![Some(32), None, Some(64), None, None, Some(128), Some(1)]);
        assert!(spec.layers.iter().all(|l| l.trainable));
    }

    #[test]
    fn transfer_spec_freezes_backbone_only() {
        let spec = transfer_head_spec();
        assert_eq!(spec.input_size, 254);
        assert_eq!(spec.head_kind, HeadKind::SoftmaxPair);
        assert!(matches!(spec.layers[0].kind, LayerKind::Backbone));
        assert!(!spec.layers[0].trainable);
        for l in &spec.layers[1..] {
            assert!(l.trainable);
        }
    }

    #[test]
    fn baseline_shape_propagation() {
        // 64 -> 62 -> 31 -> 29 -> 14, flatten 14*14*64 = 12544
        let spec = baseline_cnn_spec();
        let shapes = propagate_shapes(&spec).unwrap();
        assert_eq!(shapes[0], FeatShape::Map { c: 32, h: 62, w: 62 });
        assert_eq!(shapes[1], FeatShape::Map { c: 32, h: 31, w: 31 });
        assert_eq!(shapes[2], FeatShape::Map { c: 64, h: 29, w: 29 });
        assert_eq!(shapes[3], FeatShape::Map { c: 64, h: 14, w: 14 });
        assert_eq!(flatten_dim(&spec).unwrap(), 12_544);
    }

    #[test]
    fn transfer_shape_propagation() {
        // 254 -> 127 -> 63 -> 31 -> 15 -> 7, flatten 7*7*512 = 25088
        let spec = transfer_head_spec();
        let shapes = propagate_shapes(&spec).unwrap();
        assert_eq!(shapes[0], FeatShape::Map { c: 512, h: 7, w: 7 });
        assert_eq!(flatten_dim(&spec).unwrap(), 25_088);
    }

    #[test]
    fn baseline_parameter_count() {
        let model = instantiate(&baseline_cnn_spec(), 7, None).unwrap();
        let counts = model.parameter_counts();
        assert_eq!(counts.total(), 1_625_281);
        assert_eq!(counts.frozen, 0);
    }

    #[test]
    fn transfer_parameter_counts() {
        let model = instantiate(&transfer_head_spec(), 7, None).unwrap();
        let counts = model.parameter_counts();
        assert_eq!(counts.trainable, 12_594_802);
        assert_eq!(counts.frozen, 14_714_688);
    }

    #[test]
    fn instantiation_is_seed_deterministic() {
        let a = instantiate(&baseline_cnn_spec(), 7, None).unwrap();
        let b = instantiate(&baseline_cnn_spec(), 7, None).unwrap();
        let c = instantiate(&baseline_cnn_spec(), 8, None).unwrap();
        assert_eq!(a.weights_checksum(), b.weights_checksum());
        assert_ne!(a.weights_checksum(), c.weights_checksum());
    }

    #[test]
    fn runtime_flatten_matches_analytic() {
        let model = instantiate(&baseline_cnn_spec(), 1, None).unwrap();
        let dense_in = model
            .layers
            .iter()
            .find_map(|l| match l {
                RuntimeLayer::Dense { w, .. } => Some(w.dim().1),
                _ => None,
            })
            .unwrap();
        assert_eq!(dense_in, flatten_dim(&baseline_cnn_spec()).unwrap());
    }

    #[test]
    fn baseline_predictions_in_open_interval() {
        let model = instantiate(&baseline_cnn_spec(), 3, None).unwrap();
        let batch: Vec<ImageTensor> = (0..5)
            .map(|i| {
                ImageTensor::new(
                    Array3::from_elem((64, 64, 3), 0.1 * (i + 1) as f32),
                    PixelScale::Unit,
                )
            })
            .collect();
        let scores = model.predict(&batch).unwrap();
        for s in &scores {
            assert_eq!(s.len(), 1);
            assert!(s[0] > 0.0 && s[0] < 1.0);
        }
    }

    #[test]
    fn predict_rejects_wrong_shape_and_scale() {
        let model = instantiate(&baseline_cnn_spec(), 3, None).unwrap();
        let wrong = ImageTensor::new(Array3::zeros((32, 32, 3)), PixelScale::Unit);
        assert!(matches!(
            model.predict(&[wrong]),
            Err(ModelError::InputShape { .. })
        ));
        let byte = ImageTensor::new(Array3::zeros((64, 64, 3)), PixelScale::Byte);
        assert!(matches!(model.predict(&[byte]), Err(ModelError::NotRescaled)));
    }

    #[test]
    fn inference_is_deterministic() {
        let model = instantiate(&baseline_cnn_spec(), 3, None).unwrap();
        let img = ImageTensor::new(
            Array3::from_shape_fn((64, 64, 3), |(y, x, c)| {
                ((y * 64 + x + c) % 255) as f32 / 255.0
            }),
            PixelScale::Unit,
        );
        let out = model.predict(&[img.clone(), img]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = instantiate(&baseline_cnn_spec(), 11, None).unwrap();
        model.save(&path).unwrap();
        let restored = Model::load(&baseline_cnn_spec(), &path).unwrap();
        assert_eq!(model.weights_checksum(), restored.weights_checksum());
    }
}
