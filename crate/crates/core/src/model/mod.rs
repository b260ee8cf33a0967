//! Small differentiable encoders: an MLP and a strided small-conv backbone,
//! each with an MLP projector and optional predictor head. All math is f64.

pub mod graph;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream;
use graph::{ConvShape, Graph, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    SmallConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub arch: Arch,
    pub input_hw: usize,
    pub input_channels: usize,
    /// MLP: hidden layer widths. SmallConv: channel counts of the 3x3/stride-2
    /// conv stack that precedes global average pooling.
    pub hidden_widths: Vec<usize>,
    pub embed_dim: usize,
    /// Projector layer widths; the last entry is the projection dimension.
    /// Empty means the projection is the backbone embedding itself.
    pub projector_widths: Vec<usize>,
    /// Predictor layer widths; the last entry must equal the projection dim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor_widths: Option<Vec<usize>>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be >= 2".into()));
        }
        if self.input_hw < 1 || self.input_channels < 1 {
            return Err(Error::Config("input dimensions must be >= 1".into()));
        }
        let all_widths = self
            .hidden_widths
            .iter()
            .chain(self.projector_widths.iter())
            .chain(self.predictor_widths.iter().flatten());
        if all_widths.clone().any(|&w| w == 0) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        if matches!(self.arch, Arch::SmallConv) && self.hidden_widths.is_empty() {
            return Err(Error::Config("small_conv needs at least one conv channel count".into()));
        }
        if let Some(pred) = &self.predictor_widths {
            if pred.is_empty() {
                return Err(Error::Config("predictor_widths must not be empty when present".into()));
            }
            if *pred.last().unwrap() != self.projection_dim() {
                return Err(Error::Config(format!(
                    "predictor output {} must equal projection dim {}",
                    pred.last().unwrap(),
                    self.projection_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_hw * self.input_hw * self.input_channels
    }

    pub fn projection_dim(&self) -> usize {
        self.projector_widths.last().copied().unwrap_or(self.embed_dim)
    }

    fn conv_shapes(&self) -> Vec<ConvShape> {
        let mut shapes = Vec::new();
        let mut h = self.input_hw;
        let mut c = self.input_channels;
        for &out_c in &self.hidden_widths {
            let shape = ConvShape { in_h: h, in_w: h, in_c: c, out_c, ksize: 3, stride: 2, pad: 1 };
            h = shape.out_h();
            c = out_c;
            shapes.push(shape);
        }
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Array2<f64>,
    pub bias: Array2<f64>,
    pub shape: ConvShape,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv(ConvLayer),
}

/// Encoder, projector, and optional predictor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub backbone: Vec<Layer>,
    pub projector: Vec<Dense>,
    pub predictor: Option<Vec<Dense>>,
}

/// Gradients in the flat tensor order of [`ModelParams::tensors`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub tensors: Vec<Array2<f64>>,
}

/// EMA copy of the student with its momentum.
#[derive(Debug, Clone)]
pub struct TeacherState {
    pub params: ModelParams,
    pub momentum: f64,
}

impl TeacherState {
    pub fn new(student: &ModelParams, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { params: student.clone(), momentum })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Random,
    FromFile(PathBuf),
}

fn uniform_fanin(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Initialize parameters: fan-in scaled uniform weights per layer, or an exact
/// load from a parameter file (which must shape-match the config).
pub fn init_params(config: &EncoderConfig, seed: u64, init: &InitSpec) -> Result<ModelParams> {
    config.validate()?;
    match init {
        InitSpec::Random => Ok(random_params(config, seed)),
        InitSpec::FromFile(path) => {
            let loaded = load_params(path)?;
            let mut fresh = random_params(config, seed);
            let loaded_tensors = loaded.tensors();
            let mut slots = fresh.tensors_mut();
            if slots.len() != loaded_tensors.len()
                || slots.iter().zip(&loaded_tensors).any(|(s, l)| s.dim() != l.dim())
            {
                return Err(Error::Config(format!(
                    "parameter file {} does not shape-match the config",
                    path.display()
                )));
            }
            for (slot, t) in slots.iter_mut().zip(loaded_tensors) {
                slot.assign(t);
            }
            drop(slots);
            Ok(fresh)
        }
    }
}

fn random_params(config: &EncoderConfig, seed: u64) -> ModelParams {
    let mut rng = stream(seed, 0x1417, 0, 0);
    let mut backbone = Vec::new();
    let backbone_out;
    match config.arch {
        Arch::Mlp => {
            let mut fan_in = config.input_len();
            for &w in &config.hidden_widths {
                backbone.push(Layer::Dense(Dense {
                    weight: uniform_fanin(&mut rng, fan_in, w, fan_in),
                    bias: uniform_fanin(&mut rng, 1, w, fan_in),
                }));
                fan_in = w;
            }
            backbone.push(Layer::Dense(Dense {
                weight: uniform_fanin(&mut rng, fan_in, config.embed_dim, fan_in),
                bias: uniform_fanin(&mut rng, 1, config.embed_dim, fan_in),
            }));
            backbone_out = config.embed_dim;
        }
        Arch::SmallConv => {
            let shapes = config.conv_shapes();
            for shape in &shapes {
                let fan_in = shape.ksize * shape.ksize * shape.in_c;
                backbone.push(Layer::Conv(ConvLayer {
                    kernel: uniform_fanin(&mut rng, shape.out_c, fan_in, fan_in),
                    bias: uniform_fanin(&mut rng, 1, shape.out_c, fan_in),
                    shape: *shape,
                }));
            }
            let fan_in = shapes.last().unwrap().out_c;
            backbone.push(Layer::Dense(Dense {
                weight: uniform_fanin(&mut rng, fan_in, config.embed_dim, fan_in),
                bias: uniform_fanin(&mut rng, 1, config.embed_dim, fan_in),
            }));
            backbone_out = config.embed_dim;
        }
    }
    let dense_stack = |widths: &[usize], mut fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut layers = Vec::new();
        for &w in widths {
            layers.push(Dense {
                weight: uniform_fanin(rng, fan_in, w, fan_in),
                bias: uniform_fanin(rng, 1, w, fan_in),
            });
            fan_in = w;
        }
        layers
    };
    let projector = dense_stack(&config.projector_widths, backbone_out, &mut rng);
    let predictor = config
        .predictor_widths
        .as_ref()
        .map(|widths| dense_stack(widths, config.projection_dim(), &mut rng));
    ModelParams { config: config.clone(), backbone, projector, predictor }
}

impl ModelParams {
    /// Flat tensor views in a fixed order (backbone, projector, predictor;
    /// weight then bias per layer).
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for layer in &self.backbone {
            match layer {
                Layer::Dense(d) => {
                    out.push(&d.weight);
                    out.push(&d.bias);
                }
                Layer::Conv(c) => {
                    out.push(&c.kernel);
                    out.push(&c.bias);
                }
            }
        }
        for d in &self.projector {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        if let Some(pred) = &self.predictor {
            for d in pred {
                out.push(&d.weight);
                out.push(&d.bias);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.backbone {
            match layer {
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                Layer::Conv(c) => {
                    out.push(&mut c.kernel);
                    out.push(&mut c.bias);
                }
            }
        }
        for d in &mut self.projector {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        if let Some(pred) = &mut self.predictor {
            for d in pred {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Graph-registered parameter ids, mirroring [`ModelParams`].
pub struct ParamIds {
    pub backbone: Vec<(VarId, VarId)>,
    pub projector: Vec<(VarId, VarId)>,
    pub predictor: Option<Vec<(VarId, VarId)>>,
    conv_shapes: Vec<Option<ConvShape>>,
}

impl ParamIds {
    /// Ids in the flat tensor order of [`ModelParams::tensors`].
    pub fn flat(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        for &(w, b) in self.backbone.iter().chain(&self.projector).chain(self.predictor.iter().flatten()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Register parameters on a graph, as trainable params or frozen constants.
pub fn register_params(g: &mut Graph, params: &ModelParams, trainable: bool) -> ParamIds {
    let reg = |g: &mut Graph, t: &Array2<f64>| {
        if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        }
    };
    let mut backbone = Vec::new();
    let mut conv_shapes = Vec::new();
    for layer in &params.backbone {
        match layer {
            Layer::Dense(d) => {
                backbone.push((reg(g, &d.weight), reg(g, &d.bias)));
                conv_shapes.push(None);
            }
            Layer::Conv(c) => {
                backbone.push((reg(g, &c.kernel), reg(g, &c.bias)));
                conv_shapes.push(Some(c.shape));
            }
        }
    }
    let projector = params.projector.iter().map(|d| (reg(g, &d.weight), reg(g, &d.bias))).collect();
    let predictor = params
        .predictor
        .as_ref()
        .map(|layers| layers.iter().map(|d| (reg(g, &d.weight), reg(g, &d.bias))).collect());
    ParamIds { backbone, projector, predictor, conv_shapes }
}

fn dense_node(g: &mut Graph, x: VarId, (w, b): (VarId, VarId)) -> VarId {
    let y = g.matmul(x, w);
    g.add_rowvec(y, b)
}

/// Forward pass on an existing graph; returns (embeddings, projections,
/// predictions) node ids.
pub fn forward_nodes(
    g: &mut Graph,
    ids: &ParamIds,
    x: VarId,
    config: &EncoderConfig,
) -> (VarId, VarId, Option<VarId>) {
    let mut h = x;
    match config.arch {
        Arch::Mlp => {
            let n = ids.backbone.len();
            for (i, &layer) in ids.backbone.iter().enumerate() {
                h = dense_node(g, h, layer);
                if i + 1 < n {
                    h = g.relu(h);
                }
            }
        }
        Arch::SmallConv => {
            let n = ids.backbone.len();
            for (i, &layer) in ids.backbone.iter().enumerate() {
                match ids.conv_shapes[i] {
                    Some(shape) => {
                        h = g.conv2d(h, layer.0, layer.1, shape);
                        h = g.relu(h);
                        if i + 2 == n {
                            // last conv feeds global average pooling
                            h = g.global_avg_pool(h, shape.out_h(), shape.out_w(), shape.out_c);
                        }
                    }
                    None => {
                        h = dense_node(g, h, layer);
                    }
                }
            }
        }
    }
    let embeddings = h;
    let mut p = embeddings;
    let np = ids.projector.len();
    for (i, &layer) in ids.projector.iter().enumerate() {
        p = dense_node(g, p, layer);
        if i + 1 < np {
            p = g.relu(p);
        }
    }
    let projections = p;
    let predictions = ids.predictor.as_ref().map(|layers| {
        let mut q = projections;
        let nq = layers.len();
        for (i, &layer) in layers.iter().enumerate() {
            q = dense_node(g, q, layer);
            if i + 1 < nq {
                q = g.relu(q);
            }
        }
        q
    });
    (embeddings, projections, predictions)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub embeddings: Array2<f64>,
    pub projections: Array2<f64>,
    pub predictions: Option<Array2<f64>>,
}

/// Flatten images into the (B, H*W*C) matrix the encoders consume.
pub fn images_to_matrix(images: &[Image]) -> Array2<f64> {
    assert!(!images.is_empty());
    let len = images[0].len();
    let mut m = Array2::zeros((images.len(), len));
    for (i, img) in images.iter().enumerate() {
        assert_eq!(img.len(), len, "images must share a shape");
        for (j, &v) in img.pixels().iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Deterministic forward pass. Predictions are present iff the config has a
/// predictor.
pub fn forward(params: &ModelParams, images: &Array2<f64>) -> Result<ForwardOutput> {
    if images.ncols() != params.config.input_len() {
        return Err(Error::Argument(format!(
            "input width {} does not match config ({})",
            images.ncols(),
            params.config.input_len()
        )));
    }
    let mut g = Graph::new();
    let ids = register_params(&mut g, params, false);
    let x = g.constant(images.clone());
    let (e, p, pr) = forward_nodes(&mut g, &ids, x, &params.config);
    let out = ForwardOutput {
        embeddings: g.value(e).clone(),
        projections: g.value(p).clone(),
        predictions: pr.map(|id| g.value(id).clone()),
    };
    for (name, m) in [("embeddings", Some(&out.embeddings)), ("projections", Some(&out.projections)), ("predictions", out.predictions.as_ref())] {
        if let Some(m) = m {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("forward produced non-finite {name}")));
            }
        }
    }
    Ok(out)
}

/// Evaluate a scalar loss built by `build` at the given parameters.
pub fn loss_value<F>(params: &ModelParams, build: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &ParamIds) -> Result<VarId>,
{
    let mut g = Graph::new();
    let ids = register_params(&mut g, params, false);
    let loss = build(&mut g, &ids)?;
    Ok(g.scalar(loss))
}

/// Exact reverse-mode gradient of a scalar loss with respect to every tensor.
pub fn loss_gradient<F>(params: &ModelParams, build: F) -> Result<(f64, ModelGrads)>
where
    F: FnOnce(&mut Graph, &ParamIds) -> Result<VarId>,
{
    let mut g = Graph::new();
    let ids = register_params(&mut g, params, true);
    let loss = build(&mut g, &ids)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is non-finite: {value}")));
    }
    g.backward(loss);
    let tensors: Vec<Array2<f64>> = ids.flat().iter().map(|&id| g.grad(id).clone()).collect();
    for (i, t) in tensors.iter().enumerate() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("gradient of tensor {i} is non-finite")));
        }
    }
    Ok((value, ModelGrads { tensors }))
}

/// In-place EMA: every teacher weight becomes m*teacher + (1-m)*student.
/// Student parameters are never modified.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::Argument(format!("momentum must lie in [0, 1), got {m}")));
    }
    let s_tensors = student.tensors();
    let mut t_tensors = teacher.tensors_mut();
    if s_tensors.len() != t_tensors.len() {
        return Err(Error::Argument("teacher and student have different layouts".into()));
    }
    for (t, s) in t_tensors.iter_mut().zip(s_tensors.iter()) {
        if t.dim() != s.dim() {
            return Err(Error::Argument("teacher and student tensor shapes differ".into()));
        }
        t.zip_mut_with(s, |tv, &sv| *tv = m * *tv + (1.0 - m) * sv);
    }
    Ok(())
}

const PARAMS_KIND: &str = "gps-params";

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    kind: String,
    config: EncoderConfig,
    shapes: Vec<(usize, usize)>,
}

/// One JSON header line with config and shapes, then the raw little-endian
/// f64 payload. Round trips are bit-exact.
pub fn save_params(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let tensors = params.tensors();
    let header = ParamsHeader {
        kind: PARAMS_KIND.to_string(),
        config: params.config.clone(),
        shapes: tensors.iter().map(|t| t.dim()).collect(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    for t in tensors {
        for v in t.iter() {
            bytes.write_all(&v.to_le_bytes())?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let bytes = fs::read(path.as_ref())?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing parameter header line".into()))?;
    let header: ParamsHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.kind != PARAMS_KIND {
        return Err(Error::Format(format!("unknown parameter file kind {:?}", header.kind)));
    }
    header.config.validate()?;
    let expected: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
    let payload = &bytes[nl + 1..];
    if payload.len() != expected * 8 {
        return Err(Error::Format(format!(
            "payload length {} bytes, expected {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for &(r, c) in &header.shapes {
        let data: Vec<f64> = values.by_ref().take(r * c).collect();
        tensors.push(
            Array2::from_shape_vec((r, c), data).map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    // rebuild the structured layout from the flat list
    let mut fresh = random_params(&header.config, 0);
    {
        let mut slots = fresh.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Format(format!(
                "file holds {} tensors, config implies {}",
                tensors.len(),
                slots.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.dim() != t.dim() {
                return Err(Error::Format("tensor shape does not match the config".into()));
            }
            **slot = t;
        }
    }
    Ok(fresh)
}
