//! Base models and converter networks.
//!
//! Architectures are described by a one-line descriptor such as
//! `lstm-tagger features=1 hidden=32 classes=2`; the same text is stored in
//! checkpoints. Image batches are `[n, h, w]`, sequence batches `[b, steps, f]`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{Graph, NodeId, Padding};
use crate::error::{Error, Result};
use crate::nn::{self, Bound, LstmWeights, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::transforms::{Family, TransformMatrix};

/// Rows processed per graph when running inference over large batches.
const INFERENCE_CHUNK: usize = 256;

fn parse_fields(text: &str) -> Result<(String, BTreeMap<String, String>)> {
    let mut parts = text.split_whitespace();
    let kind = parts.next().ok_or_else(|| Error::UnknownSpec(String::new()))?.to_string();
    let mut fields = BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| Error::UnknownSpec(format!("{kind}: `{p}`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    Ok((kind, fields))
}

struct Fields {
    kind: String,
    map: BTreeMap<String, String>,
}

impl Fields {
    fn size(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = match self.map.remove(key) {
            None => default,
            Some(s) => s.parse::<usize>().map_err(|_| Error::InvalidSize(format!("{key}={s}")))?,
        };
        if v == 0 {
            return Err(Error::InvalidSize(format!("{key} must be positive")));
        }
        Ok(v)
    }

    fn sizes<const N: usize>(&mut self, key: &str, default: [usize; N]) -> Result<[usize; N]> {
        let Some(s) = self.map.remove(key) else { return Ok(default) };
        let vals: Vec<usize> = s
            .split(',')
            .map(|x| x.parse::<usize>().map_err(|_| Error::InvalidSize(format!("{key}={s}"))))
            .collect::<Result<_>>()?;
        let arr: [usize; N] =
            vals.try_into().map_err(|_| Error::InvalidSize(format!("{key} needs {N} comma-separated values")))?;
        if arr.contains(&0) {
            return Err(Error::InvalidSize(format!("{key} must be positive")));
        }
        Ok(arr)
    }

    fn text(&mut self, key: &str, default: &str) -> String {
        self.map.remove(key).unwrap_or_else(|| default.to_string())
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::UnknownSpec(format!("{}: unknown field `{k}`", self.kind))),
            None => Ok(()),
        }
    }
}

/// Base model architectures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    /// Three conv + max-pool blocks and one fully-connected layer.
    CnnClassifier { height: usize, width: usize, channels: [usize; 3], kernel: usize, classes: usize },
    /// Single-layer LSTM with a per-frame classification layer.
    LstmTagger { features: usize, hidden: usize, classes: usize },
}

impl ModelSpec {
    pub fn toy_tagger() -> Self {
        ModelSpec::LstmTagger { features: 1, hidden: 32, classes: 2 }
    }

    pub fn lane_change_tagger() -> Self {
        ModelSpec::LstmTagger { features: 2, hidden: 64, classes: 3 }
    }

    pub fn digit_classifier(side: usize) -> Self {
        ModelSpec::CnnClassifier { height: side, width: side, channels: [8, 16, 32], kernel: 3, classes: 10 }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (kind, map) = parse_fields(text)?;
        let mut f = Fields { kind: kind.clone(), map };
        let spec = match kind.as_str() {
            "cnn-classifier" => ModelSpec::CnnClassifier {
                height: f.size("height", 28)?,
                width: f.size("width", 28)?,
                channels: f.sizes("channels", [8, 16, 32])?,
                kernel: f.size("kernel", 3)?,
                classes: f.size("classes", 10)?,
            },
            "lstm-tagger" => ModelSpec::LstmTagger {
                features: f.size("features", 2)?,
                hidden: f.size("hidden", 64)?,
                classes: f.size("classes", 3)?,
            },
            _ => return Err(Error::UnknownSpec(kind)),
        };
        f.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::CnnClassifier { height, width, kernel, classes, .. } => {
                if height < 8 || width < 8 {
                    return Err(Error::InvalidSize("images must be at least 8x8 for three pooling layers".into()));
                }
                if kernel % 2 == 0 {
                    return Err(Error::InvalidSize("kernel size must be odd".into()));
                }
                if classes < 2 {
                    return Err(Error::InvalidSize("at least two classes".into()));
                }
            }
            ModelSpec::LstmTagger { features, hidden, classes } => {
                if features == 0 || hidden == 0 || classes < 2 {
                    return Err(Error::InvalidSize("features and hidden must be positive, classes at least 2".into()));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelSpec::CnnClassifier { classes, .. } | ModelSpec::LstmTagger { classes, .. } => classes,
        }
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, ModelSpec::LstmTagger { .. })
    }

    /// Everything before the head: `[n, flat]` for images, `[b·steps, hidden]` for sequences.
    pub fn body(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        match *self {
            ModelSpec::CnnClassifier { height, width, .. } => {
                let mut y = as_planes(g, x, height, width)?;
                for name in ["conv1", "conv2", "conv3"] {
                    y = conv_block(g, b, y, name, true)?;
                }
                let s = g.shape(y).to_vec();
                g.reshape(y, &[s[0], s[1] * s[2] * s[3]])
            }
            ModelSpec::LstmTagger { features, .. } => {
                check_sequence_input(g, x, features)?;
                lstm_rows(g, b, x, "lstm")
            }
        }
    }

    pub fn head(&self, g: &mut Graph, b: &Bound, features: NodeId) -> Result<NodeId> {
        dense(g, b, features, "head")
    }

    /// Logits: `[n, classes]` for images, `[b·steps, classes]` for sequences.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        let f = self.body(g, b, x)?;
        self.head(g, b, f)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::CnnClassifier { height, width, channels: c, kernel, classes } => write!(
                f,
                "cnn-classifier height={height} width={width} channels={},{},{} kernel={kernel} classes={classes}",
                c[0], c[1], c[2]
            ),
            ModelSpec::LstmTagger { features, hidden, classes } => {
                write!(f, "lstm-tagger features={features} hidden={hidden} classes={classes}")
            }
        }
    }
}

fn conv_params(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) {
    store.insert(&format!("{name}.w"), nn::glorot(&[cout, cin, k, k], cin * k * k, cout * k * k, rng));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[cout]));
}

fn dense_params(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
    store.insert(&format!("{name}.w"), nn::glorot(&[fan_in, fan_out], fan_in, fan_out, rng));
    store.insert(&format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

fn conv_block(g: &mut Graph, b: &Bound, x: NodeId, name: &str, pool: bool) -> Result<NodeId> {
    let y = g.conv2d(x, b.id(&format!("{name}.w")), b.id(&format!("{name}.b")), Padding::Same)?;
    let y = g.relu(y)?;
    if pool {
        g.maxpool2(y)
    } else {
        Ok(y)
    }
}

fn dense(g: &mut Graph, b: &Bound, x: NodeId, name: &str) -> Result<NodeId> {
    nn::linear(g, x, b.id(&format!("{name}.w")), b.id(&format!("{name}.b")))
}

/// `[n, h, w]` images as a single-channel `[n, 1, h, w]` batch.
fn as_planes(g: &mut Graph, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[1] != height || s[2] != width {
        return Err(Error::ShapeMismatch { op: "model input", detail: format!("{s:?}, expected [n, {height}, {width}]") });
    }
    g.reshape(x, &[s[0], 1, height, width])
}

fn check_sequence_input(g: &Graph, x: NodeId, features: usize) -> Result<[usize; 3]> {
    let s = g.shape(x);
    if s.len() != 3 || s[2] != features {
        return Err(Error::ShapeMismatch { op: "sequence input", detail: format!("{s:?}, expected [b, steps, {features}]") });
    }
    Ok([s[0], s[1], s[2]])
}

/// Hidden states of an LSTM over `x`, flattened to `[b·steps, hidden]`.
fn lstm_rows(g: &mut Graph, b: &Bound, x: NodeId, prefix: &str) -> Result<NodeId> {
    let [bsz, steps, _] = [g.shape(x)[0], g.shape(x)[1], g.shape(x)[2]];
    let w = LstmWeights::from_bound(b, prefix);
    let hs = nn::lstm_unroll(g, x, &w)?;
    let hidden = g.shape(hs[0])[1];
    let stacked = g.stack(&hs)?;
    g.reshape(stacked, &[bsz * steps, hidden])
}

/// Runs `f` over row chunks of `x` and concatenates the results along the first axis.
fn chunked(x: &Tensor, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    let row = x.len() / n;
    let mut data = Vec::new();
    let mut tail: Option<Vec<usize>> = None;
    let mut rows_out = 0;
    for start in (0..n).step_by(INFERENCE_CHUNK) {
        let end = (start + INFERENCE_CHUNK).min(n);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(&shape, x.data()[start * row..end * row].to_vec())?;
        let out = f(&part)?;
        rows_out += out.shape()[0];
        tail = Some(out.shape()[1..].to_vec());
        data.extend_from_slice(out.data());
    }
    let mut shape = vec![rows_out];
    shape.extend(tail.unwrap_or_default());
    Tensor::new(&shape, data)
}

/// A base model `M`. The final classification layer (`head.w`, `head.b`) is
/// the retrainable part `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

pub const HEAD_LAYERS: [&str; 2] = ["head.w", "head.b"];

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = rng::stream(seed, "model-init");
    let mut params = ParamStore::new();
    match *spec {
        ModelSpec::CnnClassifier { height, width, channels: c, kernel, classes } => {
            conv_params(&mut params, "conv1", 1, c[0], kernel, &mut rng);
            conv_params(&mut params, "conv2", c[0], c[1], kernel, &mut rng);
            conv_params(&mut params, "conv3", c[1], c[2], kernel, &mut rng);
            let flat = c[2] * (height / 8) * (width / 8);
            dense_params(&mut params, "head", flat, classes, &mut rng);
        }
        ModelSpec::LstmTagger { features, hidden, classes } => {
            nn::lstm_params(&mut params, "lstm", features, hidden, &mut rng);
            dense_params(&mut params, "head", hidden, classes, &mut rng);
        }
    }
    Ok(Model { spec: spec.clone(), params })
}

impl Model {
    pub fn head_layers(&self) -> Vec<String> {
        HEAD_LAYERS.iter().map(|s| s.to_string()).collect()
    }

    pub fn body(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        self.spec.body(g, b, x)
    }

    pub fn head(&self, g: &mut Graph, b: &Bound, features: NodeId) -> Result<NodeId> {
        self.spec.head(g, b, features)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        self.spec.forward(g, b, x)
    }

    /// Body outputs for a batch, computed without gradients.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        chunked(x, |part| {
            let mut g = Graph::new();
            let b = self.params.bind_constants(&mut g);
            let xi = g.constant(part.clone());
            let out = self.body(&mut g, &b, xi)?;
            Ok(g.value(out).clone())
        })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        chunked(x, |part| {
            let mut g = Graph::new();
            let b = self.params.bind_constants(&mut g);
            let xi = g.constant(part.clone());
            let out = self.forward(&mut g, &b, xi)?;
            Ok(g.value(out).clone())
        })
    }

    /// Argmax class per image, or per frame (batch-major) for sequences.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(nn::argmax_rows(&self.logits(x)?))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }
}

/// Output activation of the sequence converter's matrix layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    /// Softmax across all entries of each matrix.
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Activation::Linear),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// Converter architectures. The first two emit transformation matrices, the
/// direct variants emit converted samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConverterSpec {
    /// Two conv + pool blocks and a dense layer predicting `(θ, tx, ty)`.
    Cnn { height: usize, width: usize, channels: [usize; 2], kernel: usize },
    /// LSTM with a per-frame matrix layer.
    Lstm { features: usize, hidden: usize, family: Family, activation: Activation },
    /// Fully convolutional image-to-image network.
    DirectImage { height: usize, width: usize, channels: usize, kernel: usize },
    /// LSTM with a per-frame output of `features` values.
    DirectSequence { features: usize, hidden: usize },
}

impl ConverterSpec {
    pub fn image(side: usize) -> Self {
        ConverterSpec::Cnn { height: side, width: side, channels: [8, 16], kernel: 3 }
    }

    /// Sequence converter with the hidden size used for `features`.
    pub fn sequence(features: usize) -> Self {
        ConverterSpec::Lstm {
            features,
            hidden: default_converter_hidden(features),
            family: Family::Unrestricted,
            activation: Activation::Linear,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (kind, map) = parse_fields(text)?;
        let mut f = Fields { kind: kind.clone(), map };
        let spec = match kind.as_str() {
            "cnn-converter" => ConverterSpec::Cnn {
                height: f.size("height", 28)?,
                width: f.size("width", 28)?,
                channels: f.sizes("channels", [8, 16])?,
                kernel: f.size("kernel", 3)?,
            },
            "lstm-converter" => {
                let features = f.size("features", 1)?;
                let hidden = f.size("hidden", default_converter_hidden(features))?;
                let fam = f.text("family", "unrestricted");
                let family = Family::parse(&fam).ok_or_else(|| Error::UnknownSpec(format!("family {fam}")))?;
                let act = f.text("activation", "linear");
                let activation =
                    Activation::parse(&act).ok_or_else(|| Error::UnknownSpec(format!("activation {act}")))?;
                ConverterSpec::Lstm { features, hidden, family, activation }
            }
            "direct-converter" => match f.text("input", "sequence").as_str() {
                "sequence" => {
                    let features = f.size("features", 1)?;
                    ConverterSpec::DirectSequence { features, hidden: f.size("hidden", default_converter_hidden(features))? }
                }
                "image" => ConverterSpec::DirectImage {
                    height: f.size("height", 28)?,
                    width: f.size("width", 28)?,
                    channels: f.size("channels", 8)?,
                    kernel: f.size("kernel", 3)?,
                },
                other => return Err(Error::UnknownSpec(format!("direct-converter input {other}"))),
            },
            _ => return Err(Error::UnknownSpec(kind)),
        };
        f.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ConverterSpec::Cnn { height, width, kernel, .. } | ConverterSpec::DirectImage { height, width, kernel, .. } => {
                if height < 4 || width < 4 || kernel % 2 == 0 {
                    return Err(Error::InvalidSize("images at least 4x4, odd kernel".into()));
                }
            }
            ConverterSpec::Lstm { features, family, .. } => {
                if family == Family::Euclidean && features != 2 {
                    return Err(Error::InvalidConfig("euclidean sequence converters need exactly 2 features".into()));
                }
            }
            ConverterSpec::DirectSequence { .. } => {}
        }
        Ok(())
    }

    pub fn is_matrix_mode(&self) -> bool {
        matches!(self, ConverterSpec::Cnn { .. } | ConverterSpec::Lstm { .. })
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, ConverterSpec::Lstm { .. } | ConverterSpec::DirectSequence { .. })
    }

    pub fn family(&self) -> Option<Family> {
        match *self {
            ConverterSpec::Cnn { .. } => Some(Family::Euclidean),
            ConverterSpec::Lstm { family, .. } => Some(family),
            _ => None,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<ConverterOutput> {
        let out = match *self {
            ConverterSpec::Cnn { height, width, .. } => {
                let planes = as_planes(g, x, height, width)?;
                let y = conv_block(g, b, planes, "conv1", true)?;
                let y = conv_block(g, b, y, "conv2", true)?;
                let s = g.shape(y).to_vec();
                let flat = g.reshape(y, &[s[0], s[1] * s[2] * s[3]])?;
                let p = dense(g, b, flat, "out")?;
                let mats = g.euclidean(p)?;
                let converted = g.grid_sample(x, mats)?;
                let comparable = g.reshape(converted, &[s[0], height * width])?;
                ConverterOutput { converted, matrices: Some(mats), comparable, homogeneous: false }
            }
            ConverterSpec::Lstm { features, family, activation, .. } => {
                let [bsz, steps, f] = check_sequence_input(g, x, features)?;
                if steps == 0 {
                    return Err(Error::EmptyInput("sequence"));
                }
                let rows = lstm_rows(g, b, x, "lstm")?;
                let mut p = dense(g, b, rows, "out")?;
                if activation == Activation::Softmax {
                    p = g.softmax(p)?;
                }
                let m = bsz * steps;
                let n = f + 1;
                let mats = if family == Family::Euclidean {
                    g.euclidean(p)?
                } else {
                    let full = if family == Family::Unrestricted {
                        p
                    } else {
                        let (e, c) = embedding(family, f);
                        let e = g.constant(e);
                        let c = g.constant(c);
                        let pe = g.matmul(p, e)?;
                        g.add_bias(pe, c)?
                    };
                    g.reshape(full, &[m, n, n])?
                };
                let frames = g.reshape(x, &[m, f])?;
                let homog = g.frame_transform(mats, frames)?;
                let (flat, comparable, homogeneous) = if family == Family::Projective {
                    let d = g.dehomogenize(homog)?;
                    (d, d, false)
                } else {
                    (g.slice_last(homog, 0, f)?, homog, true)
                };
                let converted = g.reshape(flat, &[bsz, steps, f])?;
                ConverterOutput { converted, matrices: Some(mats), comparable, homogeneous }
            }
            ConverterSpec::DirectImage { height, width, .. } => {
                let planes = as_planes(g, x, height, width)?;
                let y = conv_block(g, b, planes, "conv1", false)?;
                let y = conv_block(g, b, y, "conv2", false)?;
                let y = g.conv2d(y, b.id("out.w"), b.id("out.b"), Padding::Same)?;
                let n = g.shape(y)[0];
                let converted = g.reshape(y, &[n, height, width])?;
                let comparable = g.reshape(y, &[n, height * width])?;
                ConverterOutput { converted, matrices: None, comparable, homogeneous: false }
            }
            ConverterSpec::DirectSequence { features, .. } => {
                let [bsz, steps, f] = check_sequence_input(g, x, features)?;
                if steps == 0 {
                    return Err(Error::EmptyInput("sequence"));
                }
                let rows = lstm_rows(g, b, x, "lstm")?;
                let comparable = dense(g, b, rows, "out")?;
                let converted = g.reshape(comparable, &[bsz, steps, f])?;
                ConverterOutput { converted, matrices: None, comparable, homogeneous: false }
            }
        };
        if cfg!(debug_assertions) {
            if let (Some(mats), Some(family)) = (out.matrices, self.family()) {
                check_matrices(g.value(mats), family)?;
            }
        }
        Ok(out)
    }

    /// Spatial or feature dimension `d` of the transforms.
    pub fn dim(&self) -> usize {
        match *self {
            ConverterSpec::Cnn { .. } | ConverterSpec::DirectImage { .. } => 2,
            ConverterSpec::Lstm { features, .. } | ConverterSpec::DirectSequence { features, .. } => features,
        }
    }
}

pub fn default_converter_hidden(features: usize) -> usize {
    if features == 1 {
        16
    } else {
        32
    }
}

impl fmt::Display for ConverterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConverterSpec::Cnn { height, width, channels: c, kernel } => {
                write!(f, "cnn-converter height={height} width={width} channels={},{} kernel={kernel}", c[0], c[1])
            }
            ConverterSpec::Lstm { features, hidden, family, activation } => write!(
                f,
                "lstm-converter features={features} hidden={hidden} family={} activation={}",
                family.name(),
                activation.name()
            ),
            ConverterSpec::DirectImage { height, width, channels, kernel } => write!(
                f,
                "direct-converter input=image height={height} width={width} channels={channels} kernel={kernel}"
            ),
            ConverterSpec::DirectSequence { features, hidden } => {
                write!(f, "direct-converter input=sequence features={features} hidden={hidden}")
            }
        }
    }
}

/// Number of free matrix parameters the sequence head predicts per frame.
fn head_width(family: Family, f: usize) -> usize {
    let n = f + 1;
    match family {
        Family::Unrestricted => n * n,
        Family::Projective => n * n - 1,
        Family::Affine => f * n,
        Family::Euclidean => 3,
    }
}

/// Free parameters of the identity transform, matching [`head_width`].
fn identity_parameters(family: Family, f: usize) -> Vec<f64> {
    let n = f + 1;
    let id: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
    match family {
        Family::Unrestricted => id,
        Family::Projective => id[..n * n - 1].to_vec(),
        Family::Affine => id[..f * n].to_vec(),
        Family::Euclidean => vec![0.0; 3],
    }
}

/// Scale applied to the output layer's initial weights so that a fresh
/// converter starts close to its bias, the identity transform.
const OUTPUT_INIT_SCALE: f64 = 0.1;

/// Graph handles produced by a converter forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ConverterOutput {
    /// Converted samples, same shape as the input.
    pub converted: NodeId,
    /// `[m, d+1, d+1]` transforms in matrix mode.
    pub matrices: Option<NodeId>,
    /// `[rows, k]` rows that are compared against correspondence partners.
    pub comparable: NodeId,
    /// Partners must be given a trailing homogeneous 1 before comparison.
    pub homogeneous: bool,
}

/// A converter `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Converter {
    pub spec: ConverterSpec,
    pub params: ParamStore,
}

pub fn build_converter(spec: &ConverterSpec, seed: u64) -> Result<Converter> {
    spec.validate()?;
    let mut rng = rng::stream(seed, "converter-init");
    let mut params = ParamStore::new();
    match *spec {
        ConverterSpec::Cnn { height, width, channels: c, kernel } => {
            conv_params(&mut params, "conv1", 1, c[0], kernel, &mut rng);
            conv_params(&mut params, "conv2", c[0], c[1], kernel, &mut rng);
            let flat = c[1] * (height / 4) * (width / 4);
            dense_params(&mut params, "out", flat, 3, &mut rng);
        }
        ConverterSpec::Lstm { features, hidden, family, .. } => {
            nn::lstm_params(&mut params, "lstm", features, hidden, &mut rng);
            let k = head_width(family, features);
            dense_params(&mut params, "out", hidden, k, &mut rng);
            params.insert("out.b", Tensor::vector(&identity_parameters(family, features)));
        }
        ConverterSpec::DirectImage { channels, kernel, .. } => {
            conv_params(&mut params, "conv1", 1, channels, kernel, &mut rng);
            conv_params(&mut params, "conv2", channels, channels, kernel, &mut rng);
            conv_params(&mut params, "out", channels, 1, 1, &mut rng);
        }
        ConverterSpec::DirectSequence { features, hidden } => {
            nn::lstm_params(&mut params, "lstm", features, hidden, &mut rng);
            dense_params(&mut params, "out", hidden, features, &mut rng);
        }
    }
    if spec.is_matrix_mode() {
        let w = params.get_mut("out.w").expect("output layer");
        w.data_mut().iter_mut().for_each(|v| *v *= OUTPUT_INIT_SCALE);
    }
    Ok(Converter { spec: spec.clone(), params })
}

/// Constant embedding of the free head parameters into full matrices:
/// `entries = params · E + c`.
fn embedding(family: Family, f: usize) -> (Tensor, Tensor) {
    let n = f + 1;
    let k = head_width(family, f);
    let mut e = vec![0.0; k * n * n];
    for i in 0..k {
        e[i * n * n + i] = 1.0;
    }
    let mut c = vec![0.0; n * n];
    c[n * n - 1] = 1.0;
    (Tensor::new(&[k, n * n], e).expect("sizes"), Tensor::vector(&c))
}

impl Converter {
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn is_matrix_mode(&self) -> bool {
        self.spec.is_matrix_mode()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Zeroes the output layer's weights so every output equals its bias,
    /// the identity transform for freshly built matrix converters.
    pub fn zero_head(&mut self) {
        if let Some(w) = self.params.get_mut("out.w") {
            w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<ConverterOutput> {
        self.spec.forward(g, b, x)
    }

    /// Per-image or per-frame (batch-major) transforms for a batch.
    pub fn matrices(&self, x: &Tensor) -> Result<Vec<TransformMatrix>> {
        let family = self.spec.family().ok_or_else(|| Error::ModeMismatch("direct converters emit no matrices".into()))?;
        let t = chunked(x, |part| {
            let mut g = Graph::new();
            let b = self.params.bind_constants(&mut g);
            let xi = g.constant(part.clone());
            let out = self.forward(&mut g, &b, xi)?;
            Ok(g.value(out.matrices.expect("matrix mode")).clone())
        })?;
        let n = t.shape()[1];
        t.data().chunks(n * n).map(|e| TransformMatrix::new(n - 1, e.to_vec(), family)).collect()
    }

    /// Converted samples for a batch, same shape as `x`.
    pub fn convert(&self, x: &Tensor) -> Result<Tensor> {
        chunked(x, |part| {
            let mut g = Graph::new();
            let b = self.params.bind_constants(&mut g);
            let xi = g.constant(part.clone());
            let out = self.forward(&mut g, &b, xi)?;
            Ok(g.value(out.converted).clone())
        })
    }
}

fn check_matrices(t: &Tensor, family: Family) -> Result<()> {
    let n = t.shape()[1];
    for e in t.data().chunks(n * n) {
        let m = TransformMatrix::new(n - 1, e.to_vec(), family)?;
        if family == Family::Projective && m.entries() != e {
            return Err(Error::InvalidConfig("projective converter output is not normalized".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::apply_to_frame;

    fn seq_batch(b: usize, steps: usize, f: usize, seed: u64) -> Tensor {
        use rand::Rng as _;
        let mut r = rng::stream(seed, "x");
        let data = (0..b * steps * f).map(|_| r.random_range(0.0..1.0)).collect();
        Tensor::new(&[b, steps, f], data).unwrap()
    }

    #[test]
    fn tagger_output_shapes() {
        let m = build_model(&ModelSpec::lane_change_tagger(), 0).unwrap();
        assert_eq!(m.logits(&seq_batch(1, 20, 2, 1)).unwrap().shape(), &[20, 3]);
        let toy = build_model(&ModelSpec::toy_tagger(), 0).unwrap();
        assert_eq!(toy.logits(&seq_batch(2, 15, 1, 1)).unwrap().shape(), &[30, 2]);
    }

    #[test]
    fn classifier_output_shape() {
        let m = build_model(&ModelSpec::digit_classifier(28), 0).unwrap();
        assert_eq!(m.logits(&Tensor::zeros(&[1, 28, 28])).unwrap().shape(), &[1, 10]);
    }

    #[test]
    fn descriptors_round_trip() {
        for text in [
            "cnn-classifier height=28 width=28 channels=8,16,32 kernel=3 classes=10",
            "lstm-tagger features=1 hidden=32 classes=2",
        ] {
            assert_eq!(ModelSpec::parse(text).unwrap().to_string(), text);
        }
        for spec in [
            ConverterSpec::image(28),
            ConverterSpec::sequence(2),
            ConverterSpec::DirectSequence { features: 1, hidden: 16 },
            ConverterSpec::DirectImage { height: 28, width: 28, channels: 8, kernel: 3 },
        ] {
            assert_eq!(ConverterSpec::parse(&spec.to_string()).unwrap(), spec);
        }
        assert!(matches!(ModelSpec::parse("resnet"), Err(Error::UnknownSpec(_))));
        assert!(matches!(ModelSpec::parse("lstm-tagger hidden=0"), Err(Error::InvalidSize(_))));
        assert!(ConverterSpec::parse("lstm-converter features=1 family=euclidean").is_err());
    }

    #[test]
    fn default_converter_hidden_sizes() {
        assert_eq!(ConverterSpec::parse("lstm-converter features=1").unwrap(), ConverterSpec::sequence(1));
        assert!(matches!(ConverterSpec::sequence(1), ConverterSpec::Lstm { hidden: 16, .. }));
        assert!(matches!(ConverterSpec::sequence(2), ConverterSpec::Lstm { hidden: 32, .. }));
    }

    #[test]
    fn converter_emits_one_matrix_per_frame() {
        let c = build_converter(&ConverterSpec::sequence(1), 3).unwrap();
        let mats = c.matrices(&seq_batch(1, 150, 1, 2)).unwrap();
        assert_eq!(mats.len(), 150);
        assert!(mats.iter().all(|m| m.dim() == 1));
        let c2 = build_converter(&ConverterSpec::sequence(2), 3).unwrap();
        assert!(c2.matrices(&seq_batch(2, 10, 2, 2)).unwrap().iter().all(|m| m.dim() == 2));
    }

    #[test]
    fn zero_head_converter_is_identity() {
        for family in [Family::Unrestricted, Family::Affine, Family::Projective, Family::Euclidean] {
            let spec = ConverterSpec::Lstm { features: 2, hidden: 8, family, activation: Activation::Linear };
            let mut c = build_converter(&spec, 1).unwrap();
            c.zero_head();
            let x = seq_batch(2, 12, 2, 4);
            assert!(c.matrices(&x).unwrap().iter().all(|m| m.entries() == TransformMatrix::identity(2).entries()));
            assert_eq!(c.convert(&x).unwrap(), x, "{family:?}");
        }
        let mut img = build_converter(&ConverterSpec::image(12), 1).unwrap();
        img.zero_head();
        let mut r = rng::stream(5, "img");
        let data: Vec<f64> = (0..3 * 144).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let x = Tensor::new(&[3, 12, 12], data).unwrap();
        assert_eq!(img.convert(&x).unwrap(), x);
    }

    #[test]
    fn converted_frames_match_matrix_application() {
        let spec = ConverterSpec::Lstm { features: 2, hidden: 6, family: Family::Projective, activation: Activation::Linear };
        let c = build_converter(&spec, 9).unwrap();
        let x = seq_batch(1, 5, 2, 8);
        let mats = c.matrices(&x).unwrap();
        let conv = c.convert(&x).unwrap();
        for t in 0..5 {
            let expect = apply_to_frame(&mats[t], &x.data()[t * 2..t * 2 + 2]).unwrap();
            for (a, e) in conv.data()[t * 2..t * 2 + 2].iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_converters_keep_input_shape() {
        let c = build_converter(&ConverterSpec::DirectSequence { features: 2, hidden: 4 }, 0).unwrap();
        assert_eq!(c.convert(&seq_batch(3, 7, 2, 0)).unwrap().shape(), &[3, 7, 2]);
        assert!(c.matrices(&seq_batch(1, 7, 2, 0)).is_err());
        let spec = ConverterSpec::DirectImage { height: 10, width: 10, channels: 4, kernel: 3 };
        let c = build_converter(&spec, 0).unwrap();
        assert_eq!(c.convert(&Tensor::zeros(&[2, 10, 10])).unwrap().shape(), &[2, 10, 10]);
    }

    #[test]
    fn converters_are_smaller_than_models() {
        let pairs = [
            (ModelSpec::digit_classifier(28), ConverterSpec::image(28)),
            (ModelSpec::toy_tagger(), ConverterSpec::sequence(1)),
            (ModelSpec::lane_change_tagger(), ConverterSpec::sequence(2)),
            (ModelSpec::toy_tagger(), ConverterSpec::DirectSequence { features: 1, hidden: 16 }),
            (ModelSpec::digit_classifier(28), ConverterSpec::DirectImage { height: 28, width: 28, channels: 8, kernel: 3 }),
        ];
        for (m, c) in pairs {
            let m = build_model(&m, 0).unwrap();
            let c = build_converter(&c, 0).unwrap();
            assert!(c.parameter_count() < m.parameter_count(), "{} vs {}", c.spec, m.spec);
        }
    }

    #[test]
    fn softmax_activation_rows_sum_to_one() {
        let spec = ConverterSpec::Lstm { features: 1, hidden: 4, family: Family::Unrestricted, activation: Activation::Softmax };
        let c = build_converter(&spec, 0).unwrap();
        for m in c.matrices(&seq_batch(1, 6, 1, 3)).unwrap() {
            assert!((m.entries().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
