//! Model graphs as data: a topologically ordered list of named layers, each
//! reading the previous layer unless it names another source.
//!
//! Text form, one layer per line (`#` starts a comment):
//!
//! ```text
//! classes 17
//! input frame kind=frame shape=1x32x32
//! conv stem.conv1 in=1 out=16 k=3 stride=1 pad=1
//! bn stem.bn1 ch=16 eps=1e-5
//! relu stem.relu1
//! add block1.add from=stem.pool
//! conv block2.proj src=block1.relu2 in=16 out=32 k=1 stride=2 pad=0
//! ```
//!
//! `src=<layer>` overrides the implicit input; `add` and `concat` take their
//! second operand from `from=<layer>`. See `docs/graph.md` for every op.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Error, Result};
use crate::tactile::{CLASS_COUNT, COLS, ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec { in_ch, out_ch, kernel, stride, pad }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let dim = |x: usize| {
            let padded = x + 2 * self.pad;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        Some((dim(h)?, dim(w)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    Frame,
    Imu,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { source: InputSource, shape: Vec<usize> },
    Conv(ConvSpec),
    BatchNorm { channels: usize, eps: f32 },
    Relu,
    MaxPool { size: usize },
    /// Elementwise sum with the output of layer `from`.
    ResidualAdd { from: usize },
    GlobalAvgPool,
    /// This layer's input followed by the output of layer `from`.
    Concat { from: usize },
    FullyConnected { inputs: usize, outputs: usize },
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: Op,
    /// Primary input layer; `None` only for inputs.
    pub input: Option<usize>,
}

/// A named parameter tensor the graph expects in its weight store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    class_count: usize,
    shapes: Vec<Vec<usize>>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidGraph(msg.into())
}

impl ModelGraph {
    /// Validates topology and infers every layer's output shape.
    pub fn new(layers: Vec<Layer>, class_count: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("graph has no layers"));
        }
        let mut seen = HashMap::new();
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        let mut frame_inputs = 0;
        let mut imu_inputs = 0;
        for (i, layer) in layers.iter().enumerate() {
            if seen.insert(layer.name.as_str(), i).is_some() {
                return Err(invalid(format!("duplicate layer name {:?}", layer.name)));
            }
            let bad = |msg: String| invalid(format!("{}: {msg}", layer.name));
            let earlier = |j: usize| -> Result<&Vec<usize>> {
                shapes.get(j).filter(|_| j < i).ok_or_else(|| bad(format!("references layer {j}, which is not earlier")))
            };
            let input_shape = match (&layer.op, layer.input) {
                (Op::Input { .. }, None) => None,
                (Op::Input { .. }, Some(_)) => return Err(bad("inputs take no source".into())),
                (_, None) => return Err(bad("missing input".into())),
                (_, Some(j)) => Some(earlier(j)?.clone()),
            };
            let shape = match &layer.op {
                Op::Input { source, shape } => {
                    match source {
                        InputSource::Frame => {
                            frame_inputs += 1;
                            if shape[..] != [1, ROWS, COLS] {
                                return Err(bad(format!("frame input must be 1x{ROWS}x{COLS}, got {shape:?}")));
                            }
                        }
                        InputSource::Imu => {
                            imu_inputs += 1;
                            if shape[..] != [3] {
                                return Err(bad(format!("imu input must have shape [3], got {shape:?}")));
                            }
                        }
                    }
                    shape.clone()
                }
                op => {
                    let s = input_shape.expect("non-input layers have a source");
                    match op {
                        Op::Conv(spec) => {
                            let [c, h, w] = s[..] else { return Err(bad(format!("conv needs (C, H, W), got {s:?}"))) };
                            if c != spec.in_ch {
                                return Err(bad(format!("conv expects {} input channels, got {c}", spec.in_ch)));
                            }
                            if spec.kernel == 0 || spec.stride == 0 || spec.out_ch == 0 {
                                return Err(bad("kernel, stride and out must be positive".into()));
                            }
                            let (oh, ow) =
                                spec.out_dims(h, w).ok_or_else(|| bad(format!("kernel larger than {h}x{w} input")))?;
                            vec![spec.out_ch, oh, ow]
                        }
                        Op::BatchNorm { channels, eps } => {
                            if s.len() != 3 || s[0] != *channels {
                                return Err(bad(format!("batch norm over {channels} channels, input {s:?}")));
                            }
                            if !(*eps > 0.0) {
                                return Err(bad(format!("eps {eps} must be positive")));
                            }
                            s
                        }
                        Op::Relu | Op::Softmax => s,
                        Op::MaxPool { size } => {
                            let [c, h, w] = s[..] else { return Err(bad(format!("pool needs (C, H, W), got {s:?}"))) };
                            if *size == 0 || h < *size || w < *size {
                                return Err(bad(format!("pool size {size} does not fit {h}x{w}")));
                            }
                            vec![c, h / size, w / size]
                        }
                        Op::ResidualAdd { from } | Op::Concat { from } if Some(*from) == layer.input => {
                            return Err(bad("from= must name a different layer than the source".into()));
                        }
                        Op::ResidualAdd { from } => {
                            let other = earlier(*from)?;
                            if *other != s {
                                return Err(bad(format!("add operands differ: {s:?} vs {other:?}")));
                            }
                            s
                        }
                        Op::GlobalAvgPool => {
                            let [c, _, _] = s[..] else { return Err(bad(format!("gap needs (C, H, W), got {s:?}"))) };
                            vec![c]
                        }
                        Op::Concat { from } => {
                            let other = earlier(*from)?;
                            if s.len() != 1 || other.len() != 1 {
                                return Err(bad(format!("concat joins vectors, got {s:?} and {other:?}")));
                            }
                            vec![s[0] + other[0]]
                        }
                        Op::FullyConnected { inputs, outputs } => {
                            if s[..] != [*inputs] {
                                return Err(bad(format!("fc expects [{inputs}], got {s:?}")));
                            }
                            if *outputs == 0 {
                                return Err(bad("fc needs at least one output".into()));
                            }
                            vec![*outputs]
                        }
                        Op::Input { .. } => unreachable!(),
                    }
                }
            };
            shapes.push(shape);
        }
        if frame_inputs != 1 {
            return Err(invalid(format!("expected exactly one frame input, found {frame_inputs}")));
        }
        if imu_inputs > 1 {
            return Err(invalid("more than one imu input"));
        }
        let out = shapes.last().expect("non-empty");
        if out[..] != [class_count] {
            return Err(invalid(format!("graph output {out:?} does not match {class_count} classes")));
        }
        Ok(ModelGraph { layers, class_count, shapes })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn uses_imu(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.op, Op::Input { source: InputSource::Imu, .. }))
    }

    /// Every layer index this layer reads.
    pub fn operands(&self, layer: usize) -> Vec<usize> {
        let l = &self.layers[layer];
        let mut v: Vec<usize> = l.input.into_iter().collect();
        match l.op {
            Op::ResidualAdd { from } | Op::Concat { from } => v.push(from),
            _ => {}
        }
        v
    }

    /// Layers that read `layer`'s output.
    pub fn consumers(&self, layer: usize) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.operands(i).contains(&layer)).collect()
    }

    /// Parameter tensors in graph order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        let mut push = |layer: &str, suffix: &str, dims: Vec<usize>| {
            v.push(ParamSpec { name: format!("{layer}.{suffix}"), dims });
        };
        for l in &self.layers {
            match l.op {
                Op::Conv(s) => {
                    push(&l.name, "weight", vec![s.out_ch, s.in_ch, s.kernel, s.kernel]);
                    push(&l.name, "bias", vec![s.out_ch]);
                }
                Op::BatchNorm { channels, .. } => {
                    for p in ["gamma", "beta", "mean", "var"] {
                        push(&l.name, p, vec![channels]);
                    }
                }
                Op::FullyConnected { inputs, outputs } => {
                    push(&l.name, "weight", vec![outputs, inputs]);
                    push(&l.name, "bias", vec![outputs]);
                }
                _ => {}
            }
        }
        v
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut layers: Vec<Layer> = Vec::new();
        let mut class_count = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::GraphSyntax { line, message };
            let mut words = content.split_whitespace();
            let kw = words.next().unwrap_or_default();
            if kw == "classes" {
                let n = words.next().ok_or_else(|| err("`classes` needs a count".into()))?;
                class_count = Some(n.parse::<usize>().map_err(|_| err(format!("bad class count {n:?}")))?);
                continue;
            }
            let name = words.next().ok_or_else(|| err(format!("`{kw}` needs a layer name")))?.to_string();
            let mut kv = HashMap::new();
            for w in words {
                let (k, v) = w.split_once('=').ok_or_else(|| err(format!("expected key=value, got {w:?}")))?;
                if kv.insert(k, v).is_some() {
                    return Err(err(format!("repeated key {k:?}")));
                }
            }
            let lookup = |layer: &str| -> Result<usize> {
                layers.iter().position(|l| l.name == layer).ok_or_else(|| err(format!("unknown layer {layer:?}")))
            };
            let mut take = |k: &str| kv.remove(k);
            let mut num = |k: &str, default: Option<usize>| -> Result<usize> {
                match take(k) {
                    Some(v) => v.parse().map_err(|_| err(format!("{k}={v:?} is not a count"))),
                    None => default.ok_or_else(|| err(format!("`{kw}` needs {k}="))),
                }
            };
            let op = match kw {
                "input" => {
                    let source = match take("kind") {
                        Some("frame") => InputSource::Frame,
                        Some("imu") => InputSource::Imu,
                        other => return Err(err(format!("input kind must be frame|imu, got {other:?}"))),
                    };
                    let shape = take("shape")
                        .ok_or_else(|| err("input needs shape=".into()))?
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| err(format!("bad dimension {d:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    Op::Input { source, shape }
                }
                "conv" => Op::Conv(ConvSpec {
                    in_ch: num("in", None)?,
                    out_ch: num("out", None)?,
                    kernel: num("k", None)?,
                    stride: num("stride", Some(1))?,
                    pad: num("pad", Some(0))?,
                }),
                "bn" => {
                    let channels = num("ch", None)?;
                    let eps = match take("eps") {
                        Some(v) => v.parse().map_err(|_| err(format!("bad eps {v:?}")))?,
                        None => 1e-5,
                    };
                    Op::BatchNorm { channels, eps }
                }
                "relu" => Op::Relu,
                "softmax" => Op::Softmax,
                "gap" => Op::GlobalAvgPool,
                "maxpool" => Op::MaxPool { size: num("size", Some(2))? },
                "add" | "concat" => {
                    let from = lookup(take("from").ok_or_else(|| err(format!("`{kw}` needs from=")))?)?;
                    if kw == "add" {
                        Op::ResidualAdd { from }
                    } else {
                        Op::Concat { from }
                    }
                }
                "fc" => Op::FullyConnected { inputs: num("in", None)?, outputs: num("out", None)? },
                other => return Err(err(format!("unknown op {other:?}"))),
            };
            let input = match (&op, take("src")) {
                (Op::Input { .. }, None) => None,
                (Op::Input { .. }, Some(_)) => return Err(err("inputs take no src=".into())),
                (_, Some(src)) => Some(lookup(src)?),
                (_, None) => Some(layers.len().checked_sub(1).ok_or_else(|| err("first layer must be an input".into()))?),
            };
            if let Some(k) = kv.keys().next() {
                return Err(err(format!("unexpected key {k:?} for `{kw}`")));
            }
            layers.push(Layer { name, op, input });
        }
        ModelGraph::new(layers, class_count.unwrap_or(CLASS_COUNT))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("classes {}\n", self.class_count);
        for (i, l) in self.layers.iter().enumerate() {
            let name = &l.name;
            let _ = match &l.op {
                Op::Input { source, shape } => {
                    let kind = match source {
                        InputSource::Frame => "frame",
                        InputSource::Imu => "imu",
                    };
                    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
                    write!(s, "input {name} kind={kind} shape={}", dims.join("x"))
                }
                Op::Conv(c) => write!(
                    s,
                    "conv {name} in={} out={} k={} stride={} pad={}",
                    c.in_ch, c.out_ch, c.kernel, c.stride, c.pad
                ),
                Op::BatchNorm { channels, eps } => write!(s, "bn {name} ch={channels} eps={eps:e}"),
                Op::Relu => write!(s, "relu {name}"),
                Op::Softmax => write!(s, "softmax {name}"),
                Op::GlobalAvgPool => write!(s, "gap {name}"),
                Op::MaxPool { size } => write!(s, "maxpool {name} size={size}"),
                Op::ResidualAdd { from } => write!(s, "add {name} from={}", self.layers[*from].name),
                Op::Concat { from } => write!(s, "concat {name} from={}", self.layers[*from].name),
                Op::FullyConnected { inputs, outputs } => write!(s, "fc {name} in={inputs} out={outputs}"),
            };
            if let Some(src) = l.input {
                if src + 1 != i {
                    let _ = write!(s, " src={}", self.layers[src].name);
                }
            }
            s.push('\n');
        }
        s
    }
}

struct Builder {
    layers: Vec<Layer>,
}

impl Builder {
    fn push(&mut self, name: &str, op: Op) -> usize {
        let input = match op {
            Op::Input { .. } => None,
            _ => Some(self.layers.len() - 1),
        };
        self.push_from(name, op, input)
    }

    fn push_from(&mut self, name: &str, op: Op, input: Option<usize>) -> usize {
        self.layers.push(Layer { name: name.to_string(), op, input });
        self.layers.len() - 1
    }

    fn conv_bn(&mut self, prefix: &str, idx: usize, spec: ConvSpec) {
        self.push(&format!("{prefix}.conv{idx}"), Op::Conv(spec));
        self.push(&format!("{prefix}.bn{idx}"), Op::BatchNorm { channels: spec.out_ch, eps: 1e-5 });
    }
}

fn build_reference(with_imu: bool) -> ModelGraph {
    let mut b = Builder { layers: Vec::new() };
    b.push("frame", Op::Input { source: InputSource::Frame, shape: vec![1, ROWS, COLS] });
    b.conv_bn("stem", 1, ConvSpec::new(1, 16, 3, 1, 1));
    b.push("stem.relu1", Op::Relu);
    b.conv_bn("stem", 2, ConvSpec::new(16, 16, 3, 1, 1));
    b.push("stem.relu2", Op::Relu);
    let pool = b.push("stem.pool", Op::MaxPool { size: 2 });

    b.conv_bn("block1", 1, ConvSpec::new(16, 16, 3, 1, 1));
    b.push("block1.relu1", Op::Relu);
    b.conv_bn("block1", 2, ConvSpec::new(16, 16, 3, 1, 1));
    b.push("block1.add", Op::ResidualAdd { from: pool });
    let b1 = b.push("block1.relu2", Op::Relu);

    b.conv_bn("block2", 1, ConvSpec::new(16, 32, 3, 2, 1));
    b.push("block2.relu1", Op::Relu);
    b.conv_bn("block2", 2, ConvSpec::new(32, 32, 3, 1, 1));
    let bn2 = b.layers.len() - 1;
    b.push_from("block2.proj", Op::Conv(ConvSpec::new(16, 32, 1, 2, 0)), Some(b1));
    b.push("block2.proj_bn", Op::BatchNorm { channels: 32, eps: 1e-5 });
    b.push("block2.add", Op::ResidualAdd { from: bn2 });
    b.push("block2.relu2", Op::Relu);
    let mut features = b.push("gap", Op::GlobalAvgPool);
    let mut width = 32;

    if with_imu {
        b.push("imu", Op::Input { source: InputSource::Imu, shape: vec![3] });
        b.push("imu.fc1", Op::FullyConnected { inputs: 3, outputs: 30 });
        b.push("imu.relu", Op::Relu);
        let fc2 = b.push("imu.fc2", Op::FullyConnected { inputs: 30, outputs: 3 });
        features = b.push_from("concat", Op::Concat { from: fc2 }, Some(features));
        width += 3;
    }
    b.push_from("fc", Op::FullyConnected { inputs: width, outputs: CLASS_COUNT }, Some(features));
    b.push("softmax", Op::Softmax);
    ModelGraph::new(b.layers, CLASS_COUNT).expect("reference graph is well formed")
}

/// Reduced residual CNN over a single 32x32 frame.
pub fn reference_graph() -> ModelGraph {
    build_reference(false)
}

/// [`reference_graph`] with a 3-30-3 IMU branch concatenated before the
/// classifier.
pub fn reference_graph_with_imu() -> ModelGraph {
    build_reference(true)
}
