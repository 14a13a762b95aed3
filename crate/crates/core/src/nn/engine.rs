use std::ops::Range;

use super::kernels::{self, affine_inplace, conv2d_into, fc_into, gap_into, maxpool_into, relu_inplace, softmax_into};
use super::macc::{count_macc, layer_macc};
use super::plan::{plan_memory, ArenaPlan};
use super::q15::{
    conv2d_q15_into, exponent_for, fc_q15_into, from_q15, quantize_weights, rescale, rounding_div, rounding_shift,
    saturate, to_acc, to_q15,
};
use super::tensor::argmax;
use super::{shape_err, DType, Error, InputSource, ModelGraph, Op, Result, Tensor, WeightStore};
use crate::tactile::{normalize_frame, TactileFrame, TAXELS};

#[derive(Debug, Clone)]
enum Params {
    None,
    Conv { weight: Vec<f32>, bias: Vec<f32> },
    /// Unfolded batch norm as `x * scale + shift`.
    Affine { scale: Vec<f32>, shift: Vec<f32> },
    Fc { weight: Vec<f32>, bias: Vec<f32> },
}

/// A graph bound to validated weights, ready to run.
///
/// [`CompiledModel::folded`] merges each batch norm that directly follows a
/// convolution into that convolution's weights; [`CompiledModel::new`] keeps
/// every layer separate, which is what per-layer golden comparison needs.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    graph: ModelGraph,
    params: Vec<Params>,
    /// Batch norms absorbed into their producer (identity at run time).
    folded_bn: Vec<bool>,
    /// Convolutions whose output already includes a folded batch norm.
    folded_conv: Vec<bool>,
    plan: ArenaPlan,
}

impl CompiledModel {
    pub fn new(graph: ModelGraph, weights: &WeightStore) -> Result<Self> {
        Self::build(graph, weights, false)
    }

    pub fn folded(graph: ModelGraph, weights: &WeightStore) -> Result<Self> {
        Self::build(graph, weights, true)
    }

    fn build(graph: ModelGraph, weights: &WeightStore, fold: bool) -> Result<Self> {
        weights.validate(&graph)?;
        let n = graph.len();
        let mut params = vec![Params::None; n];
        let mut folded_bn = vec![false; n];
        let mut folded_conv = vec![false; n];
        for (i, l) in graph.layers().iter().enumerate() {
            let param = |suffix: &str, dims: &[usize]| weights.f32_param(&format!("{}.{suffix}", l.name), dims).map(<[f32]>::to_vec);
            params[i] = match l.op {
                Op::Conv(s) => Params::Conv {
                    weight: param("weight", &[s.out_ch, s.in_ch, s.kernel, s.kernel])?,
                    bias: param("bias", &[s.out_ch])?,
                },
                Op::FullyConnected { inputs, outputs } => {
                    Params::Fc { weight: param("weight", &[outputs, inputs])?, bias: param("bias", &[outputs])? }
                }
                Op::BatchNorm { channels, eps } => {
                    let bn = weights.bn_params(&l.name, channels, eps)?;
                    let src = l.input.expect("validated graph");
                    let foldable = matches!(graph.layers()[src].op, Op::Conv(_)) && graph.consumers(src).len() == 1;
                    if fold && foldable {
                        let Params::Conv { weight, bias } = &params[src] else { unreachable!("conv params set above") };
                        let Op::Conv(s) = graph.layers()[src].op else { unreachable!() };
                        let w = Tensor::new(vec![s.out_ch, s.in_ch, s.kernel, s.kernel], weight.clone())?;
                        let (w, b) = kernels::batchnorm_fold(&bn, &w, bias)?;
                        params[src] = Params::Conv { weight: w.into_data(), bias: b };
                        folded_bn[i] = true;
                        folded_conv[src] = true;
                        Params::None
                    } else {
                        let (scale, shift) = bn.scale_shift(&l.name)?;
                        Params::Affine { scale, shift }
                    }
                }
                _ => Params::None,
            };
        }
        let plan = plan_memory(&graph, DType::F32);
        Ok(CompiledModel { graph, params, folded_bn, folded_conv, plan })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn is_folded(&self) -> bool {
        self.folded_bn.iter().any(|&f| f)
    }

    pub fn plan(&self) -> &ArenaPlan {
        &self.plan
    }

    pub fn macc_per_inference(&self) -> u64 {
        count_macc(&self.graph)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub class: usize,
    /// Most probable classes, best first.
    pub top3: [usize; 3],
    pub probabilities: Vec<f32>,
    pub logits: Vec<f32>,
}

impl InferenceResult {
    fn from_logits(logits: Vec<f32>, probabilities: Vec<f32>) -> Self {
        let mut order: Vec<usize> = (0..probabilities.len()).collect();
        order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
        let last = order.len().saturating_sub(1);
        let top3 = [order[0], order[1.min(last)], order[2.min(last)]];
        InferenceResult { class: argmax(&logits), top3, probabilities, logits }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub layer: String,
    pub output: Tensor,
}

/// Splits `arena` into disjoint mutable regions, returned in argument order.
/// Panics if two regions overlap, which a sound plan never produces.
fn carve<T, const N: usize>(mut arena: &mut [T], ranges: [Range<usize>; N]) -> [&mut [T]; N] {
    let mut order: [usize; N] = std::array::from_fn(|i| i);
    order.sort_by_key(|&i| ranges[i].start);
    let mut out: [Option<&mut [T]>; N] = std::array::from_fn(|_| None);
    let mut base = 0;
    for &i in &order {
        let r = &ranges[i];
        assert!(r.start >= base, "arena regions overlap");
        let rest = std::mem::take(&mut arena);
        let (_, tail) = rest.split_at_mut(r.start - base);
        let (mid, tail) = tail.split_at_mut(r.len());
        out[i] = Some(mid);
        arena = tail;
        base = r.end;
    }
    out.map(|s| s.expect("every region assigned"))
}

/// Makes `out` hold a copy of `src` unless they are the same buffer.
fn stage_unary<T: Copy>(arena: &mut [T], src: Range<usize>, out: Range<usize>) {
    if src != out {
        let [x, y] = carve(arena, [src, out]);
        y.copy_from_slice(x);
    }
}

fn chw(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [c, h, w] => (*c, *h, *w),
        _ => unreachable!("validated graph"),
    }
}

fn check_inputs(graph: &ModelGraph, input: &[f32], imu: Option<&[f32; 3]>) -> Result<()> {
    if input.len() != TAXELS {
        return Err(shape_err(format!("frame input holds {} values, expected {TAXELS}", input.len())));
    }
    match (graph.uses_imu(), imu.is_some()) {
        (true, false) => Err(shape_err("graph fuses IMU features but none were given")),
        (false, true) => Err(shape_err("graph has no IMU input but features were given")),
        _ => Ok(()),
    }
}

/// Reusable f32 execution state: one arena sized by the model's plan.
#[derive(Debug, Clone, Default)]
pub struct InferenceContext {
    arena: Vec<f32>,
    macc: u64,
}

impl InferenceContext {
    pub fn new(model: &CompiledModel) -> Self {
        InferenceContext { arena: vec![0.0; model.plan.peak_elements()], macc: 0 }
    }

    pub fn arena_bytes(&self) -> usize {
        self.arena.len() * 4
    }

    /// Multiply-accumulates executed since construction.
    pub fn macc(&self) -> u64 {
        self.macc
    }

    pub fn infer(&mut self, model: &CompiledModel, frame: &TactileFrame, imu: Option<[f32; 3]>) -> Result<InferenceResult> {
        self.infer_input(model, &normalize_frame(frame), imu)
    }

    /// Runs on an already normalised 1024-value input.
    pub fn infer_input(&mut self, model: &CompiledModel, input: &[f32], imu: Option<[f32; 3]>) -> Result<InferenceResult> {
        self.run(model, input, imu.as_ref(), &mut |_, _| {})?;
        let g = &model.graph;
        let last = g.len() - 1;
        let output = self.arena[model.plan.region(last)].to_vec();
        Ok(match g.layers()[last] {
            crate::nn::Layer { op: Op::Softmax, input: Some(src), .. } => {
                InferenceResult::from_logits(self.arena[model.plan.region(src)].to_vec(), output)
            }
            _ => {
                let probs = kernels::softmax(&output);
                InferenceResult::from_logits(output, probs)
            }
        })
    }

    /// Forward pass that records every layer's output. Convolutions whose
    /// batch norm was folded are reported under the batch norm's name only.
    pub fn forward_traced(
        &mut self,
        model: &CompiledModel,
        frame: &TactileFrame,
        imu: Option<[f32; 3]>,
    ) -> Result<Vec<TraceEntry>> {
        let mut trace = Vec::new();
        let g = &model.graph;
        self.run(model, &normalize_frame(frame), imu.as_ref(), &mut |i, data| {
            if !model.folded_conv[i] {
                trace.push(TraceEntry {
                    layer: g.layers()[i].name.clone(),
                    output: Tensor::new(g.shape(i).to_vec(), data.to_vec()).expect("plan region matches shape"),
                });
            }
        })?;
        Ok(trace)
    }

    pub(crate) fn run(
        &mut self,
        model: &CompiledModel,
        input: &[f32],
        imu: Option<&[f32; 3]>,
        observe: &mut dyn FnMut(usize, &[f32]),
    ) -> Result<()> {
        let g = &model.graph;
        check_inputs(g, input, imu)?;
        let plan = &model.plan;
        self.arena.resize(plan.peak_elements(), 0.0);
        let arena = &mut self.arena[..];
        for (i, layer) in g.layers().iter().enumerate() {
            let out = plan.region(i);
            let src = layer.input.map(|s| plan.region(s));
            match (&layer.op, &model.params[i]) {
                (Op::Input { source: InputSource::Frame, .. }, _) => arena[out.clone()].copy_from_slice(input),
                (Op::Input { source: InputSource::Imu, .. }, _) => {
                    arena[out.clone()].copy_from_slice(imu.expect("checked above"))
                }
                (Op::Conv(spec), Params::Conv { weight, bias }) => {
                    let s = layer.input.expect("validated");
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    let (_, oh, ow) = chw(g.shape(i));
                    conv2d_into(x, chw(g.shape(s)), weight, bias, spec, y, (oh, ow));
                }
                (Op::BatchNorm { .. }, params) => {
                    stage_unary(arena, src.expect("validated"), out.clone());
                    if let Params::Affine { scale, shift } = params {
                        affine_inplace(&mut arena[out.clone()], scale, shift);
                    }
                }
                (Op::Relu, _) => {
                    stage_unary(arena, src.expect("validated"), out.clone());
                    relu_inplace(&mut arena[out.clone()]);
                }
                (Op::MaxPool { size }, _) => {
                    let s = layer.input.expect("validated");
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    maxpool_into(x, chw(g.shape(s)), *size, y);
                }
                (Op::ResidualAdd { from }, _) => {
                    let [a, b, y] = carve(arena, [src.expect("validated"), plan.region(*from), out.clone()]);
                    for ((o, p), q) in y.iter_mut().zip(a.iter()).zip(b.iter()) {
                        *o = p + q;
                    }
                }
                (Op::GlobalAvgPool, _) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    gap_into(x, g.shape(i)[0], y);
                }
                (Op::Concat { from }, _) => {
                    let [a, b, y] = carve(arena, [src.expect("validated"), plan.region(*from), out.clone()]);
                    y[..a.len()].copy_from_slice(a);
                    y[a.len()..].copy_from_slice(b);
                }
                (Op::FullyConnected { .. }, Params::Fc { weight, bias }) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    fc_into(x, weight, bias, y);
                }
                (Op::Softmax, _) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    softmax_into(x, y);
                }
                (op, _) => unreachable!("parameters missing for {op:?}"),
            }
            self.macc += layer_macc(g, i);
            observe(i, &arena[out]);
        }
        Ok(())
    }
}

/// One-shot convenience: fold, run, discard the arena.
pub fn infer(graph: &ModelGraph, weights: &WeightStore, frame: &TactileFrame, imu: Option<[f32; 3]>) -> Result<InferenceResult> {
    let model = CompiledModel::folded(graph.clone(), weights)?;
    InferenceContext::new(&model).infer(&model, frame, imu)
}

#[derive(Debug, Clone)]
enum QParams {
    None,
    Conv { weight: Vec<i16>, w_exp: i32, bias: Vec<i64> },
    Fc { weight: Vec<i16>, w_exp: i32, bias: Vec<i64> },
    Affine { scale: Vec<i16>, s_exp: i32, shift: Vec<i64> },
}

/// Margin over the calibrated maximum so unseen inputs rarely saturate.
const HEADROOM: f32 = 1.25;

/// Folded model quantised to Q15 with per-tensor power-of-two exponents
/// chosen from a calibration pass.
#[derive(Debug, Clone)]
pub struct Q15Model {
    base: CompiledModel,
    exps: Vec<i32>,
    qparams: Vec<QParams>,
    plan: ArenaPlan,
}

impl Q15Model {
    /// Folds batch norms, runs the f32 model over `samples` to find each
    /// tensor's range, and quantises weights and activations accordingly.
    pub fn calibrate(graph: &ModelGraph, weights: &WeightStore, samples: &[(TactileFrame, Option<[f32; 3]>)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::ScaleOverflow("calibration needs at least one sample".into()));
        }
        let base = CompiledModel::folded(graph.clone(), weights)?;
        let g = &base.graph;
        let mut max_abs = vec![0.0f32; g.len()];
        let mut ctx = InferenceContext::new(&base);
        for (frame, imu) in samples {
            ctx.run(&base, &normalize_frame(frame), imu.as_ref(), &mut |i, data| {
                max_abs[i] = data.iter().fold(max_abs[i], |m, v| m.max(v.abs()));
            })?;
        }
        let mut exps = vec![0i32; g.len()];
        for (i, l) in g.layers().iter().enumerate() {
            let src = l.input.map(|s| exps[s]);
            exps[i] = match l.op {
                Op::Input { .. } => exponent_for(max_abs[i]),
                Op::Conv(_) | Op::FullyConnected { .. } | Op::ResidualAdd { .. } => exponent_for(max_abs[i] * HEADROOM),
                Op::BatchNorm { .. } if !base.folded_bn[i] => exponent_for(max_abs[i] * HEADROOM),
                Op::Concat { from } => src.expect("validated").max(exps[from]),
                Op::Softmax => 0,
                _ => src.expect("validated"),
            };
        }
        let mut qparams = vec![QParams::None; g.len()];
        for (i, l) in g.layers().iter().enumerate() {
            let in_exp = l.input.map(|s| exps[s]).unwrap_or(0);
            qparams[i] = match &base.params[i] {
                Params::Conv { weight, bias } => {
                    let (weight, w_exp) = quantize_weights(weight);
                    QParams::Conv { weight, w_exp, bias: bias.iter().map(|&b| to_acc(b, w_exp, in_exp)).collect() }
                }
                Params::Fc { weight, bias } => {
                    let (weight, w_exp) = quantize_weights(weight);
                    QParams::Fc { weight, w_exp, bias: bias.iter().map(|&b| to_acc(b, w_exp, in_exp)).collect() }
                }
                Params::Affine { scale, shift } => {
                    let (scale, s_exp) = quantize_weights(scale);
                    QParams::Affine { scale, s_exp, shift: shift.iter().map(|&b| to_acc(b, s_exp, in_exp)).collect() }
                }
                Params::None => QParams::None,
            };
        }
        let plan = plan_memory(g, DType::Q15);
        Ok(Q15Model { base, exps, qparams, plan })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.base.graph
    }

    pub fn plan(&self) -> &ArenaPlan {
        &self.plan
    }

    /// Output exponent of every layer: values are `q * 2^(e - 15)`.
    pub fn exponents(&self) -> &[i32] {
        &self.exps
    }

    /// Bytes of quantised weights plus 32-bit biases, as they would sit in
    /// flash.
    pub fn weight_bytes(&self) -> usize {
        self.qparams
            .iter()
            .map(|p| match p {
                QParams::Conv { weight, bias, .. } | QParams::Fc { weight, bias, .. } => weight.len() * 2 + bias.len() * 4,
                QParams::Affine { scale, shift, .. } => scale.len() * 2 + shift.len() * 4,
                QParams::None => 0,
            })
            .sum()
    }
}

/// Reusable Q15 execution state.
#[derive(Debug, Clone, Default)]
pub struct Q15Context {
    arena: Vec<i16>,
}

impl Q15Context {
    pub fn new(model: &Q15Model) -> Self {
        Q15Context { arena: vec![0; model.plan.peak_elements()] }
    }

    pub fn arena_bytes(&self) -> usize {
        self.arena.len() * 2
    }

    pub fn infer(&mut self, model: &Q15Model, frame: &TactileFrame, imu: Option<[f32; 3]>) -> Result<InferenceResult> {
        self.infer_input(model, &normalize_frame(frame), imu)
    }

    pub fn infer_input(&mut self, model: &Q15Model, input: &[f32], imu: Option<[f32; 3]>) -> Result<InferenceResult> {
        let g = &model.base.graph;
        check_inputs(g, input, imu.as_ref())?;
        let plan = &model.plan;
        let exps = &model.exps;
        self.arena.resize(plan.peak_elements(), 0);
        let arena = &mut self.arena[..];
        let mut logits = None;
        for (i, layer) in g.layers().iter().enumerate() {
            let out = plan.region(i);
            let oe = exps[i];
            let s = layer.input;
            let src = s.map(|s| plan.region(s));
            let ie = s.map(|s| exps[s]).unwrap_or(0);
            match (&layer.op, &model.qparams[i]) {
                (Op::Input { source, .. }, _) => {
                    let values: &[f32] = match source {
                        InputSource::Frame => input,
                        InputSource::Imu => imu.as_ref().expect("checked above"),
                    };
                    for (o, &x) in arena[out.clone()].iter_mut().zip(values) {
                        *o = to_q15(x, oe);
                    }
                }
                (Op::Conv(spec), QParams::Conv { weight, w_exp, bias }) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    let (_, oh, ow) = chw(g.shape(i));
                    conv2d_q15_into(x, chw(g.shape(s.unwrap())), ie, weight, *w_exp, bias, spec, y, (oh, ow), oe);
                }
                (Op::BatchNorm { .. }, params) => {
                    stage_unary(arena, src.expect("validated"), out.clone());
                    if let QParams::Affine { scale, s_exp, shift } = params {
                        let y = &mut arena[out.clone()];
                        let plane = y.len() / scale.len();
                        let sh = oe + 15 - ie - s_exp;
                        for (c, chunk) in y.chunks_mut(plane).enumerate() {
                            for v in chunk {
                                *v = saturate(rounding_shift(*v as i64 * scale[c] as i64 + shift[c], sh));
                            }
                        }
                    }
                }
                (Op::Relu, _) => {
                    stage_unary(arena, src.expect("validated"), out.clone());
                    for v in &mut arena[out.clone()] {
                        *v = (*v).max(0);
                    }
                }
                (Op::MaxPool { size }, _) => {
                    let (c, h, w) = chw(g.shape(s.unwrap()));
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    let (oh, ow) = (h / size, w / size);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut m = i16::MIN;
                                for dy in 0..*size {
                                    for dx in 0..*size {
                                        m = m.max(x[(ch * h + oy * size + dy) * w + ox * size + dx]);
                                    }
                                }
                                y[(ch * oh + oy) * ow + ox] = m;
                            }
                        }
                    }
                }
                (Op::ResidualAdd { from }, _) => {
                    let fe = exps[*from];
                    let [a, b, y] = carve(arena, [src.expect("validated"), plan.region(*from), out.clone()]);
                    for ((o, &p), &q) in y.iter_mut().zip(a.iter()).zip(b.iter()) {
                        *o = saturate(rescale(p, ie, oe) + rescale(q, fe, oe));
                    }
                }
                (Op::GlobalAvgPool, _) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    let plane = x.len() / y.len();
                    for (o, chunk) in y.iter_mut().zip(x.chunks(plane)) {
                        let sum: i64 = chunk.iter().map(|&v| v as i64).sum();
                        *o = saturate(rescale(saturate(rounding_div(sum, plane as i64)), ie, oe));
                    }
                }
                (Op::Concat { from }, _) => {
                    let fe = exps[*from];
                    let [a, b, y] = carve(arena, [src.expect("validated"), plan.region(*from), out.clone()]);
                    let n = a.len();
                    for (o, &v) in y[..n].iter_mut().zip(a.iter()) {
                        *o = saturate(rescale(v, ie, oe));
                    }
                    for (o, &v) in y[n..].iter_mut().zip(b.iter()) {
                        *o = saturate(rescale(v, fe, oe));
                    }
                }
                (Op::FullyConnected { .. }, QParams::Fc { weight, w_exp, bias }) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    fc_q15_into(x, ie, weight, *w_exp, bias, y, oe);
                }
                (Op::Softmax, _) => {
                    let [x, y] = carve(arena, [src.expect("validated"), out.clone()]);
                    let l: Vec<f32> = x.iter().map(|&v| from_q15(v, ie)).collect();
                    let p = kernels::softmax(&l);
                    for (o, &v) in y.iter_mut().zip(&p) {
                        *o = to_q15(v, oe);
                    }
                    logits = Some((l, p));
                }
                (op, _) => unreachable!("parameters missing for {op:?}"),
            }
        }
        let (l, p) = match logits {
            Some(lp) => lp,
            None => {
                let last = g.len() - 1;
                let l: Vec<f32> = arena[plan.region(last)].iter().map(|&v| from_q15(v, exps[last])).collect();
                let p = kernels::softmax(&l);
                (l, p)
            }
        };
        Ok(InferenceResult::from_logits(l, p))
    }
}
