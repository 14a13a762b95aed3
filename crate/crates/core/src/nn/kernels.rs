//! f32 reference kernels. The `*_into` forms write into caller-provided
//! slices so the engine can run them inside its arena; the tensor forms
//! allocate and are what tests and tools use.

use super::{shape_err, ConvSpec, Error, Result, Tensor};

/// Output positions `o` along one axis for which `o*stride + tap - pad`
/// lands inside the input.
pub(crate) fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if in_len + pad > tap { (in_len + pad - tap).div_ceil(stride).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_into(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    bias: &[f32],
    spec: &ConvSpec,
    out: &mut [f32],
    (oh, ow): (usize, usize),
) {
    let plane_len = oh * ow;
    // four output channels at a time, so each input row is read once per
    // four accumulations; per-output summation order is unchanged
    let mut blocks = out[..spec.out_ch * plane_len].chunks_exact_mut(4 * plane_len);
    let mut oc = 0;
    for block in blocks.by_ref() {
        let (p0, rest) = block.split_at_mut(plane_len);
        let (p1, rest) = rest.split_at_mut(plane_len);
        let (p2, p3) = rest.split_at_mut(plane_len);
        let mut planes = [p0, p1, p2, p3];
        for (j, plane) in planes.iter_mut().enumerate() {
            plane.fill(bias[oc + j]);
        }
        conv_block4(input, (c, h, w), weight, spec, oc, &mut planes, (oh, ow));
        oc += 4;
    }
    let rest = blocks.into_remainder();
    for (j, plane) in rest.chunks_exact_mut(plane_len).enumerate() {
        conv_single(input, (c, h, w), weight, bias[oc + j], spec, oc + j, plane, (oh, ow));
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_block4(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    spec: &ConvSpec,
    oc: usize,
    planes: &mut [&mut [f32]; 4],
    (oh, ow): (usize, usize),
) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.pad);
    let tap = |j: usize, ic: usize, ky: usize, kx: usize| weight[(((oc + j) * c + ic) * k + ky) * k + kx];
    for ic in 0..c {
        let src = &input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(oh, h, ky, s, p);
            for kx in 0..k {
                let wv = [tap(0, ic, ky, kx), tap(1, ic, ky, kx), tap(2, ic, ky, kx), tap(3, ic, ky, kx)];
                let (x_lo, x_hi) = valid_range(ow, w, kx, s, p);
                let n = x_hi - x_lo;
                if n == 0 {
                    continue;
                }
                for oy in y_lo..y_hi {
                    let iy = oy * s + ky - p;
                    let irow = &src[iy * w..(iy + 1) * w];
                    let o = oy * ow + x_lo;
                    let [p0, p1, p2, p3] = planes;
                    let (r0, r1, r2, r3) = (&mut p0[o..o + n], &mut p1[o..o + n], &mut p2[o..o + n], &mut p3[o..o + n]);
                    if s == 1 {
                        let ix0 = x_lo + kx - p;
                        let xs = &irow[ix0..ix0 + n];
                        for i in 0..n {
                            let x = xs[i];
                            r0[i] += wv[0] * x;
                            r1[i] += wv[1] * x;
                            r2[i] += wv[2] * x;
                            r3[i] += wv[3] * x;
                        }
                    } else {
                        for i in 0..n {
                            let x = irow[(x_lo + i) * s + kx - p];
                            r0[i] += wv[0] * x;
                            r1[i] += wv[1] * x;
                            r2[i] += wv[2] * x;
                            r3[i] += wv[3] * x;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_single(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    bias: f32,
    spec: &ConvSpec,
    oc: usize,
    plane: &mut [f32],
    (oh, ow): (usize, usize),
) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.pad);
    plane.fill(bias);
    for ic in 0..c {
        let src = &input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(oh, h, ky, s, p);
            for kx in 0..k {
                let wv = weight[((oc * c + ic) * k + ky) * k + kx];
                let (x_lo, x_hi) = valid_range(ow, w, kx, s, p);
                for oy in y_lo..y_hi {
                    let iy = oy * s + ky - p;
                    let irow = &src[iy * w..(iy + 1) * w];
                    let orow = &mut plane[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let ix0 = x_lo + kx - p;
                        for (o, &x) in orow[x_lo..x_hi].iter_mut().zip(&irow[ix0..ix0 + (x_hi - x_lo)]) {
                            *o += wv * x;
                        }
                    } else {
                        for ox in x_lo..x_hi {
                            orow[ox] += wv * irow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn fc_into(x: &[f32], weight: &[f32], bias: &[f32], out: &mut [f32]) {
    let n = x.len();
    for (o, (y, b)) in out.iter_mut().zip(bias).enumerate() {
        let row = &weight[o * n..(o + 1) * n];
        *y = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>();
    }
}

/// `x * scale[c] + shift[c]` per channel, in place.
pub(crate) fn affine_inplace(data: &mut [f32], scale: &[f32], shift: &[f32]) {
    let plane = data.len() / scale.len();
    for (c, chunk) in data.chunks_mut(plane).enumerate() {
        for v in chunk {
            *v = *v * scale[c] + shift[c];
        }
    }
}

pub(crate) fn relu_inplace(data: &mut [f32]) {
    for v in data {
        *v = v.max(0.0);
    }
}

pub(crate) fn maxpool_into(input: &[f32], (c, h, w): (usize, usize, usize), size: usize, out: &mut [f32]) {
    let (oh, ow) = (h / size, w / size);
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        m = m.max(src[(oy * size + dy) * w + ox * size + dx]);
                    }
                }
                out[(ch * oh + oy) * ow + ox] = m;
            }
        }
    }
}

pub(crate) fn gap_into(input: &[f32], channels: usize, out: &mut [f32]) {
    let plane = input.len() / channels;
    for (o, chunk) in out.iter_mut().zip(input.chunks(plane)) {
        *o = chunk.iter().sum::<f32>() / plane as f32;
    }
}

pub(crate) fn softmax_into(x: &[f32], out: &mut [f32]) {
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Batch-norm running statistics and affine parameters for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` with `bn(x) = x * scale + shift`.
    /// `layer` only labels the error.
    pub fn scale_shift(&self, layer: &str) -> Result<(Vec<f32>, Vec<f32>)> {
        let n = self.channels();
        if self.beta.len() != n || self.mean.len() != n || self.var.len() != n {
            return Err(shape_err(format!("{layer}: batch-norm parameter lengths differ")));
        }
        let mut scale = Vec::with_capacity(n);
        let mut shift = Vec::with_capacity(n);
        for c in 0..n {
            let var = self.var[c];
            if !(var > 0.0) {
                return Err(Error::NonPositiveVariance { layer: layer.to_string(), channel: c, value: var });
            }
            let s = self.gamma[c] / (var + self.eps).sqrt();
            scale.push(s);
            shift.push(self.beta[c] - self.mean[c] * s);
        }
        Ok((scale, shift))
    }
}

fn vector_len(t: &Tensor) -> Result<usize> {
    match t.shape() {
        [n] => Ok(*n),
        s => Err(shape_err(format!("expected a vector, got {s:?}"))),
    }
}

/// 2-D convolution of a `(C, H, W)` tensor with `(O, C, k, k)` weights.
/// Adds the layer's MACC count to `macc`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], stride: usize, pad: usize, macc: &mut u64) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let [o, wc, k, k2] = weights.shape()[..] else {
        return Err(shape_err(format!("conv weights must be (O, C, k, k), got {:?}", weights.shape())));
    };
    if wc != c || k != k2 || bias.len() != o || stride == 0 {
        return Err(shape_err(format!(
            "conv: input {:?}, weights {:?}, bias {}, stride {stride}",
            input.shape(),
            weights.shape(),
            bias.len()
        )));
    }
    let spec = ConvSpec::new(c, o, k, stride, pad);
    let (oh, ow) = spec.out_dims(h, w).ok_or_else(|| shape_err(format!("kernel {k} larger than {h}x{w} input")))?;
    let mut out = Tensor::zeros(vec![o, oh, ow]);
    conv2d_into(input.data(), (c, h, w), weights.data(), bias, &spec, out.data_mut(), (oh, ow));
    *macc += (oh * ow * o * c * k * k) as u64;
    Ok(out)
}

/// Folds an inference-mode batch norm into the preceding convolution's
/// weights and bias: `bn(conv(x; w, b)) == conv(x; w', b')`.
pub fn batchnorm_fold(bn: &BnParams, weights: &Tensor, bias: &[f32]) -> Result<(Tensor, Vec<f32>)> {
    let o = weights.shape().first().copied().unwrap_or(0);
    if o != bn.channels() || bias.len() != o {
        return Err(shape_err(format!(
            "fold: {} bn channels, weights {:?}, bias {}",
            bn.channels(),
            weights.shape(),
            bias.len()
        )));
    }
    let (scale, shift) = bn.scale_shift("fold")?;
    let per_out = weights.len() / o;
    let mut w = weights.clone();
    for (c, chunk) in w.data_mut().chunks_mut(per_out).enumerate() {
        for v in chunk {
            *v *= scale[c];
        }
    }
    let b = (0..o).map(|c| bias[c] * scale[c] + shift[c]).collect();
    Ok((w, b))
}

pub fn batchnorm(input: &Tensor, bn: &BnParams) -> Result<Tensor> {
    let (c, _, _) = input.chw()?;
    if c != bn.channels() {
        return Err(shape_err(format!("batch norm over {} channels, input {:?}", bn.channels(), input.shape())));
    }
    let (scale, shift) = bn.scale_shift("batchnorm")?;
    let mut out = input.clone();
    affine_inplace(out.data_mut(), &scale, &shift);
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_inplace(out.data_mut());
    out
}

pub fn maxpool(input: &Tensor, size: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if size == 0 || h < size || w < size {
        return Err(shape_err(format!("pool size {size} does not fit {h}x{w}")));
    }
    let mut out = Tensor::zeros(vec![c, h / size, w / size]);
    maxpool_into(input.data(), (c, h, w), size, out.data_mut());
    Ok(out)
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    maxpool(input, 2)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, _, _) = input.chw()?;
    let mut out = Tensor::zeros(vec![c]);
    gap_into(input.data(), c, out.data_mut());
    Ok(out)
}

pub fn residual_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("add operands differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    vector_len(a)?;
    vector_len(b)?;
    Ok(Tensor::vector(a.data().iter().chain(b.data()).copied().collect()))
}

/// `weights (O, I) · x + bias`. Adds `O * I` to `macc`.
pub fn fully_connected(x: &Tensor, weights: &Tensor, bias: &[f32], macc: &mut u64) -> Result<Tensor> {
    let n = vector_len(x)?;
    let [o, i] = weights.shape()[..] else {
        return Err(shape_err(format!("fc weights must be (O, I), got {:?}", weights.shape())));
    };
    if i != n || bias.len() != o {
        return Err(shape_err(format!("fc: input [{n}], weights {:?}, bias {}", weights.shape(), bias.len())));
    }
    let mut out = vec![0.0; o];
    fc_into(x.data(), weights.data(), bias, &mut out);
    *macc += (o * i) as u64;
    Ok(Tensor::vector(out))
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// IMU branch: `fc2(relu(fc1(x)))`.
pub fn mlp_forward(imu: [f32; 3], w1: &Tensor, b1: &[f32], w2: &Tensor, b2: &[f32]) -> Result<Vec<f32>> {
    let mut macc = 0;
    let hidden = relu(&fully_connected(&Tensor::vector(imu.to_vec()), w1, b1, &mut macc)?);
    Ok(fully_connected(&hidden, w2, b2, &mut macc)?.into_data())
}
