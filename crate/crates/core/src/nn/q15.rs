//! Q15 fixed point with power-of-two scales.
//!
//! A value `q` with exponent `e` represents `q * 2^(e - 15)`, so the
//! representable range is `[-2^e, 2^e)`. Products of two Q15 operands are
//! accumulated in `i64` and brought back to 16 bits with one rounding shift
//! (half away from zero) followed by saturation.

use super::kernels::valid_range;
use super::{shape_err, ConvSpec, Error, Result, Tensor};

const MIN_EXP: i32 = -24;
const MAX_EXP: i32 = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    shape: Vec<usize>,
    data: Vec<i16>,
    exponent: i32,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i16>, exponent: i32) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        check_exponent(exponent)?;
        Ok(QTensor { shape, data, exponent })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    /// Magnitude represented by a full-scale code: `2^exponent`.
    pub fn scale(&self) -> f32 {
        (self.exponent as f32).exp2()
    }
}

fn check_exponent(e: i32) -> Result<()> {
    if (MIN_EXP..=MAX_EXP).contains(&e) {
        Ok(())
    } else {
        Err(Error::ScaleOverflow(format!("exponent {e} outside [{MIN_EXP}, {MAX_EXP}]")))
    }
}

/// `log2(scale)` when `scale` is a positive power of two in range.
pub fn scale_exponent(scale: f32) -> Result<i32> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::ScaleOverflow(format!("scale {scale} must be positive and finite")));
    }
    let e = scale.log2().round() as i32;
    if (e as f32).exp2() != scale {
        return Err(Error::ScaleOverflow(format!("scale {scale} is not a power of two")));
    }
    check_exponent(e)?;
    Ok(e)
}

/// Smallest exponent whose range covers `max_abs`.
pub fn exponent_for(max_abs: f32) -> i32 {
    if !(max_abs.is_finite() && max_abs > 0.0) {
        return 0;
    }
    (max_abs.log2().ceil() as i32).clamp(MIN_EXP, MAX_EXP)
}

pub(crate) fn saturate(x: i64) -> i16 {
    x.clamp(i16::MIN as i64, i16::MAX as i64) as i16
}

/// `x / 2^shift` rounded half away from zero; a negative shift multiplies.
pub(crate) fn rounding_shift(x: i64, shift: i32) -> i64 {
    if shift <= 0 {
        let s = (-shift).min(62) as u32;
        return x.saturating_mul(1i64 << s);
    }
    if shift >= 63 {
        return 0;
    }
    let half = 1i64 << (shift - 1);
    if x >= 0 {
        (x + half) >> shift
    } else {
        -((-x + half) >> shift)
    }
}

/// Rounded division half away from zero, for positive `d`.
pub(crate) fn rounding_div(x: i64, d: i64) -> i64 {
    if x >= 0 {
        (x + d / 2) / d
    } else {
        -((-x + d / 2) / d)
    }
}

pub(crate) fn to_q15(x: f32, exponent: i32) -> i16 {
    let scaled = x as f64 * ((15 - exponent) as f64).exp2();
    if scaled.is_nan() {
        return 0;
    }
    scaled.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub(crate) fn from_q15(q: i16, exponent: i32) -> f32 {
    (q as f64 * ((exponent - 15) as f64).exp2()) as f32
}

/// Accumulator-domain constant: `round(x * 2^(30 - e1 - e2))`.
pub(crate) fn to_acc(x: f32, e1: i32, e2: i32) -> i64 {
    (x as f64 * ((30 - e1 - e2) as f64).exp2()).round() as i64
}

/// Moves a code between exponents.
pub(crate) fn rescale(q: i16, from: i32, to: i32) -> i64 {
    rounding_shift(q as i64, to - from)
}

pub fn quantize_q15(t: &Tensor, scale: f32) -> Result<QTensor> {
    let e = scale_exponent(scale)?;
    Ok(QTensor { shape: t.shape().to_vec(), data: t.data().iter().map(|&x| to_q15(x, e)).collect(), exponent: e })
}

pub fn dequantize_q15(q: &QTensor) -> Tensor {
    Tensor::new(q.shape.clone(), q.data.iter().map(|&v| from_q15(v, q.exponent)).collect())
        .expect("shape checked at construction")
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_q15_into(
    input: &[i16],
    (c, h, w): (usize, usize, usize),
    in_exp: i32,
    weight: &[i16],
    w_exp: i32,
    bias_acc: &[i64],
    spec: &ConvSpec,
    out: &mut [i16],
    (oh, ow): (usize, usize),
    out_exp: i32,
) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.pad);
    let shift = out_exp + 15 - w_exp - in_exp;
    // one output plane of 64-bit accumulators, reused across channels
    let mut acc = vec![0i64; oh * ow];
    for oc in 0..spec.out_ch {
        acc.fill(bias_acc[oc]);
        for ic in 0..c {
            let src = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, h, ky, s, p);
                for kx in 0..k {
                    let wv = weight[((oc * c + ic) * k + ky) * k + kx] as i32;
                    let (x_lo, x_hi) = valid_range(ow, w, kx, s, p);
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - p;
                        let irow = &src[iy * w..(iy + 1) * w];
                        let arow = &mut acc[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = x_lo + kx - p;
                            for (a, &x) in arow[x_lo..x_hi].iter_mut().zip(&irow[ix0..ix0 + (x_hi - x_lo)]) {
                                *a += (wv * x as i32) as i64;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                arow[ox] += (wv * irow[ox * s + kx - p] as i32) as i64;
                            }
                        }
                    }
                }
            }
        }
        for (o, &a) in out[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().zip(&acc) {
            *o = saturate(rounding_shift(a, shift));
        }
    }
}

pub(crate) fn fc_q15_into(x: &[i16], in_exp: i32, weight: &[i16], w_exp: i32, bias_acc: &[i64], out: &mut [i16], out_exp: i32) {
    let n = x.len();
    let shift = out_exp + 15 - w_exp - in_exp;
    for (o, y) in out.iter_mut().enumerate() {
        let row = &weight[o * n..(o + 1) * n];
        let acc = bias_acc[o] + row.iter().zip(x).map(|(&a, &b)| a as i64 * b as i64).sum::<i64>();
        *y = saturate(rounding_shift(acc, shift));
    }
}

/// Quantises f32 weights at the exponent of their largest magnitude.
pub(crate) fn quantize_weights(w: &[f32]) -> (Vec<i16>, i32) {
    let e = exponent_for(w.iter().fold(0.0f32, |m, v| m.max(v.abs())));
    (w.iter().map(|&v| to_q15(v, e)).collect(), e)
}

/// Q15 convolution; `out_exp` fixes the output range.
pub fn conv2d_q15(input: &QTensor, weights: &QTensor, bias: &[f32], stride: usize, pad: usize, out_exp: i32) -> Result<QTensor> {
    check_exponent(out_exp)?;
    let [c, h, w] = input.shape[..] else {
        return Err(shape_err(format!("expected (C, H, W), got {:?}", input.shape)));
    };
    let [o, wc, k, k2] = weights.shape[..] else {
        return Err(shape_err(format!("conv weights must be (O, C, k, k), got {:?}", weights.shape)));
    };
    if wc != c || k != k2 || bias.len() != o || stride == 0 {
        return Err(shape_err(format!("conv: input {:?}, weights {:?}, bias {}", input.shape, weights.shape, bias.len())));
    }
    let spec = ConvSpec::new(c, o, k, stride, pad);
    let (oh, ow) = spec.out_dims(h, w).ok_or_else(|| shape_err(format!("kernel {k} larger than {h}x{w} input")))?;
    let bias_acc: Vec<i64> = bias.iter().map(|&b| to_acc(b, weights.exponent, input.exponent)).collect();
    let mut out = vec![0; o * oh * ow];
    conv2d_q15_into(
        &input.data,
        (c, h, w),
        input.exponent,
        &weights.data,
        weights.exponent,
        &bias_acc,
        &spec,
        &mut out,
        (oh, ow),
        out_exp,
    );
    QTensor::new(vec![o, oh, ow], out, out_exp)
}

pub fn fully_connected_q15(x: &QTensor, weights: &QTensor, bias: &[f32], out_exp: i32) -> Result<QTensor> {
    check_exponent(out_exp)?;
    let [n] = x.shape[..] else { return Err(shape_err(format!("expected a vector, got {:?}", x.shape))) };
    let [o, i] = weights.shape[..] else {
        return Err(shape_err(format!("fc weights must be (O, I), got {:?}", weights.shape)));
    };
    if i != n || bias.len() != o {
        return Err(shape_err(format!("fc: input [{n}], weights {:?}, bias {}", weights.shape, bias.len())));
    }
    let bias_acc: Vec<i64> = bias.iter().map(|&b| to_acc(b, weights.exponent, x.exponent)).collect();
    let mut out = vec![0; o];
    fc_q15_into(&x.data, x.exponent, &weights.data, weights.exponent, &bias_acc, &mut out, out_exp);
    QTensor::new(vec![o], out, out_exp)
}
