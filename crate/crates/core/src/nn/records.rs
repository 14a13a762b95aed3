//! Named-tensor container shared by weight (`SHW1`) and golden-activation
//! (`SHGA`) files:
//!
//! ```text
//! magic[4] version:u16 count:u32
//! count × { name_len:u16 name[name_len] dtype:u8 ndim:u8 dims:u32[ndim] data }
//! crc32:u32
//! ```
//!
//! All integers little-endian; `data` is the raw little-endian payload of
//! `product(dims)` elements. The CRC covers every preceding byte.

use std::path::Path;

use super::weights::{TensorData, WeightTensor};
use super::{DType, Error, Result, Tensor};
use crate::codec::{FormatError, Reader, Writer, CRC32};
use crate::tactile::TactileFrame;

const VERSION: u16 = 1;

pub(crate) fn encode_records(magic: &[u8; 4], records: &[(String, WeightTensor)]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(magic).u16(VERSION).u32(records.len() as u32);
    for (name, t) in records {
        w.u16(name.len() as u16).bytes(name.as_bytes());
        w.u8(t.dtype().code()).u8(t.dims().len() as u8);
        for &d in t.dims() {
            w.u32(d as u32);
        }
        match t.data() {
            TensorData::F32(v) => v.iter().for_each(|&x| {
                w.f32(x);
            }),
            TensorData::Q15(v) => v.iter().for_each(|&x| {
                w.i16(x);
            }),
            TensorData::U16(v) => {
                w.u16_slice(v);
            }
        }
    }
    w.finish_crc32()
}

pub(crate) fn decode_records(magic: &[u8; 4], bytes: &[u8]) -> Result<Vec<(String, WeightTensor)>, FormatError> {
    let mut r = Reader::new(bytes);
    r.expect_magic(magic)?;
    // the layout is length-driven, so reject corruption before trusting any count
    if bytes.len() >= 8 {
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = CRC32.checksum(body);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { stored, computed });
        }
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::invalid("tensor name is not UTF-8"))?
            .to_string();
        let dtype = r.u8()?;
        let dtype = DType::from_code(dtype).ok_or_else(|| FormatError::invalid(format!("{name}: unknown dtype {dtype}")))?;
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::invalid(format!("{name}: element count overflows")))?;
        let raw = r.take(n.checked_mul(dtype.size_bytes()).ok_or_else(|| FormatError::invalid("length overflow"))?)?;
        let data = match dtype {
            DType::F32 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::Q15 => TensorData::Q15(raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()),
            DType::U16 => TensorData::U16(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
        };
        out.push((name, WeightTensor::new(dims, data).expect("length derived from dims")));
    }
    r.finish_crc32()?;
    Ok(out)
}

/// One reference input with the activations an independent implementation
/// produced for it, keyed by layer name in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenCase {
    pub frame: TactileFrame,
    pub imu: Option<[f32; 3]>,
    pub activations: Vec<(String, Tensor)>,
}

impl GoldenCase {
    pub fn activation(&self, layer: &str) -> Option<&Tensor> {
        self.activations.iter().find(|(n, _)| n == layer).map(|(_, t)| t)
    }
}

/// Golden activation file (`SHGA`). Records are named `<case>/frame`
/// (u16 32x32 codes), `<case>/imu` (f32, optional) and `<case>/<layer>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoldenSet {
    pub cases: Vec<GoldenCase>,
}

const GOLDEN_MAGIC: &[u8; 4] = b"SHGA";

fn bad(msg: String) -> Error {
    Error::Format(FormatError::Invalid(msg))
}

impl GoldenSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::new();
        for (i, case) in self.cases.iter().enumerate() {
            let key = format!("case{i:04}");
            let frame = WeightTensor::new(vec![32, 32], TensorData::U16(case.frame.values().to_vec())).expect("1024 codes");
            records.push((format!("{key}/frame"), frame));
            if let Some(imu) = case.imu {
                records.push((format!("{key}/imu"), WeightTensor::f32(vec![3], imu.to_vec()).expect("3 values")));
            }
            for (layer, t) in &case.activations {
                let w = WeightTensor::f32(t.shape().to_vec(), t.data().to_vec()).expect("tensor is consistent");
                records.push((format!("{key}/{layer}"), w));
            }
        }
        encode_records(GOLDEN_MAGIC, &records)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut set = GoldenSet::default();
        let mut current: Option<(String, GoldenCase)> = None;
        for (name, t) in decode_records(GOLDEN_MAGIC, bytes)? {
            let (key, field) = name.split_once('/').ok_or_else(|| bad(format!("record {name:?} has no case prefix")))?;
            if field == "frame" {
                if let Some((_, done)) = current.take() {
                    set.cases.push(done);
                }
                let TensorData::U16(codes) = t.data() else {
                    return Err(bad(format!("{name}: frame must be u16")));
                };
                let frame =
                    TactileFrame::new(codes.clone(), set.cases.len() as u32, 0).map_err(|e| bad(format!("{name}: {e}")))?;
                current = Some((key.to_string(), GoldenCase { frame, imu: None, activations: Vec::new() }));
                continue;
            }
            let Some((ck, case)) = current.as_mut() else {
                return Err(bad(format!("{name}: activation before any frame")));
            };
            if ck != key {
                return Err(bad(format!("{name}: case {key} has no frame record")));
            }
            let tensor = t.to_tensor().ok_or_else(|| bad(format!("{name}: activations must be f32")))?;
            if field == "imu" {
                let [a, b, c] = tensor.data()[..] else {
                    return Err(bad(format!("{name}: imu must hold 3 values")));
                };
                case.imu = Some([a, b, c]);
            } else {
                case.activations.push((field.to_string(), tensor));
            }
        }
        if let Some((_, done)) = current {
            set.cases.push(done);
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
