use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::records::{decode_records, encode_records};
use super::{BnParams, DType, Error, ModelGraph, Op, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    Q15(Vec<i16>),
    U16(Vec<u16>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::Q15(_) => DType::Q15,
            TensorData::U16(_) => DType::U16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::Q15(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named record: dimensions plus typed payload.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl WeightTensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("dims {dims:?} hold {n} values, got {}", data.len())));
        }
        Ok(WeightTensor { dims, data })
    }

    pub fn f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_tensor(&self) -> Option<Tensor> {
        Tensor::new(self.dims.clone(), self.as_f32()?.to_vec()).ok()
    }
}

/// Named parameter tensors in insertion order. Serialises to the `SHW1`
/// format.
#[derive(Debug, Clone, Default)]
pub struct WeightStore {
    entries: Vec<(String, WeightTensor)>,
    index: HashMap<String, usize>,
}

impl PartialEq for WeightStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

pub(crate) const WEIGHTS_MAGIC: &[u8; 4] = b"SHW1";

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, tensor: WeightTensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = tensor,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, tensor));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data.len()).sum()
    }

    /// f32 values of `name`, which must have exactly `dims`.
    pub fn f32_param(&self, name: &str, dims: &[usize]) -> Result<&[f32]> {
        let t = self.get(name).ok_or_else(|| Error::WeightMismatch(format!("missing {name}")))?;
        if t.dims != dims {
            return Err(Error::WeightMismatch(format!("{name}: expected dims {dims:?}, found {:?}", t.dims)));
        }
        t.as_f32().ok_or_else(|| Error::WeightMismatch(format!("{name}: expected f32, found {:?}", t.dtype())))
    }

    pub(crate) fn bn_params(&self, layer: &str, channels: usize, eps: f32) -> Result<BnParams> {
        let get = |p: &str| self.f32_param(&format!("{layer}.{p}"), &[channels]).map(<[f32]>::to_vec);
        Ok(BnParams { gamma: get("gamma")?, beta: get("beta")?, mean: get("mean")?, var: get("var")?, eps })
    }

    /// Checks that the store holds exactly the graph's parameters with the
    /// right dimensions and positive batch-norm variances.
    pub fn validate(&self, graph: &ModelGraph) -> Result<()> {
        let specs = graph.param_specs();
        for spec in &specs {
            self.f32_param(&spec.name, &spec.dims)?;
        }
        if let Some((extra, _)) = self.entries.iter().find(|(n, _)| !specs.iter().any(|s| &s.name == n)) {
            return Err(Error::WeightMismatch(format!("unexpected tensor {extra}")));
        }
        for l in graph.layers() {
            if let Op::BatchNorm { channels, eps } = l.op {
                self.bn_params(&l.name, channels, eps)?.scale_shift(&l.name)?;
            }
        }
        Ok(())
    }

    /// He-uniform weights, zero biases and identity batch norms.
    pub fn random_init(graph: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new();
        for spec in graph.param_specs() {
            let n: usize = spec.dims.iter().product();
            let values = if spec.name.ends_with(".weight") {
                let fan_in: usize = spec.dims[1..].iter().product();
                let bound = (6.0 / fan_in as f32).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            } else if spec.name.ends_with(".gamma") || spec.name.ends_with(".var") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            store.insert(spec.name, WeightTensor::f32(spec.dims, values).expect("dims match value count"));
        }
        store
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_records(WEIGHTS_MAGIC, &self.entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut store = WeightStore::new();
        for (name, t) in decode_records(WEIGHTS_MAGIC, bytes)? {
            if store.index.contains_key(&name) {
                return Err(Error::Format(crate::codec::FormatError::invalid(format!("duplicate tensor {name}"))));
            }
            store.insert(name, t);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
