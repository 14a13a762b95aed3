//! Static activation arena.
//!
//! Every layer output is a tensor with a live interval `[def, last_use]`
//! measured in layer steps. BN and ReLU write in place when their input has no
//! other reader, so a conv→bn→relu chain is one tensor. Tensors are placed
//! largest first at the lowest offset that does not collide with an already
//! placed tensor whose interval intersects (endpoints inclusive: a layer's
//! inputs and output are live together).

use super::{DType, ModelGraph, Op};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedTensor {
    /// Layers whose output is this buffer, in execution order.
    pub layers: Vec<usize>,
    pub offset_bytes: usize,
    pub size_bytes: usize,
    /// Inclusive `(first, last)` step during which the buffer holds data.
    pub live: (usize, usize),
}

impl PlannedTensor {
    pub fn overlaps_in_time(&self, other: &PlannedTensor) -> bool {
        self.live.0 <= other.live.1 && other.live.0 <= self.live.1
    }

    pub fn overlaps_in_memory(&self, other: &PlannedTensor) -> bool {
        self.offset_bytes < other.offset_bytes + other.size_bytes
            && other.offset_bytes < self.offset_bytes + self.size_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArenaPlan {
    pub dtype: DType,
    pub tensors: Vec<PlannedTensor>,
    /// Index into `tensors` for every layer.
    pub layer_tensor: Vec<usize>,
    pub peak_bytes: usize,
}

impl ArenaPlan {
    /// Element range of `layer`'s output within the arena.
    pub fn region(&self, layer: usize) -> std::ops::Range<usize> {
        let t = &self.tensors[self.layer_tensor[layer]];
        let e = self.dtype.size_bytes();
        t.offset_bytes / e..(t.offset_bytes + t.size_bytes) / e
    }

    pub fn peak_elements(&self) -> usize {
        self.peak_bytes / self.dtype.size_bytes()
    }

    /// Largest sum of simultaneously live tensor sizes: no placement can do
    /// better than this.
    pub fn lower_bound_bytes(&self) -> usize {
        let steps = self.tensors.iter().map(|t| t.live.1).max().unwrap_or(0);
        (0..=steps)
            .map(|s| self.tensors.iter().filter(|t| t.live.0 <= s && s <= t.live.1).map(|t| t.size_bytes).sum())
            .max()
            .unwrap_or(0)
    }
}

/// True when `layer` reuses its input's buffer.
pub(crate) fn writes_in_place(graph: &ModelGraph, layer: usize) -> bool {
    let l = &graph.layers()[layer];
    match (&l.op, l.input) {
        (Op::Relu | Op::BatchNorm { .. }, Some(src)) => graph.consumers(src).len() == 1,
        _ => false,
    }
}

pub fn plan_memory(graph: &ModelGraph, dtype: DType) -> ArenaPlan {
    let n = graph.len();
    let mut layer_tensor = vec![0; n];
    let mut tensors: Vec<PlannedTensor> = Vec::new();
    for i in 0..n {
        if writes_in_place(graph, i) {
            let t = layer_tensor[graph.layers()[i].input.expect("in-place layers have a source")];
            layer_tensor[i] = t;
            tensors[t].layers.push(i);
        } else {
            layer_tensor[i] = tensors.len();
            let elems: usize = graph.shape(i).iter().product();
            tensors.push(PlannedTensor {
                layers: vec![i],
                offset_bytes: 0,
                size_bytes: elems * dtype.size_bytes(),
                live: (i, i),
            });
        }
    }
    for i in 0..n {
        for src in graph.operands(i) {
            let t = &mut tensors[layer_tensor[src]];
            t.live.1 = t.live.1.max(i);
        }
    }
    // the network output is read after the last step
    let last = layer_tensor[n - 1];
    tensors[last].live.1 = n;

    let mut order: Vec<usize> = (0..tensors.len()).collect();
    order.sort_by(|&a, &b| tensors[b].size_bytes.cmp(&tensors[a].size_bytes).then(tensors[a].live.0.cmp(&tensors[b].live.0)));
    let mut placed: Vec<usize> = Vec::new();
    for t in order {
        let mut busy: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&p| tensors[p].overlaps_in_time(&tensors[t]))
            .map(|&p| (tensors[p].offset_bytes, tensors[p].offset_bytes + tensors[p].size_bytes))
            .collect();
        busy.sort_unstable();
        let mut offset = 0;
        for (start, end) in busy {
            if offset + tensors[t].size_bytes <= start {
                break;
            }
            offset = offset.max(end);
        }
        tensors[t].offset_bytes = offset;
        placed.push(t);
    }
    let peak_bytes = tensors.iter().map(|t| t.offset_bytes + t.size_bytes).max().unwrap_or(0);
    ArenaPlan { dtype, tensors, layer_tensor, peak_bytes }
}
