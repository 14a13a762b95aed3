//! C interface to the inference engine and the device packet decoder.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every fallible call returns an [`ShStatus`]; on failure a
//! message is available from [`sh_last_error`] on the same thread until the
//! next failing call. No function unwinds into C: a panic becomes
//! `SH_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use smarthand::device::{DevicePacket, PacketDecoder};
use smarthand::nn::{reference_graph, reference_graph_with_imu, CompiledModel, InferenceContext, ModelGraph, WeightStore};
use smarthand::tactile::{TactileFrame, CLASS_COUNT, TAXELS};

pub const SH_TAXELS: usize = 1024;
pub const SH_CLASS_COUNT: usize = 17;
const _: () = assert!(SH_TAXELS == TAXELS && SH_CLASS_COUNT == CLASS_COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed weight or graph file.
    Format = 4,
    /// Weights and graph disagree, or the model cannot run.
    Model = 5,
    BufferTooSmall = 6,
    /// The decoder has no complete packet queued.
    Empty = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShPacketKind {
    Frame = 0,
    Imu = 1,
    Inference = 2,
    Ack = 3,
    Dump = 4,
}

/// A decoded packet, flattened. Only the fields of `kind` are meaningful;
/// the rest are zero.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct ShPacket {
    pub kind: ShPacketKind,
    pub seq: u32,
    /// Frame, Dump, Imu.
    pub timestamp_us: u64,
    /// Frame, Dump: row-major 12-bit codes.
    pub codes: [u16; SH_TAXELS],
    /// Imu: raw counts.
    pub accel: [i16; 3],
    pub gyro: [i16; 3],
    /// Inference.
    pub class_id: u8,
    pub top3: [u8; 3],
    pub probabilities: [f32; SH_CLASS_COUNT],
    /// Ack: the command byte and the state entered.
    pub command: u8,
    pub state: u8,
    /// Dump: position in the collection buffer.
    pub dump_index: u16,
    pub dump_total: u16,
}

impl ShPacket {
    fn zeroed(kind: ShPacketKind) -> Self {
        ShPacket {
            kind,
            seq: 0,
            timestamp_us: 0,
            codes: [0; SH_TAXELS],
            accel: [0; 3],
            gyro: [0; 3],
            class_id: 0,
            top3: [0; 3],
            probabilities: [0.0; SH_CLASS_COUNT],
            command: 0,
            state: 0,
            dump_index: 0,
            dump_total: 0,
        }
    }

    fn from_packet(p: &DevicePacket) -> Self {
        let with_frame = |kind, f: &TactileFrame| {
            let mut s = ShPacket::zeroed(kind);
            s.seq = f.seq;
            s.timestamp_us = f.timestamp_us;
            s.codes.copy_from_slice(f.values());
            s
        };
        match p {
            DevicePacket::Frame(f) => with_frame(ShPacketKind::Frame, f),
            DevicePacket::Dump { index, total, frame } => {
                let mut s = with_frame(ShPacketKind::Dump, frame);
                s.dump_index = *index;
                s.dump_total = *total;
                s
            }
            DevicePacket::Imu { seq, sample } => {
                let mut s = ShPacket::zeroed(ShPacketKind::Imu);
                s.seq = *seq;
                s.timestamp_us = sample.timestamp_us;
                s.accel = sample.accel;
                s.gyro = sample.gyro;
                s
            }
            DevicePacket::Inference { seq, class, top3, probabilities } => {
                let mut s = ShPacket::zeroed(ShPacketKind::Inference);
                s.seq = *seq;
                s.class_id = *class;
                s.top3 = *top3;
                s.probabilities = *probabilities;
                s
            }
            DevicePacket::Ack { seq, command, state } => {
                let mut s = ShPacket::zeroed(ShPacketKind::Ack);
                s.seq = *seq;
                s.command = *command;
                s.state = *state as u8;
                s
            }
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: ShStatus, msg: impl Into<String>) -> ShStatus {
    set_error(msg);
    status
}

fn nn_status(e: &smarthand::nn::Error) -> ShStatus {
    use smarthand::nn::Error as E;
    match e {
        E::Io(_) => ShStatus::Io,
        E::Format(_) | E::GraphSyntax { .. } => ShStatus::Format,
        _ => ShStatus::Model,
    }
}

fn guard(f: impl FnOnce() -> ShStatus) -> ShStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(ShStatus::Panic, msg)
        }
    }
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn sh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A compiled model and its preallocated activation arena.
pub struct ShEngine {
    model: CompiledModel,
    ctx: InferenceContext,
}

unsafe fn opt_str<'a>(s: *const c_char) -> Result<Option<&'a str>, ShStatus> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|_| fail(ShStatus::InvalidArgument, "string argument is not UTF-8"))
}

fn graph_for(spec: Option<&str>, weights: &WeightStore) -> Result<ModelGraph, ShStatus> {
    let graph = match spec {
        None => {
            let plain = reference_graph();
            if weights.validate(&plain).is_ok() {
                plain
            } else {
                reference_graph_with_imu()
            }
        }
        Some("reference") => reference_graph(),
        Some("reference-imu") => reference_graph_with_imu(),
        Some(text) => ModelGraph::parse(text).map_err(|e| fail(nn_status(&e), e.to_string()))?,
    };
    weights.validate(&graph).map_err(|e| fail(nn_status(&e), e.to_string()))?;
    Ok(graph)
}

fn build_engine(weights: WeightStore, graph: Option<&str>, out: *mut *mut ShEngine) -> ShStatus {
    let graph = match graph_for(graph, &weights) {
        Ok(g) => g,
        Err(s) => return s,
    };
    match CompiledModel::folded(graph, &weights) {
        Ok(model) => {
            let ctx = InferenceContext::new(&model);
            unsafe { *out = Box::into_raw(Box::new(ShEngine { model, ctx })) };
            ShStatus::Ok
        }
        Err(e) => fail(nn_status(&e), e.to_string()),
    }
}

/// Loads an SHW1 weight file. `graph` is NULL (pick the reference graph the
/// weights fit), `"reference"`, `"reference-imu"`, or graph text.
///
/// # Safety
/// `weights_path` must be a NUL-terminated string, `graph` NULL or one, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sh_engine_open(weights_path: *const c_char, graph: *const c_char, out: *mut *mut ShEngine) -> ShStatus {
    guard(|| {
        if weights_path.is_null() || out.is_null() {
            return fail(ShStatus::NullArgument, "weights_path and out must not be NULL");
        }
        let (path, graph) = match (opt_str(weights_path), opt_str(graph)) {
            (Ok(Some(p)), Ok(g)) => (p, g),
            (Err(s), _) | (_, Err(s)) => return s,
            (Ok(None), _) => unreachable!(),
        };
        match WeightStore::load(path) {
            Ok(w) => build_engine(w, graph, out),
            Err(e) => fail(nn_status(&e), format!("{path}: {e}")),
        }
    })
}

/// As [`sh_engine_open`], from an in-memory SHW1 image.
///
/// # Safety
/// `data` must point to `len` readable bytes; see [`sh_engine_open`].
#[no_mangle]
pub unsafe extern "C" fn sh_engine_from_bytes(data: *const u8, len: usize, graph: *const c_char, out: *mut *mut ShEngine) -> ShStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return fail(ShStatus::NullArgument, "data and out must not be NULL");
        }
        let graph = match opt_str(graph) {
            Ok(g) => g,
            Err(s) => return s,
        };
        match WeightStore::from_bytes(std::slice::from_raw_parts(data, len)) {
            Ok(w) => build_engine(w, graph, out),
            Err(e) => fail(nn_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `engine` must be NULL or a handle from `sh_engine_open`/`_from_bytes`
/// not already freed.
#[no_mangle]
pub unsafe extern "C" fn sh_engine_free(engine: *mut ShEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of output classes, or 0 for a NULL handle.
///
/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sh_engine_class_count(engine: *const ShEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.model.graph().class_count())
}

/// Whether [`sh_engine_infer`] needs the `imu` argument.
///
/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sh_engine_uses_imu(engine: *const ShEngine) -> bool {
    engine.as_ref().is_some_and(|e| e.model.graph().uses_imu())
}

/// Multiply-accumulates per inference.
///
/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sh_engine_macc(engine: *const ShEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.model.macc_per_inference())
}

/// Classifies one frame of `SH_TAXELS` codes. `imu` is three floats for
/// fusion models, else NULL. `probabilities` (may be NULL when
/// `probabilities_len` is 0) receives the softmax output; `class_out`, if not
/// NULL, the winning class.
///
/// # Safety
/// `engine` must be a live handle used by one thread at a time; `codes` must
/// point to `SH_TAXELS` values, `imu` to 3, `probabilities` to
/// `probabilities_len`.
#[no_mangle]
pub unsafe extern "C" fn sh_engine_infer(
    engine: *mut ShEngine,
    codes: *const u16,
    imu: *const f32,
    probabilities: *mut f32,
    probabilities_len: usize,
    class_out: *mut u32,
) -> ShStatus {
    guard(|| {
        let Some(engine) = engine.as_mut() else {
            return fail(ShStatus::NullArgument, "engine must not be NULL");
        };
        if codes.is_null() || (probabilities.is_null() && probabilities_len > 0) {
            return fail(ShStatus::NullArgument, "codes must not be NULL");
        }
        let classes = engine.model.graph().class_count();
        if !probabilities.is_null() && probabilities_len < classes {
            return fail(ShStatus::BufferTooSmall, format!("probabilities needs {classes} slots, got {probabilities_len}"));
        }
        let uses_imu = engine.model.graph().uses_imu();
        if uses_imu && imu.is_null() {
            return fail(ShStatus::InvalidArgument, "this model fuses IMU features; imu must not be NULL");
        }
        let imu = (uses_imu).then(|| {
            let s = std::slice::from_raw_parts(imu, 3);
            [s[0], s[1], s[2]]
        });
        let frame = match TactileFrame::new(std::slice::from_raw_parts(codes, SH_TAXELS).to_vec(), 0, 0) {
            Ok(f) => f,
            Err(e) => return fail(ShStatus::InvalidArgument, e.to_string()),
        };
        let ShEngine { model, ctx } = engine;
        match ctx.infer(model, &frame, imu) {
            Ok(r) => {
                if !probabilities.is_null() {
                    std::slice::from_raw_parts_mut(probabilities, classes).copy_from_slice(&r.probabilities);
                }
                if let Some(c) = class_out.as_mut() {
                    *c = r.class as u32;
                }
                ShStatus::Ok
            }
            Err(e) => fail(nn_status(&e), e.to_string()),
        }
    })
}

/// Incremental decoder for the device byte stream.
pub struct ShDecoder {
    inner: PacketDecoder,
    ready: VecDeque<DevicePacket>,
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sh_decoder_new(out: *mut *mut ShDecoder) -> ShStatus {
    if out.is_null() {
        return fail(ShStatus::NullArgument, "out must not be NULL");
    }
    *out = Box::into_raw(Box::new(ShDecoder { inner: PacketDecoder::new(), ready: VecDeque::new() }));
    ShStatus::Ok
}

/// # Safety
/// `decoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sh_decoder_free(decoder: *mut ShDecoder) {
    if !decoder.is_null() {
        drop(Box::from_raw(decoder));
    }
}

/// Appends bytes in any chunking. `ready_out`, if not NULL, receives the
/// number of packets waiting for [`sh_decoder_next`].
///
/// # Safety
/// `decoder` must be a live handle; `data` must point to `len` bytes (it may
/// be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn sh_decoder_feed(decoder: *mut ShDecoder, data: *const u8, len: usize, ready_out: *mut usize) -> ShStatus {
    guard(|| {
        let Some(d) = decoder.as_mut() else {
            return fail(ShStatus::NullArgument, "decoder must not be NULL");
        };
        if data.is_null() && len > 0 {
            return fail(ShStatus::NullArgument, "data must not be NULL");
        }
        if len > 0 {
            let packets = d.inner.feed(std::slice::from_raw_parts(data, len));
            d.ready.extend(packets);
        }
        if let Some(r) = ready_out.as_mut() {
            *r = d.ready.len();
        }
        ShStatus::Ok
    })
}

/// Pops the oldest decoded packet into `out`, or returns `SH_STATUS_EMPTY`.
///
/// # Safety
/// `decoder` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sh_decoder_next(decoder: *mut ShDecoder, out: *mut ShPacket) -> ShStatus {
    let (Some(d), false) = (decoder.as_mut(), out.is_null()) else {
        return fail(ShStatus::NullArgument, "decoder and out must not be NULL");
    };
    match d.ready.pop_front() {
        Some(p) => {
            out.write(ShPacket::from_packet(&p));
            ShStatus::Ok
        }
        None => ShStatus::Empty,
    }
}

/// Corrupt packets rejected (bad CRC, kind or payload) and bytes skipped.
///
/// # Safety
/// `decoder` must be a live handle; either output may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sh_decoder_stats(decoder: *const ShDecoder, rejected_out: *mut usize, dropped_bytes_out: *mut usize) -> ShStatus {
    let Some(d) = decoder.as_ref() else {
        return fail(ShStatus::NullArgument, "decoder must not be NULL");
    };
    if let Some(r) = rejected_out.as_mut() {
        *r = d.inner.errors().len();
    }
    if let Some(b) = dropped_bytes_out.as_mut() {
        *b = d.inner.dropped_bytes();
    }
    ShStatus::Ok
}

/// Wire size of a Frame packet.
#[no_mangle]
pub extern "C" fn sh_frame_packet_len() -> usize {
    smarthand::device::PacketKind::Frame.wire_len()
}

/// Encodes a Frame packet. `written_out` receives the byte count, also when
/// `out` is too small.
///
/// # Safety
/// `codes` must point to `SH_TAXELS` values and `out` to `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sh_encode_frame(
    seq: u32,
    timestamp_us: u64,
    codes: *const u16,
    out: *mut u8,
    cap: usize,
    written_out: *mut usize,
) -> ShStatus {
    guard(|| {
        if codes.is_null() || out.is_null() {
            return fail(ShStatus::NullArgument, "codes and out must not be NULL");
        }
        let frame = match TactileFrame::new(std::slice::from_raw_parts(codes, SH_TAXELS).to_vec(), seq, timestamp_us) {
            Ok(f) => f,
            Err(e) => return fail(ShStatus::InvalidArgument, e.to_string()),
        };
        let bytes = DevicePacket::Frame(frame).encode();
        if let Some(w) = written_out.as_mut() {
            *w = bytes.len();
        }
        if cap < bytes.len() {
            return fail(ShStatus::BufferTooSmall, format!("need {} bytes, got {cap}", bytes.len()));
        }
        std::slice::from_raw_parts_mut(out, bytes.len()).copy_from_slice(&bytes);
        ShStatus::Ok
    })
}
