use std::fmt::Write as _;
use std::io::{IsTerminal, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::frames::{frame_to_text, load_frame, load_rec};
use super::render::render_frame;
use super::{
    resolve_seed, BenchArgs, CalibrateArgs, Cli, CliError, Command, DTypeArg, DeviceArgs, Format, InferArgs,
    ModelArgs, RenderArgs, Report, SimulateReadoutArgs,
};
use crate::device::{
    self, run_session, Classifier, Device, DeviceConfig, DevicePacket, FrameSource, Mode, NnClassifier, PacketKind,
    ReplaySource, ScanSource, Script, SyntheticImu, TimerConfig,
};
use crate::nn::{
    count_macc, plan_memory, reference_graph, reference_graph_with_imu, CompiledModel, DType, InferenceContext,
    InferenceResult, ModelGraph, Q15Context, Q15Model, WeightStore,
};
use crate::readout::{ghost_error, scan, ScanMode, Scenario};
use crate::tactile::imu::{ComplementaryFilter, FusionInput};
use crate::tactile::{
    is_valid_frame, load_hand_mask, save_recording, CalibrationMap, HandMask, ImuSample, Recording, TactileFrame,
    ADC_MAX, COLS, ROWS, TAXELS,
};

/// Targets the benchmark is compared against (MCU deployment figures).
const BUDGET_MACC: f64 = 4.7e6;
const BUDGET_FLASH_BYTES: u64 = 177 * 1024;
const BUDGET_RAM_BYTES: u64 = 52 * 1024;
const BUDGET_LATENCY_NS: f64 = 100e6;

pub(super) fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<Report, CliError> {
    let seed = resolve_seed(cli.seed)?;
    match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::SimulateReadout(a) => simulate_readout(a),
        Command::Device(a) => device_session(a, seed),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a, seed),
        Command::Render(a) => render(a, cli.format, out),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_mask(path: Option<&Path>) -> Result<HandMask, CliError> {
    match path {
        Some(p) => load_hand_mask(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => Ok(HandMask::canonical()),
    }
}

fn calibrate(a: CalibrateArgs) -> Result<Report, CliError> {
    let mut map = CalibrationMap::from_thresholds(vec![0; TAXELS], 0)?;
    for path in &a.recordings {
        map.absorb(load_rec(path)?.frames());
    }
    if map.source_frame_count() == 0 {
        return Err(CliError::Data("recordings hold no frames".into()));
    }
    map.save(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let t = map.thresholds();
    let min = *t.iter().min().expect("1024 taxels");
    let max = *t.iter().max().expect("1024 taxels");
    let mean = t.iter().map(|&v| v as f64).sum::<f64>() / TAXELS as f64;
    let human = format!(
        "{} frames from {} recordings -> {}\nthresholds: min {min}  mean {mean:.2}  max {max}\n",
        map.source_frame_count(),
        a.recordings.len(),
        a.out.display()
    );
    let json = json!({
        "command": "calibrate",
        "recordings": a.recordings.len(),
        "frames": map.source_frame_count(),
        "out": a.out.display().to_string(),
        "thresholds": {"min": min, "mean": mean, "max": max},
    });
    Ok(Report { json, human })
}

fn simulate_readout(a: SimulateReadoutArgs) -> Result<Report, CliError> {
    let sc = Scenario::parse(&read_text(&a.scenario)?)?;
    let mask = load_mask(a.mask.as_deref())?;
    let grid = sc.grid()?;
    let reference = scan(&grid, &sc.adc, ScanMode::Isolated)?;
    let frame = if a.mode == ScanMode::Isolated { reference.clone() } else { scan(&grid, &sc.adc, a.mode)? };
    let mean = ghost_error(&reference, &frame, &mask);
    // largest deviation among untouched masked taxels
    let pressed: Vec<(usize, usize)> = sc.presses.iter().map(|p| (p.row, p.col)).collect();
    let mut worst = (0usize, 0usize, 0i32);
    for r in 0..ROWS {
        for c in 0..COLS {
            if !mask.is_active(r, c) || pressed.contains(&(r, c)) {
                continue;
            }
            let d = frame.get(r, c) as i32 - reference.get(r, c) as i32;
            if d.abs() > worst.2.abs() {
                worst = (r, c, d);
            }
        }
    }
    if let Some(out) = &a.out {
        let res = if out.extension().is_some_and(|e| e == "shrc") {
            let rec = Recording::new(0, 0, 0, vec![frame.clone()], vec![])?;
            save_recording(&rec, out).map_err(CliError::from)
        } else {
            std::fs::write(out, frame_to_text(&frame)).map_err(|e| CliError::io(out, e))
        };
        res?;
    }
    let mode = match a.mode {
        ScanMode::Isolated => "isolated",
        ScanMode::NonIsolated => "nonisolated",
    };
    let mut human = format!(
        "{mode} scan of {} presses\nmean ghost error over {} masked taxels: {mean:.3} LSB\n",
        sc.presses.len(),
        mask.count()
    );
    if worst.2 != 0 {
        let _ = writeln!(human, "largest ghost: {:+} LSB at ({}, {})", worst.2, worst.0, worst.1);
    }
    let json = json!({
        "command": "simulate-readout",
        "mode": mode,
        "presses": sc.presses.len(),
        "ghost_error_lsb": mean,
        "max_ghost": {"row": worst.0, "col": worst.1, "lsb": worst.2},
        "out": a.out.as_ref().map(|p| p.display().to_string()),
    });
    Ok(Report { json, human })
}

fn graph_from_spec(spec: &str) -> Result<ModelGraph, CliError> {
    Ok(match spec {
        "reference" => reference_graph(),
        "reference-imu" | "reference_imu" => reference_graph_with_imu(),
        path => ModelGraph::parse(&read_text(Path::new(path))?)?,
    })
}

/// Graph named or read from `spec`, or the reference graph the weights fit.
fn resolve_graph(spec: Option<&str>, weights: &WeightStore) -> Result<ModelGraph, CliError> {
    let graph = match spec {
        Some(spec) => graph_from_spec(spec)?,
        None => {
            let plain = reference_graph();
            if weights.validate(&plain).is_ok() {
                return Ok(plain);
            }
            reference_graph_with_imu()
        }
    };
    weights.validate(&graph)?;
    Ok(graph)
}

fn graph_label(spec: Option<&str>, graph: &ModelGraph) -> String {
    spec.map(str::to_string).unwrap_or_else(|| if graph.uses_imu() { "reference-imu" } else { "reference" }.into())
}

fn load_model(m: &ModelArgs) -> Result<(WeightStore, ModelGraph), CliError> {
    let path = m.weights.as_ref().ok_or_else(|| CliError::Usage("--weights is required".into()))?;
    let w = WeightStore::load(path).map_err(|e| CliError::from(e).with_path(path))?;
    let g = resolve_graph(m.graph.as_deref(), &w)?;
    Ok((w, g))
}

impl CliError {
    fn with_path(self, path: &Path) -> Self {
        match self {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

fn result_json(seq: u32, ts: u64, r: &InferenceResult) -> Value {
    json!({"seq": seq, "timestamp_us": ts, "class": r.class, "top3": r.top3, "probabilities": r.probabilities})
}

fn infer(a: InferArgs) -> Result<Report, CliError> {
    let (w, graph) = load_model(&a.model)?;
    let label = graph_label(a.model.graph.as_deref(), &graph);
    let fixed_imu = a.imu;
    let calib = match &a.calibration {
        Some(p) => Some(CalibrationMap::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let (frames, imu_log): (Vec<TactileFrame>, Vec<ImuSample>) = match (&a.frame, &a.recording) {
        (Some(p), _) => (vec![load_frame(p)?], vec![]),
        (None, Some(p)) => {
            let rec = load_rec(p)?;
            let imu = rec.imu().to_vec();
            (rec.into_frames(), imu)
        }
        (None, None) => unreachable!("clap requires an input"),
    };
    if graph.uses_imu() && fixed_imu.is_none() && imu_log.is_empty() {
        return Err(CliError::Usage("this model fuses IMU data: pass --imu a,b,c or a recording with IMU samples".into()));
    }
    let model = CompiledModel::folded(graph, &w)?;
    let mut ctx = InferenceContext::new(&model);
    let mut filter = ComplementaryFilter::default();
    let mut next_imu = 0;
    let mut latest: Option<ImuSample> = None;
    let mut rows = Vec::new();
    let mut skipped = 0;
    let mut human = String::new();
    for f in &frames {
        // replay IMU samples up to the frame's time through the filter
        while next_imu < imu_log.len() && imu_log[next_imu].timestamp_us <= f.timestamp_us {
            filter.update(&imu_log[next_imu]);
            latest = Some(imu_log[next_imu]);
            next_imu += 1;
        }
        if let Some(c) = &calib {
            if !is_valid_frame(f, c, 1) {
                skipped += 1;
                continue;
            }
        }
        let imu = if !model.graph().uses_imu() {
            None
        } else if fixed_imu.is_some() {
            fixed_imu
        } else {
            let s = latest.unwrap_or(imu_log[0]);
            Some(match a.model.fusion {
                FusionInput::Euler => filter.angles().unwrap_or_else(|| s.tilt_euler()),
                FusionInput::Accel => s.accel_g(),
                FusionInput::Gyro => s.gyro_rad_s(),
            })
        };
        let r = ctx.infer(&model, f, imu)?;
        let _ = writeln!(
            human,
            "frame {:>6}  class {:>2}  top3 {:?}  p={:.4}",
            f.seq, r.class, r.top3, r.probabilities[r.top3[0]]
        );
        rows.push(result_json(f.seq, f.timestamp_us, &r));
    }
    if skipped > 0 {
        let _ = writeln!(human, "{skipped} frames below the calibration thresholds skipped");
    }
    let json = json!({"command": "infer", "graph": label, "results": rows, "skipped_invalid": skipped});
    Ok(Report { json, human })
}

/// Gaussian pressure blobs on a noisy baseline.
pub(crate) fn synthetic_frames(seed: u64, n: usize) -> Vec<TactileFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut v: Vec<f32> = (0..TAXELS).map(|_| rng.gen_range(20.0..100.0)).collect();
            for _ in 0..rng.gen_range(1..6) {
                let (cy, cx) = (rng.gen_range(0.0..32.0f32), rng.gen_range(0.0..32.0f32));
                let sigma = rng.gen_range(1.0..4.0f32);
                let amp = rng.gen_range(500.0..3500.0f32);
                for (k, x) in v.iter_mut().enumerate() {
                    let (r, c) = ((k / COLS) as f32, (k % COLS) as f32);
                    *x += amp * (-((r - cy).powi(2) + (c - cx).powi(2)) / (2.0 * sigma * sigma)).exp();
                }
            }
            let codes = v.into_iter().map(|x| x.round().clamp(0.0, ADC_MAX as f32) as u16).collect();
            TactileFrame::new(codes, i as u32, 0).expect("clamped codes")
        })
        .collect()
}

fn bench(a: BenchArgs, seed: u64) -> Result<Report, CliError> {
    if a.iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let (w, graph) = match &a.model.weights {
        Some(_) => load_model(&a.model)?,
        None => {
            let g = match a.model.graph.as_deref() {
                Some(spec) => graph_from_spec(spec)?,
                None => reference_graph(),
            };
            (WeightStore::random_init(&g, seed), g)
        }
    };
    let label = graph_label(a.model.graph.as_deref(), &graph);
    let macc = count_macc(&graph);
    let frames = synthetic_frames(seed, 8);
    let imu = graph.uses_imu().then_some([0.1f32, -0.2, 0.0]);
    let (dtype, params_bytes, arena, ns) = match a.dtype {
        DTypeArg::F32 => {
            let model = CompiledModel::folded(graph.clone(), &w)?;
            let mut ctx = InferenceContext::new(&model);
            ctx.infer(&model, &frames[0], imu)?;
            let start = Instant::now();
            for i in 0..a.iters {
                std::hint::black_box(ctx.infer(&model, &frames[i as usize % frames.len()], imu)?);
            }
            let ns = start.elapsed().as_nanos() as f64 / a.iters as f64;
            ("f32", w.to_bytes().len() as u64, plan_memory(&graph, DType::F32).peak_bytes, ns)
        }
        DTypeArg::Q15 => {
            let samples: Vec<_> = frames.iter().map(|f| (f.clone(), imu)).collect();
            let q = Q15Model::calibrate(&graph, &w, &samples)?;
            let mut ctx = Q15Context::new(&q);
            ctx.infer(&q, &frames[0], imu)?;
            let start = Instant::now();
            for i in 0..a.iters {
                std::hint::black_box(ctx.infer(&q, &frames[i as usize % frames.len()], imu)?);
            }
            let ns = start.elapsed().as_nanos() as f64 / a.iters as f64;
            ("q15", q.weight_bytes() as u64, q.plan().peak_bytes, ns)
        }
    };
    let macc_per_s = macc as f64 / (ns * 1e-9);
    let mut human = format!("{label} graph, {dtype}, {} iterations\n", a.iters);
    let _ = writeln!(human, "{:<22}{:>16}{:>18}", "", "measured", "reference budget");
    let _ = writeln!(human, "{:<22}{:>16}{:>18}", "MACC / inference", macc, "4.7 M");
    let _ = writeln!(human, "{:<22}{:>16}{:>18}", "parameter bytes", params_bytes, BUDGET_FLASH_BYTES);
    let _ = writeln!(human, "{:<22}{:>16}{:>18}", "activation arena B", arena, BUDGET_RAM_BYTES);
    let _ = writeln!(human, "{:<22}{:>16.0}{:>18.0}", "ns / inference", ns, BUDGET_LATENCY_NS);
    let _ = writeln!(human, "{:<22}{:>16.3e}{:>18.3e}", "MACC / s", macc_per_s, BUDGET_MACC / (BUDGET_LATENCY_NS * 1e-9));
    let json = json!({
        "command": "bench",
        "graph": label,
        "dtype": dtype,
        "iters": a.iters,
        "macc": macc,
        "params_bytes": params_bytes,
        "arena_peak_bytes": arena,
        "ns_per_inference": ns,
        "macc_per_s": macc_per_s,
        "reference_budget": {
            "macc": BUDGET_MACC,
            "params_bytes": BUDGET_FLASH_BYTES,
            "arena_bytes": BUDGET_RAM_BYTES,
            "ns_per_inference": BUDGET_LATENCY_NS,
        },
    });
    Ok(Report { json, human })
}

fn frame_source(a: &DeviceArgs, seed: u64) -> Result<Box<dyn FrameSource>, CliError> {
    let Some(path) = &a.source else {
        return Ok(Box::new(ScanSource::new(&Scenario::default(), a.scan_mode, a.noise, seed)?));
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(b"SHRC") {
        let rec = Recording::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok(Box::new(ReplaySource::new(rec.into_frames())));
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{}: not a scenario", path.display())))?;
    let sc = Scenario::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Box::new(ScanSource::new(&sc, a.scan_mode, a.noise, seed)?))
}

fn kind_name(k: PacketKind) -> &'static str {
    match k {
        PacketKind::Frame => "frame",
        PacketKind::Imu => "imu",
        PacketKind::Inference => "inference",
        PacketKind::Ack => "ack",
        PacketKind::Dump => "dump",
    }
}

fn device_session(a: DeviceArgs, seed: u64) -> Result<Report, CliError> {
    let timers = TimerConfig { collect_hz: a.collect_hz, viz_hz: a.viz_hz, infer_hz: a.infer_hz, ..Default::default() };
    let config = DeviceConfig { mode: a.mode, timers, collect_target: a.frames };
    let classifier: Option<Box<dyn Classifier>> = if a.mode == Mode::Infer {
        let (w, g) = load_model(&a.model)?;
        Some(Box::new(NnClassifier::new(g, &w, a.model.fusion)?))
    } else {
        None
    };
    if a.recording.is_some() && a.mode != Mode::Collect {
        return Err(CliError::Usage("--recording needs --mode collect".into()));
    }
    let mut dev = Device::new(config, Box::new(SyntheticImu::new(seed)), classifier)?;
    let mut source = frame_source(&a, seed)?;
    let script = match &a.script {
        Some(p) => Script::parse(&read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => Script::parse("0 r").expect("static script"),
    };
    let duration_us = match a.duration_ms {
        Some(ms) => ms * 1000,
        None if a.mode == Mode::Collect => {
            let start = script.commands.first().map_or(0, |c| c.0);
            start + (dev.config().collect_target as u64 * device::US_PER_S).div_ceil(a.collect_hz.max(1) as u64)
        }
        None => device::US_PER_S,
    };
    let transcript = run_session(&mut dev, &script, source.as_mut(), duration_us)?;
    let wire = transcript.wire_bytes();
    if let Some(out) = &a.out {
        std::fs::write(out, &wire).map_err(|e| CliError::io(out, e))?;
    }
    let mut link = a
        .transport
        .open(|addr| eprintln!("device stream on {addr}"))
        .map_err(|e| CliError::Data(format!("transport: {e}")))?;
    link.write_all(&wire).and_then(|_| link.flush()).map_err(|e| CliError::Data(format!("transport: {e}")))?;

    let mut recorded = None;
    if let Some(path) = &a.recording {
        let frames = device::dumped_frames(transcript.packets.iter().map(|e| &e.packet));
        let imu: Vec<ImuSample> = transcript
            .packets
            .iter()
            .filter_map(|e| match &e.packet {
                DevicePacket::Imu { sample, .. } => Some(*sample),
                _ => None,
            })
            .collect();
        let rate = u16::try_from(a.collect_hz).map_err(|_| CliError::Usage("--collect-hz above 65535".into()))?;
        let rec = Recording::new(a.label, a.session, rate, frames, imu)?;
        save_recording(&rec, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        recorded = Some(rec.frames().len());
    }

    let kinds = [PacketKind::Frame, PacketKind::Imu, PacketKind::Inference, PacketKind::Ack, PacketKind::Dump];
    let counts: serde_json::Map<String, Value> =
        kinds.iter().map(|&k| (kind_name(k).to_string(), json!(transcript.count(k)))).collect();
    let states: Vec<Value> =
        transcript.states.iter().map(|(t, s)| json!({"t_us": t, "state": s.name()})).collect();
    let inferences: Vec<Value> = transcript
        .packets
        .iter()
        .filter_map(|e| match &e.packet {
            DevicePacket::Inference { seq, class, top3, .. } => {
                Some(json!({"t_us": e.time_us, "seq": seq, "class": class, "top3": top3}))
            }
            _ => None,
        })
        .collect();
    let mut human = format!("{:?} session, {:.3} s simulated\n", a.mode, duration_us as f64 / 1e6);
    for k in kinds {
        let _ = writeln!(human, "  {:<10}{:>6} packets", kind_name(k), transcript.count(k));
    }
    for (t, s) in &transcript.states {
        let _ = writeln!(human, "  {:>12.6} s  {}", *t as f64 / 1e6, s.name());
    }
    let _ = writeln!(human, "  {} bytes on the wire", wire.len());
    if let Some(n) = recorded {
        let _ = writeln!(human, "  recording of {n} frames written");
    }
    let json = json!({
        "command": "device",
        "mode": format!("{:?}", a.mode).to_lowercase(),
        "duration_us": duration_us,
        "packets": counts,
        "states": states,
        "final_state": transcript.final_state.name(),
        "inferences": inferences,
        "wire_bytes": wire.len(),
        "recording_frames": recorded,
    });
    Ok(Report { json, human })
}

fn render(a: RenderArgs, format: Format, out: &mut dyn Write) -> Result<Report, CliError> {
    let mask = load_mask(a.mask.as_deref())?;
    let frames = match (&a.frame, &a.recording) {
        (Some(p), _) => vec![load_frame(p)?],
        (None, Some(p)) => load_rec(p)?.into_frames(),
        (None, None) => unreachable!("clap requires an input"),
    };
    if !(a.fps.is_finite() && a.fps >= 0.0) {
        return Err(CliError::Usage(format!("--fps {} must be >= 0", a.fps)));
    }
    let rendered: Vec<Vec<String>> = frames.iter().map(|f| render_frame(f, &mask)).collect();
    let mut text = String::new();
    for (f, lines) in frames.iter().zip(&rendered) {
        let _ = writeln!(text, "frame {} t={} us", f.seq, f.timestamp_us);
        for l in lines {
            let _ = writeln!(text, "{l}");
        }
    }
    if let Some(path) = &a.out {
        std::fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    }
    let animate = a.fps > 0.0 && a.out.is_none() && format == Format::Human && std::io::stdout().is_terminal();
    let human = if animate {
        let pause = Duration::from_secs_f64(1.0 / a.fps);
        for (f, lines) in frames.iter().zip(&rendered) {
            let _ = write!(out, "\x1b[H\x1b[2Jframe {} t={} us\n{}\n", f.seq, f.timestamp_us, lines.join("\n"));
            let _ = out.flush();
            std::thread::sleep(pause);
        }
        String::new()
    } else if a.out.is_some() {
        format!("{} frames rendered to {}\n", frames.len(), a.out.as_ref().expect("checked").display())
    } else {
        text
    };
    let json = json!({
        "command": "render",
        "frames": frames.iter().zip(&rendered).map(|(f, l)| json!({"seq": f.seq, "timestamp_us": f.timestamp_us, "lines": l})).collect::<Vec<_>>(),
    });
    Ok(Report { json, human })
}
