//! Firmware simulation.
//!
//! The device idles until it receives `r`. It then runs the configured mode
//! off a periodic timer until `p` arrives or, when collecting, until the
//! frame buffer reaches its target:
//!
//! * collect: frames are buffered at 100 Hz, IMU samples are streamed as
//!   they arrive, and the whole buffer is dumped when collection stops;
//! * visualize: one frame packet at 10 Hz;
//! * infer: one frame packet plus one inference packet at 8 Hz.
//!
//! Time is a virtual microsecond clock owned by the caller. Nothing here
//! reads the wall clock.

mod classifier;
mod packet;
mod session;
mod source;
pub mod transport;

use std::collections::VecDeque;
use std::io;

pub use classifier::{Classifier, ImuView, NnClassifier};
pub use packet::{decode_packet, DecodeError, DevicePacket, PacketDecoder, PacketKind, SYNC};
pub use session::{run_session, Script, ScriptCommand, Transcript};
pub use source::{FrameSource, ImuSource, ReplayImu, ReplaySource, ScanSource, StaticSource, SyntheticImu};

use crate::tactile::imu::ComplementaryFilter;
use crate::tactile::{ImuSample, TactileFrame, CLASS_COUNT};

pub const CMD_START: u8 = b'r';
pub const CMD_STOP: u8 = b'p';
pub const SDRAM_CAPACITY: usize = 4096;
pub const US_PER_S: u64 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("frame source exhausted after {0} frames")]
    FrameSourceExhausted(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("clock moved backwards: {now_us} us after {clock_us} us")]
    ClockBackwards { now_us: u64, clock_us: u64 },
    #[error("classifier returned {0} probabilities, expected {CLASS_COUNT}")]
    ClassCount(usize),
    #[error(transparent)]
    Model(#[from] crate::nn::Error),
    #[error(transparent)]
    Readout(#[from] crate::readout::Error),
    #[error(transparent)]
    Tactile(#[from] crate::tactile::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceState {
    Idle = 0,
    Collecting = 1,
    Visualizing = 2,
    Inferring = 3,
}

impl DeviceState {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => DeviceState::Idle,
            1 => DeviceState::Collecting,
            2 => DeviceState::Visualizing,
            3 => DeviceState::Inferring,
            _ => return None,
        })
    }

    pub fn is_active(self) -> bool {
        self != DeviceState::Idle
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviceState::Idle => "idle",
            DeviceState::Collecting => "collecting",
            DeviceState::Visualizing => "visualizing",
            DeviceState::Inferring => "inferring",
        }
    }
}

/// The active mode entered on `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Collect,
    Visualize,
    Infer,
}

impl Mode {
    pub fn active_state(self) -> DeviceState {
        match self {
            Mode::Collect => DeviceState::Collecting,
            Mode::Visualize => DeviceState::Visualizing,
            Mode::Infer => DeviceState::Inferring,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collect" => Ok(Mode::Collect),
            "viz" | "visualize" => Ok(Mode::Visualize),
            "infer" => Ok(Mode::Infer),
            other => Err(format!("unknown mode {other:?} (collect|viz|infer)")),
        }
    }
}

/// Command byte → next state. `r` starts the configured mode from idle, `p`
/// stops any active mode, everything else is ignored.
pub fn handle_command(state: DeviceState, mode: Mode, byte: u8) -> DeviceState {
    match (state, byte) {
        (DeviceState::Idle, CMD_START) => mode.active_state(),
        (s, CMD_STOP) if s.is_active() => DeviceState::Idle,
        (s, _) => s,
    }
}

/// Timer rates in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerConfig {
    pub collect_hz: u32,
    pub viz_hz: u32,
    pub infer_hz: u32,
    pub imu_hz: u32,
}

impl Default for TimerConfig {
    fn default() -> Self {
        TimerConfig { collect_hz: 100, viz_hz: 10, infer_hz: 8, imu_hz: 100 }
    }
}

impl TimerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, hz) in
            [("collect", self.collect_hz), ("viz", self.viz_hz), ("infer", self.infer_hz), ("imu", self.imu_hz)]
        {
            if hz == 0 {
                return Err(Error::InvalidConfig(format!("{name} rate must be > 0")));
            }
            if hz as u64 > US_PER_S {
                return Err(Error::InvalidConfig(format!("{name} rate {hz} Hz exceeds the 1 us clock")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, mode: Mode) -> u32 {
        match mode {
            Mode::Collect => self.collect_hz,
            Mode::Visualize => self.viz_hz,
            Mode::Infer => self.infer_hz,
        }
    }
}

/// Fires at `start + ceil(k·1e6/rate)` µs for k = 1, 2, …; computing each
/// deadline from k rather than accumulating a period avoids drift, so
/// exactly `floor(d·rate)` events fall in `(start, start + d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicTimer {
    start_us: u64,
    rate_hz: u32,
    fired: u64,
}

impl PeriodicTimer {
    pub fn new(start_us: u64, rate_hz: u32) -> Self {
        assert!(rate_hz > 0, "timer rate must be positive");
        PeriodicTimer { start_us, rate_hz, fired: 0 }
    }

    pub fn next_due(&self) -> u64 {
        let k = self.fired + 1;
        self.start_us + (k * US_PER_S).div_ceil(self.rate_hz as u64)
    }

    pub fn fire(&mut self) -> u64 {
        let t = self.next_due();
        self.fired += 1;
        t
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }
}

/// Bounded frame store standing in for the board's external SDRAM.
#[derive(Debug, Clone)]
pub struct SdramBuffer {
    frames: Vec<TactileFrame>,
    capacity: usize,
}

impl Default for SdramBuffer {
    fn default() -> Self {
        Self::new(SDRAM_CAPACITY)
    }
}

impl SdramBuffer {
    pub fn new(capacity: usize) -> Self {
        SdramBuffer { frames: Vec::with_capacity(capacity.min(SDRAM_CAPACITY)), capacity: capacity.min(SDRAM_CAPACITY) }
    }

    /// Returns the frame back if the buffer is full.
    pub fn push(&mut self, frame: TactileFrame) -> std::result::Result<(), TactileFrame> {
        if self.frames.len() >= self.capacity {
            return Err(frame);
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn used(&self) -> usize {
        self.frames.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() >= self.capacity
    }

    pub fn drain(&mut self) -> Vec<TactileFrame> {
        std::mem::take(&mut self.frames)
    }
}

#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub mode: Mode,
    pub timers: TimerConfig,
    /// Frames per collection run; clamped to the buffer capacity.
    pub collect_target: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig { mode: Mode::Visualize, timers: TimerConfig::default(), collect_target: SDRAM_CAPACITY }
    }
}

/// A packet with the simulated time it left the device.
#[derive(Debug, Clone, PartialEq)]
pub struct Emitted {
    pub time_us: u64,
    pub packet: DevicePacket,
}

enum Due {
    Imu(u64),
    Mode(u64),
}

pub struct Device {
    config: DeviceConfig,
    state: DeviceState,
    clock_us: u64,
    mode_timer: Option<PeriodicTimer>,
    imu_timer: PeriodicTimer,
    imu: Box<dyn ImuSource>,
    filter: ComplementaryFilter,
    latest_imu: ImuSample,
    sdram: SdramBuffer,
    classifier: Option<Box<dyn Classifier>>,
    frame_seq: u32,
    imu_seq: u32,
    ack_seq: u32,
    state_log: Vec<(u64, DeviceState)>,
}

impl Device {
    /// Infer mode needs a classifier; the other modes ignore it.
    pub fn new(mut config: DeviceConfig, imu: Box<dyn ImuSource>, classifier: Option<Box<dyn Classifier>>) -> Result<Self> {
        config.timers.validate()?;
        if config.collect_target == 0 {
            return Err(Error::InvalidConfig("collect target must be at least 1".into()));
        }
        config.collect_target = config.collect_target.min(SDRAM_CAPACITY);
        if config.mode == Mode::Infer && classifier.is_none() {
            return Err(Error::InvalidConfig("infer mode needs a classifier".into()));
        }
        let imu_timer = PeriodicTimer::new(0, config.timers.imu_hz);
        let sdram = SdramBuffer::new(config.collect_target);
        Ok(Device {
            config,
            state: DeviceState::Idle,
            clock_us: 0,
            mode_timer: None,
            imu_timer,
            imu,
            filter: ComplementaryFilter::default(),
            latest_imu: ImuSample::default(),
            sdram,
            classifier,
            frame_seq: 0,
            imu_seq: 0,
            ack_seq: 0,
            state_log: vec![(0, DeviceState::Idle)],
        })
    }

    pub fn state(&self) -> DeviceState {
        self.state
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    pub fn buffered(&self) -> usize {
        self.sdram.used()
    }

    /// `(time, state)` at start-up and after every transition.
    pub fn state_log(&self) -> &[(u64, DeviceState)] {
        &self.state_log
    }

    /// Runs every timer event due at or before `now_us`, in time order.
    pub fn tick(&mut self, source: &mut dyn FrameSource, now_us: u64) -> Result<Vec<Emitted>> {
        if now_us < self.clock_us {
            return Err(Error::ClockBackwards { now_us, clock_us: self.clock_us });
        }
        let mut out = Vec::new();
        loop {
            let imu_t = self.imu_timer.next_due();
            let mode_t = self.mode_timer.map(|t| t.next_due());
            // the IMU wins ties so a frame sees the sample taken at its instant
            let next = match mode_t {
                Some(m) if m < imu_t => Due::Mode(m),
                _ => Due::Imu(imu_t),
            };
            match next {
                Due::Imu(t) if t <= now_us => {
                    self.imu_timer.fire();
                    self.imu_event(t, &mut out);
                }
                Due::Mode(t) if t <= now_us => {
                    self.mode_timer.as_mut().expect("mode timer").fire();
                    self.mode_event(source, t, &mut out)?;
                }
                _ => break,
            }
        }
        self.clock_us = now_us;
        Ok(out)
    }

    /// Delivers a command byte at `now_us` after running the timer events due
    /// by then. Accepted `r`/`p` commands are acknowledged.
    pub fn command(&mut self, source: &mut dyn FrameSource, byte: u8, now_us: u64) -> Result<Vec<Emitted>> {
        let mut out = self.tick(source, now_us)?;
        let next = handle_command(self.state, self.config.mode, byte);
        if next == self.state {
            return Ok(out);
        }
        let was = self.state;
        self.set_state(next, now_us);
        if next.is_active() {
            self.mode_timer = Some(PeriodicTimer::new(now_us, self.config.timers.rate(self.config.mode)));
        } else {
            self.mode_timer = None;
        }
        let seq = self.ack_seq;
        self.ack_seq = self.ack_seq.wrapping_add(1);
        out.push(Emitted { time_us: now_us, packet: DevicePacket::Ack { seq, command: byte, state: next } });
        // a stopped collection still ships whatever it buffered
        if was == DeviceState::Collecting {
            self.dump(now_us, &mut out);
        }
        Ok(out)
    }

    fn set_state(&mut self, s: DeviceState, t: u64) {
        self.state = s;
        self.state_log.push((t, s));
    }

    fn imu_event(&mut self, t: u64, out: &mut Vec<Emitted>) {
        let mut sample = self.imu.sample(t);
        sample.timestamp_us = t;
        self.filter.update(&sample);
        self.latest_imu = sample;
        if self.state == DeviceState::Collecting {
            let seq = self.imu_seq;
            self.imu_seq = self.imu_seq.wrapping_add(1);
            out.push(Emitted { time_us: t, packet: DevicePacket::Imu { seq, sample } });
        }
    }

    fn next_frame(&mut self, source: &mut dyn FrameSource, t: u64) -> Result<TactileFrame> {
        let frame = source.next_frame(t)?.with_meta(self.frame_seq, t);
        self.frame_seq = self.frame_seq.wrapping_add(1);
        Ok(frame)
    }

    fn mode_event(&mut self, source: &mut dyn FrameSource, t: u64, out: &mut Vec<Emitted>) -> Result<()> {
        match self.state {
            DeviceState::Idle => {}
            DeviceState::Collecting => {
                let frame = self.next_frame(source, t)?;
                self.sdram.push(frame).expect("collection stops before the buffer overflows");
                if self.sdram.is_full() {
                    self.mode_timer = None;
                    self.set_state(DeviceState::Idle, t);
                    self.dump(t, out);
                }
            }
            DeviceState::Visualizing => {
                let frame = self.next_frame(source, t)?;
                out.push(Emitted { time_us: t, packet: DevicePacket::Frame(frame) });
            }
            DeviceState::Inferring => {
                let frame = self.next_frame(source, t)?;
                let view = ImuView { latest: self.latest_imu, angles: self.filter.angles() };
                let classifier = self.classifier.as_mut().expect("checked in Device::new");
                let r = classifier.classify(&frame, &view)?;
                let probabilities: [f32; CLASS_COUNT] =
                    r.probabilities.as_slice().try_into().map_err(|_| Error::ClassCount(r.probabilities.len()))?;
                let seq = frame.seq;
                out.push(Emitted { time_us: t, packet: DevicePacket::Frame(frame) });
                out.push(Emitted {
                    time_us: t,
                    packet: DevicePacket::Inference {
                        seq,
                        class: r.class as u8,
                        top3: r.top3.map(|c| c as u8),
                        probabilities,
                    },
                });
            }
        }
        Ok(())
    }

    fn dump(&mut self, t: u64, out: &mut Vec<Emitted>) {
        let frames = self.sdram.drain();
        let total = frames.len() as u16;
        out.extend(frames.into_iter().enumerate().map(|(i, frame)| Emitted {
            time_us: t,
            packet: DevicePacket::Dump { index: i as u16, total, frame },
        }));
    }
}

/// Frames in dump order from a packet list, for rebuilding a recording.
pub fn dumped_frames<'a>(packets: impl IntoIterator<Item = &'a DevicePacket>) -> Vec<TactileFrame> {
    let mut q: VecDeque<TactileFrame> = VecDeque::new();
    for p in packets {
        if let DevicePacket::Dump { frame, .. } = p {
            q.push_back(frame.clone());
        }
    }
    q.into()
}
