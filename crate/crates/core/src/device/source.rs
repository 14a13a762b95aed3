use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Error, Result};
use crate::readout::{scan, Scenario, ScanMode};
use crate::tactile::imu::{ACCEL_LSB_PER_G, GYRO_LSB_PER_DPS};
use crate::tactile::{ImuSample, TactileFrame, ADC_MAX};

/// Where the device's ADC readings come from. The device restamps sequence
/// number and timestamp, so sources need not set them.
pub trait FrameSource {
    fn next_frame(&mut self, now_us: u64) -> Result<TactileFrame>;
}

/// The same frame forever.
#[derive(Debug, Clone)]
pub struct StaticSource(TactileFrame);

impl StaticSource {
    pub fn new(frame: TactileFrame) -> Self {
        StaticSource(frame)
    }
}

impl FrameSource for StaticSource {
    fn next_frame(&mut self, _now_us: u64) -> Result<TactileFrame> {
        Ok(self.0.clone())
    }
}

/// Plays back a finite list of frames once.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    frames: Vec<TactileFrame>,
    next: usize,
}

impl ReplaySource {
    pub fn new(frames: Vec<TactileFrame>) -> Self {
        ReplaySource { frames, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.frames.len() - self.next
    }
}

impl FrameSource for ReplaySource {
    fn next_frame(&mut self, _now_us: u64) -> Result<TactileFrame> {
        let f = self.frames.get(self.next).cloned().ok_or(Error::FrameSourceExhausted(self.frames.len()))?;
        self.next += 1;
        Ok(f)
    }
}

/// Scans a readout scenario once and replays the result with optional
/// uniform ADC noise of up to `noise_lsb` codes.
#[derive(Debug, Clone)]
pub struct ScanSource {
    base: TactileFrame,
    noise_lsb: u16,
    rng: ChaCha8Rng,
}

impl ScanSource {
    pub fn new(scenario: &Scenario, mode: ScanMode, noise_lsb: u16, seed: u64) -> Result<Self> {
        let base = scan(&scenario.grid()?, &scenario.adc, mode)?;
        Ok(ScanSource { base, noise_lsb, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn base(&self) -> &TactileFrame {
        &self.base
    }
}

impl FrameSource for ScanSource {
    fn next_frame(&mut self, _now_us: u64) -> Result<TactileFrame> {
        if self.noise_lsb == 0 {
            return Ok(self.base.clone());
        }
        let n = self.noise_lsb as i32;
        let codes = self
            .base
            .values()
            .iter()
            .map(|&c| (c as i32 + self.rng.gen_range(-n..=n)).clamp(0, ADC_MAX as i32) as u16)
            .collect();
        Ok(TactileFrame::new(codes, 0, 0)?)
    }
}

pub trait ImuSource {
    fn sample(&mut self, now_us: u64) -> ImuSample;
}

/// A hand slowly rocking about two axes with sensor noise. The gyro reports
/// the analytic derivative of the same motion, so a fusion filter tracks it.
#[derive(Debug, Clone)]
pub struct SyntheticImu {
    rng: ChaCha8Rng,
    roll_amp: f32,
    pitch_amp: f32,
    roll_hz: f32,
    pitch_hz: f32,
}

impl SyntheticImu {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SyntheticImu {
            roll_amp: rng.gen_range(0.1..0.6),
            pitch_amp: rng.gen_range(0.1..0.6),
            roll_hz: rng.gen_range(0.05..0.5),
            pitch_hz: rng.gen_range(0.05..0.5),
            rng,
        }
    }
}

impl ImuSource for SyntheticImu {
    fn sample(&mut self, now_us: u64) -> ImuSample {
        use std::f32::consts::TAU;
        let t = now_us as f32 * 1e-6;
        let (wr, wp) = (TAU * self.roll_hz, TAU * self.pitch_hz);
        let roll = self.roll_amp * (wr * t).sin();
        let pitch = self.pitch_amp * (wp * t).sin();
        let droll = self.roll_amp * wr * (wr * t).cos();
        let dpitch = self.pitch_amp * wp * (wp * t).cos();
        // gravity in the sensor frame for the given roll/pitch
        let g = [-pitch.sin(), roll.sin() * pitch.cos(), roll.cos() * pitch.cos()];
        let mut noise = |scale: f32| self.rng.gen_range(-scale..scale);
        let accel = g.map(|a| ((a + noise(0.01)) * ACCEL_LSB_PER_G).round().clamp(-32768.0, 32767.0) as i16);
        let rates = [droll, dpitch, 0.0];
        let gyro = rates.map(|w| ((w.to_degrees() + noise(0.2)) * GYRO_LSB_PER_DPS).round().clamp(-32768.0, 32767.0) as i16);
        ImuSample { accel, gyro, timestamp_us: now_us }
    }
}

/// Cycles through recorded IMU samples.
#[derive(Debug, Clone)]
pub struct ReplayImu {
    samples: Vec<ImuSample>,
    next: usize,
}

impl ReplayImu {
    /// `None` for an empty list.
    pub fn new(samples: Vec<ImuSample>) -> Option<Self> {
        (!samples.is_empty()).then_some(ReplayImu { samples, next: 0 })
    }
}

impl ImuSource for ReplayImu {
    fn sample(&mut self, now_us: u64) -> ImuSample {
        let s = self.samples[self.next % self.samples.len()];
        self.next += 1;
        ImuSample { timestamp_us: now_us, ..s }
    }
}
