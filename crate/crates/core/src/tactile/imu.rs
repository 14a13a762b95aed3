//! Raw inertial samples and the 3-vectors fed to the fusion branch.

/// LSB per g at the ±2 g accelerometer range.
pub const ACCEL_LSB_PER_G: f32 = 16384.0;
/// LSB per degree/s at the ±250 °/s gyroscope range.
pub const GYRO_LSB_PER_DPS: f32 = 131.0;

/// One accelerometer + gyroscope reading in raw signed 16-bit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ImuSample {
    pub accel: [i16; 3],
    pub gyro: [i16; 3],
    pub timestamp_us: u64,
}

impl ImuSample {
    /// Acceleration in g.
    pub fn accel_g(&self) -> [f32; 3] {
        self.accel.map(|a| a as f32 / ACCEL_LSB_PER_G)
    }

    /// Angular rate in rad/s.
    pub fn gyro_rad_s(&self) -> [f32; 3] {
        self.gyro.map(|g| (g as f32 / GYRO_LSB_PER_DPS).to_radians())
    }

    /// Roll and pitch from the gravity direction; yaw is unobservable and 0.
    pub fn tilt_euler(&self) -> [f32; 3] {
        let [ax, ay, az] = self.accel_g();
        let roll = ay.atan2(az);
        let pitch = (-ax).atan2((ay * ay + az * az).sqrt());
        [roll, pitch, 0.0]
    }
}

/// Which IMU-derived quantity drives the fusion MLP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FusionInput {
    #[default]
    Euler,
    Accel,
    Gyro,
}

impl std::str::FromStr for FusionInput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(FusionInput::Euler),
            "accel" => Ok(FusionInput::Accel),
            "gyro" => Ok(FusionInput::Gyro),
            other => Err(format!("unknown fusion input {other:?} (euler|accel|gyro)")),
        }
    }
}

/// Roll/pitch/yaw estimator blending integrated gyro rates with the
/// accelerometer tilt.
#[derive(Debug, Clone)]
pub struct ComplementaryFilter {
    alpha: f32,
    angles: Option<[f32; 3]>,
    last_us: u64,
}

impl Default for ComplementaryFilter {
    fn default() -> Self {
        Self::new(0.98)
    }
}

impl ComplementaryFilter {
    pub fn new(alpha: f32) -> Self {
        ComplementaryFilter { alpha, angles: None, last_us: 0 }
    }

    pub fn update(&mut self, s: &ImuSample) -> [f32; 3] {
        let tilt = s.tilt_euler();
        let next = match self.angles {
            None => tilt,
            Some(prev) => {
                let dt = s.timestamp_us.saturating_sub(self.last_us) as f32 * 1e-6;
                let rate = s.gyro_rad_s();
                let mut out = [0.0; 3];
                for i in 0..3 {
                    let integrated = prev[i] + rate[i] * dt;
                    // yaw has no absolute reference
                    out[i] = if i == 2 { integrated } else { self.alpha * integrated + (1.0 - self.alpha) * tilt[i] };
                }
                out
            }
        };
        self.angles = Some(next);
        self.last_us = s.timestamp_us;
        next
    }

    pub fn angles(&self) -> Option<[f32; 3]> {
        self.angles
    }

    /// Feature vector for the requested fusion variant, using `s` as the
    /// latest sample.
    pub fn features(&mut self, s: &ImuSample, input: FusionInput) -> [f32; 3] {
        let euler = self.update(s);
        match input {
            FusionInput::Euler => euler,
            FusionInput::Accel => s.accel_g(),
            FusionInput::Gyro => s.gyro_rad_s(),
        }
    }
}
