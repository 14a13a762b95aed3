use super::{Error, Result};
use crate::nn::{CompiledModel, InferenceContext, InferenceResult, ModelGraph, WeightStore};
use crate::tactile::imu::FusionInput;
use crate::tactile::{ImuSample, TactileFrame, CLASS_COUNT};

/// IMU state visible to the classifier at inference time.
#[derive(Debug, Clone, Copy)]
pub struct ImuView {
    pub latest: ImuSample,
    /// Fused roll/pitch/yaw, once at least one sample has arrived.
    pub angles: Option<[f32; 3]>,
}

impl ImuView {
    pub fn features(&self, input: FusionInput) -> [f32; 3] {
        match input {
            FusionInput::Euler => self.angles.unwrap_or_else(|| self.latest.tilt_euler()),
            FusionInput::Accel => self.latest.accel_g(),
            FusionInput::Gyro => self.latest.gyro_rad_s(),
        }
    }
}

pub trait Classifier {
    fn classify(&mut self, frame: &TactileFrame, imu: &ImuView) -> Result<InferenceResult>;
}

/// The F32 engine with batch norms folded.
pub struct NnClassifier {
    model: CompiledModel,
    ctx: InferenceContext,
    fusion: FusionInput,
}

impl NnClassifier {
    pub fn new(graph: ModelGraph, weights: &WeightStore, fusion: FusionInput) -> Result<Self> {
        if graph.class_count() != CLASS_COUNT {
            return Err(Error::InvalidConfig(format!(
                "graph has {} classes, the device protocol carries {CLASS_COUNT}",
                graph.class_count()
            )));
        }
        let model = CompiledModel::folded(graph, weights)?;
        let ctx = InferenceContext::new(&model);
        Ok(NnClassifier { model, ctx, fusion })
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }
}

impl Classifier for NnClassifier {
    fn classify(&mut self, frame: &TactileFrame, imu: &ImuView) -> Result<InferenceResult> {
        let feats = self.model.graph().uses_imu().then(|| imu.features(self.fusion));
        Ok(self.ctx.infer(&self.model, frame, feats)?)
    }
}
