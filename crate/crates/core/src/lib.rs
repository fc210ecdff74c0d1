//! Fruit allergen alerting and fruit-intake tracking.
//!
//! Geometry, detection and evaluation are generic over the float type
//! ([`scalar::Scalar`], implemented for `f32` and `f64`); the aliases below
//! pick a concrete precision. Pipelines, the hub and the simulator run on `f64`.

pub mod allergen;
pub mod dataset;
pub mod detection;
pub mod domain;
pub mod evaluation;
pub mod hub;
pub mod nutrition;
pub mod scalar;
pub mod sim;

pub use domain::{AllergyProfile, FruitClass, FruitInventory, NutrientGroup};
pub use scalar::Scalar;

pub type BoundingBoxF32 = domain::BoundingBox<f32>;
pub type BoundingBoxF64 = domain::BoundingBox<f64>;
pub type DetectionF32 = domain::Detection<f32>;
pub type DetectionF64 = domain::Detection<f64>;
pub type GroundTruthF32 = domain::GroundTruth<f32>;
pub type GroundTruthF64 = domain::GroundTruth<f64>;
pub type ImageSampleF32 = evaluation::ImageSample<f32>;
pub type ImageSampleF64 = evaluation::ImageSample<f64>;
pub type PRCurveF32 = evaluation::PRCurve<f32>;
pub type PRCurveF64 = evaluation::PRCurve<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_pipeline_agrees_with_f64_on_simple_case() {
        let t32 = GroundTruthF32::new(FruitClass::Apple, BoundingBoxF32::new(0.0, 0.0, 0.5, 0.5).unwrap());
        let p32 = DetectionF32::new(FruitClass::Apple, BoundingBoxF32::new(0.0, 0.0, 0.5, 0.5).unwrap(), 0.9).unwrap();
        let s32 = ImageSampleF32 {
            image_id: "a".into(),
            preds: vec![p32],
            truths: vec![t32],
        };
        let m32 = evaluation::map_at(&[s32], 0.5f32);
        assert_eq!(m32.mean, 1.0);
    }
}
