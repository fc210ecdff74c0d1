//! Detector seam and shared post-processing.
//!
//! A [`DetectorBackend`] turns a frame reference into raw detections. The
//! [`ScriptedBackend`] replays per-frame fixtures so that every pipeline built
//! on top of detection runs deterministically.
//!
//! Fixture files are JSON Lines, one frame per line:
//!
//! ```text
//! {"frame_id":"f1","detections":[["Mango",0.1,0.1,0.4,0.4,0.95],["Apple",0.5,0.5,0.9,0.9,0.6]]}
//! ```
//!
//! Each row is `[class, x_min, y_min, x_max, y_max, confidence]` with normalized
//! coordinates. `image_id` is accepted as an alias of `frame_id`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BoundingBox, Detection, DomainError, FruitClass, FruitInventory};
use crate::evaluation::iou;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("frame `{0}` not found")]
    FrameNotFound(String),
    #[error("confidence threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
    #[error("reading fixtures: {0}")]
    Io(#[from] std::io::Error),
}

/// A captured frame: opaque id plus the simulated tick it was taken at.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_id: String,
    pub timestamp: u64,
}

impl FrameRef {
    pub fn new(frame_id: impl Into<String>, timestamp: u64) -> Self {
        Self {
            frame_id: frame_id.into(),
            timestamp,
        }
    }
}

pub trait DetectorBackend<T: Scalar = f64>: Send + Sync {
    /// Raw detections for `frame`, in backend order. Must be deterministic.
    fn raw_detections(&self, frame: &FrameRef) -> Result<Vec<Detection<T>>, DetectionError>;
}

/// One fixture row: class, box corners, confidence.
pub type FixtureRow<T> = (FruitClass, T, T, T, T, T);

/// Frame id with its detections.
pub type FrameDetections<T> = (String, Vec<Detection<T>>);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FrameFixture<T: Scalar = f64> {
    #[serde(alias = "image_id")]
    pub frame_id: String,
    #[serde(default)]
    pub detections: Vec<FixtureRow<T>>,
}

impl<T: Scalar> FrameFixture<T> {
    pub fn from_detections(frame_id: impl Into<String>, detections: &[Detection<T>]) -> Self {
        Self {
            frame_id: frame_id.into(),
            detections: detections
                .iter()
                .map(|d| {
                    let [a, b, c, e] = d.bbox.to_array();
                    (d.class, a, b, c, e, d.confidence())
                })
                .collect(),
        }
    }

    pub fn to_detections(&self) -> Result<Vec<Detection<T>>, DomainError> {
        self.detections
            .iter()
            .map(|&(class, x0, y0, x1, y1, conf)| Detection::new(class, BoundingBox::new(x0, y0, x1, y1)?, conf))
            .collect()
    }
}

/// Parses a fixture stream, keeping file order. Blank lines are skipped.
pub fn read_fixtures<T: Scalar, R: Read>(reader: R) -> Result<Vec<FrameDetections<T>>, DetectionError> {
    let mut frames = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fixture: FrameFixture<T> = serde_json::from_str(&line).map_err(|e| DetectionError::Fixture {
            line: lineno,
            message: e.to_string(),
        })?;
        let detections = fixture.to_detections().map_err(|e| DetectionError::Fixture {
            line: lineno,
            message: e.to_string(),
        })?;
        frames.push((fixture.frame_id, detections));
    }
    Ok(frames)
}

/// Replays per-frame detection fixtures.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend<T: Scalar = f64> {
    frames: HashMap<String, Vec<Detection<T>>>,
}

impl<T: Scalar> ScriptedBackend<T> {
    pub fn new() -> Self {
        Self {
            frames: HashMap::new(),
        }
    }

    /// Later entries with a repeated frame id replace earlier ones.
    pub fn from_frames(frames: impl IntoIterator<Item = (String, Vec<Detection<T>>)>) -> Self {
        Self {
            frames: frames.into_iter().collect(),
        }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, DetectionError> {
        let frames = read_fixtures(reader)?;
        let mut seen = HashMap::new();
        for (i, (id, _)) in frames.iter().enumerate() {
            if seen.insert(id.clone(), i).is_some() {
                return Err(DetectionError::Fixture {
                    line: i + 1,
                    message: format!("duplicate frame id `{id}`"),
                });
            }
        }
        Ok(Self::from_frames(frames))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectionError> {
        Self::from_reader(File::open(path)?)
    }

    pub fn insert(&mut self, frame_id: impl Into<String>, detections: Vec<Detection<T>>) {
        self.frames.insert(frame_id.into(), detections);
    }

    pub fn contains(&self, frame_id: &str) -> bool {
        self.frames.contains_key(frame_id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl<T: Scalar> DetectorBackend<T> for ScriptedBackend<T> {
    fn raw_detections(&self, frame: &FrameRef) -> Result<Vec<Detection<T>>, DetectionError> {
        self.frames
            .get(&frame.frame_id)
            .cloned()
            .ok_or_else(|| DetectionError::FrameNotFound(frame.frame_id.clone()))
    }
}

/// Indices of `detections` ordered by descending confidence; ties keep input order.
pub(crate) fn confidence_order<T: Scalar>(detections: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence()
            .partial_cmp(&detections[a].confidence())
            .expect("confidence is never NaN")
    });
    order
}

/// Runs the backend and keeps detections with `confidence >= conf_threshold`,
/// sorted by descending confidence (ties in fixture order).
pub fn detect<T: Scalar, B: DetectorBackend<T> + ?Sized>(
    backend: &B,
    frame: &FrameRef,
    conf_threshold: T,
) -> Result<Vec<Detection<T>>, DetectionError> {
    if !(conf_threshold >= T::zero() && conf_threshold <= T::one()) {
        return Err(DetectionError::InvalidThreshold(conf_threshold.to_f64().unwrap_or(f64::NAN)));
    }
    let raw = backend.raw_detections(frame)?;
    Ok(confidence_order(&raw)
        .into_iter()
        .map(|i| raw[i])
        .filter(|d| d.confidence() >= conf_threshold)
        .collect())
}

/// Greedy per-class non-maximum suppression.
///
/// Walks detections by descending confidence (earlier index wins ties) and drops
/// any detection whose IoU with an already kept detection of the same class
/// exceeds `iou_threshold`. Output is in descending confidence order.
pub fn non_max_suppression<T: Scalar>(detections: &[Detection<T>], iou_threshold: T) -> Vec<Detection<T>> {
    let mut kept: Vec<Detection<T>> = Vec::new();
    for i in confidence_order(detections) {
        let candidate = &detections[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class == candidate.class && iou(&k.bbox, &candidate.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*candidate);
        }
    }
    kept
}

pub fn to_inventory<T: Scalar>(detections: &[Detection<T>]) -> FruitInventory {
    detections.iter().map(|d| (d.class, 1)).collect()
}
