//! Pose keypoint sidecars.
//!
//! One JSON object per line:
//!
//! ```text
//! {"frame": 12, "keypoints": [[x, y, confidence], ... 17 entries in COCO order]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::types::Hand;

pub const COCO_KEYPOINTS: usize = 17;

const LEFT_ELBOW: usize = 7;
const RIGHT_ELBOW: usize = 8;
const LEFT_WRIST: usize = 9;
const RIGHT_WRIST: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn in_bounds(&self, width: f64, height: f64) -> bool {
        (0.0..width).contains(&self.x) && (0.0..height).contains(&self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame: u64,
    pub points: [Keypoint; COCO_KEYPOINTS],
}

impl KeypointFrame {
    pub fn elbow(&self, hand: Hand) -> Keypoint {
        self.points[match hand {
            Hand::Left => LEFT_ELBOW,
            Hand::Right => RIGHT_ELBOW,
        }]
    }

    pub fn wrist(&self, hand: Hand) -> Keypoint {
        self.points[match hand {
            Hand::Left => LEFT_WRIST,
            Hand::Right => RIGHT_WRIST,
        }]
    }

    /// A frame with every keypoint at the same confidence, and the chosen
    /// hand's elbow/wrist at the given positions.
    pub fn with_arm(frame: u64, hand: Hand, elbow: (f64, f64), wrist: (f64, f64), confidence: f64) -> Self {
        let mut points = [Keypoint { x: 0.0, y: 0.0, confidence }; COCO_KEYPOINTS];
        let (e, w) = match hand {
            Hand::Left => (LEFT_ELBOW, LEFT_WRIST),
            Hand::Right => (RIGHT_ELBOW, RIGHT_WRIST),
        };
        points[e] = Keypoint { x: elbow.0, y: elbow.1, confidence };
        points[w] = Keypoint { x: wrist.0, y: wrist.1, confidence };
        Self { frame, points }
    }
}

#[derive(Deserialize, Serialize)]
struct SidecarLine {
    frame: u64,
    keypoints: Vec<[f64; 3]>,
}

/// Keypoints for a video, indexed by native frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointTrack {
    frames: BTreeMap<u64, KeypointFrame>,
}

impl KeypointTrack {
    pub fn new(frames: impl IntoIterator<Item = KeypointFrame>) -> Self {
        Self { frames: frames.into_iter().map(|f| (f.frame, f)).collect() }
    }

    pub fn get(&self, frame: u64) -> Option<&KeypointFrame> {
        self.frames.get(&frame)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Keypoints for each requested frame; `None` if any frame is missing.
    pub fn select(&self, indices: &[u64]) -> Option<Vec<KeypointFrame>> {
        indices.iter().map(|i| self.get(*i).cloned()).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, IngestError> {
        let mut frames = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: SidecarLine =
                serde_json::from_str(line).map_err(|e| IngestError::format(path, i + 1, e.to_string()))?;
            if rec.keypoints.len() != COCO_KEYPOINTS {
                return Err(IngestError::format(
                    path,
                    i + 1,
                    format!("expected {COCO_KEYPOINTS} keypoints, found {}", rec.keypoints.len()),
                ));
            }
            let mut points = [Keypoint { x: 0.0, y: 0.0, confidence: 0.0 }; COCO_KEYPOINTS];
            for (slot, [x, y, c]) in points.iter_mut().zip(rec.keypoints) {
                if !(0.0..=1.0).contains(&c) || !x.is_finite() || !y.is_finite() {
                    return Err(IngestError::format(path, i + 1, format!("invalid keypoint ({x}, {y}, {c})")));
                }
                *slot = Keypoint { x, y, confidence: c };
            }
            if frames.insert(rec.frame, KeypointFrame { frame: rec.frame, points }).is_some() {
                return Err(IngestError::format(path, i + 1, format!("duplicate frame {}", rec.frame)));
            }
        }
        Ok(Self { frames })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in self.frames.values() {
            let line = SidecarLine { frame: f.frame, keypoints: f.points.iter().map(|p| [p.x, p.y, p.confidence]).collect() };
            out.push_str(&serde_json::to_string(&line).expect("keypoints serialize"));
            out.push('\n');
        }
        out
    }
}
