//! Inputs from disk: manifests, frame-level annotations, pose keypoint
//! sidecars, crop geometry and frame extraction.

mod annotation;
mod crop;
mod frames;
mod keypoints;
mod manifest;

use std::path::PathBuf;

use thiserror::Error;

pub use annotation::{load_annotation, parse_annotation};
pub use crop::{
    crop_rect, decide_crop, hand_center, interpolate, segment_motion, subject_bbox_selection, BoundingBox,
    CropConfig, CropDecision, CropRect, Point,
};
pub use frames::{
    ExternalExtractor, FrameRequest, FrameSource, FrameTag, SyntheticFrames, VideoRef, DEFAULT_EXTRACT_TEMPLATE,
};
pub use keypoints::{Keypoint, KeypointFrame, KeypointTrack, COCO_KEYPOINTS};
pub use manifest::{Impairment, Manifest, VideoEntry};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("frame extraction failed for {video} frame {index}: {message}")]
    Extraction { video: String, index: u64, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        IngestError::Format { path: path.into(), line, message: message.into() }
    }
}
