//! Frame-level ground truth: CSV with columns `frame_index,primitive,hand`.
//!
//! A file may hold rows for both hands. Rows for the requested hand must cover
//! frames `0..n` exactly once each, in any order.

use std::path::Path;

use serde::Deserialize;

use super::IngestError;
use crate::types::{FrameAnnotation, Hand, Primitive};

#[derive(Deserialize)]
struct Row {
    frame_index: u64,
    primitive: String,
    hand: String,
}

pub fn parse_annotation(text: &str, path: &Path, hand: Hand, native_fps: f64) -> Result<FrameAnnotation, IngestError> {
    if !(native_fps > 0.0 && native_fps.is_finite()) {
        return Err(IngestError::Invalid(format!("native fps must be positive, got {native_fps}")));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut labels: Vec<Option<Primitive>> = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| IngestError::format(path, line, e.to_string()))?;
        let row_hand: Hand = row.hand.parse().map_err(|e| IngestError::format(path, line, format!("{e}")))?;
        if row_hand != hand {
            continue;
        }
        let p: Primitive = row.primitive.parse().map_err(|e| IngestError::format(path, line, format!("{e}")))?;
        let idx = row.frame_index as usize;
        if idx >= labels.len() {
            labels.resize(idx + 1, None);
        }
        if labels[idx].replace(p).is_some() {
            return Err(IngestError::format(path, line, format!("frame {idx} labelled twice")));
        }
    }
    if labels.is_empty() {
        return Err(IngestError::format(path, 1, format!("no rows for the {hand} hand")));
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| IngestError::format(path, 1, format!("frame {i} has no label"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameAnnotation::new(hand, native_fps, labels))
}

pub fn load_annotation(path: &Path, hand: Hand, native_fps: f64) -> Result<FrameAnnotation, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_annotation(&text, path, hand, native_fps)
}
