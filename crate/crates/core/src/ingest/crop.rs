//! Hand-region crop geometry from pose keypoints.

use serde::{Deserialize, Serialize};

use super::keypoints::KeypointFrame;
use super::IngestError;
use crate::types::Hand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    /// Hand center = wrist + factor * (wrist - elbow).
    pub extension_factor: f64,
    /// Abstain when any elbow/wrist confidence in a segment falls below this.
    pub min_confidence: f64,
    /// Mean per-frame hand displacement (either axis) above which a segment is
    /// a quick movement.
    pub quick_move_px: f64,
    /// Mean displacement (both axes) at or below which a segment is still.
    pub still_px: f64,
    pub crop_size_px: u32,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            extension_factor: 0.7,
            min_confidence: 0.9,
            quick_move_px: 15.0,
            still_px: 3.0,
            crop_size_px: 224,
            image_width: 1088,
            image_height: 704,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.crop_size_px == 0 || self.crop_size_px > self.image_width.min(self.image_height) {
            return Err(IngestError::Invalid(format!(
                "crop size {} does not fit a {}x{} image",
                self.crop_size_px, self.image_width, self.image_height
            )));
        }
        if !(self.min_confidence > 0.0 && self.quick_move_px > 0.0 && self.still_px > 0.0) {
            return Err(IngestError::Invalid("crop thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Crop window in pixels, half-open: `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CropDecision {
    /// Keypoints are unreliable; use the original frames.
    Abstain,
    Still(Point),
    Moving { start: Point, end: Point },
}

impl CropDecision {
    /// Crop center for sampled frame `i` of `n`. Moving crops interpolate
    /// linearly from the first to the last frame.
    pub fn center_at(&self, i: usize, n: usize) -> Option<Point> {
        match *self {
            CropDecision::Abstain => None,
            CropDecision::Still(c) => Some(c),
            CropDecision::Moving { start, end } => {
                let t = if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                Some(interpolate(start, end, t))
            }
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, CropDecision::Abstain)
    }
}

pub fn interpolate(a: Point, b: Point, t: f64) -> Point {
    Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
}

/// Extends the elbow-to-wrist vector past the wrist by `factor`.
pub fn hand_center(elbow: Point, wrist: Point, factor: f64) -> Point {
    Point::new(wrist.x + factor * (wrist.x - elbow.x), wrist.y + factor * (wrist.y - elbow.y))
}

fn centers(frames: &[KeypointFrame], hand: Hand, cfg: &CropConfig) -> Option<Vec<Point>> {
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    frames
        .iter()
        .map(|f| {
            let (e, wr) = (f.elbow(hand), f.wrist(hand));
            let reliable = e.confidence >= cfg.min_confidence
                && wr.confidence >= cfg.min_confidence
                && e.in_bounds(w, h)
                && wr.in_bounds(w, h);
            reliable.then(|| hand_center(Point::new(e.x, e.y), Point::new(wr.x, wr.y), cfg.extension_factor))
        })
        .collect()
}

fn mean_displacement(centers: &[Point]) -> (f64, f64) {
    if centers.len() < 2 {
        return (0.0, 0.0);
    }
    let n = (centers.len() - 1) as f64;
    let (dx, dy) = centers
        .windows(2)
        .fold((0.0, 0.0), |(sx, sy), w| (sx + (w[1].x - w[0].x).abs(), sy + (w[1].y - w[0].y).abs()));
    (dx / n, dy / n)
}

/// Mean absolute hand-center displacement per consecutive frame pair on each
/// axis, or `None` when the keypoints are not reliable enough to crop.
pub fn segment_motion(frames: &[KeypointFrame], hand: Hand, cfg: &CropConfig) -> Option<(f64, f64)> {
    if frames.is_empty() {
        return None;
    }
    centers(frames, hand, cfg).map(|c| mean_displacement(&c))
}

pub fn decide_crop(frames: &[KeypointFrame], hand: Hand, cfg: &CropConfig) -> CropDecision {
    let Some(c) = (!frames.is_empty()).then(|| centers(frames, hand, cfg)).flatten() else {
        return CropDecision::Abstain;
    };
    let (dx, dy) = mean_displacement(&c);
    if dx > cfg.quick_move_px || dy > cfg.quick_move_px {
        return CropDecision::Moving { start: c[0], end: c[c.len() - 1] };
    }
    let n = c.len() as f64;
    let (sx, sy) = c.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    CropDecision::Still(Point::new(sx / n, sy / n))
}

/// Square crop of `crop_size_px` centred on `center`, shifted the minimum
/// amount needed to stay inside the image.
pub fn crop_rect(center: Point, cfg: &CropConfig) -> CropRect {
    let size = cfg.crop_size_px;
    let place = |c: f64, extent: u32| -> u32 {
        let max_origin = extent.saturating_sub(size) as f64;
        let origin = if c.is_finite() { (c - size as f64 / 2.0).round() } else { 0.0 };
        origin.clamp(0.0, max_origin) as u32
    };
    CropRect { x: place(center.x, cfg.image_width), y: place(center.y, cfg.image_height), width: size, height: size }
}

/// Axis-aligned person detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }
}

/// The subject is the largest detection; equal areas go to the leftmost box.
pub fn subject_bbox_selection(detections: &[BoundingBox]) -> Result<BoundingBox, IngestError> {
    detections
        .iter()
        .copied()
        .reduce(|best, b| {
            if b.area() > best.area() || (b.area() == best.area() && b.x < best.x) {
                b
            } else {
                best
            }
        })
        .ok_or_else(|| IngestError::Invalid("no person detections".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(i: u64, elbow: (f64, f64), wrist: (f64, f64), conf: f64) -> KeypointFrame {
        KeypointFrame::with_arm(i, Hand::Right, elbow, wrist, conf)
    }

    #[test]
    fn hand_center_examples() {
        assert_eq!(hand_center(Point::new(100.0, 100.0), Point::new(150.0, 100.0), 0.7), Point::new(185.0, 100.0));
        assert_eq!(hand_center(Point::new(5.0, 6.0), Point::new(5.0, 6.0), 0.7), Point::new(5.0, 6.0));
        assert_eq!(hand_center(Point::new(0.0, 0.0), Point::new(10.0, 10.0), 1.0), Point::new(20.0, 20.0));
    }

    #[test]
    fn abstains_on_low_confidence() {
        let cfg = CropConfig::default();
        let mut frames: Vec<_> = (0..8).map(|i| frame(i, (100.0, 100.0), (150.0, 100.0), 1.0)).collect();
        frames[3].points[10].confidence = 0.85; // right wrist
        assert_eq!(decide_crop(&frames, Hand::Right, &cfg), CropDecision::Abstain);
        // The other arm's confidence does not matter.
        let mut frames: Vec<_> = (0..8).map(|i| frame(i, (100.0, 100.0), (150.0, 100.0), 1.0)).collect();
        frames[3].points[9].confidence = 0.1; // left wrist
        assert!(!decide_crop(&frames, Hand::Right, &cfg).is_abstain());
        assert_eq!(decide_crop(&[], Hand::Right, &cfg), CropDecision::Abstain);
    }

    #[test]
    fn still_crop_at_mean_center() {
        let cfg = CropConfig::default();
        let frames: Vec<_> = (0..8).map(|i| frame(i, (100.0, 100.0), (150.0, 100.0), 1.0)).collect();
        assert_eq!(decide_crop(&frames, Hand::Right, &cfg), CropDecision::Still(Point::new(185.0, 100.0)));
        for k in 1..5 {
            assert_eq!(decide_crop(&frames[..k], Hand::Right, &cfg), CropDecision::Still(Point::new(185.0, 100.0)));
        }
    }

    #[test]
    fn quick_movement_gives_moving_crop() {
        let cfg = CropConfig::default();
        let frames: Vec<_> = (0..8)
            .map(|i| {
                let dx = 20.0 * i as f64;
                frame(i, (100.0 + dx, 300.0), (150.0 + dx, 300.0), 1.0)
            })
            .collect();
        let d = decide_crop(&frames, Hand::Right, &cfg);
        assert_eq!(d, CropDecision::Moving { start: Point::new(185.0, 300.0), end: Point::new(325.0, 300.0) });
        assert_eq!(d.center_at(0, 8), Some(Point::new(185.0, 300.0)));
        assert_eq!(d.center_at(7, 8), Some(Point::new(325.0, 300.0)));
        assert_eq!(segment_motion(&frames, Hand::Right, &cfg), Some((20.0, 0.0)));
    }

    #[test]
    fn crop_rect_examples() {
        let cfg = CropConfig::default();
        assert_eq!(crop_rect(Point::new(544.0, 352.0), &cfg), CropRect { x: 432, y: 240, width: 224, height: 224 });
        assert_eq!(crop_rect(Point::new(0.0, 0.0), &cfg), CropRect { x: 0, y: 0, width: 224, height: 224 });
        assert_eq!(crop_rect(Point::new(1088.0, 704.0), &cfg), CropRect { x: 864, y: 480, width: 224, height: 224 });
    }

    #[test]
    fn config_validation() {
        assert!(CropConfig::default().validate().is_ok());
        assert!(CropConfig { crop_size_px: 800, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn subject_selection() {
        let b = |x: f64, w: f64, h: f64| BoundingBox { x, y: 0.0, width: w, height: h };
        let boxes = [b(0.0, 10.0, 10.0), b(50.0, 20.0, 20.0), b(5.0, 5.0, 10.0)];
        assert_eq!(subject_bbox_selection(&boxes).unwrap(), boxes[1]);
        assert_eq!(subject_bbox_selection(&boxes[..1]).unwrap(), boxes[0]);
        let tie = [b(40.0, 10.0, 10.0), b(10.0, 10.0, 10.0)];
        assert_eq!(subject_bbox_selection(&tie).unwrap().x, 10.0);
        assert!(subject_bbox_selection(&[]).is_err());
    }

    proptest! {
        #[test]
        fn crops_stay_inside(x in -500.0f64..1600.0, y in -500.0f64..1200.0) {
            let cfg = CropConfig::default();
            let r = crop_rect(Point::new(x, y), &cfg);
            prop_assert_eq!((r.width, r.height), (224, 224));
            prop_assert!(r.x + r.width <= cfg.image_width);
            prop_assert!(r.y + r.height <= cfg.image_height);
        }

        #[test]
        fn interpolation_endpoints(ax in 0.0f64..1000.0, ay in 0.0f64..700.0, bx in 0.0f64..1000.0, by in 0.0f64..700.0) {
            let d = CropDecision::Moving { start: Point::new(ax, ay), end: Point::new(bx, by) };
            prop_assert_eq!(d.center_at(0, 8), Some(Point::new(ax, ay)));
            let end = d.center_at(7, 8).unwrap();
            prop_assert!((end.x - bx).abs() < 1e-9 && (end.y - by).abs() < 1e-9);
        }
    }
}
