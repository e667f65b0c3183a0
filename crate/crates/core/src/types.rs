//! Domain values shared by every stage: primitives, sequences, segment grids,
//! per-segment motion/grasp tracks and frame-level annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseValueError;

/// One of the five functional motion primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Reach,
    Reposition,
    Transport,
    Stabilize,
    Idle,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Reach,
        Primitive::Reposition,
        Primitive::Transport,
        Primitive::Stabilize,
        Primitive::Idle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Primitive::Reach => "reach",
            Primitive::Reposition => "reposition",
            Primitive::Transport => "transport",
            Primitive::Stabilize => "stabilize",
            Primitive::Idle => "idle",
        }
    }

    /// Dense index in `0..5`, matching the order of [`Primitive::ALL`].
    pub fn index(self) -> usize {
        match self {
            Primitive::Reach => 0,
            Primitive::Reposition => 1,
            Primitive::Transport => 2,
            Primitive::Stabilize => 3,
            Primitive::Idle => 4,
        }
    }

    /// Motion/grasp decomposition of the primitive. Reach and reposition share
    /// the same state and are told apart only by a terminal grasp.
    pub fn state(self) -> SegmentState {
        match self {
            Primitive::Reach | Primitive::Reposition => SegmentState::new(true, false),
            Primitive::Transport => SegmentState::new(true, true),
            Primitive::Stabilize => SegmentState::new(false, true),
            Primitive::Idle => SegmentState::new(false, false),
        }
    }

    pub fn is_moving(self) -> bool {
        self.state().motion
    }

    pub fn is_grasping(self) -> bool {
        self.state().grasp
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Primitive {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Primitive::ALL
            .into_iter()
            .find(|p| p.as_str() == lower)
            .ok_or_else(|| ParseValueError::new("primitive", s))
    }
}

/// Ordered primitive labels for one video. May be empty (a null prediction).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrimitiveSequence {
    pub source_id: String,
    pub items: Vec<Primitive>,
}

impl PrimitiveSequence {
    pub fn new(source_id: impl Into<String>, items: Vec<Primitive>) -> Self {
        Self { source_id: source_id.into(), items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dedup(&self) -> Self {
        Self { source_id: self.source_id.clone(), items: dedup(&self.items) }
    }

    pub fn is_deduplicated(&self) -> bool {
        self.items.windows(2).all(|w| w[0] != w[1])
    }

    pub fn count(&self, p: Primitive) -> usize {
        count(p, &self.items)
    }

    /// Comma-separated lowercase labels, the on-disk sequence format.
    pub fn to_line(&self) -> String {
        self.items.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(",")
    }

    pub fn parse_line(source_id: impl Into<String>, line: &str) -> Result<Self, ParseValueError> {
        let line = line.trim();
        let items = if line.is_empty() {
            Vec::new()
        } else {
            line.split(',').map(str::parse).collect::<Result<Vec<_>, _>>()?
        };
        Ok(Self::new(source_id, items))
    }
}

impl AsRef<[Primitive]> for PrimitiveSequence {
    fn as_ref(&self) -> &[Primitive] {
        &self.items
    }
}

/// Collapses runs of equal adjacent items.
pub fn dedup<T: PartialEq + Copy>(items: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for &item in items {
        if out.last() != Some(&item) {
            out.push(item);
        }
    }
    out
}

/// Number of occurrences of `p` in `items`.
pub fn count(p: Primitive, items: &[Primitive]) -> usize {
    items.iter().filter(|&&q| q == p).count()
}

/// Which of the patient's hands is being analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn upper(self) -> &'static str {
        match self {
            Hand::Left => "LEFT",
            Hand::Right => "RIGHT",
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "left",
            Hand::Right => "right",
        })
    }
}

impl FromStr for Hand {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Hand::Left),
            "right" | "r" => Ok(Hand::Right),
            _ => Err(ParseValueError::new("hand", s)),
        }
    }
}

/// Regular partition of a video timeline into fixed-length segments, each
/// sampled with `frames_per_segment` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentGrid {
    pub sampling_rate_hz: f64,
    pub frames_per_segment: usize,
    pub video_duration_s: f64,
    pub native_fps: f64,
}

impl SegmentGrid {
    pub fn new(
        sampling_rate_hz: f64,
        frames_per_segment: usize,
        video_duration_s: f64,
        native_fps: f64,
    ) -> Result<Self, crate::Error> {
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(crate::Error::invalid("sampling rate must be positive"));
        }
        if frames_per_segment == 0 {
            return Err(crate::Error::invalid("frames per segment must be at least 1"));
        }
        if !(native_fps > 0.0 && native_fps.is_finite()) {
            return Err(crate::Error::invalid("native fps must be positive"));
        }
        if !(video_duration_s >= 0.0 && video_duration_s.is_finite()) {
            return Err(crate::Error::invalid("video duration must be non-negative"));
        }
        Ok(Self { sampling_rate_hz, frames_per_segment, video_duration_s, native_fps })
    }

    pub fn segment_duration_s(&self) -> f64 {
        self.frames_per_segment as f64 / self.sampling_rate_hz
    }

    /// Number of whole segments; a trailing partial segment is dropped.
    pub fn segment_count(&self) -> usize {
        // The epsilon keeps exact multiples (e.g. 16 s / (8/15) s) from losing a
        // segment to floating-point rounding.
        ((self.video_duration_s / self.segment_duration_s()) + 1e-9).floor() as usize
    }

    /// Number of native frames in the video.
    pub fn native_frame_count(&self) -> u64 {
        ((self.native_fps * self.video_duration_s) + 1e-9).floor() as u64
    }

    pub fn segment_bounds(&self, segment: usize) -> (f64, f64) {
        let d = self.segment_duration_s();
        (segment as f64 * d, (segment + 1) as f64 * d)
    }

    /// Native frame indices sampled for `segment`: evenly spaced including both
    /// endpoints, rounded to the nearest native frame. A single frame is taken
    /// at the segment midpoint.
    pub fn sample_indices(&self, segment: usize) -> Vec<u64> {
        let (start, end) = self.segment_bounds(segment);
        let n = self.frames_per_segment;
        let last = self.native_frame_count().saturating_sub(1);
        (0..n)
            .map(|i| {
                let t = if n == 1 {
                    0.5 * (start + end)
                } else {
                    start + (end - start) * i as f64 / (n - 1) as f64
                };
                ((t * self.native_fps).round().max(0.0) as u64).min(last)
            })
            .collect()
    }

    /// Native frame at the middle of `segment` (ties resolved downward).
    pub fn midpoint_frame(&self, segment: usize) -> u64 {
        let (start, end) = self.segment_bounds(segment);
        let last = self.native_frame_count().saturating_sub(1);
        ((0.5 * (start + end) * self.native_fps + 1e-9).floor() as u64).min(last)
    }
}

/// Motion/grasp answers for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SegmentState {
    pub motion: bool,
    pub grasp: bool,
}

impl SegmentState {
    pub const fn new(motion: bool, grasp: bool) -> Self {
        Self { motion, grasp }
    }

    /// Index into the four joint states: 0 = still/empty, 1 = moving/empty,
    /// 2 = moving/grasping, 3 = still/grasping.
    pub fn joint_index(self) -> usize {
        match (self.motion, self.grasp) {
            (false, false) => 0,
            (true, false) => 1,
            (true, true) => 2,
            (false, true) => 3,
        }
    }

    pub fn from_joint_index(i: usize) -> Self {
        match i {
            0 => Self::new(false, false),
            1 => Self::new(true, false),
            2 => Self::new(true, true),
            3 => Self::new(false, true),
            _ => panic!("joint state index out of range: {i}"),
        }
    }
}

/// Per-segment motion/grasp states for one hand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTrack {
    pub hand: Hand,
    pub states: Vec<SegmentState>,
}

impl StateTrack {
    pub fn new(hand: Hand, states: Vec<SegmentState>) -> Self {
        Self { hand, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV rendering with a `segment,motion,grasp` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment,motion,grasp\n");
        for (i, s) in self.states.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", yes_no(s.motion), yes_no(s.grasp)));
        }
        out
    }
}

pub(crate) fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Ground-truth primitive label for every native frame of one hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub hand: Hand,
    pub native_fps: f64,
    pub labels: Vec<Primitive>,
}

impl FrameAnnotation {
    pub fn new(hand: Hand, native_fps: f64, labels: Vec<Primitive>) -> Self {
        Self { hand, native_fps, labels }
    }

    pub fn duration_s(&self) -> f64 {
        self.labels.len() as f64 / self.native_fps
    }

    pub fn label_at(&self, frame: u64) -> Option<Primitive> {
        self.labels.get(frame as usize).copied()
    }

    /// De-duplicated ground-truth sequence.
    pub fn sequence(&self, source_id: &str) -> PrimitiveSequence {
        PrimitiveSequence::new(source_id, dedup(&self.labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Primitive::*;

    #[test]
    fn dedup_examples() {
        assert_eq!(dedup(&[Idle, Idle, Reach, Reach, Transport]), vec![Idle, Reach, Transport]);
        assert_eq!(dedup::<Primitive>(&[]), vec![]);
        assert_eq!(dedup(&[Reach, Transport, Reach]), vec![Reach, Transport, Reach]);
    }

    #[test]
    fn count_examples() {
        assert_eq!(count(Reach, &[Reach, Transport, Reach]), 2);
        assert_eq!(count(Stabilize, &[]), 0);
        assert_eq!(count(Idle, &[Idle, Reach, Transport]), 1);
    }

    #[test]
    fn primitive_parse_is_case_insensitive() {
        for p in Primitive::ALL {
            assert_eq!(p.to_string().parse::<Primitive>().unwrap(), p);
            assert_eq!(p.as_str().to_uppercase().parse::<Primitive>().unwrap(), p);
        }
        assert!("grab".parse::<Primitive>().is_err());
    }

    #[test]
    fn sequence_line_round_trip() {
        let s = PrimitiveSequence::new("v", vec![Idle, Reach, Transport]);
        assert_eq!(s.to_line(), "idle,reach,transport");
        assert_eq!(PrimitiveSequence::parse_line("v", "idle,reach,transport\n").unwrap(), s);
        assert!(PrimitiveSequence::parse_line("v", "").unwrap().is_empty());
    }

    #[test]
    fn grid_segment_durations() {
        let g = SegmentGrid::new(15.0, 8, 10.0, 60.0).unwrap();
        assert!((g.segment_duration_s() - 0.5333).abs() < 1e-3);
        let g = SegmentGrid::new(15.0, 4, 10.0, 60.0).unwrap();
        assert!((g.segment_duration_s() - 0.2667).abs() < 1e-3);
    }

    #[test]
    fn grid_drops_trailing_partial_segment() {
        let g = SegmentGrid::new(15.0, 8, 4.0, 60.0).unwrap();
        assert_eq!(g.segment_count(), 7);
        let g = SegmentGrid::new(15.0, 8, 16.0 / 3.0 * 0.8, 60.0).unwrap();
        assert_eq!(g.segment_count(), 8);
        let g = SegmentGrid::new(15.0, 8, 0.3, 60.0).unwrap();
        assert_eq!(g.segment_count(), 0);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(SegmentGrid::new(0.0, 8, 1.0, 60.0).is_err());
        assert!(SegmentGrid::new(15.0, 0, 1.0, 60.0).is_err());
        assert!(SegmentGrid::new(15.0, 8, -1.0, 60.0).is_err());
    }

    #[test]
    fn sample_indices_include_endpoints() {
        let g = SegmentGrid::new(15.0, 8, 2.0, 60.0).unwrap();
        let idx = g.sample_indices(0);
        assert_eq!(idx.len(), 8);
        assert_eq!(idx[0], 0);
        assert_eq!(idx[7], 32);
        assert_eq!(g.midpoint_frame(0), 16);
    }

    #[test]
    fn joint_index_round_trip() {
        for i in 0..4 {
            assert_eq!(SegmentState::from_joint_index(i).joint_index(), i);
        }
    }

    fn primitive() -> impl Strategy<Value = Primitive> {
        (0usize..5).prop_map(|i| Primitive::ALL[i])
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(s in prop::collection::vec(primitive(), 0..40)) {
            let once = dedup(&s);
            prop_assert_eq!(dedup(&once), once.clone());
            prop_assert!(once.windows(2).all(|w| w[0] != w[1]));
        }

        #[test]
        fn counts_sum_to_length(s in prop::collection::vec(primitive(), 0..40)) {
            let total: usize = Primitive::ALL.iter().map(|&p| count(p, &s)).sum();
            prop_assert_eq!(total, s.len());
        }

        #[test]
        fn sampled_indices_stay_in_range(
            f in 1u32..60, n in 1usize..40, dur in 0.0f64..30.0, fps in prop::sample::select(vec![60.0, 100.0])
        ) {
            let g = SegmentGrid::new(f as f64, n, dur, fps).unwrap();
            let frames = g.native_frame_count();
            for seg in 0..g.segment_count() {
                for i in g.sample_indices(seg) {
                    prop_assert!(i < frames);
                }
                prop_assert!(g.midpoint_frame(seg) < frames);
            }
        }
    }
}
