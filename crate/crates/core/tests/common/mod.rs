//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use rehab_vlm::ingest::{KeypointFrame, KeypointTrack, VideoRef};
use rehab_vlm::primpipe::VideoJob;
use rehab_vlm::primrs::PrimRsConfig;
use rehab_vlm::types::{Hand, SegmentGrid};
use rehab_vlm::vlm::{BackendRequest, MockBackend, VlmClient};

pub const NATIVE_FPS: f64 = 30.0;

/// Per-segment hand motion of the scripted PRIM-RS video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Still,
    /// Above the still threshold but below the quick-movement threshold.
    Moderate,
    Quick,
}

impl Motion {
    /// Displacement of the second sampled frame. With the other samples at
    /// rest the mean per-pair step is two thirds of this.
    fn bump_px(self) -> f64 {
        match self {
            Motion::Still => 0.0,
            Motion::Moderate => 12.0,
            Motion::Quick => 30.0,
        }
    }
}

/// Motion of each of the 25 segments (8 native frames each) of the PRIM-RS
/// golden video: rest, reach, grasp, carry, hold still, release, withdraw, rest.
pub fn primrs_golden_motion() -> Vec<Motion> {
    use Motion::*;
    let mut m = vec![Still; 4];
    m.extend([Quick; 4]);
    m.push(Moderate);
    m.extend([Quick; 4]);
    m.extend([Still; 4]);
    m.push(Moderate);
    m.extend([Quick; 3]);
    m.extend([Still; 4]);
    m
}

/// Keypoints at rest except for the second sampled frame of each segment,
/// which is shifted right by the segment's bump.
pub fn bump_keypoints(motion: &[Motion], grid: &SegmentGrid, hand: Hand) -> KeypointTrack {
    let mut dx = vec![0.0; grid.native_frame_count() as usize];
    for (s, m) in motion.iter().enumerate() {
        dx[grid.sample_indices(s)[1] as usize] = m.bump_px();
    }
    KeypointTrack::new(
        dx.iter()
            .enumerate()
            .map(|(f, &d)| KeypointFrame::with_arm(f as u64, hand, (400.0 + d, 400.0), (450.0 + d, 400.0), 0.95)),
    )
}

pub fn primrs_golden_job() -> VideoJob {
    let motion = primrs_golden_motion();
    let frames = motion.len() as u64 * 8;
    let mut job = VideoJob {
        video: VideoRef::new("golden-primrs", "golden.mp4", NATIVE_FPS, frames),
        hand: Hand::Right,
        duration_s: frames as f64 / NATIVE_FPS,
        keypoints: None,
    };
    let grid = PrimRsConfig::default().grid(&job).unwrap();
    job.keypoints = Some(bump_keypoints(&motion, &grid, Hand::Right));
    job
}

/// Scripted answers for the PRIM-RS golden video, keyed on step and segment.
pub fn primrs_golden_responder(req: &BackendRequest) -> Option<String> {
    let s = req.tag.segment;
    let yes = match req.tag.step.as_str() {
        "idle" => s <= 3 || s >= 21,
        "pickup" => s == 8,
        "release" => s == 17,
        _ => return None,
    };
    Some(if yes { "Yes." } else { "No." }.to_string())
}

pub fn primrs_golden_client() -> VlmClient {
    VlmClient::new(Arc::new(MockBackend::new().named("golden").with_responder(primrs_golden_responder)))
}

/// Four 16-frame segments: reach, carry, hold, release at rest.
pub const DECOMPOSED_MOTION: [bool; 4] = [true, true, false, false];
pub const DECOMPOSED_GRASP: [bool; 4] = [false, true, true, false];

pub fn decomposed_golden_job() -> VideoJob {
    let frames = 4 * 16;
    VideoJob {
        video: VideoRef::new("golden-decomposed", "golden.mp4", NATIVE_FPS, frames),
        hand: Hand::Left,
        duration_s: frames as f64 / NATIVE_FPS,
        keypoints: None,
    }
}

pub fn decomposed_golden_responder(req: &BackendRequest) -> Option<String> {
    let s = req.tag.segment;
    let yes = match req.tag.step.as_str() {
        "motion" => DECOMPOSED_MOTION[s],
        "grasp" => DECOMPOSED_GRASP[s],
        _ => return None,
    };
    Some(if yes { "Yes" } else { "No" }.to_string())
}

pub fn decomposed_golden_client() -> VlmClient {
    VlmClient::new(Arc::new(MockBackend::new().named("golden").with_responder(decomposed_golden_responder)))
}
