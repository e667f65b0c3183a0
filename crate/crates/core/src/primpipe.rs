//! Prompted primitive inference: single-word, decomposed motion/grasp, and
//! contextual prompting, plus the cross-hand attribution probe.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseValueError, Result};
use crate::ingest::{crop_rect, decide_crop, CropConfig, CropDecision, FrameRequest, FrameSource, KeypointTrack, VideoRef};
use crate::par::Executor;
use crate::reconstruct::{states_to_primitives, ReconstructionConfig};
use crate::types::{dedup, FrameAnnotation, Hand, Primitive, PrimitiveSequence, SegmentGrid, SegmentState, StateTrack};
use crate::vlm::parse::{parse_primitive, parse_yes_no};
use crate::vlm::{EncodedFrame, HandRef, PromptCatalog, PromptVars, RequestTag, VlmClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptingMode {
    Single,
    Decomposed,
    Contextual,
}

impl PromptingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptingMode::Single => "single",
            PromptingMode::Decomposed => "decomposed",
            PromptingMode::Contextual => "contextual",
        }
    }
}

impl fmt::Display for PromptingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptingMode {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(PromptingMode::Single),
            "decomposed" => Ok(PromptingMode::Decomposed),
            "contextual" => Ok(PromptingMode::Contextual),
            _ => Err(ParseValueError::new("prompting mode", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sampling_rate_hz: f64,
    pub frames_per_segment: usize,
    pub mode: PromptingMode,
    pub cropping: bool,
    pub crop: CropConfig,
    pub terminal_grasp_window_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 15.0,
            frames_per_segment: 8,
            mode: PromptingMode::Decomposed,
            cropping: false,
            crop: CropConfig::default(),
            terminal_grasp_window_s: ReconstructionConfig::DEFAULT_WINDOW_S,
        }
    }
}

impl PipelineConfig {
    pub fn grid(&self, job: &VideoJob) -> Result<SegmentGrid> {
        SegmentGrid::new(self.sampling_rate_hz, self.frames_per_segment, job.duration_s, job.video.native_fps)
    }

    pub fn reconstruction(&self, grid: &SegmentGrid) -> Result<ReconstructionConfig> {
        ReconstructionConfig::new(self.terminal_grasp_window_s, grid.segment_duration_s())
    }
}

/// One video to process for one hand.
#[derive(Debug, Clone)]
pub struct VideoJob {
    pub video: VideoRef,
    pub hand: Hand,
    pub duration_s: f64,
    pub keypoints: Option<KeypointTrack>,
}

impl VideoJob {
    /// Checks that cropping, if requested, has keypoints to work from.
    pub fn validate(&self, cropping: bool) -> Result<()> {
        if cropping && self.keypoints.is_none() {
            return Err(Error::invalid(format!("video {}: cropping requires keypoints", self.video.id)));
        }
        Ok(())
    }
}

/// Frames for one segment, ready to send.
#[derive(Debug, Clone)]
pub struct SegmentInput {
    pub frames: Vec<EncodedFrame>,
    pub hand_ref: HandRef,
    pub crop: CropDecision,
}

/// An answer that could not be parsed and was replaced by the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unparsed {
    pub segment: usize,
    pub step: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub video_id: String,
    pub mode: PromptingMode,
    /// Motion/grasp answers; absent in single mode.
    pub track: Option<StateTrack>,
    /// One label per segment, before de-duplication.
    pub per_segment: Vec<Primitive>,
    pub sequence: PrimitiveSequence,
    pub unparsed: Vec<Unparsed>,
    pub crops: Vec<CropDecision>,
}

/// Shared resources for prompting runs.
pub struct Pipeline<'a> {
    pub client: &'a VlmClient,
    pub frames: &'a dyn FrameSource,
    pub catalog: &'a PromptCatalog,
}

const MOVING_PHRASE: &str = "actively moving an object, moving towards an object, or moving away from an object";

impl<'a> Pipeline<'a> {
    pub fn new(client: &'a VlmClient, frames: &'a dyn FrameSource, catalog: &'a PromptCatalog) -> Self {
        Self { client, frames, catalog }
    }

    /// Samples a segment's frames, cropping around `hand` when `crop` is set
    /// and the keypoints allow it.
    pub fn prepare_segment(
        &self,
        job: &VideoJob,
        hand: Hand,
        grid: &SegmentGrid,
        segment: usize,
        crop: Option<&CropConfig>,
    ) -> Result<SegmentInput> {
        let indices = grid.sample_indices(segment);
        let decision = match (crop, &job.keypoints) {
            (Some(cfg), Some(track)) => match track.select(&indices) {
                Some(kp) => decide_crop(&kp, hand, cfg),
                None => CropDecision::Abstain,
            },
            (Some(_), None) => return Err(Error::invalid(format!("video {}: cropping requires keypoints", job.video.id))),
            (None, _) => CropDecision::Abstain,
        };
        let n = indices.len();
        let requests: Vec<FrameRequest> = indices
            .iter()
            .enumerate()
            .map(|(i, &idx)| match (decision.center_at(i, n), crop) {
                (Some(c), Some(cfg)) => FrameRequest::cropped(idx, crop_rect(c, cfg)),
                _ => FrameRequest::full(idx),
            })
            .collect();
        let frames = self.frames.frames(&job.video, &requests)?;
        let hand_ref = if decision.is_abstain() { HandRef::Named(hand) } else { HandRef::Center };
        Ok(SegmentInput { frames, hand_ref, crop: decision })
    }

    fn ask(&self, input: &SegmentInput, template: &str, vars: PromptVars, tag: RequestTag) -> Result<String> {
        let prompt = self.catalog.render(template, &vars)?;
        Ok(self.client.ask(input.frames.clone(), &prompt.text, tag)?)
    }

    /// Yes/no question; unparseable replies count as "no" and are recorded.
    fn ask_binary(
        &self,
        input: &SegmentInput,
        template: &str,
        vars: PromptVars,
        tag: RequestTag,
        unparsed: &mut Vec<Unparsed>,
    ) -> Result<bool> {
        let (segment, step) = (tag.segment, tag.step.clone());
        let reply = self.ask(input, template, vars, tag)?;
        Ok(parse_yes_no(&reply).unwrap_or_else(|_| {
            log::warn!("segment {segment} {step}: unparseable reply {reply:?}, using \"no\"");
            unparsed.push(Unparsed { segment, step, reply });
            false
        }))
    }

    pub fn run(&self, job: &VideoJob, cfg: &PipelineConfig, exec: &Executor) -> Result<PipelineOutput> {
        match cfg.mode {
            PromptingMode::Single => self.run_single(job, cfg, exec),
            PromptingMode::Decomposed => self.run_decomposed(job, cfg, exec),
            PromptingMode::Contextual => self.run_contextual(job, cfg),
        }
    }

    /// One single-word primitive prompt per segment. Unparseable replies
    /// become idle.
    pub fn run_single(&self, job: &VideoJob, cfg: &PipelineConfig, exec: &Executor) -> Result<PipelineOutput> {
        job.validate(cfg.cropping)?;
        let grid = cfg.grid(job)?;
        let crop = cfg.cropping.then_some(&cfg.crop);
        let results = exec.try_map_range(grid.segment_count(), |s| -> Result<_> {
            let input = self.prepare_segment(job, job.hand, &grid, s, crop)?;
            let tag = RequestTag::new(&job.video.id, s, "single");
            let reply = self.ask(&input, "single", PromptVars::for_hand(input.hand_ref), tag)?;
            let (p, bad) = match parse_primitive(&reply) {
                Ok(p) => (p, None),
                Err(_) => {
                    log::warn!("segment {s} single: unparseable reply {reply:?}, using idle");
                    (Primitive::Idle, Some(Unparsed { segment: s, step: "single".into(), reply }))
                }
            };
            Ok((p, bad, input.crop))
        })?;
        let mut out = PipelineOutput {
            video_id: job.video.id.clone(),
            mode: PromptingMode::Single,
            track: None,
            per_segment: Vec::with_capacity(results.len()),
            sequence: PrimitiveSequence::default(),
            unparsed: Vec::new(),
            crops: Vec::with_capacity(results.len()),
        };
        for (p, bad, crop) in results {
            out.per_segment.push(p);
            out.unparsed.extend(bad);
            out.crops.push(crop);
        }
        out.sequence = PrimitiveSequence::new(&job.video.id, dedup(&out.per_segment));
        Ok(out)
    }

    /// Two yes/no prompts per segment (motion, then grasp), reconstructed into
    /// primitives.
    pub fn run_decomposed(&self, job: &VideoJob, cfg: &PipelineConfig, exec: &Executor) -> Result<PipelineOutput> {
        job.validate(cfg.cropping)?;
        let grid = cfg.grid(job)?;
        let crop = cfg.cropping.then_some(&cfg.crop);
        let results = exec.try_map_range(grid.segment_count(), |s| -> Result<_> {
            let input = self.prepare_segment(job, job.hand, &grid, s, crop)?;
            let vars = PromptVars::for_hand(input.hand_ref);
            let mut bad = Vec::new();
            let tag = |step: &str| RequestTag::new(&job.video.id, s, step);
            let motion = self.ask_binary(&input, "decomposed_motion", vars.clone(), tag("motion"), &mut bad)?;
            let grasp = self.ask_binary(&input, "decomposed_grasp", vars, tag("grasp"), &mut bad)?;
            Ok((SegmentState { motion, grasp }, bad, input.crop))
        })?;
        self.finish_track(job, &grid, cfg, PromptingMode::Decomposed, results)
    }

    /// Motion and grasp prompts that state the previous segment's answers and
    /// ask whether that state changed. Segments run in order; the first
    /// segment's prior is still with an empty hand.
    pub fn run_contextual(&self, job: &VideoJob, cfg: &PipelineConfig) -> Result<PipelineOutput> {
        job.validate(cfg.cropping)?;
        let grid = cfg.grid(job)?;
        let crop = cfg.cropping.then_some(&cfg.crop);
        let mut prior = SegmentState::default();
        let mut results = Vec::with_capacity(grid.segment_count());
        for s in 0..grid.segment_count() {
            let input = self.prepare_segment(job, job.hand, &grid, s, crop)?;
            let mut bad = Vec::new();
            let tag = |step: &str| RequestTag::new(&job.video.id, s, step);

            let (prior_motion, motion_question) = if prior.motion {
                ("moving an object or moving toward/away from one", "still")
            } else {
                ("still", MOVING_PHRASE)
            };
            let vars = PromptVars::for_hand(input.hand_ref)
                .set("prior_motion", prior_motion)
                .set("motion_question", motion_question);
            let changed = self.ask_binary(&input, "contextual_motion", vars, tag("motion"), &mut bad)?;
            let motion = prior.motion != changed;

            let (prior_grasp, grasp_question) = if prior.grasp {
                ("it was actively grasping an object", "release the object")
            } else {
                ("the hand was empty", "grasp an object")
            };
            let vars = PromptVars::for_hand(input.hand_ref)
                .set("prior_grasp", prior_grasp)
                .set("grasp_question", grasp_question);
            let changed = self.ask_binary(&input, "contextual_grasp", vars, tag("grasp"), &mut bad)?;
            let grasp = prior.grasp != changed;

            prior = SegmentState { motion, grasp };
            results.push((prior, bad, input.crop));
        }
        self.finish_track(job, &grid, cfg, PromptingMode::Contextual, results)
    }

    fn finish_track(
        &self,
        job: &VideoJob,
        grid: &SegmentGrid,
        cfg: &PipelineConfig,
        mode: PromptingMode,
        results: Vec<(SegmentState, Vec<Unparsed>, CropDecision)>,
    ) -> Result<PipelineOutput> {
        let mut states = Vec::with_capacity(results.len());
        let mut unparsed = Vec::new();
        let mut crops = Vec::with_capacity(results.len());
        for (st, bad, crop) in results {
            states.push(st);
            unparsed.extend(bad);
            crops.push(crop);
        }
        let per_segment = states_to_primitives(&states, &cfg.reconstruction(grid)?);
        Ok(PipelineOutput {
            video_id: job.video.id.clone(),
            mode,
            sequence: PrimitiveSequence::new(&job.video.id, dedup(&per_segment)),
            track: Some(StateTrack::new(job.hand, states)),
            per_segment,
            unparsed,
            crops,
        })
    }

    /// Asks, for each probe segment, whether each hand is moving.
    pub fn cross_hand_probe(&self, items: &[ProbeItem<'_>], cfg: &PipelineConfig, exec: &Executor) -> Result<ProbeReport> {
        for item in items {
            item.job.validate(cfg.cropping)?;
        }
        let crop = cfg.cropping.then_some(&cfg.crop);
        let answers = exec.try_map_range(items.len(), |i| -> Result<_> {
            let item = &items[i];
            let grid = cfg.grid(item.job)?;
            let mut bad = Vec::new();
            let mut ask_hand = |hand: Hand, role: &str| -> Result<bool> {
                let input = self.prepare_segment(item.job, hand, &grid, item.segment, crop)?;
                let (template, vars) = match input.hand_ref {
                    HandRef::Center => ("crosshand_center", PromptVars::for_hand(HandRef::Center)),
                    named => ("crosshand_named", PromptVars::for_hand(named)),
                };
                let tag = RequestTag::new(&item.job.video.id, item.segment, format!("probe-{role}-{hand}"));
                self.ask_binary(&input, template, vars, tag, &mut bad)
            };
            let active = ask_hand(item.active, "active")?;
            let inactive = ask_hand(item.active.other(), "inactive")?;
            Ok((active, inactive, bad.len()))
        })?;
        let active = answers.iter().filter(|a| a.0).count() as u64;
        let inactive = answers.iter().filter(|a| a.1).count() as u64;
        let n = answers.len() as u64;
        Ok(ProbeReport {
            cropped: cfg.cropping,
            active_detect: Proportion::new(active, n),
            inactive_false: Proportion::new(inactive, n),
            unparsed: answers.iter().map(|a| a.2).sum(),
        })
    }
}

/// A segment in which exactly one hand is moving.
#[derive(Debug, Clone, Copy)]
pub struct ProbeItem<'a> {
    pub job: &'a VideoJob,
    pub segment: usize,
    pub active: Hand,
}

/// Segments where one hand is labelled with a moving primitive on every frame
/// and the other hand on none.
pub fn one_hand_active_segments(left: &FrameAnnotation, right: &FrameAnnotation, grid: &SegmentGrid) -> Vec<(usize, Hand)> {
    let range = |s: usize| {
        let (a, b) = grid.segment_bounds(s);
        let start = (a * grid.native_fps + 1e-9).floor() as u64;
        let end = ((b * grid.native_fps) - 1e-9).ceil() as u64;
        start..end.max(start + 1)
    };
    let all = |ann: &FrameAnnotation, s: usize, moving: bool| {
        range(s).all(|f| ann.label_at(f).is_some_and(|p| p.is_moving() == moving))
    };
    (0..grid.segment_count())
        .filter_map(|s| {
            if all(left, s, true) && all(right, s, false) {
                Some((s, Hand::Left))
            } else if all(right, s, true) && all(left, s, false) {
                Some((s, Hand::Right))
            } else {
                None
            }
        })
        .collect()
}

/// Two-sided normal quantile for 95% coverage.
const Z95: f64 = 1.959963984540054;

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::invalid("proportion interval needs at least one trial"));
    }
    if successes > trials {
        return Err(Error::invalid(format!("{successes} successes out of {trials} trials")));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub rate: Option<f64>,
    pub interval: Option<(f64, f64)>,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        Self {
            successes,
            trials,
            rate: (trials > 0).then(|| successes as f64 / trials as f64),
            interval: wilson_interval(successes, trials).ok(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeReport {
    pub cropped: bool,
    /// Fraction of segments where the moving hand was reported moving.
    pub active_detect: Proportion,
    /// Fraction of segments where the still hand was reported moving.
    pub inactive_false: Proportion,
    pub unparsed: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FrameTag, KeypointFrame, SyntheticFrames};
    use crate::vlm::{BackendRequest, MockBackend};
    use std::sync::Arc;
    use Primitive::*;

    fn job(segments: usize) -> VideoJob {
        let duration_s = segments as f64 * 8.0 / 15.0;
        VideoJob {
            video: VideoRef::new("v", "v.mp4", 30.0, (duration_s * 30.0).floor() as u64),
            hand: Hand::Right,
            duration_s,
            keypoints: None,
        }
    }

    fn segment_of(req: &BackendRequest) -> usize {
        req.tag.segment
    }

    fn run_with(mock: MockBackend, job: &VideoJob, cfg: &PipelineConfig) -> (PipelineOutput, VlmClient) {
        let client = VlmClient::new(Arc::new(mock));
        let catalog = PromptCatalog::builtin();
        let out = Pipeline::new(&client, &SyntheticFrames, &catalog).run(job, cfg, &Executor::sequential()).unwrap();
        (out, client)
    }

    #[test]
    fn decomposed_all_no() {
        let (out, client) =
            run_with(MockBackend::new().with_default("No."), &job(5), &PipelineConfig::default());
        assert_eq!(out.track.unwrap().states, vec![SegmentState::default(); 5]);
        assert_eq!(out.sequence.items, vec![Idle]);
        assert_eq!(client.transcript().len(), 10);
    }

    #[test]
    fn decomposed_scripted_states() {
        let answers = [("Yes", "No"), ("Yes", "Yes"), ("No", "Yes"), ("No", "No")];
        let mock = MockBackend::new().with_responder(move |req: &BackendRequest| {
            let (m, g) = answers[segment_of(req)];
            Some(if req.tag.step == "motion" { m } else { g }.to_string())
        });
        let (out, _) = run_with(mock, &job(4), &PipelineConfig::default());
        assert_eq!(out.sequence.items, vec![Reach, Transport, Stabilize, Idle]);
        assert_eq!(out.per_segment.len(), 4);
    }

    #[test]
    fn decomposed_unparseable_defaults_to_no() {
        let mock = MockBackend::new().with_responder(|req: &BackendRequest| {
            Some(if req.tag.step == "motion" { "maybe" } else { "No" }.to_string())
        });
        let (out, _) = run_with(mock, &job(3), &PipelineConfig::default());
        assert_eq!(out.sequence.items, vec![Idle]);
        assert_eq!(out.unparsed.len(), 3);
        assert_eq!(out.unparsed[0].step, "motion");
    }

    #[test]
    fn single_mode() {
        let cfg = PipelineConfig { mode: PromptingMode::Single, ..Default::default() };
        let (out, _) = run_with(MockBackend::new().with_default("TRANSPORT"), &job(3), &cfg);
        assert_eq!(out.sequence.items, vec![Transport]);
        assert!(out.track.is_none());

        let replies = ["Idle", "Reach", "Transport"];
        let mock = MockBackend::new().with_responder(move |r: &BackendRequest| Some(replies[segment_of(r)].into()));
        let (out, _) = run_with(mock, &job(3), &cfg);
        assert_eq!(out.sequence.items, vec![Idle, Reach, Transport]);

        let replies = ["Reach", "???", "Transport"];
        let mock = MockBackend::new().with_responder(move |r: &BackendRequest| Some(replies[segment_of(r)].into()));
        let (out, _) = run_with(mock, &job(3), &cfg);
        assert_eq!(out.per_segment, vec![Reach, Idle, Transport]);
        assert_eq!(out.unparsed.len(), 1);
    }

    #[test]
    fn contextual_flips_and_embeds_prior() {
        let cfg = PipelineConfig { mode: PromptingMode::Contextual, ..Default::default() };
        let (out, client) = run_with(MockBackend::new().with_default("Yes."), &job(4), &cfg);
        let states = out.track.unwrap().states;
        let expect: Vec<_> = (0..4).map(|i| SegmentState { motion: i % 2 == 0, grasp: i % 2 == 0 }).collect();
        assert_eq!(states, expect);
        let records = client.transcript().records();
        let prompt = |seg: usize, step: &str| {
            records.iter().find(|r| r.segment == seg && r.step == step).unwrap().prompt.clone()
        };
        assert!(prompt(0, "motion").contains("previously still"));
        assert!(prompt(0, "grasp").contains("the hand was empty"));
        assert!(prompt(1, "motion").contains("It was previously moving an object"));
        assert!(prompt(1, "grasp").contains("release the object"));

        let (out, _) = run_with(MockBackend::new().with_default("No"), &job(4), &cfg);
        assert_eq!(out.sequence.items, vec![Idle]);
    }

    #[test]
    fn cropped_frames_use_center_reference() {
        let mut j = job(2);
        let frames = (0..j.video.frame_count)
            .map(|i| KeypointFrame::with_arm(i, Hand::Right, (500.0, 300.0), (550.0, 300.0), 1.0));
        j.keypoints = Some(KeypointTrack::new(frames));
        let cfg = PipelineConfig { cropping: true, ..Default::default() };
        let (out, client) = run_with(MockBackend::new().with_default("No"), &j, &cfg);
        assert!(matches!(out.crops[0], CropDecision::Still(_)));
        let r = &client.transcript().records()[0];
        assert!(r.prompt.starts_with("Focus on the hand in the center."));

        // Without keypoints cropping is refused before any request.
        let client = VlmClient::new(Arc::new(MockBackend::new().with_default("No")));
        let catalog = PromptCatalog::builtin();
        let err = Pipeline::new(&client, &SyntheticFrames, &catalog).run(&job(2), &cfg, &Executor::sequential());
        assert!(err.is_err());
        assert_eq!(client.transcript().len(), 0);
    }

    #[test]
    fn uncropped_frames_are_native() {
        let mock = MockBackend::new().with_responder(|req: &BackendRequest| {
            let ok = req.frames.iter().all(|f| FrameTag::parse(&f.bytes).is_some_and(|t| t.crop.is_none()));
            Some(if ok { "No" } else { "garbage" }.into())
        });
        let (out, _) = run_with(mock, &job(3), &PipelineConfig::default());
        assert!(out.unparsed.is_empty());
    }

    #[test]
    fn wilson_reference_values() {
        let (lo, hi) = wilson_interval(60, 100).unwrap();
        assert!((lo - 0.5020025867910618).abs() < 1e-12 && (hi - 0.6905987135675411).abs() < 1e-12);
        let (lo, hi) = wilson_interval(0, 10).unwrap();
        assert!(lo == 0.0 && (hi - 0.27753279986288926).abs() < 1e-12);
        let (lo, hi) = wilson_interval(7, 7).unwrap();
        assert!((lo - 0.6456695649333125).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        assert!(wilson_interval(0, 0).is_err());
        assert!(wilson_interval(3, 2).is_err());
    }

    #[test]
    fn probe_rates() {
        let j = job(4);
        let items: Vec<_> = (0..4).map(|s| ProbeItem { job: &j, segment: s, active: Hand::Left }).collect();
        let cfg = PipelineConfig::default();
        let catalog = PromptCatalog::builtin();

        let client = VlmClient::new(Arc::new(MockBackend::new().with_default("Yes.")));
        let r = Pipeline::new(&client, &SyntheticFrames, &catalog).cross_hand_probe(&items, &cfg, &Executor::sequential()).unwrap();
        assert_eq!((r.active_detect.rate, r.inactive_false.rate), (Some(1.0), Some(1.0)));

        let aware = MockBackend::new().with_responder(|req: &BackendRequest| {
            Some(if req.prompt.contains("LEFT") { "Yes." } else { "No." }.into())
        });
        let client = VlmClient::new(Arc::new(aware));
        let r = Pipeline::new(&client, &SyntheticFrames, &catalog).cross_hand_probe(&items, &cfg, &Executor::sequential()).unwrap();
        assert_eq!((r.active_detect.rate, r.inactive_false.rate), (Some(1.0), Some(0.0)));
        assert_eq!(r.active_detect.trials, 4);
    }

    #[test]
    fn one_hand_active_filter() {
        let grid = SegmentGrid::new(15.0, 8, 3.0 * 8.0 / 15.0, 30.0).unwrap();
        // 16 native frames per segment.
        let mut left = vec![Idle; 48];
        let mut right = vec![Idle; 48];
        left[..16].fill(Reach);
        right[16..32].fill(Transport);
        right[32..40].fill(Transport);
        let l = FrameAnnotation::new(Hand::Left, 30.0, left);
        let r = FrameAnnotation::new(Hand::Right, 30.0, right);
        assert_eq!(one_hand_active_segments(&l, &r, &grid), vec![(0, Hand::Left), (1, Hand::Right)]);
    }
}
