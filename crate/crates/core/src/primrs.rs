//! PRIM-RS: idle/grasp prompting with a pose-informed decision pathway,
//! followed by smoothing and block-level primitive assignment.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{decide_crop, segment_motion, CropConfig, CropDecision};
use crate::primpipe::{Pipeline, SegmentInput, Unparsed, VideoJob};
use crate::reconstruct::{states_to_primitives, ReconstructionConfig};
use crate::types::{dedup, Primitive, PrimitiveSequence, SegmentGrid, SegmentState};
use crate::vlm::parse::parse_yes_no;
use crate::vlm::{HandRef, PromptVars, RequestTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdleState {
    Idle,
    NotIdle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraspState {
    Holding,
    Empty,
}

/// What decided a segment's state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSource {
    Vlm,
    PoseAbstain,
    PoseQuick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimRsState {
    pub idle: IdleState,
    pub grasp: GraspState,
    pub source: StateSource,
}

impl PrimRsState {
    pub fn new(idle: IdleState, grasp: GraspState, source: StateSource) -> Self {
        Self { idle, grasp, source }
    }

    fn class(&self) -> SegmentClass {
        match (self.idle, self.grasp) {
            (IdleState::Idle, _) => SegmentClass::Idle,
            (IdleState::NotIdle, GraspState::Empty) => SegmentClass::Moving,
            (IdleState::NotIdle, GraspState::Holding) => SegmentClass::Holding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegmentClass {
    Idle,
    Moving,
    Holding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimRsConfig {
    pub sampling_rate_hz: f64,
    pub frames_per_segment: usize,
    /// Use the pose pathway and cropped frames. When off, every segment is
    /// asked about on full frames.
    pub cropping: bool,
    /// Smoothing and block assignment. When off, the raw idle/grasp answers go
    /// straight through motion/grasp reconstruction.
    pub postprocess: bool,
    pub crop: CropConfig,
    pub terminal_grasp_window_s: f64,
}

impl Default for PrimRsConfig {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 15.0,
            frames_per_segment: 4,
            cropping: true,
            postprocess: true,
            crop: CropConfig::default(),
            terminal_grasp_window_s: ReconstructionConfig::DEFAULT_WINDOW_S,
        }
    }
}

impl PrimRsConfig {
    pub fn grid(&self, job: &VideoJob) -> Result<SegmentGrid> {
        SegmentGrid::new(self.sampling_rate_hz, self.frames_per_segment, job.duration_s, job.video.native_fps)
    }
}

/// Two-pass neighbour smoothing. Pass A relabels every interior element whose
/// two neighbours are both `pass_a` to `pass_a`; pass B does the same for
/// `pass_b` on the pass-A output. Each pass updates all elements at once from
/// the previous values. The first and last elements are never relabelled.
pub fn smooth_binary<T: Copy + PartialEq>(signal: &[T], pass_a: T, pass_b: T) -> Vec<T> {
    let pass = |s: &[T], target: T| -> Vec<T> {
        let mut out = s.to_vec();
        for i in 1..s.len().saturating_sub(1) {
            if s[i - 1] == target && s[i + 1] == target {
                out[i] = target;
            }
        }
        out
    };
    pass(&pass(signal, pass_a), pass_b)
}

fn changed<T: PartialEq>(before: &[T], after: &[T]) -> Vec<usize> {
    before.iter().zip(after).enumerate().filter(|(_, (a, b))| a != b).map(|(i, _)| i).collect()
}

/// Forces the hand empty wherever it is idle, then smooths the grasp signal
/// (holding first, then empty).
pub fn correct_and_smooth_grasp(idle: &[IdleState], grasp: &[GraspState]) -> Result<Vec<GraspState>> {
    if idle.len() != grasp.len() {
        return Err(Error::invalid(format!("idle has {} segments but grasp has {}", idle.len(), grasp.len())));
    }
    let corrected: Vec<GraspState> = idle
        .iter()
        .zip(grasp)
        .map(|(i, g)| if *i == IdleState::Idle { GraspState::Empty } else { *g })
        .collect();
    Ok(smooth_binary(&corrected, GraspState::Holding, GraspState::Empty))
}

/// Transport/stabilize labels for one holding block. Runs of three or more
/// still segments are stabilize. A still segment outside such a run that falls
/// in the block's last three segments turns itself and the rest of the block
/// into stabilize. Everything else is transport.
pub fn assign_transport_stabilize(still: &[bool]) -> Vec<Primitive> {
    let n = still.len();
    let mut out = vec![Primitive::Transport; n];
    let mut in_run = vec![false; n];
    let mut i = 0;
    while i < n {
        if !still[i] {
            i += 1;
            continue;
        }
        let end = still[i..].iter().position(|s| !s).map_or(n, |k| i + k);
        if end - i >= 3 {
            in_run[i..end].fill(true);
        }
        i = end;
    }
    for i in 0..n {
        if in_run[i] {
            out[i] = Primitive::Stabilize;
        }
    }
    if let Some(first) = (0..n).find(|&i| still[i] && !in_run[i] && i + 3 >= n) {
        out[first..].fill(Primitive::Stabilize);
    }
    out
}

/// One element of the labelled timeline: either a segment's label or an
/// inserted primitive between two segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub primitive: Primitive,
    /// `None` for inserted entries.
    pub segment: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertion {
    /// Inserted between this segment and the next.
    pub after_segment: usize,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockContext {
    Idle,
    Holding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub start: usize,
    pub len: usize,
    pub before: BlockContext,
    pub after: BlockContext,
    pub labels: Vec<Primitive>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub idle_flips: Vec<usize>,
    pub grasp_forced_empty: Vec<usize>,
    pub grasp_flips: Vec<usize>,
    pub blocks: Vec<BlockRecord>,
    pub insertions: Vec<Insertion>,
}

fn context(states: &[PrimRsState], i: Option<usize>) -> BlockContext {
    match i.and_then(|i| states.get(i)).map(PrimRsState::class) {
        Some(SegmentClass::Holding) => BlockContext::Holding,
        _ => BlockContext::Idle,
    }
}

/// Labels every segment of a smoothed, consistent state sequence and inserts
/// reach/reposition between directly adjacent idle and holding segments.
/// Moving empty-handed blocks take their label from the surrounding context;
/// a missing neighbour at either end of the video counts as idle.
pub fn classify_blocks(states: &[PrimRsState], still: &[bool], prov: &mut Provenance) -> Result<Vec<TimelineEntry>> {
    if states.len() != still.len() {
        return Err(Error::invalid(format!("{} states but {} stillness flags", states.len(), still.len())));
    }
    let n = states.len();
    let mut labels = vec![Primitive::Idle; n];
    let mut i = 0;
    while i < n {
        let class = states[i].class();
        let end = states[i..].iter().position(|s| s.class() != class).map_or(n, |k| i + k);
        match class {
            SegmentClass::Idle => {}
            SegmentClass::Holding => labels[i..end].copy_from_slice(&assign_transport_stabilize(&still[i..end])),
            SegmentClass::Moving => {
                let before = context(states, i.checked_sub(1));
                let after = context(states, Some(end));
                let len = end - i;
                let first = len.div_ceil(2);
                let (a, b) = match (before, after) {
                    (BlockContext::Idle, BlockContext::Holding) => (Primitive::Reach, Primitive::Reach),
                    (BlockContext::Holding, BlockContext::Idle) => (Primitive::Reposition, Primitive::Reposition),
                    (BlockContext::Holding, BlockContext::Holding) => (Primitive::Reposition, Primitive::Reach),
                    (BlockContext::Idle, BlockContext::Idle) => (Primitive::Reach, Primitive::Reposition),
                };
                labels[i..i + first].fill(a);
                labels[i + first..end].fill(b);
                prov.blocks.push(BlockRecord { start: i, len, before, after, labels: labels[i..end].to_vec() });
            }
        }
        i = end;
    }

    let mut timeline = Vec::with_capacity(n);
    for (i, &p) in labels.iter().enumerate() {
        timeline.push(TimelineEntry { primitive: p, segment: Some(i) });
        if i + 1 < n {
            let inserted = match (states[i].class(), states[i + 1].class()) {
                (SegmentClass::Idle, SegmentClass::Holding) => Some(Primitive::Reach),
                (SegmentClass::Holding, SegmentClass::Idle) => Some(Primitive::Reposition),
                _ => None,
            };
            if let Some(primitive) = inserted {
                timeline.push(TimelineEntry { primitive, segment: None });
                prov.insertions.push(Insertion { after_segment: i, primitive });
            }
        }
    }
    Ok(timeline)
}

/// Smoothing, grasp correction and block assignment on raw decisions.
pub fn postprocess(raw: &[PrimRsState], still: &[bool]) -> Result<(Vec<PrimRsState>, Vec<TimelineEntry>, Provenance)> {
    let mut prov = Provenance::default();
    let idle: Vec<IdleState> = raw.iter().map(|s| s.idle).collect();
    let idle_s = smooth_binary(&idle, IdleState::NotIdle, IdleState::Idle);
    prov.idle_flips = changed(&idle, &idle_s);

    let grasp: Vec<GraspState> = raw.iter().map(|s| s.grasp).collect();
    prov.grasp_forced_empty = (0..raw.len())
        .filter(|&i| idle_s[i] == IdleState::Idle && grasp[i] == GraspState::Holding)
        .collect();
    let grasp_s = correct_and_smooth_grasp(&idle_s, &grasp)?;
    let forced: Vec<GraspState> = grasp
        .iter()
        .zip(&idle_s)
        .map(|(g, i)| if *i == IdleState::Idle { GraspState::Empty } else { *g })
        .collect();
    prov.grasp_flips = changed(&forced, &grasp_s);

    let smoothed: Vec<PrimRsState> = raw
        .iter()
        .zip(idle_s.iter().zip(&grasp_s))
        .map(|(r, (i, g))| PrimRsState::new(*i, *g, r.source))
        .collect();
    let timeline = classify_blocks(&smoothed, still, &mut prov)?;
    Ok((smoothed, timeline, prov))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimRsOutput {
    pub video_id: String,
    pub raw: Vec<PrimRsState>,
    pub smoothed: Option<Vec<PrimRsState>>,
    pub still: Vec<bool>,
    pub timeline: Vec<TimelineEntry>,
    pub sequence: PrimitiveSequence,
    pub provenance: Option<Provenance>,
    pub unparsed: Vec<Unparsed>,
}

impl fmt::Display for IdleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdleState::Idle => "idle",
            IdleState::NotIdle => "not-idle",
        })
    }
}

impl fmt::Display for GraspState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraspState::Holding => "holding",
            GraspState::Empty => "empty",
        })
    }
}

#[derive(Clone, Copy)]
enum Pathway {
    Abstain,
    Quick,
    Ask,
}

impl Pipeline<'_> {
    fn ask_primrs(
        &self,
        input: &SegmentInput,
        template: &str,
        tag: RequestTag,
        unparsed: &mut Vec<Unparsed>,
    ) -> Result<bool> {
        let prompt = self.catalog.render(template, &PromptVars::for_hand(input.hand_ref))?;
        let (segment, step) = (tag.segment, tag.step.clone());
        let reply = self.client.ask(input.frames.clone(), &prompt.text, tag)?;
        Ok(parse_yes_no(&reply).unwrap_or_else(|_| {
            log::warn!("segment {segment} {step}: unparseable reply {reply:?}, using \"no\"");
            unparsed.push(Unparsed { segment, step, reply });
            false
        }))
    }

    /// Per-segment idle/grasp decisions and pose stillness flags. Runs
    /// segments in order because each grasp question depends on the previous
    /// answer.
    pub fn decide_states(
        &self,
        job: &VideoJob,
        cfg: &PrimRsConfig,
    ) -> Result<(Vec<PrimRsState>, Vec<bool>, Vec<Unparsed>)> {
        job.validate(cfg.cropping)?;
        let grid = cfg.grid(job)?;
        let mut states = Vec::with_capacity(grid.segment_count());
        let mut still = Vec::with_capacity(grid.segment_count());
        let mut unparsed = Vec::new();
        let mut prior = GraspState::Empty;
        for s in 0..grid.segment_count() {
            let kp = job.keypoints.as_ref().and_then(|t| t.select(&grid.sample_indices(s)));
            let motion = kp.as_ref().and_then(|k| segment_motion(k, job.hand, &cfg.crop));
            still.push(motion.is_some_and(|(dx, dy)| dx <= cfg.crop.still_px && dy <= cfg.crop.still_px));

            let pathway = match (&kp, cfg.cropping) {
                (_, false) => Pathway::Ask,
                (None, true) => Pathway::Abstain,
                (Some(k), true) => match decide_crop(k, job.hand, &cfg.crop) {
                    CropDecision::Abstain => Pathway::Abstain,
                    CropDecision::Moving { .. } => Pathway::Quick,
                    CropDecision::Still(_) => Pathway::Ask,
                },
            };
            let state = match pathway {
                Pathway::Abstain => PrimRsState::new(IdleState::Idle, GraspState::Empty, StateSource::PoseAbstain),
                Pathway::Quick => PrimRsState::new(IdleState::NotIdle, prior, StateSource::PoseQuick),
                Pathway::Ask => {
                    let crop = cfg.cropping.then_some(&cfg.crop);
                    let mut input = self.prepare_segment(job, job.hand, &grid, s, crop)?;
                    if !cfg.cropping {
                        input.hand_ref = HandRef::Named(job.hand);
                    }
                    let tag = |step: &str| RequestTag::new(&job.video.id, s, step);
                    let idle = self.ask_primrs(&input, "primrs_idle", tag("idle"), &mut unparsed)?;
                    let grasp = match prior {
                        GraspState::Empty => {
                            if self.ask_primrs(&input, "primrs_grasp", tag("pickup"), &mut unparsed)? {
                                GraspState::Holding
                            } else {
                                GraspState::Empty
                            }
                        }
                        GraspState::Holding => {
                            if self.ask_primrs(&input, "primrs_release", tag("release"), &mut unparsed)? {
                                GraspState::Empty
                            } else {
                                GraspState::Holding
                            }
                        }
                    };
                    let idle = if idle { IdleState::Idle } else { IdleState::NotIdle };
                    PrimRsState::new(idle, grasp, StateSource::Vlm)
                }
            };
            prior = state.grasp;
            states.push(state);
        }
        Ok((states, still, unparsed))
    }

    pub fn run_primrs(&self, job: &VideoJob, cfg: &PrimRsConfig) -> Result<PrimRsOutput> {
        let grid = cfg.grid(job)?;
        let (raw, still, unparsed) = self.decide_states(job, cfg)?;
        let (smoothed, timeline, provenance) = if cfg.postprocess {
            let (s, t, p) = postprocess(&raw, &still)?;
            (Some(s), t, Some(p))
        } else {
            let rcfg = ReconstructionConfig::new(cfg.terminal_grasp_window_s, grid.segment_duration_s())?;
            let motion: Vec<SegmentState> = raw
                .iter()
                .map(|s| SegmentState { motion: s.idle == IdleState::NotIdle, grasp: s.grasp == GraspState::Holding })
                .collect();
            let t = states_to_primitives(&motion, &rcfg)
                .into_iter()
                .enumerate()
                .map(|(i, primitive)| TimelineEntry { primitive, segment: Some(i) })
                .collect();
            (None, t, None)
        };
        let labels: Vec<Primitive> = timeline.iter().map(|e| e.primitive).collect();
        Ok(PrimRsOutput {
            video_id: job.video.id.clone(),
            sequence: PrimitiveSequence::new(&job.video.id, dedup(&labels)),
            raw,
            smoothed,
            still,
            timeline,
            provenance,
            unparsed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use GraspState::{Empty as E, Holding as H};
    use IdleState::{Idle as I, NotIdle as N};
    use Primitive::*;

    fn st(idle: IdleState, grasp: GraspState) -> PrimRsState {
        PrimRsState::new(idle, grasp, StateSource::Vlm)
    }

    fn labels(t: &[TimelineEntry]) -> Vec<Primitive> {
        t.iter().map(|e| e.primitive).collect()
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_binary(&[N, I, N], N, I), vec![N, N, N]);
        assert_eq!(smooth_binary(&[I, N, I], N, I), vec![I, I, I]);
        assert_eq!(smooth_binary(&[I, I, I], N, I), vec![I, I, I]);
        assert_eq!(smooth_binary(&[I], N, I), vec![I]);
        assert_eq!(smooth_binary::<IdleState>(&[], N, I), vec![]);
    }

    #[test]
    fn grasp_correction() {
        assert_eq!(correct_and_smooth_grasp(&[I, I, I], &[H, H, E]).unwrap(), vec![E, E, E]);
        assert_eq!(correct_and_smooth_grasp(&[N, N, N], &[E, H, E]).unwrap(), vec![E, E, E]);
        assert_eq!(correct_and_smooth_grasp(&[N, N, N, I], &[H, H, H, E]).unwrap(), vec![H, H, H, E]);
        assert!(correct_and_smooth_grasp(&[N], &[H, H]).is_err());
    }

    #[test]
    fn transport_stabilize_rules() {
        assert_eq!(
            assign_transport_stabilize(&[false, true, true, true, false]),
            vec![Transport, Stabilize, Stabilize, Stabilize, Transport]
        );
        assert_eq!(assign_transport_stabilize(&[false; 4]), vec![Transport; 4]);
        assert_eq!(
            assign_transport_stabilize(&[false, false, false, true, false]),
            vec![Transport, Transport, Transport, Stabilize, Stabilize]
        );
        // A lone still segment early in the block stays transport.
        assert_eq!(assign_transport_stabilize(&[true, false, false, false, false]), vec![Transport; 5]);
    }

    #[test]
    fn four_case_blocks() {
        let mut prov = Provenance::default();
        let s = [st(I, E), st(N, E), st(N, E), st(N, E), st(N, E), st(N, H)];
        let t = classify_blocks(&s, &[false; 6], &mut prov).unwrap();
        assert_eq!(labels(&t), vec![Idle, Reach, Reach, Reach, Reach, Transport]);

        let s = [st(N, H), st(N, E), st(N, E), st(I, E)];
        let t = classify_blocks(&s, &[false; 4], &mut prov).unwrap();
        assert_eq!(labels(&t), vec![Transport, Reposition, Reposition, Idle]);

        let s = [st(N, H), st(N, E), st(N, E), st(N, E), st(N, H)];
        let t = classify_blocks(&s, &[false; 5], &mut prov).unwrap();
        assert_eq!(labels(&t), vec![Transport, Reposition, Reposition, Reach, Transport]);

        let s = [st(I, E), st(N, E), st(N, E), st(I, E)];
        let t = classify_blocks(&s, &[false; 4], &mut prov).unwrap();
        assert_eq!(labels(&t), vec![Idle, Reach, Reposition, Idle]);
        assert_eq!(prov.blocks.len(), 4);
        assert!(prov.insertions.is_empty());
    }

    #[test]
    fn direct_adjacency_inserts() {
        let mut prov = Provenance::default();
        let s = [st(I, E), st(N, H), st(N, H), st(I, E)];
        let t = classify_blocks(&s, &[false; 4], &mut prov).unwrap();
        assert_eq!(labels(&t), vec![Idle, Reach, Transport, Transport, Reposition, Idle]);
        assert_eq!(
            prov.insertions,
            vec![Insertion { after_segment: 0, primitive: Reach }, Insertion { after_segment: 2, primitive: Reposition }]
        );
        assert_eq!(t.iter().filter(|e| e.segment.is_none()).count(), 2);
    }

    fn signal() -> impl Strategy<Value = Vec<IdleState>> {
        prop::collection::vec(prop_oneof![Just(I), Just(N)], 0..40)
    }

    fn states() -> impl Strategy<Value = Vec<PrimRsState>> {
        prop::collection::vec(
            (prop_oneof![Just(I), Just(N)], prop_oneof![Just(H), Just(E)]).prop_map(|(i, g)| st(i, g)),
            0..40,
        )
    }

    proptest! {
        #[test]
        fn smoothing_is_idempotent(s in signal()) {
            let once = smooth_binary(&s, N, I);
            prop_assert_eq!(smooth_binary(&once, N, I), once.clone());
            for w in once.windows(3) {
                prop_assert!(!(w[0] == w[2] && w[1] != w[0]));
            }
        }

        #[test]
        fn idle_never_touches_holding(raw in states(), still in prop::collection::vec(any::<bool>(), 40)) {
            let (smoothed, timeline, prov) = postprocess(&raw, &still[..raw.len()]).unwrap();
            prop_assert_eq!(smoothed.len(), raw.len());
            prop_assert_eq!(timeline.len(), raw.len() + prov.insertions.len());
            for w in timeline.windows(2) {
                let held = |p: Primitive| matches!(p, Transport | Stabilize);
                prop_assert!(!(w[0].primitive == Idle && held(w[1].primitive)));
                prop_assert!(!(held(w[0].primitive) && w[1].primitive == Idle));
            }
            for s in &smoothed {
                prop_assert!(!(s.idle == I && s.grasp == H));
            }
        }
    }
}
