//! Motion/grasp tracks to primitive sequences, plus the Omniscient and Markov
//! baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dedup, FrameAnnotation, Primitive, PrimitiveSequence, SegmentGrid, SegmentState, StateTrack};

/// Parameters of the terminal-grasp heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    /// A moving, empty-handed run is a reach if a grasping segment starts within
    /// this many seconds of the run's start; otherwise it is a reposition.
    pub terminal_grasp_window_s: f64,
    pub segment_duration_s: f64,
}

impl ReconstructionConfig {
    pub const DEFAULT_WINDOW_S: f64 = 2.0;

    pub fn new(terminal_grasp_window_s: f64, segment_duration_s: f64) -> Result<Self> {
        if terminal_grasp_window_s.is_nan() || terminal_grasp_window_s <= 0.0 {
            return Err(Error::invalid("terminal grasp window must be positive"));
        }
        if segment_duration_s.is_nan() || segment_duration_s <= 0.0 {
            return Err(Error::invalid("segment duration must be positive"));
        }
        Ok(Self { terminal_grasp_window_s, segment_duration_s })
    }

    pub fn for_grid(grid: &SegmentGrid) -> Self {
        Self { terminal_grasp_window_s: Self::DEFAULT_WINDOW_S, segment_duration_s: grid.segment_duration_s() }
    }
}

/// Per-segment primitive labels (not de-duplicated) for a motion/grasp track.
pub fn states_to_primitives(states: &[SegmentState], cfg: &ReconstructionConfig) -> Vec<Primitive> {
    let mut out = Vec::with_capacity(states.len());
    let mut i = 0;
    while i < states.len() {
        let s = states[i];
        match (s.motion, s.grasp) {
            (true, true) => out.push(Primitive::Transport),
            (false, true) => out.push(Primitive::Stabilize),
            (false, false) => out.push(Primitive::Idle),
            (true, false) => {
                let run_end = states[i..]
                    .iter()
                    .position(|x| !(x.motion && !x.grasp))
                    .map_or(states.len(), |k| i + k);
                let label = match states[run_end..].iter().position(|x| x.grasp) {
                    Some(k) => {
                        let offset_s = (run_end + k - i) as f64 * cfg.segment_duration_s;
                        if offset_s <= cfg.terminal_grasp_window_s + 1e-9 {
                            Primitive::Reach
                        } else {
                            Primitive::Reposition
                        }
                    }
                    None => Primitive::Reposition,
                };
                out.extend(std::iter::repeat_n(label, run_end - i));
                i = run_end;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn track_to_sequence(track: &StateTrack, cfg: &ReconstructionConfig, source_id: &str) -> PrimitiveSequence {
    PrimitiveSequence::new(source_id, dedup(&states_to_primitives(&track.states, cfg)))
}

/// Ground-truth motion/grasp states sampled at each segment's midpoint frame.
pub fn midpoint_states(ann: &FrameAnnotation, grid: &SegmentGrid) -> Result<Vec<SegmentState>> {
    let needed = grid.native_frame_count();
    if (ann.labels.len() as u64) < needed {
        return Err(Error::invalid(format!(
            "annotation covers {} frames but the video has {needed}",
            ann.labels.len()
        )));
    }
    Ok((0..grid.segment_count())
        .map(|seg| {
            let frame = grid.midpoint_frame(seg);
            ann.labels[frame as usize].state()
        })
        .collect())
}

/// Upper-bound baseline: reconstructs from the ground-truth state at each
/// segment's midpoint.
pub fn omniscient_baseline(
    ann: &FrameAnnotation,
    grid: &SegmentGrid,
    cfg: &ReconstructionConfig,
    source_id: &str,
) -> Result<PrimitiveSequence> {
    let states = midpoint_states(ann, grid)?;
    Ok(PrimitiveSequence::new(source_id, dedup(&states_to_primitives(&states, cfg))))
}

/// First-order chain over the four joint motion/grasp states, indexed by
/// [`SegmentState::joint_index`]. Sampling always starts still and empty-handed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub matrix: [[f64; 4]; 4],
}

impl TransitionModel {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(matrix: [[f64; 4]; 4]) -> Result<Self> {
        for (i, row) in matrix.iter().enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::invalid(format!("transition row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > Self::TOLERANCE {
                return Err(Error::invalid(format!("transition row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { matrix: m }
    }

    pub fn probability(&self, from: SegmentState, to: SegmentState) -> f64 {
        self.matrix[from.joint_index()][to.joint_index()]
    }

    fn step<R: Rng>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.matrix[from];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding slack above the row sum.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(from)
    }

    /// Samples `len` joint states starting from still/empty. The generator is
    /// ChaCha8 seeded from `seed`, on stream `stream`.
    pub fn sample_states(&self, len: usize, seed: u64, stream: u64) -> Vec<SegmentState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut out = Vec::with_capacity(len);
        let mut state = 0usize;
        for k in 0..len {
            if k > 0 {
                state = self.step(state, &mut rng);
            }
            out.push(SegmentState::from_joint_index(state));
        }
        out
    }
}

/// Artificial prediction from the Markov chain, reconstructed and de-duplicated.
pub fn markov_baseline(
    model: &TransitionModel,
    segment_count: usize,
    seed: u64,
    stream: u64,
    cfg: &ReconstructionConfig,
    source_id: &str,
) -> Result<PrimitiveSequence> {
    if segment_count == 0 {
        return Err(Error::invalid("markov baseline needs at least one segment"));
    }
    TransitionModel::new(model.matrix)?;
    let states = model.sample_states(segment_count, seed, stream);
    Ok(PrimitiveSequence::new(source_id, dedup(&states_to_primitives(&states, cfg))))
}

/// Maximum-likelihood transition estimate; rows never observed become self-loops.
pub fn estimate_transitions<'a, I>(tracks: I) -> Result<TransitionModel>
where
    I: IntoIterator<Item = &'a [SegmentState]>,
{
    let mut counts = [[0u64; 4]; 4];
    let mut any = false;
    for track in tracks {
        any = true;
        for w in track.windows(2) {
            counts[w[0].joint_index()][w[1].joint_index()] += 1;
        }
    }
    if !any {
        return Err(Error::invalid("cannot estimate transitions from an empty corpus"));
    }
    let mut matrix = [[0.0; 4]; 4];
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            matrix[i][i] = 1.0;
        } else {
            for j in 0..4 {
                matrix[i][j] = row[j] as f64 / total as f64;
            }
        }
    }
    Ok(TransitionModel { matrix })
}
