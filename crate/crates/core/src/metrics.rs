//! Sequence- and segment-level evaluation metrics.
//!
//! All metrics compare a ground-truth sequence `G` against a prediction `P`:
//!
//! * edit score `ES = (1 - L / max(len G, len P)) * 100`
//! * action error rate `AER = L / len G`
//! * relative counting error `RCE = sum_p |c(p, G) - c(p, P)| / len G`
//!
//! where `L` is the unit-cost Levenshtein distance and `c(p, S)` counts the
//! occurrences of primitive `p` in `S`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Executor;
use crate::types::{count, dedup, Primitive, StateTrack};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("undefined AER: ground truth is empty")]
    UndefinedAer,
    #[error("undefined RCE: ground truth is empty")]
    UndefinedRce,
    #[error("undefined oversegmentation ratio: ground truth is empty")]
    UndefinedOversegmentation,
    #[error("track length mismatch: ground truth has {gt} segments, prediction has {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("corpus size mismatch: {gt} ground-truth sequences, {pred} predictions")]
    CorpusMismatch { gt: usize, pred: usize },
}

/// Unit-cost insertion/deletion/substitution distance, two-row DP.
pub fn levenshtein<T: PartialEq>(g: &[T], p: &[T]) -> usize {
    if g.is_empty() {
        return p.len();
    }
    if p.is_empty() {
        return g.len();
    }
    let mut prev: Vec<usize> = (0..=p.len()).collect();
    let mut curr = vec![0; p.len() + 1];
    for (i, gi) in g.iter().enumerate() {
        curr[0] = i + 1;
        for (j, pj) in p.iter().enumerate() {
            let substitution = prev[j] + usize::from(gi != pj);
            curr[j + 1] = substitution.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[p.len()]
}

/// Edit score in `[0, 100]`. Two empty sequences are identical and score 100.
pub fn edit_score<T: PartialEq>(g: &[T], p: &[T]) -> f64 {
    let longest = g.len().max(p.len());
    if longest == 0 {
        return 100.0;
    }
    (1.0 - levenshtein(g, p) as f64 / longest as f64) * 100.0
}

pub fn action_error_rate<T: PartialEq>(g: &[T], p: &[T]) -> Result<f64, MetricError> {
    if g.is_empty() {
        return Err(MetricError::UndefinedAer);
    }
    Ok(levenshtein(g, p) as f64 / g.len() as f64)
}

pub fn relative_counting_error(g: &[Primitive], p: &[Primitive]) -> Result<f64, MetricError> {
    if g.is_empty() {
        return Err(MetricError::UndefinedRce);
    }
    let total: usize = Primitive::ALL.iter().map(|&q| count(q, g).abs_diff(count(q, p))).sum();
    Ok(total as f64 / g.len() as f64)
}

/// Counting error per primitive, pooled over a corpus and normalized by that
/// primitive's total ground-truth count. Primitives absent from the ground
/// truth are omitted.
pub fn per_primitive_rce<G, P>(corpus_g: &[G], corpus_p: &[P]) -> Result<BTreeMap<Primitive, f64>, MetricError>
where
    G: AsRef<[Primitive]>,
    P: AsRef<[Primitive]>,
{
    if corpus_g.len() != corpus_p.len() {
        return Err(MetricError::CorpusMismatch { gt: corpus_g.len(), pred: corpus_p.len() });
    }
    let mut out = BTreeMap::new();
    for q in Primitive::ALL {
        let mut error = 0usize;
        let mut gt_total = 0usize;
        for (g, p) in corpus_g.iter().zip(corpus_p) {
            let cg = count(q, g.as_ref());
            error += cg.abs_diff(count(q, p.as_ref()));
            gt_total += cg;
        }
        if gt_total > 0 {
            out.insert(q, error as f64 / gt_total as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Motion,
    Grasp,
}

/// F1 score of one binary channel with "yes" as the positive class.
///
/// When neither track has a positive segment the prediction is perfect and
/// the score is 1.
pub fn segment_f1(gt: &StateTrack, pred: &StateTrack, channel: Channel) -> Result<f64, MetricError> {
    if gt.len() != pred.len() {
        return Err(MetricError::LengthMismatch { gt: gt.len(), pred: pred.len() });
    }
    let pick = |s: &crate::types::SegmentState| match channel {
        Channel::Motion => s.motion,
        Channel::Grasp => s.grasp,
    };
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (g, p) in gt.states.iter().zip(&pred.states) {
        match (pick(g), pick(p)) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

/// Ratio of de-duplicated prediction length to de-duplicated ground-truth length.
pub fn oversegmentation_ratio<T: PartialEq + Copy>(g: &[T], p: &[T]) -> Result<f64, MetricError> {
    let g_len = dedup(g).len();
    if g_len == 0 {
        return Err(MetricError::UndefinedOversegmentation);
    }
    Ok(dedup(p).len() as f64 / g_len as f64)
}

/// Metrics for a single video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub video_id: String,
    pub edit_score: f64,
    pub action_error_rate: f64,
    pub relative_counting_error: f64,
    pub per_primitive_rce: BTreeMap<Primitive, f64>,
    pub ground_truth_len: usize,
    pub prediction_len: usize,
    pub motion_f1: Option<f64>,
    pub grasp_f1: Option<f64>,
    pub oversegmentation_ratio: Option<f64>,
}

impl MetricReport {
    pub fn compute(video_id: &str, g: &[Primitive], p: &[Primitive]) -> Result<Self, MetricError> {
        Ok(Self {
            video_id: video_id.to_string(),
            edit_score: edit_score(g, p),
            action_error_rate: action_error_rate(g, p)?,
            relative_counting_error: relative_counting_error(g, p)?,
            per_primitive_rce: per_primitive_rce(&[g], &[p])?,
            ground_truth_len: g.len(),
            prediction_len: p.len(),
            motion_f1: None,
            grasp_f1: None,
            oversegmentation_ratio: oversegmentation_ratio(g, p).ok(),
        })
    }

    /// Adds motion/grasp F1 from per-segment tracks.
    pub fn with_tracks(mut self, gt: &StateTrack, pred: &StateTrack) -> Result<Self, MetricError> {
        self.motion_f1 = Some(segment_f1(gt, pred, Channel::Motion)?);
        self.grasp_f1 = Some(segment_f1(gt, pred, Channel::Grasp)?);
        Ok(self)
    }
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl MeanSem {
    /// Sample standard deviation over `sqrt(n)`; the SEM of a single value is 0.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sem, n })
    }
}

/// Per-video metrics and their macro averages over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub videos: Vec<MetricReport>,
    pub edit_score: Option<MeanSem>,
    pub action_error_rate: Option<MeanSem>,
    pub relative_counting_error: Option<MeanSem>,
    /// Pooled over the corpus.
    pub per_primitive_rce: BTreeMap<Primitive, f64>,
}

impl CorpusReport {
    pub fn from_reports(videos: Vec<MetricReport>, per_primitive_rce: BTreeMap<Primitive, f64>) -> Self {
        let col = |f: fn(&MetricReport) -> f64| MeanSem::of(&videos.iter().map(f).collect::<Vec<_>>());
        Self {
            edit_score: col(|r| r.edit_score),
            action_error_rate: col(|r| r.action_error_rate),
            relative_counting_error: col(|r| r.relative_counting_error),
            per_primitive_rce,
            videos,
        }
    }
}

/// A ground-truth/prediction pair for corpus evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub video_id: String,
    pub ground_truth: Vec<Primitive>,
    pub prediction: Vec<Primitive>,
}

/// Computes per-video metrics (in parallel when the executor allows) and
/// averages them. Pairs with an empty ground truth are rejected.
pub fn evaluate_corpus(pairs: &[EvalPair], exec: &Executor) -> Result<CorpusReport, MetricError> {
    let reports = exec
        .map(pairs, |pair| MetricReport::compute(&pair.video_id, &pair.ground_truth, &pair.prediction))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let gts: Vec<&[Primitive]> = pairs.iter().map(|p| p.ground_truth.as_slice()).collect();
    let preds: Vec<&[Primitive]> = pairs.iter().map(|p| p.prediction.as_slice()).collect();
    let pooled = per_primitive_rce(&gts, &preds)?;
    Ok(CorpusReport::from_reports(reports, pooled))
}
