//! Nine-class activity identification from eight frames per video.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ParseValueError, Result};
use crate::ingest::{FrameRequest, FrameSource, VideoRef};
use crate::par::Executor;
use crate::vlm::parse::parse_final_answer;
use crate::vlm::{RequestTag, VlmClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityClass {
    Brushing,
    Combing,
    Deodorant,
    Drinking,
    FaceWash,
    Feeding,
    Glasses,
    Rtt,
    Shelf,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; 9] = [
        ActivityClass::Brushing,
        ActivityClass::Combing,
        ActivityClass::Deodorant,
        ActivityClass::Drinking,
        ActivityClass::FaceWash,
        ActivityClass::Feeding,
        ActivityClass::Glasses,
        ActivityClass::Rtt,
        ActivityClass::Shelf,
    ];

    /// Label as it appears in the prompt catalogs.
    pub fn label(self) -> &'static str {
        match self {
            ActivityClass::Brushing => "Brushing",
            ActivityClass::Combing => "Combing",
            ActivityClass::Deodorant => "Deodorant",
            ActivityClass::Drinking => "Drinking",
            ActivityClass::FaceWash => "Face wash",
            ActivityClass::Feeding => "Feeding",
            ActivityClass::Glasses => "Glasses",
            ActivityClass::Rtt => "RTT exercise",
            ActivityClass::Shelf => "Shelf exercise",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ActivityClass {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        let key = key.strip_suffix("exercise").unwrap_or(&key);
        Ok(match key {
            "brushing" => ActivityClass::Brushing,
            "combing" => ActivityClass::Combing,
            "deodorant" => ActivityClass::Deodorant,
            "drinking" => ActivityClass::Drinking,
            "facewash" => ActivityClass::FaceWash,
            "feeding" => ActivityClass::Feeding,
            "glasses" => ActivityClass::Glasses,
            "rtt" => ActivityClass::Rtt,
            "shelf" => ActivityClass::Shelf,
            _ => return Err(ParseValueError::new("activity", s)),
        })
    }
}

/// A prompt sent verbatim with every activity query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityCatalog {
    pub name: String,
    pub text: String,
}

impl ActivityCatalog {
    pub fn direct() -> Self {
        Self { name: "direct".into(), text: include_str!("../catalog/activity_direct.json").to_string() }
    }

    pub fn optimized() -> Self {
        Self { name: "optimized".into(), text: include_str!("../catalog/activity_optimized.json").to_string() }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "direct" => Some(Self::direct()),
            "optimized" => Some(Self::optimized()),
            _ => None,
        }
    }

    /// Loads a user catalog. The text must name every class.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let c = Self { name, text };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match ActivityClass::ALL.iter().find(|c| !self.text.contains(c.label())) {
            Some(c) => Err(Error::invalid(format!("activity catalog {:?} does not mention {:?}", self.name, c.label()))),
            None => Ok(()),
        }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

/// Eight native frame indices spread evenly over the whole video, first and
/// last frame included.
pub fn uniform_indices(frame_count: u64, n: usize) -> Result<Vec<u64>> {
    if n == 0 || frame_count < n as u64 {
        return Err(Error::invalid(format!("need at least {n} frames, video has {frame_count}")));
    }
    let last = (frame_count - 1) as f64;
    Ok((0..n)
        .map(|i| if n == 1 { 0 } else { (last * i as f64 / (n - 1) as f64).round() as u64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityResult {
    pub video_id: String,
    pub truth: ActivityClass,
    /// `None` when the reply named no class.
    pub predicted: Option<ActivityClass>,
    pub reply: String,
}

pub const ACTIVITY_FRAMES: usize = 8;

pub fn classify_activity(
    client: &VlmClient,
    frames: &dyn FrameSource,
    catalog: &ActivityCatalog,
    video: &VideoRef,
    truth: ActivityClass,
) -> Result<ActivityResult> {
    let requests: Vec<FrameRequest> =
        uniform_indices(video.frame_count, ACTIVITY_FRAMES)?.into_iter().map(FrameRequest::full).collect();
    let images = frames.frames(video, &requests)?;
    let reply = client.ask(images, &catalog.text, RequestTag::new(&video.id, 0, "activity"))?;
    let labels: Vec<&str> = ActivityClass::ALL.iter().map(|c| c.label()).collect();
    let predicted = match parse_final_answer(&reply, &labels) {
        Ok(i) => Some(ActivityClass::ALL[i]),
        Err(_) => {
            log::warn!("video {}: no activity in reply {reply:?}", video.id);
            None
        }
    };
    Ok(ActivityResult { video_id: video.id.clone(), truth, predicted, reply })
}

/// Classifies every video, in input order.
pub fn classify_corpus(
    client: &VlmClient,
    frames: &dyn FrameSource,
    catalog: &ActivityCatalog,
    videos: &[(VideoRef, ActivityClass)],
    exec: &Executor,
) -> Result<Vec<ActivityResult>> {
    exec.try_map_range(videos.len(), |i| classify_activity(client, frames, catalog, &videos[i].0, videos[i].1))
}

/// Counts indexed `[truth][predicted]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 9]; 9],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: ActivityClass, predicted: ActivityClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn row_total(&self, truth: ActivityClass) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    /// Each row divided by its total; empty rows stay zero.
    pub fn normalized(&self) -> [[f64; 9]; 9] {
        let mut out = [[0.0; 9]; 9];
        for (r, row) in self.counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total > 0 {
                for (c, &v) in row.iter().enumerate() {
                    out[r][c] = v as f64 / total as f64;
                }
            }
        }
        out
    }

    /// CSV with class names as header row and first column.
    pub fn to_csv(&self, normalized: bool) -> String {
        let norm = self.normalized();
        let mut out = String::from("truth");
        for c in ActivityClass::ALL {
            out.push(',');
            out.push_str(c.label());
        }
        out.push('\n');
        for r in ActivityClass::ALL {
            out.push_str(r.label());
            for c in ActivityClass::ALL {
                out.push(',');
                if normalized {
                    out.push_str(&format!("{:.6}", norm[r.index()][c.index()]));
                } else {
                    out.push_str(&self.counts[r.index()][c.index()].to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityReport {
    pub total: usize,
    pub correct: usize,
    pub unparsed: usize,
    /// Correct over total; unparsed replies count as wrong.
    pub accuracy: f64,
    /// Accuracy of always guessing the most frequent true class.
    pub majority_baseline: f64,
    pub matrix: ConfusionMatrix,
}

pub fn accuracy_and_matrix(results: &[ActivityResult]) -> Result<ActivityReport> {
    if results.is_empty() {
        return Err(Error::invalid("no activity results"));
    }
    let mut matrix = ConfusionMatrix::default();
    let mut truth_counts = [0usize; 9];
    let mut correct = 0;
    let mut unparsed = 0;
    for r in results {
        truth_counts[r.truth.index()] += 1;
        match r.predicted {
            Some(p) => {
                matrix.add(r.truth, p);
                correct += usize::from(p == r.truth);
            }
            None => unparsed += 1,
        }
    }
    let total = results.len();
    let modal = truth_counts.iter().copied().max().unwrap_or(0);
    Ok(ActivityReport {
        total,
        correct,
        unparsed,
        accuracy: correct as f64 / total as f64,
        majority_baseline: modal as f64 / total as f64,
        matrix,
    })
}
