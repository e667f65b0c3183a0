//! Fugl-Meyer upper-extremity scoring: CSV-driven question chains,
//! single-prompt reasoning, and coordination/speed scoring on dense chunks.
//!
//! Question scripts have the columns
//! `qid,fm_video,question_type,sampling,binary_no_score,binary_yes_score,question`
//! where `fm_video` is `{item}_{side}_{view}` (item 3 to 33, side `A`ffected or
//! `H`ealthy, view `F`ront or `S`ide) and empty or `null` branch scores mean
//! "continue to the next question".

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseValueError, Result};
use crate::ingest::{FrameRequest, FrameSource, VideoRef};
use crate::vlm::parse::{parse_rating, parse_rating_tail, parse_touch_counts, parse_yes_no};
use crate::vlm::{EncodedFrame, PromptCatalog, PromptVars, RequestTag, VlmClient, VlmError};

pub const MIN_ITEM: u8 = 3;
pub const MAX_ITEM: u8 = 33;
/// Frames per prompt for both sampling modes.
pub const FMA_FRAMES: usize = 8;
/// Dense chunk length: eight frames at 30 Hz.
pub const DENSE_CHUNK_S: f64 = 8.0 / 30.0;
/// Touches on both nose and knee that complete the speed task.
pub const TOUCH_TARGET: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Affected,
    Healthy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Front,
    Side,
}

/// `{item}_{side}_{view}` clip key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FmVideoKey {
    pub item: u8,
    pub side: Side,
    pub view: View,
}

impl fmt::Display for FmVideoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Affected => "A",
            Side::Healthy => "H",
        };
        let view = match self.view {
            View::Front => "F",
            View::Side => "S",
        };
        write!(f, "{}_{side}_{view}", self.item)
    }
}

impl FromStr for FmVideoKey {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseValueError::new("fm_video key", s);
        let mut parts = s.trim().split('_');
        let (Some(item), Some(side), Some(view), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let item: u8 = item.parse().map_err(|_| bad())?;
        if !(MIN_ITEM..=MAX_ITEM).contains(&item) {
            return Err(bad());
        }
        let side = match side {
            "A" => Side::Affected,
            "H" => Side::Healthy,
            _ => return Err(bad()),
        };
        let view = match view {
            "F" => View::Front,
            "S" => View::Side,
            _ => return Err(bad()),
        };
        Ok(Self { item, side, view })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Rate,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Uniform,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FmaQuestion {
    pub qid: u32,
    pub fm_video: FmVideoKey,
    pub question_type: QuestionType,
    pub sampling: Sampling,
    pub binary_no_score: Option<u8>,
    pub binary_yes_score: Option<u8>,
    pub question: String,
}

#[derive(Deserialize)]
struct QuestionRow {
    qid: u32,
    fm_video: String,
    question_type: String,
    sampling: String,
    binary_no_score: Option<String>,
    binary_yes_score: Option<String>,
    question: String,
}

fn branch_score(v: Option<String>) -> std::result::Result<Option<u8>, String> {
    match v.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) if s.eq_ignore_ascii_case("null") || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") => {
            Ok(None)
        }
        Some(s) => {
            // Spreadsheet exports often write integers as "1.0".
            let n: f64 = s.parse().map_err(|_| format!("invalid branch score {s:?}"))?;
            if n.fract() != 0.0 || !(0.0..=2.0).contains(&n) {
                return Err(format!("branch score {s:?} is not 0, 1 or 2"));
            }
            Ok(Some(n as u8))
        }
    }
}

pub fn parse_questions(text: &str, path: &Path) -> Result<Vec<FmaQuestion>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<QuestionRow>().enumerate() {
        let line = i + 2;
        let err = |m: String| Error::invalid(format!("{}:{line}: {m}", path.display()));
        let row = row.map_err(|e| err(e.to_string()))?;
        let question_type = match row.question_type.to_ascii_lowercase().as_str() {
            "rate" => QuestionType::Rate,
            "binary" => QuestionType::Binary,
            other => return Err(err(format!("unknown question_type {other:?}"))),
        };
        let sampling = match row.sampling.to_ascii_lowercase().as_str() {
            "uniform" => Sampling::Uniform,
            "dense" => Sampling::Dense,
            other => return Err(err(format!("unknown sampling {other:?}"))),
        };
        out.push(FmaQuestion {
            qid: row.qid,
            fm_video: row.fm_video.parse().map_err(|e| err(format!("{e}")))?,
            question_type,
            sampling,
            binary_no_score: branch_score(row.binary_no_score).map_err(err)?,
            binary_yes_score: branch_score(row.binary_yes_score).map_err(err)?,
            question: row.question,
        });
    }
    Ok(out)
}

pub fn load_questions(path: &Path) -> Result<Vec<FmaQuestion>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_questions(&text, path)
}

/// The ordered questions for one Fugl-Meyer item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FmaItemScript {
    pub item: u8,
    pub questions: Vec<FmaQuestion>,
}

impl FmaItemScript {
    /// Checks that the chain always ends in a score and that dense sampling is
    /// only used for rating questions.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Error::invalid(format!("item {}: {m}", self.item));
        let last = self.questions.last().ok_or_else(|| err("no questions".into()))?;
        for q in &self.questions {
            if q.fm_video.item != self.item {
                return Err(err(format!("question {} belongs to item {}", q.qid, q.fm_video.item)));
            }
            if q.question_type == QuestionType::Binary && q.sampling == Sampling::Dense {
                return Err(err(format!("question {}: dense sampling needs a rating question", q.qid)));
            }
            if q.question_type == QuestionType::Rate && (q.binary_no_score.is_some() || q.binary_yes_score.is_some()) {
                return Err(err(format!("question {}: rating questions take no branch scores", q.qid)));
            }
        }
        let terminal = last.question_type == QuestionType::Rate
            || (last.binary_no_score.is_some() && last.binary_yes_score.is_some());
        if !terminal {
            return Err(err(format!("last question {} can end without a score", last.qid)));
        }
        Ok(())
    }
}

/// Groups questions by item, ordered by qid, and validates each chain.
pub fn build_scripts(questions: &[FmaQuestion]) -> Result<Vec<FmaItemScript>> {
    let mut by_item: BTreeMap<u8, Vec<FmaQuestion>> = BTreeMap::new();
    for q in questions {
        by_item.entry(q.fm_video.item).or_default().push(q.clone());
    }
    by_item
        .into_iter()
        .map(|(item, mut questions)| {
            questions.sort_by_key(|q| q.qid);
            let s = FmaItemScript { item, questions };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

/// The rated repetition of one item in one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FmaClip {
    pub key: FmVideoKey,
    pub video: VideoRef,
    pub start_s: f64,
    pub end_s: f64,
}

impl FmaClip {
    pub fn new(key: FmVideoKey, video: VideoRef, start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s >= 0.0 && end_s > start_s) {
            return Err(Error::invalid(format!("clip {key}: need 0 <= start < end, got {start_s}..{end_s}")));
        }
        let clip = Self { key, video, start_s, end_s };
        if clip.duration_s() > 10.0 {
            log::warn!("clip {key} of {} lasts {:.1} s; rated repetitions are usually under 10 s", clip.video.id, clip.duration_s());
        }
        Ok(clip)
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    fn frame_at(&self, t: f64) -> u64 {
        ((t * self.video.native_fps).round().max(0.0) as u64).min(self.video.frame_count.saturating_sub(1))
    }

    fn spread(&self, a: f64, b: f64) -> Vec<u64> {
        (0..FMA_FRAMES).map(|i| self.frame_at(a + (b - a) * i as f64 / (FMA_FRAMES - 1) as f64)).collect()
    }

    /// Eight frames evenly over the whole clip.
    pub fn uniform_indices(&self) -> Vec<u64> {
        self.spread(self.start_s, self.end_s)
    }

    /// Eight frames per whole dense chunk; a trailing partial chunk is dropped.
    pub fn dense_chunks(&self) -> Vec<Vec<u64>> {
        let n = (self.duration_s() / DENSE_CHUNK_S + 1e-9).floor() as usize;
        (0..n)
            .map(|k| {
                let a = self.start_s + k as f64 * DENSE_CHUNK_S;
                self.spread(a, a + DENSE_CHUNK_S)
            })
            .collect()
    }
}

/// Coordination/speed thresholds on the paretic minus healthy completion time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedThresholds {
    /// Below this difference the score is 2.
    pub full_below_s: f64,
    /// Below this difference (and at or above `full_below_s`) the score is 1.
    pub partial_below_s: f64,
}

impl Default for SpeedThresholds {
    fn default() -> Self {
        Self { full_below_s: 2.0, partial_below_s: 6.0 }
    }
}

impl SpeedThresholds {
    pub fn score(&self, delta_s: f64) -> u8 {
        if delta_s < self.full_below_s {
            2
        } else if delta_s < self.partial_below_s {
            1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmaConfig {
    /// Item scored by nose/knee touch timing instead of a question chain.
    pub speed_item: Option<u8>,
    pub speed: SpeedThresholds,
}

impl Default for FmaConfig {
    fn default() -> Self {
        Self { speed_item: Some(MAX_ITEM), speed: SpeedThresholds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Scored,
    /// Scored, but a side never reached the touch target.
    Incomplete,
    Unscored,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScore {
    pub item: u8,
    pub score: Option<u8>,
    pub status: ItemStatus,
    /// Question ids asked, in order.
    pub visited: Vec<u32>,
    pub note: Option<String>,
}

impl ItemScore {
    pub fn scored(item: u8, score: u8, visited: Vec<u32>) -> Self {
        Self { item, score: Some(score), status: ItemStatus::Scored, visited, note: None }
    }

    pub fn unscored(item: u8, visited: Vec<u32>, note: String) -> Self {
        log::warn!("item {item} left unscored: {note}");
        Self { item, score: None, status: ItemStatus::Unscored, visited, note: Some(note) }
    }
}

/// Arithmetic mean of ratings, rounded half-up.
pub fn mean_rating(ratings: &[u8]) -> Option<u8> {
    if ratings.is_empty() {
        return None;
    }
    let n = ratings.len() as u64;
    let sum: u64 = ratings.iter().map(|&r| r as u64).sum();
    Some(((2 * sum + n) / (2 * n)) as u8)
}

/// Clip lookup for one subject.
pub type ClipSet = BTreeMap<FmVideoKey, FmaClip>;

/// Earliest chunk end, relative to the clip start, at which both running touch
/// totals reach the target; `None` if they never do.
pub fn completion_time(touches: &[(u32, u32)], chunk_s: f64) -> Option<f64> {
    let (mut nose, mut knee) = (0u32, 0u32);
    for (k, (n, kn)) in touches.iter().enumerate() {
        nose += n;
        knee += kn;
        if nose >= TOUCH_TARGET && knee >= TOUCH_TARGET {
            return Some((k + 1) as f64 * chunk_s);
        }
    }
    None
}

enum Outcome<T> {
    Value(T),
    Unparsed(String),
}

pub struct FmaScorer<'a> {
    pub client: &'a VlmClient,
    pub frames: &'a dyn FrameSource,
    pub catalog: &'a PromptCatalog,
    pub cfg: FmaConfig,
}

impl<'a> FmaScorer<'a> {
    pub fn new(client: &'a VlmClient, frames: &'a dyn FrameSource, catalog: &'a PromptCatalog, cfg: FmaConfig) -> Self {
        Self { client, frames, catalog, cfg }
    }

    fn clip<'c>(&self, clips: &'c ClipSet, key: FmVideoKey) -> Result<&'c FmaClip> {
        clips.get(&key).ok_or_else(|| Error::invalid(format!("no clip for {key}")))
    }

    fn images(&self, clip: &FmaClip, indices: &[u64]) -> Result<Vec<EncodedFrame>> {
        let requests: Vec<_> = indices.iter().copied().map(FrameRequest::full).collect();
        Ok(self.frames.frames(&clip.video, &requests)?)
    }

    fn tag(clip: &FmaClip, chunk: usize, step: String) -> RequestTag {
        RequestTag::new(format!("{}/{}", clip.video.id, clip.key), chunk, step)
    }

    /// Rating for a question: one prompt on uniform frames, or the rounded
    /// mean over dense chunks.
    fn rate(
        &self,
        clip: &FmaClip,
        q: &FmaQuestion,
        parse: fn(&str) -> std::result::Result<u8, VlmError>,
    ) -> Result<Outcome<u8>> {
        let chunks = match q.sampling {
            Sampling::Uniform => vec![clip.uniform_indices()],
            Sampling::Dense => clip.dense_chunks(),
        };
        if chunks.is_empty() {
            return Ok(Outcome::Unparsed(format!("clip {} is shorter than one chunk", clip.key)));
        }
        let mut ratings = Vec::with_capacity(chunks.len());
        for (k, idx) in chunks.iter().enumerate() {
            let reply = self.client.ask(self.images(clip, idx)?, &q.question, Self::tag(clip, k, format!("q{}", q.qid)))?;
            match parse(&reply) {
                Ok(r) => ratings.push(r),
                Err(_) => return Ok(Outcome::Unparsed(reply)),
            }
        }
        Ok(Outcome::Value(mean_rating(&ratings).expect("at least one chunk")))
    }

    /// Walks the question chain: a binary answer with a branch score ends the
    /// chain, otherwise the next question is asked; a rating question ends it
    /// with the rating.
    pub fn run_qa_chain(&self, script: &FmaItemScript, clips: &ClipSet) -> Result<ItemScore> {
        script.validate()?;
        let mut visited = Vec::new();
        for q in &script.questions {
            visited.push(q.qid);
            let clip = self.clip(clips, q.fm_video)?;
            match q.question_type {
                QuestionType::Rate => {
                    return Ok(match self.rate(clip, q, parse_rating)? {
                        Outcome::Value(r) => ItemScore::scored(script.item, r, visited),
                        Outcome::Unparsed(reply) => {
                            ItemScore::unscored(script.item, visited, format!("q{}: no rating in {reply:?}", q.qid))
                        }
                    });
                }
                QuestionType::Binary => {
                    let reply = self.client.ask(
                        self.images(clip, &clip.uniform_indices())?,
                        &q.question,
                        Self::tag(clip, 0, format!("q{}", q.qid)),
                    )?;
                    let Ok(yes) = parse_yes_no(&reply) else {
                        return Ok(ItemScore::unscored(script.item, visited, format!("q{}: no yes/no in {reply:?}", q.qid)));
                    };
                    if let Some(score) = if yes { q.binary_yes_score } else { q.binary_no_score } {
                        return Ok(ItemScore::scored(script.item, score, visited));
                    }
                }
            }
        }
        unreachable!("validated chains end in a score")
    }

    /// One reasoning prompt per item; the rating is read from the end of the
    /// reply.
    pub fn run_cot(&self, script: &FmaItemScript, clips: &ClipSet) -> Result<ItemScore> {
        let q = script.questions.first().ok_or_else(|| Error::invalid(format!("item {}: no questions", script.item)))?;
        let clip = self.clip(clips, q.fm_video)?;
        Ok(match self.rate(clip, q, parse_rating_tail)? {
            Outcome::Value(r) => ItemScore::scored(script.item, r, vec![q.qid]),
            Outcome::Unparsed(reply) => ItemScore::unscored(script.item, vec![q.qid], format!("no rating in {reply:?}")),
        })
    }

    fn touches(&self, clip: &FmaClip, q: &FmaQuestion) -> Result<Outcome<Vec<(u32, u32)>>> {
        let suffix = self.catalog.render("fma_touch_suffix", &PromptVars::new())?;
        let prompt = format!("{}\n{}", q.question.trim_end(), suffix.text.trim_start());
        let mut out = Vec::new();
        for (k, idx) in clip.dense_chunks().iter().enumerate() {
            let reply = self.client.ask(self.images(clip, idx)?, &prompt, Self::tag(clip, k, format!("q{}", q.qid)))?;
            match parse_touch_counts(&reply) {
                Ok(c) => out.push(c),
                Err(_) => return Ok(Outcome::Unparsed(reply)),
            }
        }
        Ok(Outcome::Value(out))
    }

    /// Speed subscore from per-chunk nose/knee touch counts on the affected and
    /// healthy sides. A side that never reaches the target is timed at its
    /// clip end and the item is marked incomplete.
    pub fn score_speed(&self, script: &FmaItemScript, clips: &ClipSet) -> Result<ItemScore> {
        let pick = |side: Side| {
            script
                .questions
                .iter()
                .find(|q| q.fm_video.side == side)
                .ok_or_else(|| Error::invalid(format!("item {}: speed needs a question for each side", script.item)))
        };
        let (qa, qh) = (pick(Side::Affected)?, pick(Side::Healthy)?);
        let visited = vec![qa.qid, qh.qid];
        let mut times = [0.0; 2];
        let mut incomplete = Vec::new();
        for (slot, q) in [qa, qh].into_iter().enumerate() {
            let clip = self.clip(clips, q.fm_video)?;
            let counts = match self.touches(clip, q)? {
                Outcome::Value(c) => c,
                Outcome::Unparsed(reply) => {
                    return Ok(ItemScore::unscored(script.item, visited, format!("q{}: no touch counts in {reply:?}", q.qid)))
                }
            };
            times[slot] = completion_time(&counts, DENSE_CHUNK_S).unwrap_or_else(|| {
                incomplete.push(clip.key.to_string());
                clip.duration_s()
            });
        }
        let delta = times[0] - times[1];
        let score = self.cfg.speed.score(delta);
        let mut s = ItemScore::scored(script.item, score, visited);
        s.note = Some(format!("affected {:.3} s, healthy {:.3} s, difference {delta:.3} s", times[0], times[1]));
        if !incomplete.is_empty() {
            s.status = ItemStatus::Incomplete;
            s.note = Some(format!("{}; touch target not reached in {}", s.note.unwrap_or_default(), incomplete.join(", ")));
        }
        Ok(s)
    }

    /// Scores one item with the question chain (or speed timing).
    pub fn score_item(&self, script: &FmaItemScript, clips: &ClipSet) -> Result<ItemScore> {
        if self.cfg.speed_item == Some(script.item) {
            self.score_speed(script, clips)
        } else {
            self.run_qa_chain(script, clips)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmaScorecard {
    pub subject: String,
    pub items: Vec<ItemScore>,
    pub total: u32,
    /// Two points per scored item.
    pub max_achievable: u32,
    pub unscored: Vec<u8>,
}

pub fn aggregate_scorecard(subject: &str, items: Vec<ItemScore>) -> Result<FmaScorecard> {
    let scored: Vec<u8> = items.iter().filter_map(|i| i.score).collect();
    if scored.is_empty() {
        return Err(Error::invalid(format!("subject {subject}: no scored items")));
    }
    Ok(FmaScorecard {
        subject: subject.to_string(),
        total: scored.iter().map(|&s| s as u32).sum(),
        max_achievable: 2 * scored.len() as u32,
        unscored: items.iter().filter(|i| i.score.is_none()).map(|i| i.item).collect(),
        items,
    })
}

impl FmaScorecard {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,item,score,status\n");
        for i in &self.items {
            let score = i.score.map(|s| s.to_string()).unwrap_or_default();
            let status = match i.status {
                ItemStatus::Scored => "scored",
                ItemStatus::Incomplete => "incomplete",
                ItemStatus::Unscored => "unscored",
            };
            out.push_str(&format!("{},{},{score},{status}\n", self.subject, i.item));
        }
        out
    }
}

/// Predicted against clinician totals, one row per subject.
pub fn scatter_csv(cards: &[FmaScorecard], truth: &BTreeMap<String, u32>) -> String {
    let mut out = String::from("subject,predicted_total,ground_truth_total,max_achievable\n");
    for c in cards {
        let gt = truth.get(&c.subject).map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{gt},{}\n", c.subject, c.total, c.max_achievable));
    }
    out
}

#[derive(Debug, Deserialize)]
struct ClipRow {
    subject_id: String,
    fm_video: String,
    video_path: String,
    native_fps: f64,
    start_s: f64,
    end_s: f64,
    #[serde(default)]
    frame_count: Option<u64>,
}

/// Parses a clip manifest with columns
/// `subject_id,fm_video,video_path,native_fps,start_s,end_s[,frame_count]`.
/// Relative video paths resolve against `base`. Without `frame_count` the
/// video is assumed to end at `end_s`.
pub fn parse_clip_manifest(text: &str, path: &Path, base: &Path) -> Result<BTreeMap<String, ClipSet>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out: BTreeMap<String, ClipSet> = BTreeMap::new();
    for (i, row) in reader.deserialize::<ClipRow>().enumerate() {
        let line = i + 2;
        let err = |m: String| Error::invalid(format!("{}:{line}: {m}", path.display()));
        let row = row.map_err(|e| err(e.to_string()))?;
        if !(row.native_fps.is_finite() && row.native_fps > 0.0) {
            return Err(err(format!("native_fps must be positive, got {}", row.native_fps)));
        }
        let key: FmVideoKey = row.fm_video.parse().map_err(|e| err(format!("{e}")))?;
        let frame_count = row.frame_count.unwrap_or_else(|| ((row.end_s * row.native_fps).ceil() as u64).max(1));
        let video_path = base.join(&row.video_path);
        let video = VideoRef::new(row.subject_id.clone(), video_path, row.native_fps, frame_count);
        let clip = FmaClip::new(key, video, row.start_s, row.end_s).map_err(|e| err(e.to_string()))?;
        if out.entry(row.subject_id.clone()).or_default().insert(key, clip).is_some() {
            return Err(err(format!("duplicate clip {key} for subject {}", row.subject_id)));
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{}: no clips", path.display())));
    }
    Ok(out)
}

pub fn load_clip_manifest(path: &Path) -> Result<BTreeMap<String, ClipSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clip_manifest(&text, path, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    subject_id: String,
    total: u32,
}

/// Clinician totals with columns `subject_id,total`.
pub fn parse_truth_totals(text: &str, path: &Path) -> Result<BTreeMap<String, u32>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<TruthRow>().enumerate() {
        let row = row.map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 2)))?;
        if out.insert(row.subject_id.clone(), row.total).is_some() {
            return Err(Error::invalid(format!("{}: duplicate subject {}", path.display(), row.subject_id)));
        }
    }
    Ok(out)
}

pub fn load_truth_totals(path: &Path) -> Result<BTreeMap<String, u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_truth_totals(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FrameTag, SyntheticFrames};
    use crate::vlm::{BackendRequest, MockBackend};
    use std::sync::Arc;

    const HEADER: &str = "qid,fm_video,question_type,sampling,binary_no_score,binary_yes_score,question\n";

    fn key(s: &str) -> FmVideoKey {
        s.parse().unwrap()
    }

    fn clips(keys: &[&str], duration_s: f64) -> ClipSet {
        keys.iter()
            .map(|k| {
                let v = VideoRef::new(format!("subj-{k}"), "fma.mp4", 30.0, (duration_s * 30.0) as u64 + 30);
                (key(k), FmaClip::new(key(k), v, 0.0, duration_s).unwrap())
            })
            .collect()
    }

    fn scorer_with(mock: MockBackend) -> (VlmClient, PromptCatalog) {
        (VlmClient::new(Arc::new(mock)), PromptCatalog::builtin())
    }

    fn script(rows: &str) -> FmaItemScript {
        let qs = parse_questions(&format!("{HEADER}{rows}"), Path::new("qa.csv")).unwrap();
        build_scripts(&qs).unwrap().remove(0)
    }

    #[test]
    fn keys() {
        let k = key("7_A_F");
        assert_eq!((k.item, k.side, k.view), (7, Side::Affected, View::Front));
        assert_eq!(k.to_string(), "7_A_F");
        assert!("2_A_F".parse::<FmVideoKey>().is_err());
        assert!("34_A_F".parse::<FmVideoKey>().is_err());
        assert!("7_X_F".parse::<FmVideoKey>().is_err());
        assert!("7_A".parse::<FmVideoKey>().is_err());
    }

    #[test]
    fn script_parsing_and_validation() {
        let s = script("2,7_A_F,rate,uniform,,,Rate it\n1,7_A_F,binary,uniform,0,null,Any movement?\n");
        assert_eq!(s.questions.iter().map(|q| q.qid).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.questions[0].binary_no_score, Some(0));
        assert_eq!(s.questions[0].binary_yes_score, None);

        let qs = parse_questions(&format!("{HEADER}1,7_A_F,binary,uniform,0,,Open-ended?\n"), Path::new("x")).unwrap();
        assert!(build_scripts(&qs).is_err());
        let qs = parse_questions(&format!("{HEADER}1,7_A_F,binary,dense,0,2,Dense yes/no?\n"), Path::new("x")).unwrap();
        assert!(build_scripts(&qs).is_err());
        assert!(parse_questions(&format!("{HEADER}1,7_A_F,binary,uniform,3,,Q\n"), Path::new("x")).is_err());
        assert!(parse_questions(&format!("{HEADER}1,7_A_F,open,uniform,,,Q\n"), Path::new("x")).is_err());
        let qs = parse_questions(&format!("{HEADER}1,7_A_F,binary,uniform,0.0,2.0,Q\n"), Path::new("x")).unwrap();
        assert_eq!(qs[0].binary_yes_score, Some(2));
    }

    #[test]
    fn qa_first_no_ends_chain() {
        let s = script("1,7_A_F,binary,uniform,0,,Any movement?\n2,7_A_F,rate,uniform,,,Rate it\n");
        let (client, catalog) = scorer_with(MockBackend::new().with_default("No."));
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.run_qa_chain(&s, &clips(&["7_A_F"], 4.0)).unwrap();
        assert_eq!(r.score, Some(0));
        assert_eq!(r.visited, vec![1]);
        assert_eq!(client.transcript().len(), 1);
    }

    #[test]
    fn qa_pass_through_and_branch_walk() {
        let s = script("1,7_A_F,binary,uniform,,,Q1?\n2,7_A_F,binary,uniform,,,Q2?\n3,7_A_F,rate,uniform,,,Rate\n");
        let mock = MockBackend::new().with_responder(|r: &BackendRequest| {
            Some(if r.prompt == "Rate" { "2" } else { "No" }.into())
        });
        let (client, catalog) = scorer_with(mock);
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.run_qa_chain(&s, &clips(&["7_A_F"], 4.0)).unwrap();
        assert_eq!((r.score, r.visited.clone()), (Some(2), vec![1, 2, 3]));

        let s = script("1,8_A_S,binary,uniform,0,,Q1?\n2,8_A_S,binary,uniform,1,2,Q2?\n");
        let (client, catalog) = scorer_with(MockBackend::new().with_default("Yes"));
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.run_qa_chain(&s, &clips(&["8_A_S"], 4.0)).unwrap();
        assert_eq!((r.score, r.visited), (Some(2), vec![1, 2]));
    }

    #[test]
    fn qa_unparseable_leaves_item_unscored() {
        let s = script("1,7_A_F,binary,uniform,0,,Q1?\n2,7_A_F,rate,uniform,,,Rate\n");
        let (client, catalog) = scorer_with(MockBackend::new().with_default("hard to say"));
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.run_qa_chain(&s, &clips(&["7_A_F"], 4.0)).unwrap();
        assert_eq!((r.score, r.status), (None, ItemStatus::Unscored));
        // A missing clip is an input error.
        assert!(scorer.run_qa_chain(&s, &clips(&["7_A_S"], 4.0)).is_err());
    }

    #[test]
    fn cot_reads_tail() {
        let s = script("1,9_A_F,rate,uniform,,,Reason then score\n");
        let (client, catalog) = scorer_with(MockBackend::new().with_default("The arm lifts 2 times partially.\nFinal score: 1"));
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        assert_eq!(scorer.run_cot(&s, &clips(&["9_A_F"], 4.0)).unwrap().score, Some(1));
        let (client, catalog) = scorer_with(MockBackend::new().with_default("0"));
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        assert_eq!(scorer.run_cot(&s, &clips(&["9_A_F"], 4.0)).unwrap().score, Some(0));
    }

    #[test]
    fn dense_tremor_rounding() {
        assert_eq!(mean_rating(&[2, 2, 2]), Some(2));
        assert_eq!(mean_rating(&[2, 1, 2, 1]), Some(2));
        assert_eq!(mean_rating(&[1, 0]), Some(1));
        assert_eq!(mean_rating(&[1, 0, 0]), Some(0));
        assert_eq!(mean_rating(&[]), None);

        // 4 chunks answered 2,1,2,1 by chunk position.
        let s = script("1,31_A_F,rate,dense,,,Tremor?\n");
        let mock = MockBackend::new().with_responder(|r: &BackendRequest| {
            Some(if r.tag.segment.is_multiple_of(2) { "2" } else { "1" }.into())
        });
        let (client, catalog) = scorer_with(mock);
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.run_qa_chain(&s, &clips(&["31_A_F"], 4.0 * DENSE_CHUNK_S)).unwrap();
        assert_eq!(r.score, Some(2));
        assert_eq!(client.transcript().len(), 4);
    }

    #[test]
    fn dense_chunk_frames() {
        let c = &clips(&["31_A_F"], 1.0)["31_A_F".parse::<FmVideoKey>().as_ref().unwrap()];
        let chunks = c.dense_chunks();
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[0], vec![0, 1, 2, 3, 5, 6, 7, 8]);
        assert!(chunks.iter().all(|ch| ch.len() == 8));
        assert_eq!(c.uniform_indices().first(), Some(&0));
        assert_eq!(c.uniform_indices().last(), Some(&30));
    }

    #[test]
    fn speed_thresholds() {
        let t = SpeedThresholds::default();
        assert_eq!(t.score(0.5), 2);
        assert_eq!(t.score(-3.0), 2);
        assert_eq!(t.score(2.0), 1);
        assert_eq!(t.score(5.99), 1);
        assert_eq!(t.score(6.0), 0);
        assert_eq!(completion_time(&[(2, 1), (2, 2), (1, 2)], 0.5), Some(1.5));
        assert_eq!(completion_time(&[(5, 4)], 0.5), None);
    }

    #[test]
    fn speed_item_end_to_end() {
        // Affected side reaches 5/5 after 15 chunks (4.0 s), healthy after 13
        // chunks (3.47 s).
        let s = script("1,33_A_F,rate,dense,,,Count touches.\n2,33_H_F,rate,dense,,,Count touches.\n");
        let mock = MockBackend::new().with_responder(|r: &BackendRequest| {
            let tag = FrameTag::parse(&r.frames[0].bytes).unwrap();
            let healthy = tag.video.contains("_H_");
            let k = r.tag.segment;
            let needed = if healthy { 13 } else { 15 };
            Some(if k + 1 == needed { "nose: 5, knee: 5" } else { "nose: 0, knee: 0" }.into())
        });
        let (client, catalog) = scorer_with(mock);
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.score_item(&s, &clips(&["33_A_F", "33_H_F"], 6.0)).unwrap();
        assert_eq!(r.score, Some(2));
        assert_eq!(r.status, ItemStatus::Scored);
        assert!(client.transcript().records()[0].prompt.ends_with("nose: <count>, knee: <count>"));

        let (client, catalog) = scorer_with(MockBackend::new().with_default("nose: 0, knee: 1"));
        let scorer = FmaScorer::new(&client, &SyntheticFrames, &catalog, FmaConfig::default());
        let r = scorer.score_item(&s, &clips(&["33_A_F", "33_H_F"], 6.0)).unwrap();
        assert_eq!(r.status, ItemStatus::Incomplete);
        assert_eq!(r.score, Some(2));
    }

    #[test]
    fn scorecards() {
        let items = |score: Option<u8>, n: u8| -> Vec<ItemScore> {
            (0..n)
                .map(|i| match score {
                    Some(s) => ItemScore::scored(3 + i, s, vec![]),
                    None => ItemScore::unscored(3 + i, vec![], "x".into()),
                })
                .collect()
        };
        let all2: Vec<_> = (1..=33).map(|i| ItemScore::scored(i, 2, vec![])).collect();
        assert_eq!(aggregate_scorecard("s", all2).unwrap().total, 66);
        assert_eq!(aggregate_scorecard("s", items(Some(0), 10)).unwrap().total, 0);
        let ones = aggregate_scorecard("s", items(Some(1), 29)).unwrap();
        assert_eq!((ones.total, ones.max_achievable), (29, 58));
        let mut mixed = items(Some(2), 3);
        mixed.extend(items(None, 1));
        let card = aggregate_scorecard("s", mixed).unwrap();
        assert_eq!((card.total, card.max_achievable, card.unscored.len()), (6, 6, 1));
        assert!(aggregate_scorecard("s", items(None, 2)).is_err());
        assert!(card.to_csv().starts_with("subject,item,score,status\ns,3,2,scored\n"));
        let truth = BTreeMap::from([("s".to_string(), 40)]);
        assert_eq!(scatter_csv(&[card], &truth), "subject,predicted_total,ground_truth_total,max_achievable\ns,6,40,6\n");
    }

    #[test]
    fn clip_manifest_groups_by_subject() {
        let text = "subject_id,fm_video,video_path,native_fps,start_s,end_s,frame_count\n\
                    s1,7_A_F,a.mp4,30,1.0,3.0,300\n\
                    s1,7_H_F,b.mp4,30,0.5,2.0,\n\
                    s2,33_A_S,c.mp4,25,0,4,100\n";
        let m = parse_clip_manifest(text, Path::new("clips.csv"), Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        let k: FmVideoKey = "7_H_F".parse().unwrap();
        let c = &m["s1"][&k];
        assert_eq!(c.video.frame_count, 60);
        assert_eq!(c.video.id, "s1");
        assert_eq!(c.video.path, Path::new("/data/b.mp4"));
        let dup = "subject_id,fm_video,video_path,native_fps,start_s,end_s\ns,7_A_F,a,30,0,1\ns,7_A_F,a,30,0,1\n";
        assert!(parse_clip_manifest(dup, Path::new("x"), Path::new(".")).is_err());
        let bad = "subject_id,fm_video,video_path,native_fps,start_s,end_s\ns,7_A_F,a,30,2,1\n";
        assert!(parse_clip_manifest(bad, Path::new("x"), Path::new(".")).is_err());
    }

    #[test]
    fn truth_totals() {
        let t = parse_truth_totals("subject_id,total\ns1,40\ns2,12\n", Path::new("t")).unwrap();
        assert_eq!(t["s2"], 12);
        assert!(parse_truth_totals("subject_id,total\ns1,4\ns1,5\n", Path::new("t")).is_err());
    }

}
