//! Run output directory layout and tabular reports.
//!
//! ```text
//! <out>/summary.json              run identity: config digest, seed, backend, catalog
//! <out>/<video>.sequence.txt      de-duplicated primitives, comma-separated
//! <out>/<video>.track.csv         per-segment motion/grasp answers
//! <out>/<video>.transcript.jsonl  every backend attempt for the video
//! <out>/<video>.provenance.json   smoothing flips and insertions (PRIM-RS)
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CorpusReport, MeanSem};
use crate::types::{PrimitiveSequence, StateTrack};
use crate::vlm::{write_records, TranscriptRecord};

pub const SEQUENCE_SUFFIX: &str = ".sequence.txt";

/// File-name-safe form of an opaque video id.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(name, e))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_sequence(&self, seq: &PrimitiveSequence) -> Result<PathBuf> {
        self.write_text(&format!("{}{SEQUENCE_SUFFIX}", file_stem(&seq.source_id)), &format!("{}\n", seq.to_line()))
    }

    pub fn write_track(&self, video_id: &str, track: &StateTrack) -> Result<PathBuf> {
        self.write_text(&format!("{}.track.csv", file_stem(video_id)), &track.to_csv())
    }

    pub fn write_transcript(&self, video_id: &str, records: &[TranscriptRecord]) -> Result<PathBuf> {
        let p = self.path(&format!("{}.transcript.jsonl", file_stem(video_id)));
        write_records(&p, records)?;
        Ok(p)
    }
}

pub fn read_sequence(path: &Path, video_id: &str) -> Result<PrimitiveSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(PrimitiveSequence::parse_line(video_id, line)?)
}

/// Every `<id>.sequence.txt` in `dir`, keyed by id.
pub fn load_predictions(dir: &Path) -> Result<BTreeMap<String, PrimitiveSequence>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(id) = name.strip_suffix(SEQUENCE_SUFFIX) {
            out.insert(id.to_string(), read_sequence(&path, id)?);
        }
    }
    Ok(out)
}

/// Identity of a run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub catalog_version: Option<String>,
    pub catalog_digest: Option<String>,
    pub videos: usize,
    pub unparsed_answers: usize,
    #[serde(default)]
    pub results: serde_json::Value,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per video plus macro-average rows.
pub fn metrics_csv(report: &CorpusReport) -> String {
    let mut out = String::from(
        "video_id,edit_score,action_error_rate,relative_counting_error,ground_truth_len,prediction_len,motion_f1,grasp_f1,oversegmentation_ratio\n",
    );
    for r in &report.videos {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{},{}\n",
            r.video_id,
            r.edit_score,
            r.action_error_rate,
            r.relative_counting_error,
            r.ground_truth_len,
            r.prediction_len,
            fmt_opt(r.motion_f1),
            fmt_opt(r.grasp_f1),
            fmt_opt(r.oversegmentation_ratio),
        ));
    }
    let ms = |m: Option<MeanSem>, f: fn(&MeanSem) -> f64| fmt_opt(m.as_ref().map(f));
    out.push_str(&format!(
        "MEAN,{},{},{},,,,,\n",
        ms(report.edit_score, |m| m.mean),
        ms(report.action_error_rate, |m| m.mean),
        ms(report.relative_counting_error, |m| m.mean)
    ));
    out.push_str(&format!(
        "SEM,{},{},{},,,,,\n",
        ms(report.edit_score, |m| m.sem),
        ms(report.action_error_rate, |m| m.sem),
        ms(report.relative_counting_error, |m| m.sem)
    ));
    out
}

/// Corpus-pooled relative counting error per primitive.
pub fn per_primitive_csv(report: &CorpusReport) -> String {
    let mut out = String::from("primitive,relative_counting_error\n");
    for (p, v) in &report.per_primitive_rce {
        out.push_str(&format!("{p},{v:.6}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate_corpus;
    use crate::metrics::EvalPair;
    use crate::par::Executor;
    use crate::types::Primitive::*;

    #[test]
    fn sequence_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("out")).unwrap();
        let seq = PrimitiveSequence::new("v/1", vec![Idle, Reach, Transport]);
        let p = run.write_sequence(&seq).unwrap();
        assert!(p.ends_with("v_1.sequence.txt"));
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "idle,reach,transport\n");
        run.write_sequence(&PrimitiveSequence::new("empty", vec![])).unwrap();
        let preds = load_predictions(run.root()).unwrap();
        assert_eq!(preds["v_1"].items, vec![Idle, Reach, Transport]);
        assert!(preds["empty"].items.is_empty());
    }

    #[test]
    fn metrics_table() {
        let pairs = [EvalPair {
            video_id: "a".into(),
            ground_truth: vec![Idle, Reach, Transport],
            prediction: vec![Reach, Stabilize, Transport],
        }];
        let r = evaluate_corpus(&pairs, &Executor::sequential()).unwrap();
        let csv = metrics_csv(&r);
        assert!(csv.contains("\na,33.333333,0.666667,0.666667,3,3,"));
        assert!(csv.contains("\nMEAN,33.333333,"));
        assert!(per_primitive_csv(&r).starts_with("primitive,relative_counting_error\n"));
    }
}
