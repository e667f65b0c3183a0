//! Run manifests: one CSV row per video.
//!
//! Columns: `video_id, video_path, subject_id, impairment, activity, hand,
//! view, native_fps, duration_s, annotation_path, keypoint_path`.
//! `duration_s`, `annotation_path` and `keypoint_path` may be empty. Relative
//! paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::error::ParseValueError;
use crate::types::Hand;

/// Clinical impairment level of the subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Impairment {
    /// Healthy control.
    Control,
    Mild,
    Moderate,
    Severe,
}

impl Impairment {
    pub const ALL: [Impairment; 4] = [Impairment::Control, Impairment::Mild, Impairment::Moderate, Impairment::Severe];

    pub fn code(self) -> &'static str {
        match self {
            Impairment::Control => "C",
            Impairment::Mild => "Mi",
            Impairment::Moderate => "Mo",
            Impairment::Severe => "S",
        }
    }
}

impl fmt::Display for Impairment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Impairment {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "control" => Ok(Impairment::Control),
            "mi" | "mild" => Ok(Impairment::Mild),
            "mo" | "moderate" => Ok(Impairment::Moderate),
            "s" | "severe" => Ok(Impairment::Severe),
            _ => Err(ParseValueError::new("impairment level", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub video_path: PathBuf,
    pub subject_id: String,
    pub impairment: Impairment,
    pub activity: String,
    pub hand: Hand,
    pub view: String,
    pub native_fps: f64,
    pub duration_s: Option<f64>,
    pub annotation_path: Option<PathBuf>,
    pub keypoint_path: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Row {
    video_id: String,
    video_path: String,
    subject_id: String,
    impairment: String,
    activity: String,
    hand: String,
    view: String,
    native_fps: f64,
    #[serde(default)]
    duration_s: Option<f64>,
    #[serde(default)]
    annotation_path: Option<String>,
    #[serde(default)]
    keypoint_path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<VideoEntry>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

impl Manifest {
    /// Parses manifest text; `base` is the directory relative paths resolve against.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let err = |m: String| IngestError::format(path, line, m);
            let row = row.map_err(|e| err(e.to_string()))?;
            if row.video_id.is_empty() {
                return Err(err("empty video_id".into()));
            }
            if !seen.insert(row.video_id.clone()) {
                return Err(err(format!("duplicate video_id {:?}", row.video_id)));
            }
            if !(row.native_fps > 0.0 && row.native_fps.is_finite()) {
                return Err(err(format!("native_fps must be positive, got {}", row.native_fps)));
            }
            if let Some(d) = row.duration_s {
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(err(format!("duration_s must be non-negative, got {d}")));
                }
            }
            entries.push(VideoEntry {
                impairment: row.impairment.parse().map_err(|e| err(format!("{e}")))?,
                hand: row.hand.parse().map_err(|e| err(format!("{e}")))?,
                video_path: resolve(base, &row.video_path),
                annotation_path: non_empty(row.annotation_path).map(|p| resolve(base, &p)),
                keypoint_path: non_empty(row.keypoint_path).map(|p| resolve(base, &p)),
                video_id: row.video_id,
                subject_id: row.subject_id,
                activity: row.activity,
                view: row.view,
                native_fps: row.native_fps,
                duration_s: row.duration_s,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "video_id,video_path,subject_id,impairment,activity,hand,view,native_fps,duration_s,annotation_path,keypoint_path\n";

    #[test]
    fn parses_rows_and_resolves_paths() {
        let text = format!(
            "{HEADER}v1,videos/v1.mp4,s01,Mi,Drinking,right,front,30,16,ann/v1.csv,kp/v1.jsonl\nv2,/abs/v2.mp4,s02,C,Combing,left,side,60,,,\n"
        );
        let m = Manifest::parse(&text, Path::new("m.csv"), Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        let v1 = m.get("v1").unwrap();
        assert_eq!(v1.video_path, PathBuf::from("/data/videos/v1.mp4"));
        assert_eq!(v1.impairment, Impairment::Mild);
        assert_eq!(v1.hand, Hand::Right);
        assert_eq!(v1.duration_s, Some(16.0));
        assert_eq!(v1.keypoint_path.as_deref(), Some(Path::new("/data/kp/v1.jsonl")));
        let v2 = m.get("v2").unwrap();
        assert_eq!(v2.video_path, PathBuf::from("/abs/v2.mp4"));
        assert_eq!(v2.annotation_path, None);
        assert_eq!(v2.duration_s, None);
    }

    #[test]
    fn rejects_bad_rows() {
        let p = Path::new("m.csv");
        let b = Path::new(".");
        assert!(Manifest::parse(&format!("{HEADER}v1,a.mp4,s,X,Drinking,right,front,30,,,\n"), p, b).is_err());
        assert!(Manifest::parse(&format!("{HEADER}v1,a.mp4,s,C,Drinking,up,front,30,,,\n"), p, b).is_err());
        assert!(Manifest::parse(&format!("{HEADER}v1,a.mp4,s,C,Drinking,left,front,0,,,\n"), p, b).is_err());
        let dup = format!("{HEADER}v1,a.mp4,s,C,Drinking,left,front,30,,,\nv1,b.mp4,s,C,Drinking,left,front,30,,,\n");
        assert!(Manifest::parse(&dup, p, b).is_err());
    }

    #[test]
    fn impairment_codes() {
        for i in Impairment::ALL {
            assert_eq!(i.code().parse::<Impairment>().unwrap(), i);
        }
        assert!("x".parse::<Impairment>().is_err());
    }
}
