use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendFailure, BackendRequest, Completion};
use crate::error::{Error, Result};

/// One backend attempt. Failed attempts carry `status` and no `response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub video: String,
    pub segment: usize,
    pub step: String,
    pub attempt: u32,
    pub digest: String,
    pub frame_count: usize,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    pub latency_ms: u64,
}

impl TranscriptRecord {
    pub(crate) fn new(
        req: &BackendRequest,
        digest: &str,
        attempt: u32,
        result: &std::result::Result<Completion, BackendFailure>,
    ) -> Self {
        let (response, status, latency_ms) = match result {
            Ok(c) => (Some(c.text.clone()), None, c.latency_ms),
            Err(e) => (None, Some(e.to_string()), 0),
        };
        Self {
            video: req.tag.video.clone(),
            segment: req.tag.segment,
            step: req.tag.step.clone(),
            attempt,
            digest: digest.to_string(),
            frame_count: req.frames.len(),
            prompt: req.prompt.clone(),
            response,
            status,
            latency_ms,
        }
    }

    fn sort_key(&self) -> (&str, usize, &str, u32) {
        (&self.video, self.segment, &self.step, self.attempt)
    }
}

/// Append-only log of backend attempts. Records may arrive from many workers;
/// readers always see them ordered by video, segment, step and attempt.
#[derive(Debug, Default)]
pub struct Transcript {
    records: Mutex<Vec<TranscriptRecord>>,
}

impl Transcript {
    pub fn append(&self, record: TranscriptRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        let mut out = self.records.lock().unwrap_or_else(|e| e.into_inner()).clone();
        out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        out
    }

    pub fn records_for(&self, video: &str) -> Vec<TranscriptRecord> {
        self.records().into_iter().filter(|r| r.video == video).collect()
    }

    pub fn to_jsonl(&self) -> String {
        records_to_jsonl(&self.records())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_records(path, &self.records())
    }
}

pub(crate) fn records_to_jsonl(records: &[TranscriptRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("transcript record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[TranscriptRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(records_to_jsonl(records).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlm::{EncodedFrame, RequestTag};

    fn rec(video: &str, segment: usize, step: &str) -> TranscriptRecord {
        let req = BackendRequest::new(
            vec![EncodedFrame::new("image/png", b"x".to_vec())],
            "p",
            RequestTag::new(video, segment, step),
        );
        TranscriptRecord::new(&req, &req.digest(), 0, &Ok(Completion { text: "Yes.".into(), latency_ms: 0 }))
    }

    #[test]
    fn records_are_ordered_regardless_of_arrival() {
        let a = Transcript::default();
        let b = Transcript::default();
        let recs = [rec("v2", 0, "motion"), rec("v1", 3, "grasp"), rec("v1", 3, "motion"), rec("v1", 0, "motion")];
        for r in &recs {
            a.append(r.clone());
        }
        for r in recs.iter().rev() {
            b.append(r.clone());
        }
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let order: Vec<_> = a.records().iter().map(|r| (r.video.clone(), r.segment)).collect();
        assert_eq!(order[0], ("v1".to_string(), 0));
        assert_eq!(order[3], ("v2".to_string(), 0));
    }

    #[test]
    fn jsonl_round_trip() {
        let t = Transcript::default();
        t.append(rec("v", 1, "grasp"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.write_jsonl(&path).unwrap();
        assert_eq!(read_records(&path).unwrap(), t.records());
    }
}
