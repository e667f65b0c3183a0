use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendFailure, BackendRequest, Completion, VlmBackend};
use crate::error::{Error, Result};

type Responder = Box<dyn Fn(&BackendRequest) -> Option<String> + Send + Sync>;

/// One line of a mock script: the reply for a request digest. Transcript
/// records carry the same two fields, so a transcript can be replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub digest: String,
    pub response: Option<String>,
}

/// Scripted backend for tests and offline reruns.
///
/// A reply is looked up by request digest first, then by the responder
/// closure, then the default reply. Queued faults are returned, in order, by
/// the first calls before any lookup happens.
#[derive(Default)]
pub struct MockBackend {
    name: String,
    by_digest: HashMap<String, String>,
    responder: Option<Responder>,
    default: Option<String>,
    faults: Mutex<VecDeque<BackendFailure>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self { name: "mock".into(), ..Default::default() }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_entry(mut self, digest: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_digest.insert(digest.into(), response.into());
        self
    }

    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&BackendRequest) -> Option<String> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn with_faults(self, faults: Vec<BackendFailure>) -> Self {
        *self.faults.lock().unwrap() = faults.into();
        self
    }

    /// Loads a line-delimited script or transcript. Records without a
    /// response (failed attempts) are skipped.
    pub fn from_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mock = Self::new().named(format!("mock:{}", path.display()));
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            if let Some(r) = entry.response {
                mock.by_digest.insert(entry.digest, r);
            }
        }
        Ok(mock)
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }
}

impl VlmBackend for MockBackend {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, req: &BackendRequest) -> std::result::Result<Completion, BackendFailure> {
        if let Some(fault) = self.faults.lock().unwrap().pop_front() {
            return Err(fault);
        }
        let digest = req.digest();
        let text = self
            .by_digest
            .get(&digest)
            .cloned()
            .or_else(|| self.responder.as_ref().and_then(|f| f(req)))
            .or_else(|| self.default.clone())
            .ok_or_else(|| BackendFailure::Fatal {
                status: None,
                message: format!("no scripted response for digest {digest}"),
            })?;
        Ok(Completion { text, latency_ms: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlm::{EncodedFrame, RequestTag};

    fn req(prompt: &str) -> BackendRequest {
        BackendRequest::new(vec![EncodedFrame::new("image/png", b"f".to_vec())], prompt, RequestTag::default())
    }

    #[test]
    fn lookup_order() {
        let a = req("a");
        let mock = MockBackend::new()
            .with_entry(a.digest(), "digest")
            .with_responder(|r| (r.prompt == "b").then(|| "closure".to_string()))
            .with_default("default");
        assert_eq!(mock.complete(&a).unwrap().text, "digest");
        assert_eq!(mock.complete(&req("b")).unwrap().text, "closure");
        assert_eq!(mock.complete(&req("c")).unwrap().text, "default");
    }

    #[test]
    fn unscripted_request_fails() {
        assert!(matches!(MockBackend::new().complete(&req("x")), Err(BackendFailure::Fatal { .. })));
    }

    #[test]
    fn loads_script_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let a = req("a");
        std::fs::write(
            &path,
            format!(
                "{{\"digest\":\"{}\",\"response\":\"No.\"}}\n\n{{\"digest\":\"zz\",\"response\":null}}\n",
                a.digest()
            ),
        )
        .unwrap();
        let mock = MockBackend::from_jsonl(&path).unwrap();
        assert_eq!(mock.len(), 1);
        assert_eq!(mock.complete(&a).unwrap().text, "No.");
    }
}
