//! Vision-language-model access: request/response types, the backend trait,
//! a retrying client that records every attempt to a transcript, the prompt
//! catalog and the answer parsers.

mod http;
mod mock;
pub mod parse;
mod prompts;
mod transcript;

use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{chat_request_body, parse_chat_response, HttpBackend, HttpConfig};
pub use mock::{MockBackend, ScriptEntry};
pub use prompts::{HandRef, PromptCatalog, PromptSpec, PromptVars};
pub use transcript::{read_records, write_records, Transcript, TranscriptRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VlmError {
    #[error("request rejected before sending: {0}")]
    Precondition(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed backend reply: {0}")]
    Protocol(String),
    #[error("could not parse {kind} from reply {text:?}")]
    Unparseable { kind: &'static str, text: String },
    #[error("prompt catalog: {0}")]
    Catalog(String),
}

/// One encoded image handed to the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub mime: String,
    pub bytes: Arc<[u8]>,
}

impl EncodedFrame {
    pub fn new(mime: impl Into<String>, bytes: impl Into<Arc<[u8]>>) -> Self {
        Self { mime: mime.into(), bytes: bytes.into() }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

/// Decoding parameters. Decoding is always greedy: temperature 0, no nucleus
/// sampling, a single beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoding {
    max_output_tokens: u32,
}

impl Decoding {
    pub fn greedy(max_output_tokens: u32) -> Self {
        Self { max_output_tokens }
    }

    pub fn temperature(&self) -> f64 {
        0.0
    }

    pub fn beams(&self) -> u32 {
        1
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.max_output_tokens
    }
}

impl Default for Decoding {
    fn default() -> Self {
        Self::greedy(512)
    }
}

/// Where a request belongs in a run; orders transcript records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RequestTag {
    pub video: String,
    pub segment: usize,
    pub step: String,
}

impl RequestTag {
    pub fn new(video: impl Into<String>, segment: usize, step: impl Into<String>) -> Self {
        Self { video: video.into(), segment, step: step.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub frames: Vec<EncodedFrame>,
    pub prompt: String,
    pub decoding: Decoding,
    pub tag: RequestTag,
}

impl BackendRequest {
    pub fn new(frames: Vec<EncodedFrame>, prompt: impl Into<String>, tag: RequestTag) -> Self {
        Self { frames, prompt: prompt.into(), decoding: Decoding::default(), tag }
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    /// SHA-256 over the prompt text and the ordered frame digests. The tag is
    /// not part of the digest.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prompt.as_bytes());
        for f in &self.frames {
            h.update([0u8]);
            h.update(f.digest().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Backend-reported latency. Scripted backends report 0 so transcripts
    /// stay byte-identical between runs.
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendFailure {
    #[error("transient failure{}: {message}", status_suffix(*status))]
    Transient { status: Option<u16>, message: String },
    #[error("request failed{}: {message}", status_suffix(*status))]
    Fatal { status: Option<u16>, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

fn status_suffix(status: Option<u16>) -> String {
    status.map(|s| format!(" (HTTP {s})")).unwrap_or_default()
}

/// A model that turns frames plus a prompt into text.
pub trait VlmBackend: Send + Sync {
    /// Human-readable backend description recorded in run summaries.
    fn identity(&self) -> String;
    fn complete(&self, req: &BackendRequest) -> Result<Completion, BackendFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 4, initial_backoff: Duration::from_millis(500), max_backoff: Duration::from_secs(30) }
    }
}

/// Backend handle shared by all workers of a run.
pub struct VlmClient {
    backend: Arc<dyn VlmBackend>,
    retry: RetryPolicy,
    decoding: Decoding,
    transcript: Transcript,
}

impl VlmClient {
    pub fn new(backend: Arc<dyn VlmBackend>) -> Self {
        Self { backend, retry: RetryPolicy::default(), decoding: Decoding::default(), transcript: Transcript::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn identity(&self) -> String {
        self.backend.identity()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Builds a request from its parts with the client's decoding settings and
    /// sends it.
    pub fn ask(&self, frames: Vec<EncodedFrame>, prompt: &str, tag: RequestTag) -> Result<String, VlmError> {
        self.query(&BackendRequest::new(frames, prompt, tag).with_decoding(self.decoding))
    }

    /// Sends `req`, retrying transient failures with exponential backoff. Every
    /// attempt is appended to the transcript.
    pub fn query(&self, req: &BackendRequest) -> Result<String, VlmError> {
        if req.frames.is_empty() {
            return Err(VlmError::Precondition("at least one frame is required".into()));
        }
        if req.prompt.trim().is_empty() {
            return Err(VlmError::Precondition("prompt is empty".into()));
        }
        let digest = req.digest();
        let mut attempt = 0u32;
        loop {
            let result = self.backend.complete(req);
            let record = TranscriptRecord::new(req, &digest, attempt, &result);
            self.transcript.append(record);
            match result {
                Ok(c) => return Ok(c.text),
                Err(BackendFailure::Transient { message, .. }) => {
                    if attempt >= self.retry.max_retries {
                        return Err(VlmError::Transport { message, attempts: attempt + 1 });
                    }
                    log::debug!("transient backend failure ({message}); retry {}", attempt + 1);
                    std::thread::sleep(self.retry.backoff(attempt));
                    attempt += 1;
                }
                Err(BackendFailure::Fatal { status, message }) => {
                    return Err(VlmError::Transport {
                        message: format!("{message}{}", status_suffix(status)),
                        attempts: attempt + 1,
                    })
                }
                Err(BackendFailure::Protocol(m)) => return Err(VlmError::Protocol(m)),
            }
        }
    }
}
