//! Shared plumbing: backend and frame-source selection, catalog loading,
//! manifest-to-job conversion and the run summary.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context as _, Result};

use rehab_vlm::ingest::{
    load_annotation, ExternalExtractor, FrameSource, KeypointTrack, Manifest, SyntheticFrames, VideoEntry, VideoRef,
};
use rehab_vlm::output::{RunDir, RunSummary};
use rehab_vlm::Error;
use rehab_vlm::par::Executor;
use rehab_vlm::primpipe::VideoJob;
use rehab_vlm::types::{FrameAnnotation, Hand};
use rehab_vlm::vlm::{
    Decoding, HttpBackend, HttpConfig, MockBackend, PromptCatalog, VlmBackend, VlmClient, VlmError,
};

use crate::config::{Config, ConfigError};

/// How model answers and frames are obtained.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct BackendArgs {
    /// Answer every prompt with this text instead of calling a server.
    #[arg(long, global = true, conflicts_with = "replay")]
    pub mock_reply: Option<String>,
    /// Answer prompts from a transcript or mock script (JSON lines keyed by request digest).
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    /// Use generated placeholder images instead of decoding video files.
    #[arg(long, global = true)]
    pub synthetic_frames: bool,
}

pub struct Runtime {
    pub cfg: Config,
    pub out: RunDir,
    pub exec: Executor,
    pub args: BackendArgs,
}

impl Runtime {
    pub fn new(cfg: Config, args: BackendArgs) -> Result<Self> {
        let out = RunDir::create(&cfg.run.output_dir)?;
        let exec = if cfg.run.parallelism == 1 { Executor::sequential() } else { Executor::with_threads(cfg.run.parallelism) };
        Ok(Self { cfg, out, exec, args })
    }

    fn backend(&self) -> Result<Arc<dyn VlmBackend>> {
        if let Some(reply) = &self.args.mock_reply {
            return Ok(Arc::new(MockBackend::new().named("mock:constant").with_default(reply.clone())));
        }
        if let Some(path) = &self.args.replay {
            return Ok(Arc::new(MockBackend::from_jsonl(path)?));
        }
        let b = &self.cfg.backend;
        let url = b.url.clone().ok_or_else(|| {
            ConfigError("no backend: set backend.url, pass --backend-url, or use --mock-reply/--replay".into())
        })?;
        let api_key = std::env::var(&b.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::info!("{} is not set; sending requests without a bearer token", b.api_key_env);
        }
        let cfg = HttpConfig { url, model: b.model.clone(), api_key, timeout: Duration::from_secs_f64(b.timeout_s) };
        let backend = HttpBackend::new(cfg).map_err(|e| VlmError::Transport { message: e.to_string(), attempts: 0 })?;
        Ok(Arc::new(backend))
    }

    pub fn client(&self) -> Result<VlmClient> {
        Ok(VlmClient::new(self.backend()?)
            .with_retry(self.cfg.backend.retry())
            .with_decoding(Decoding::greedy(self.cfg.backend.max_output_tokens)))
    }

    pub fn frames(&self) -> Box<dyn FrameSource> {
        if self.args.synthetic_frames {
            Box::new(SyntheticFrames)
        } else {
            Box::new(
                ExternalExtractor::with_template(self.cfg.cache_dir(), self.cfg.frames.extract_command.clone())
                    .with_max_concurrent(self.cfg.frames.max_concurrent),
            )
        }
    }

    pub fn catalog(&self) -> Result<PromptCatalog> {
        Ok(match &self.cfg.prompts.catalog {
            Some(p) => PromptCatalog::load(p)?,
            None => PromptCatalog::builtin(),
        })
    }

    /// Writes the resolved config and `summary.json`.
    pub fn finish(&self, mut summary: RunSummary) -> Result<()> {
        summary.config_digest = self.cfg.digest();
        self.out.write_text("config.toml", &self.cfg.to_toml())?;
        self.out.write_json("summary.json", &summary)?;
        Ok(())
    }

    pub fn summary(&self, command: &str) -> RunSummary {
        RunSummary {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: String::new(),
            seed: Some(self.cfg.run.seed),
            backend: None,
            catalog_version: None,
            catalog_digest: None,
            videos: 0,
            unparsed_answers: 0,
            results: serde_json::Value::Null,
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    if m.is_empty() {
        return Err(Error::invalid(format!("{}: manifest has no videos", path.display())).into());
    }
    Ok(m)
}

pub fn annotation_for(entry: &VideoEntry, hand: Hand) -> Result<FrameAnnotation> {
    let path = entry
        .annotation_path
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("video {}: no annotation_path in the manifest", entry.video_id)))?;
    Ok(load_annotation(path, hand, entry.native_fps)?)
}

/// Manifest duration, or the annotation's length when the manifest leaves it empty.
pub fn duration_of(entry: &VideoEntry) -> Result<f64> {
    if let Some(d) = entry.duration_s {
        return Ok(d);
    }
    if entry.annotation_path.is_some() {
        return Ok(annotation_for(entry, entry.hand)?.duration_s());
    }
    Err(Error::invalid(format!("video {}: duration_s is empty and there is no annotation to infer it from", entry.video_id))
        .into())
}

fn video_ref_for(entry: &VideoEntry, duration_s: f64) -> VideoRef {
    let frames = (duration_s * entry.native_fps + 1e-9).floor() as u64;
    VideoRef::new(&entry.video_id, &entry.video_path, entry.native_fps, frames)
}

pub fn video_ref(entry: &VideoEntry) -> Result<VideoRef> {
    Ok(video_ref_for(entry, duration_of(entry)?))
}

pub fn video_job(entry: &VideoEntry, need_keypoints: bool) -> Result<VideoJob> {
    let keypoints = match (&entry.keypoint_path, need_keypoints) {
        (Some(p), true) => Some(KeypointTrack::load(p).with_context(|| format!("video {}", entry.video_id))?),
        (None, true) => {
            return Err(Error::invalid(format!("video {}: cropping needs a keypoint_path", entry.video_id)).into())
        }
        (_, false) => None,
    };
    let duration_s = duration_of(entry)?;
    let job = VideoJob { video: video_ref_for(entry, duration_s), hand: entry.hand, duration_s, keypoints };
    job.validate(need_keypoints)?;
    Ok(job)
}
