//! Frame sources: an external extraction tool with an on-disk cache, and a
//! synthetic source for tests and dry runs.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use sha2::{Digest, Sha256};

use super::crop::CropRect;
use super::IngestError;
use crate::vlm::EncodedFrame;

/// Default extraction command. Placeholders: `{input}` video path, `{time}`
/// seek position in seconds, `{output}` image path, `{crop}` an ffmpeg crop
/// filter (or `null` when uncropped).
pub const DEFAULT_EXTRACT_TEMPLATE: &[&str] = &[
    "ffmpeg", "-v", "error", "-y", "-ss", "{time}", "-i", "{input}", "-frames:v", "1", "-vf", "{crop}", "{output}",
];

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRef {
    pub id: String,
    pub path: PathBuf,
    pub native_fps: f64,
    pub frame_count: u64,
}

impl VideoRef {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, native_fps: f64, frame_count: u64) -> Self {
        Self { id: id.into(), path: path.into(), native_fps, frame_count }
    }

    fn check(&self, index: u64) -> Result<(), IngestError> {
        if index >= self.frame_count {
            return Err(IngestError::Extraction {
                video: self.id.clone(),
                index,
                message: format!("index beyond video end ({} frames)", self.frame_count),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRequest {
    pub index: u64,
    pub crop: Option<CropRect>,
}

impl FrameRequest {
    pub fn full(index: u64) -> Self {
        Self { index, crop: None }
    }

    pub fn cropped(index: u64, crop: CropRect) -> Self {
        Self { index, crop: Some(crop) }
    }
}

pub trait FrameSource: Send + Sync {
    /// Encoded images for `requests`, in request order.
    fn frames(&self, video: &VideoRef, requests: &[FrameRequest]) -> Result<Vec<EncodedFrame>, IngestError>;
}

/// Self-describing placeholder frame content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTag {
    pub video: String,
    pub index: u64,
    pub crop: Option<CropRect>,
}

impl FrameTag {
    const MAGIC: &'static str = "synthetic-frame";

    pub fn to_bytes(&self) -> Vec<u8> {
        let crop = match self.crop {
            Some(c) => format!("{},{},{},{}", c.x, c.y, c.width, c.height),
            None => "none".into(),
        };
        format!("{}\nvideo={}\nindex={}\ncrop={}\n", Self::MAGIC, self.video, self.index, crop).into_bytes()
    }

    pub fn parse(bytes: &[u8]) -> Option<Self> {
        let text = std::str::from_utf8(bytes).ok()?;
        let mut lines = text.lines();
        if lines.next()? != Self::MAGIC {
            return None;
        }
        let video = lines.next()?.strip_prefix("video=")?.to_string();
        let index = lines.next()?.strip_prefix("index=")?.parse().ok()?;
        let crop = match lines.next()?.strip_prefix("crop=")? {
            "none" => None,
            s => {
                let v: Vec<u32> = s.split(',').map(|p| p.parse().ok()).collect::<Option<_>>()?;
                let [x, y, width, height] = v[..] else { return None };
                Some(CropRect { x, y, width, height })
            }
        };
        Some(Self { video, index, crop })
    }
}

/// Frames whose bytes are a [`FrameTag`]; no video file is read.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticFrames;

impl FrameSource for SyntheticFrames {
    fn frames(&self, video: &VideoRef, requests: &[FrameRequest]) -> Result<Vec<EncodedFrame>, IngestError> {
        requests
            .iter()
            .map(|r| {
                video.check(r.index)?;
                let tag = FrameTag { video: video.id.clone(), index: r.index, crop: r.crop };
                Ok(EncodedFrame::new("image/png", tag.to_bytes()))
            })
            .collect()
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Runs an external tool once per uncached frame. Outputs are cached under
/// `cache_dir/<video digest>/<index>_<crop>.png`.
pub struct ExternalExtractor {
    template: Vec<String>,
    cache_dir: PathBuf,
    spawns: AtomicUsize,
    tmp_counter: AtomicU64,
    digests: Mutex<HashMap<PathBuf, String>>,
    slots: Slots,
}

impl ExternalExtractor {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self::with_template(cache_dir, DEFAULT_EXTRACT_TEMPLATE.iter().map(|s| s.to_string()).collect())
    }

    pub fn with_template(cache_dir: impl Into<PathBuf>, template: Vec<String>) -> Self {
        Self {
            template,
            cache_dir: cache_dir.into(),
            spawns: AtomicUsize::new(0),
            tmp_counter: AtomicU64::new(0),
            digests: Mutex::new(HashMap::new()),
            slots: Slots { free: Mutex::new(4), cv: Condvar::new() },
        }
    }

    /// Maximum number of tool processes running at once (at least 1).
    pub fn with_max_concurrent(self, n: usize) -> Self {
        *self.slots.free.lock().expect("slot lock") = n.max(1);
        self
    }

    /// Number of tool processes spawned so far.
    pub fn spawn_count(&self) -> usize {
        self.spawns.load(Ordering::SeqCst)
    }

    fn video_digest(&self, path: &Path) -> Result<String, IngestError> {
        if let Some(d) = self.digests.lock().expect("digest lock").get(path) {
            return Ok(d.clone());
        }
        let mut file = std::fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = file.read(&mut buf).map_err(|e| IngestError::io(path, e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
        let d = hex::encode(h.finalize())[..16].to_string();
        self.digests.lock().expect("digest lock").insert(path.to_path_buf(), d.clone());
        Ok(d)
    }

    fn cache_path(&self, digest: &str, req: &FrameRequest) -> PathBuf {
        let crop = match req.crop {
            Some(c) => format!("{}x{}+{}+{}", c.width, c.height, c.x, c.y),
            None => "full".into(),
        };
        self.cache_dir.join(digest).join(format!("{}_{crop}.png", req.index))
    }

    fn argv(&self, video: &VideoRef, req: &FrameRequest, output: &Path) -> Vec<String> {
        let time = format!("{:.6}", req.index as f64 / video.native_fps);
        let crop = match req.crop {
            Some(c) => format!("crop={}:{}:{}:{}", c.width, c.height, c.x, c.y),
            None => "null".into(),
        };
        self.template
            .iter()
            .map(|t| {
                t.replace("{input}", &video.path.to_string_lossy())
                    .replace("{time}", &time)
                    .replace("{output}", &output.to_string_lossy())
                    .replace("{crop}", &crop)
            })
            .filter(|a| !a.is_empty())
            .collect()
    }

    fn run_tool(&self, video: &VideoRef, req: &FrameRequest, target: &Path) -> Result<(), IngestError> {
        let fail = |message: String| IngestError::Extraction { video: video.id.clone(), index: req.index, message };
        let dir = target.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}.png",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::SeqCst)
        ));
        let argv = self.argv(video, req, &tmp);
        let (program, args) = argv.split_first().ok_or_else(|| fail("empty extraction command".into()))?;
        let output = {
            let _slot = self.slots.acquire();
            self.spawns.fetch_add(1, Ordering::SeqCst);
            Command::new(program).args(args).output().map_err(|e| fail(format!("cannot run {program}: {e}")))?
        };
        if !output.status.success() {
            let _ = std::fs::remove_file(&tmp);
            return Err(fail(format!("{program} exited with {}: {}", output.status, String::from_utf8_lossy(&output.stderr).trim())));
        }
        match std::fs::metadata(&tmp) {
            Ok(m) if m.len() > 0 => {}
            _ => {
                let _ = std::fs::remove_file(&tmp);
                return Err(fail(format!("{program} produced no output")));
            }
        }
        std::fs::rename(&tmp, target).map_err(|e| IngestError::io(target, e))
    }

    /// Cached image paths for `requests`, in request order, running the tool
    /// for any that are missing.
    pub fn extract(&self, video: &VideoRef, requests: &[FrameRequest]) -> Result<Vec<PathBuf>, IngestError> {
        for r in requests {
            video.check(r.index)?;
        }
        let digest = self.video_digest(&video.path)?;
        requests
            .iter()
            .map(|r| {
                let path = self.cache_path(&digest, r);
                if !path.is_file() {
                    self.run_tool(video, r, &path)?;
                }
                Ok(path)
            })
            .collect()
    }
}

impl FrameSource for ExternalExtractor {
    fn frames(&self, video: &VideoRef, requests: &[FrameRequest]) -> Result<Vec<EncodedFrame>, IngestError> {
        self.extract(video, requests)?
            .into_iter()
            .map(|p| {
                let bytes = std::fs::read(&p).map_err(|e| IngestError::io(&p, e))?;
                Ok(EncodedFrame::new("image/png", bytes))
            })
            .collect()
    }
}
