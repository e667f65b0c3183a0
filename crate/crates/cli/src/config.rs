//! Run configuration. Values come from built-in defaults, then the TOML file,
//! then command-line flags, each layer overriding the previous one.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use rehab_vlm::fma::{FmaConfig, SpeedThresholds, MAX_ITEM, MIN_ITEM};
use rehab_vlm::ingest::{CropConfig, DEFAULT_EXTRACT_TEMPLATE};
use rehab_vlm::primpipe::PipelineConfig;
use rehab_vlm::primrs::PrimRsConfig;
use rehab_vlm::reconstruct::ReconstructionConfig;
use rehab_vlm::vlm::RetryPolicy;

/// Invalid configuration or command-line usage.
#[derive(Debug, Error)]
#[error("configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// Chat-completions endpoint.
    pub url: Option<String>,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_output_tokens: u32,
}

impl Default for BackendSection {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            url: None,
            model: "default".into(),
            api_key_env: "VLM_API_KEY".into(),
            timeout_s: 120.0,
            max_retries: retry.max_retries,
            initial_backoff_ms: retry.initial_backoff.as_millis() as u64,
            max_backoff_ms: retry.max_backoff.as_millis() as u64,
            max_output_tokens: 512,
        }
    }
}

impl BackendSection {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            initial_backoff: Duration::from_millis(self.initial_backoff_ms),
            max_backoff: Duration::from_millis(self.max_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 1 runs sequentially, 0 uses every CPU.
    pub parallelism: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { parallelism: 1, seed: 0, output_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimRsSection {
    pub sampling_rate_hz: f64,
    pub frames_per_segment: usize,
}

fn validate_grid(name: &str, sampling_rate_hz: f64, frames_per_segment: usize) -> Result<(), ConfigError> {
    if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
        return Err(ConfigError(format!("{name}.sampling_rate_hz must be positive")));
    }
    if frames_per_segment == 0 {
        return Err(ConfigError(format!("{name}.frames_per_segment must be at least 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub sampling_rate_hz: f64,
    pub frames_per_segment: usize,
    /// A moving empty-handed run is a reach when a grasp starts within this many seconds.
    pub terminal_grasp_window_s: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            sampling_rate_hz: p.sampling_rate_hz,
            frames_per_segment: p.frames_per_segment,
            terminal_grasp_window_s: ReconstructionConfig::DEFAULT_WINDOW_S,
        }
    }
}

impl Default for PrimRsSection {
    fn default() -> Self {
        let p = PrimRsConfig::default();
        Self { sampling_rate_hz: p.sampling_rate_hz, frames_per_segment: p.frames_per_segment }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramesSection {
    /// Extraction command; `{input}`, `{time}`, `{crop}` and `{output}` are substituted.
    pub extract_command: Vec<String>,
    /// Image cache; defaults to `<output_dir>/frame-cache`.
    pub cache_dir: Option<PathBuf>,
    pub max_concurrent: usize,
}

impl Default for FramesSection {
    fn default() -> Self {
        Self {
            extract_command: DEFAULT_EXTRACT_TEMPLATE.iter().map(|s| s.to_string()).collect(),
            cache_dir: None,
            max_concurrent: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsSection {
    /// Prompt catalog TOML; the built-in catalog when unset.
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmaSection {
    /// Item scored by touch timing; 0 scores every item by its questions.
    pub speed_item: u8,
    pub full_below_s: f64,
    pub partial_below_s: f64,
}

impl Default for FmaSection {
    fn default() -> Self {
        let f = FmaConfig::default();
        Self {
            speed_item: f.speed_item.unwrap_or(0),
            full_below_s: f.speed.full_below_s,
            partial_below_s: f.speed.partial_below_s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendSection,
    pub run: RunSection,
    pub pipeline: PipelineSection,
    pub primrs: PrimRsSection,
    pub crop: CropConfig,
    pub frames: FramesSection,
    pub prompts: PromptsSection,
    pub fma: FmaSection,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend_url: Option<String>,
    pub model: Option<String>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                Self::parse(&text, p)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(u) = &o.backend_url {
            self.backend.url = Some(u.clone());
        }
        if let Some(m) = &o.model {
            self.backend.model = m.clone();
        }
        if let Some(p) = o.parallelism {
            self.run.parallelism = p;
        }
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.run.output_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_grid("pipeline", self.pipeline.sampling_rate_hz, self.pipeline.frames_per_segment)?;
        validate_grid("primrs", self.primrs.sampling_rate_hz, self.primrs.frames_per_segment)?;
        if !(self.pipeline.terminal_grasp_window_s >= 0.0 && self.pipeline.terminal_grasp_window_s.is_finite()) {
            return Err(ConfigError("pipeline.terminal_grasp_window_s must be non-negative".into()));
        }
        self.crop.validate().map_err(|e| ConfigError(format!("crop: {e}")))?;
        if !(self.backend.timeout_s > 0.0 && self.backend.timeout_s.is_finite()) {
            return Err(ConfigError("backend.timeout_s must be positive".into()));
        }
        if self.backend.max_output_tokens == 0 {
            return Err(ConfigError("backend.max_output_tokens must be positive".into()));
        }
        if self.frames.extract_command.is_empty() {
            return Err(ConfigError("frames.extract_command is empty".into()));
        }
        if self.frames.max_concurrent == 0 {
            return Err(ConfigError("frames.max_concurrent must be at least 1".into()));
        }
        let f = &self.fma;
        if f.speed_item != 0 && !(MIN_ITEM..=MAX_ITEM).contains(&f.speed_item) {
            return Err(ConfigError(format!("fma.speed_item must be 0 or {MIN_ITEM}..={MAX_ITEM}")));
        }
        if !(f.full_below_s.is_finite() && f.partial_below_s.is_finite() && f.full_below_s <= f.partial_below_s) {
            return Err(ConfigError("fma thresholds need full_below_s <= partial_below_s".into()));
        }
        Ok(())
    }

    /// SHA-256 over the resolved configuration, ignoring where outputs and the
    /// frame cache are written.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.run.output_dir = PathBuf::new();
        c.frames.cache_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            sampling_rate_hz: self.pipeline.sampling_rate_hz,
            frames_per_segment: self.pipeline.frames_per_segment,
            crop: self.crop,
            terminal_grasp_window_s: self.pipeline.terminal_grasp_window_s,
            ..PipelineConfig::default()
        }
    }

    pub fn primrs_config(&self) -> PrimRsConfig {
        PrimRsConfig {
            sampling_rate_hz: self.primrs.sampling_rate_hz,
            frames_per_segment: self.primrs.frames_per_segment,
            crop: self.crop,
            terminal_grasp_window_s: self.pipeline.terminal_grasp_window_s,
            ..PrimRsConfig::default()
        }
    }

    pub fn fma_config(&self) -> FmaConfig {
        FmaConfig {
            speed_item: (self.fma.speed_item != 0).then_some(self.fma.speed_item),
            speed: SpeedThresholds { full_below_s: self.fma.full_below_s, partial_below_s: self.fma.partial_below_s },
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.frames.cache_dir.clone().unwrap_or_else(|| self.run.output_dir.join("frame-cache"))
    }
}
