use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::VlmError;
use crate::types::Hand;

const BUILTIN: &str = include_str!("../../catalog/prompts.toml");

/// Template ids every catalog must provide.
pub const REQUIRED_TEMPLATES: &[&str] = &[
    "single",
    "decomposed_motion",
    "decomposed_grasp",
    "contextual_motion",
    "contextual_grasp",
    "primrs_idle",
    "primrs_grasp",
    "primrs_release",
    "crosshand_named",
    "crosshand_center",
    "fma_touch_suffix",
];

/// How a prompt refers to the hand of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandRef {
    Named(Hand),
    /// Frames are cropped around the hand.
    Center,
}

impl HandRef {
    fn hand(self) -> String {
        match self {
            HandRef::Named(h) => format!("patient's {} hand", h.upper()),
            HandRef::Center => "hand in the center".into(),
        }
    }

    fn the_hand(self) -> String {
        match self {
            HandRef::Named(h) => format!("the patient's {} hand", h.upper()),
            HandRef::Center => "the hand".into(),
        }
    }
}

/// Placeholder values for one rendering.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptVars(BTreeMap<String, String>);

impl PromptVars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_hand(hand: HandRef) -> Self {
        let mut v = Self::new().set("hand", hand.hand()).set("the_hand", hand.the_hand());
        if let HandRef::Named(h) = hand {
            v = v.set("side", h.upper());
        }
        v
    }

    pub fn set(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }
}

/// A rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub template_id: String,
    pub text: String,
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    version: String,
    templates: BTreeMap<String, String>,
}

/// Named prompt templates loaded from TOML.
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    version: String,
    digest: String,
    templates: BTreeMap<String, String>,
}

fn placeholder_re() -> Regex {
    Regex::new(r"\{[A-Za-z_][A-Za-z0-9_]*\}").expect("static regex")
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("built-in prompt catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, VlmError> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| VlmError::Catalog(e.to_string()))?;
        for id in REQUIRED_TEMPLATES {
            if !file.templates.contains_key(*id) {
                return Err(VlmError::Catalog(format!("missing template {id:?}")));
            }
        }
        Ok(Self {
            version: file.version,
            digest: hex::encode(Sha256::digest(text.as_bytes())),
            templates: file.templates,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VlmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| VlmError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn template(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    /// Substitutes `vars` into template `id`. Fails if any placeholder is left.
    pub fn render(&self, id: &str, vars: &PromptVars) -> Result<PromptSpec, VlmError> {
        let template = self.template(id).ok_or_else(|| VlmError::Catalog(format!("unknown template {id:?}")))?;
        let text = placeholder_re()
            .replace_all(template, |caps: &regex::Captures<'_>| {
                let m = &caps[0];
                vars.0.get(&m[1..m.len() - 1]).cloned().unwrap_or_else(|| m.to_string())
            })
            .into_owned();
        if let Some(m) = placeholder_re().find(&text) {
            return Err(VlmError::Catalog(format!("template {id:?} has unresolved placeholder {}", m.as_str())));
        }
        Ok(PromptSpec { template_id: id.to_string(), text })
    }
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}
