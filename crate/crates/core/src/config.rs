//! Run configuration: a TOML file with `${VAR}` interpolation, overlaid by
//! command-line flags, validated in one pass.
//!
//! ```toml
//! dataset = "data/questions.jsonl"
//! answers = "data/answers.json"
//! captions_dir = "data/captions"
//! frames_dir = "${EGO_FRAMES}"
//! results_dir = "results"
//! workers = 8
//!
//! [[backends]]
//! backend_id = "gpt-4o"
//! endpoint = "https://example.openai.azure.com/openai/deployments/gpt-4o/chat/completions?api-version=2024-02-01"
//! provider = "azure"
//! api_key_env = "AZURE_OPENAI_KEY"
//! supports_images = true
//!
//! [[models]]
//! model_id = "model4-f90"
//! topology = { kind = "multi_agent", n_experts = 3 }
//! dag_backend = "gpt-4o"
//! agent_backend = "gpt-4o"
//! analyzer_backend = "gpt-4o"
//! expert_tools = ["captioner", "video_analyzer"]
//! analyzer_mode = "per_choice_verdict"
//! frames = 90
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use regex::{Captures, Regex};
use serde::Deserialize;

use crate::dataset::FieldMap;
use crate::ensemble::{builtin_configs, ModelConfig, TieBreakRule};
use crate::llm::{BackendSpec, Provider};
use crate::qa::DEFAULT_CONTEXT_BUDGET;

pub const OPENAI_CHAT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub captions_dir: Option<PathBuf>,
    pub frames_dir: Option<PathBuf>,
    pub results_dir: PathBuf,
    pub prompts_dir: Option<PathBuf>,
    /// Scripted mock replacing every backend.
    pub mock: Option<PathBuf>,
    pub workers: usize,
    pub seed: u64,
    pub subset: Option<usize>,
    /// Overrides the frame count of every model.
    pub frames: Option<usize>,
    pub context_budget: usize,
    pub tie_break: TieBreakRule,
    pub fields: FieldMap,
    /// Merged over the default backends by `backend_id`.
    pub backends: Vec<BackendSpec>,
    /// Merged over the built-in models by `model_id`.
    pub models: Vec<ModelConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            answers: None,
            categories: None,
            captions_dir: None,
            frames_dir: None,
            results_dir: PathBuf::from("results"),
            prompts_dir: None,
            mock: None,
            workers: 4,
            seed: 0,
            subset: None,
            frames: None,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            tie_break: TieBreakRule::default(),
            fields: FieldMap::default(),
            backends: Vec::new(),
            models: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Load { path: String, message: String },
    #[error("configuration is invalid:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

/// Replaces `${NAME}` and `${NAME:-default}` using `lookup`. Unset variables
/// without a default are collected as errors.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, Vec<String>> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}").expect("valid regex");
    let mut missing = Vec::new();
    let out = re.replace_all(text, |c: &Captures| match lookup(&c[1]) {
        Some(v) => v,
        None => match c.get(2) {
            Some(d) => d.as_str().to_string(),
            None => {
                missing.push(format!("environment variable {} is not set", &c[1]));
                String::new()
            }
        },
    });
    if missing.is_empty() {
        Ok(out.into_owned())
    } else {
        Err(missing)
    }
}

/// Backends used by the built-in models, reached through the OpenAI API.
pub fn default_backends() -> Vec<BackendSpec> {
    let mk = |id: &str, model: &str, images: bool| BackendSpec {
        endpoint: OPENAI_CHAT_ENDPOINT.into(),
        provider: Provider::OpenAi,
        model: model.into(),
        api_key_env: Some("OPENAI_API_KEY".into()),
        ..BackendSpec::new(id).with_images(images)
    };
    vec![mk("gpt-4", "gpt-4", false), mk("gpt-4-vision", "gpt-4-vision-preview", true), mk("gpt-4o", "gpt-4o", true)]
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parses config text after environment interpolation.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = interpolate(text, |k| std::env::var(k).ok()).map_err(|e| e.join("; "))?;
        toml::from_str(&text).map_err(|e| e.to_string())
    }

    /// Loads a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::Load { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg = Self::parse(&text).map_err(err)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset,
            &mut cfg.answers,
            &mut cfg.categories,
            &mut cfg.captions_dir,
            &mut cfg.frames_dir,
            &mut cfg.prompts_dir,
            &mut cfg.mock,
        ] {
            resolve(base, p);
        }
        if cfg.results_dir.is_relative() {
            cfg.results_dir = base.join(&cfg.results_dir);
        }
        Ok(cfg)
    }

    pub fn all_backends(&self) -> BTreeMap<String, BackendSpec> {
        let mut m: BTreeMap<String, BackendSpec> =
            default_backends().into_iter().map(|b| (b.backend_id.clone(), b)).collect();
        for b in &self.backends {
            m.insert(b.backend_id.clone(), b.clone());
        }
        m
    }

    /// Built-in models overlaid by configured ones, with the frames override applied.
    pub fn all_models(&self) -> BTreeMap<String, ModelConfig> {
        let mut m: BTreeMap<String, ModelConfig> =
            builtin_configs().into_iter().map(|c| (c.model_id.clone(), c)).collect();
        for c in &self.models {
            m.insert(c.model_id.clone(), c.clone());
        }
        if let Some(f) = self.frames {
            for c in m.values_mut() {
                c.frames = f;
            }
        }
        m
    }

    /// Looks up model ids, reporting unknown ones.
    pub fn select_models(&self, ids: &[String]) -> Result<Vec<ModelConfig>, Vec<String>> {
        let all = self.all_models();
        let mut out = Vec::new();
        let mut errors = Vec::new();
        for id in ids {
            match all.get(id) {
                Some(c) => out.push(c.clone()),
                None => errors.push(format!(
                    "unknown model {id} (known: {})",
                    all.keys().cloned().collect::<Vec<_>>().join(", ")
                )),
            }
        }
        if errors.is_empty() {
            Ok(out)
        } else {
            Err(errors)
        }
    }

    /// Every problem with using `models` under this config, in one list.
    /// Tool data and credentials are only checked when `execute` is set.
    pub fn validate(&self, models: &[ModelConfig], execute: bool, env: impl Fn(&str) -> bool) -> Vec<String> {
        let mut errors = Vec::new();
        let check_file = |errors: &mut Vec<String>, what: &str, p: &Option<PathBuf>| {
            if let Some(p) = p {
                if !p.is_file() {
                    errors.push(format!("{what} {} does not exist", p.display()));
                }
            }
        };
        let check_dir = |errors: &mut Vec<String>, what: &str, p: &Option<PathBuf>| {
            if let Some(p) = p {
                if !p.is_dir() {
                    errors.push(format!("{what} {} is not a directory", p.display()));
                }
            }
        };
        match &self.dataset {
            None => errors.push("no dataset given".into()),
            some => check_file(&mut errors, "dataset", some),
        }
        check_file(&mut errors, "answers file", &self.answers);
        check_file(&mut errors, "categories file", &self.categories);
        check_file(&mut errors, "mock script", &self.mock);
        check_dir(&mut errors, "captions_dir", &self.captions_dir);
        check_dir(&mut errors, "frames_dir", &self.frames_dir);
        check_dir(&mut errors, "prompts_dir", &self.prompts_dir);
        if self.workers == 0 {
            errors.push("workers must be at least 1".into());
        }
        if self.context_budget == 0 {
            errors.push("context_budget must be at least 1".into());
        }
        if self.frames == Some(0) {
            errors.push("frames must be at least 1".into());
        }
        if models.is_empty() {
            errors.push("no model selected".into());
        }

        let backends = self.all_backends();
        for b in backends.values() {
            if let Err(e) = b.validate() {
                errors.push(format!("backend {}: {e}", b.backend_id));
            }
        }
        let mut used = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for m in models {
            if !ids.insert(&m.model_id) {
                errors.push(format!("model {} selected twice", m.model_id));
            }
            if let Err(e) = m.validate() {
                errors.push(e);
            }
            for b in m.backends() {
                if !backends.contains_key(&b) {
                    errors.push(format!("{}: unknown backend {b}", m.model_id));
                }
                used.insert(b);
            }
            for v in m.vision_backends() {
                if backends.get(v).is_some_and(|b| !b.supports_images) {
                    errors.push(format!("{}: backend {v} must accept images", m.model_id));
                }
            }
            if !execute {
                continue;
            }
            if m.needs_captions() && self.captions_dir.is_none() {
                errors.push(format!("{}: uses the captioner but no captions_dir is set", m.model_id));
            }
            // mock runs fall back to placeholder frames
            if m.needs_frames() && self.frames_dir.is_none() && self.mock.is_none() {
                errors.push(format!("{}: sends video frames but no frames_dir is set", m.model_id));
            }
        }
        if execute && self.mock.is_none() {
            for b in used.iter().filter_map(|id| backends.get(id)) {
                if let Some(var) = &b.api_key_env {
                    if !env(var) {
                        errors.push(format!("backend {}: environment variable {var} is not set", b.backend_id));
                    }
                }
            }
        }
        errors
    }
}
