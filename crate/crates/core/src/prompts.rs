//! Prompt templates with `{{name}}` placeholders.
//!
//! The built-in set is compiled in from `prompts/v1/`; any file of the same
//! name in an override directory replaces the built-in text.

use std::collections::BTreeSet;
use std::path::Path;

use regex::Regex;
use std::sync::OnceLock;
use thiserror::Error;

pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template `{template}`: no value for placeholder `{name}`")]
    Missing { template: String, name: String },
    #[error("template `{template}`: unknown placeholder `{name}` (allowed: {allowed})")]
    Unknown {
        template: String,
        name: String,
        allowed: String,
    },
    #[error("template `{template}`: {message}")]
    Io { template: String, message: String },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Template { name: name.into(), text: text.into() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholder_re()
            .captures_iter(&self.text)
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Substitutes every placeholder. Values are inserted verbatim and are not
    /// themselves scanned for placeholders. Extra values are ignored.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        let mut last = 0;
        for caps in placeholder_re().captures_iter(&self.text) {
            let whole = caps.get(0).unwrap();
            let name = &caps[1];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::Missing {
                    template: self.name.clone(),
                    name: name.to_string(),
                })?;
            out.push_str(&self.text[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.text[last..]);
        Ok(out)
    }

    fn check_allowed(&self, allowed: &[&str]) -> Result<(), TemplateError> {
        for p in self.placeholders() {
            if !allowed.contains(&p.as_str()) {
                return Err(TemplateError::Unknown {
                    template: self.name.clone(),
                    name: p,
                    allowed: allowed.join(", "),
                });
            }
        }
        Ok(())
    }
}

macro_rules! prompt_set {
    ($( $field:ident => [$($ph:literal),*] ),* $(,)?) => {
        /// Every prompt the pipeline sends.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct PromptSet {
            $(pub $field: Template,)*
        }

        impl PromptSet {
            pub fn builtin() -> Self {
                PromptSet {
                    $($field: Template::new(
                        stringify!($field),
                        include_str!(concat!("../prompts/v1/", stringify!($field), ".txt")),
                    ),)*
                }
            }

            /// Built-in set with any `<name>.txt` found in `dir` substituted.
            pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
                let mut set = Self::builtin();
                $(
                    let p = dir.join(concat!(stringify!($field), ".txt"));
                    if p.exists() {
                        let text = std::fs::read_to_string(&p).map_err(|e| TemplateError::Io {
                            template: stringify!($field).into(),
                            message: e.to_string(),
                        })?;
                        set.$field = Template::new(stringify!($field), text);
                    }
                )*
                set.validate()?;
                Ok(set)
            }

            pub fn validate(&self) -> Result<(), TemplateError> {
                $( self.$field.check_allowed(&[$($ph),*])?; )*
                Ok(())
            }
        }
    };
}

prompt_set! {
    dag => ["question", "options", "video_context", "n"],
    route => ["question", "options", "tools", "first_tool"],
    expert_answer => ["question", "options", "tool_id", "tool_output"],
    organizer_default => ["question", "options", "expert_answers", "tool_instructions"],
    organizer_concise => [],
    organizer_tools => ["tools"],
    single_agent => ["question", "options", "n_frames"],
    analyzer_single => ["question", "options", "n_frames"],
    analyzer_verdict => ["question", "options", "n_frames"],
    assistant_system => [],
    reask => ["instruction"],
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
