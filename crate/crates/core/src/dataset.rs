//! Question data model and dataset ingestion.
//!
//! Datasets are JSON Lines (one object per question) or a single JSON array
//! of objects. Answers and category labels live in optional side files keyed
//! by question id.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Number of answer options per question.
pub const NUM_CHOICES: usize = 5;

/// Clip length assumed when a record carries no duration.
pub const DEFAULT_DURATION_S: f64 = 180.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: {message}")]
    Parse { index: usize, message: String },
    #[error("record {index}: missing field `{field}`")]
    MissingField { index: usize, field: String },
    #[error("record {index} ({question_id}): {message}")]
    Validation {
        index: usize,
        question_id: String,
        message: String,
    },
    #[error("answers file: {0}")]
    Answers(String),
    #[error("categories file: {0}")]
    Categories(String),
    #[error("requested subset of {requested} but only {available} questions available")]
    SubsetSize { requested: usize, available: usize },
}

/// Index of one of the five answer options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ChoiceIndex(u8);

impl ChoiceIndex {
    pub fn new(value: u8) -> Option<Self> {
        ((value as usize) < NUM_CHOICES).then_some(Self(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn as_usize(self) -> usize {
        self.0 as usize
    }

    /// All five indices in ascending order.
    pub fn all() -> impl Iterator<Item = ChoiceIndex> {
        (0..NUM_CHOICES as u8).map(ChoiceIndex)
    }
}

impl TryFrom<u8> for ChoiceIndex {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        ChoiceIndex::new(value).ok_or_else(|| format!("choice index {value} out of range 0..=4"))
    }
}

impl From<ChoiceIndex> for u8 {
    fn from(c: ChoiceIndex) -> u8 {
        c.0
    }
}

impl fmt::Display for ChoiceIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionCategory {
    PurposeGoal,
    ToolsMaterials,
    KeyAction,
    ActionSequence,
    CharacterInteraction,
    Unknown,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 6] = [
        QuestionCategory::PurposeGoal,
        QuestionCategory::ToolsMaterials,
        QuestionCategory::KeyAction,
        QuestionCategory::ActionSequence,
        QuestionCategory::CharacterInteraction,
        QuestionCategory::Unknown,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            QuestionCategory::PurposeGoal => "Purpose/Goal Identification",
            QuestionCategory::ToolsMaterials => "Tools and Materials Usage",
            QuestionCategory::KeyAction => "Key Action/Moment Detection",
            QuestionCategory::ActionSequence => "Action Sequence Analysis",
            QuestionCategory::CharacterInteraction => "Character Interaction",
            QuestionCategory::Unknown => "Unknown",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            QuestionCategory::PurposeGoal => "purpose_goal",
            QuestionCategory::ToolsMaterials => "tools_materials",
            QuestionCategory::KeyAction => "key_action",
            QuestionCategory::ActionSequence => "action_sequence",
            QuestionCategory::CharacterInteraction => "character_interaction",
            QuestionCategory::Unknown => "unknown",
        }
    }
}

impl fmt::Display for QuestionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for QuestionCategory {
    type Err = String;

    /// Accepts the snake_case slug, the CamelCase variant name, or the long
    /// display name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        QuestionCategory::ALL
            .into_iter()
            .find(|c| {
                let slug: String = c.slug().chars().filter(|c| *c != '_').collect();
                let long: String = c
                    .display_name()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .map(|c| c.to_ascii_lowercase())
                    .collect();
                norm == slug || norm == long
            })
            .ok_or_else(|| format!("unknown question category `{s}`"))
    }
}

/// One 5-choice question about a video clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoQuestion {
    pub question_id: String,
    pub video_id: String,
    pub question_text: String,
    pub options: [String; NUM_CHOICES],
    /// Category labels; empty means unlabeled. More than one label is allowed.
    #[serde(default)]
    pub categories: Vec<QuestionCategory>,
    #[serde(default)]
    pub ground_truth: Option<ChoiceIndex>,
    pub duration_s: f64,
}

impl VideoQuestion {
    pub fn new(
        question_id: impl Into<String>,
        video_id: impl Into<String>,
        question_text: impl Into<String>,
        options: [String; NUM_CHOICES],
    ) -> Result<Self, String> {
        let q = VideoQuestion {
            question_id: question_id.into(),
            video_id: video_id.into(),
            question_text: question_text.into(),
            options,
            categories: Vec::new(),
            ground_truth: None,
            duration_s: DEFAULT_DURATION_S,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_ground_truth(mut self, gt: ChoiceIndex) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn with_categories(mut self, categories: Vec<QuestionCategory>) -> Self {
        self.categories = categories;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.question_id.is_empty() {
            return Err("question id is empty".into());
        }
        if let Some(i) = self.options.iter().position(|o| o.trim().is_empty()) {
            return Err(format!("option {i} is empty"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        Ok(())
    }

    /// Labels to report under; unlabeled questions report as `Unknown`.
    pub fn report_categories(&self) -> Vec<QuestionCategory> {
        if self.categories.is_empty() {
            vec![QuestionCategory::Unknown]
        } else {
            self.categories.clone()
        }
    }

    /// Options rendered one per line as `k. text`.
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{i}. {o}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Field names used when reading dataset records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub question_id: String,
    pub video_id: String,
    pub question: String,
    /// Prefix for per-option keys; option `k` is read from `{prefix}{k}`.
    pub option_prefix: String,
    /// Alternative: a single array-valued key holding all options.
    pub options_array: String,
    pub duration: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            question_id: "question_uid".into(),
            video_id: "video_uid".into(),
            question: "question".into(),
            option_prefix: "option".into(),
            options_array: "options".into(),
            duration: "duration_s".into(),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Splits a dataset file into raw JSON objects, accepting either a top-level
/// array or JSON Lines.
fn raw_records(text: &str) -> Result<Vec<Map<String, Value>>, DatasetError> {
    let trimmed = text.trim_start();
    let values: Vec<Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
            index: 0,
            message: format!("invalid JSON array: {e}"),
        })?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(index, line)| {
                serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                    index,
                    message: format!("invalid JSON: {e}"),
                })
            })
            .collect::<Result<_, _>>()?
    };
    values
        .into_iter()
        .enumerate()
        .map(|(index, v)| match v {
            Value::Object(m) => Ok(m),
            other => Err(DatasetError::Parse {
                index,
                message: format!("expected an object, found {}", json_kind(&other)),
            }),
        })
        .collect()
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn string_field(
    rec: &Map<String, Value>,
    index: usize,
    key: &str,
) -> Result<String, DatasetError> {
    match rec.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(DatasetError::MissingField {
            index,
            field: key.to_string(),
        }),
    }
}

fn record_to_question(
    rec: &Map<String, Value>,
    index: usize,
    fields: &FieldMap,
) -> Result<VideoQuestion, DatasetError> {
    let question_id = string_field(rec, index, &fields.question_id)?;
    let video_id = string_field(rec, index, &fields.video_id)?;
    let question_text = string_field(rec, index, &fields.question)?;

    let options: Vec<String> = if let Some(arr) = rec.get(&fields.options_array) {
        let arr = arr.as_array().ok_or_else(|| DatasetError::Parse {
            index,
            message: format!("`{}` must be an array", fields.options_array),
        })?;
        arr.iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| DatasetError::Parse {
                index,
                message: "options must be strings".into(),
            })?
    } else {
        // Collect option0, option1, ... (tolerating a space, as in "option 0").
        let mut found = Vec::new();
        for k in 0..16 {
            let plain = format!("{}{k}", fields.option_prefix);
            let spaced = format!("{} {k}", fields.option_prefix);
            match rec.get(&plain).or_else(|| rec.get(&spaced)) {
                Some(Value::String(s)) => found.push(s.clone()),
                Some(_) => {
                    return Err(DatasetError::Parse {
                        index,
                        message: format!("`{plain}` must be a string"),
                    })
                }
                None => break,
            }
        }
        found
    };
    if options.len() != NUM_CHOICES {
        return Err(DatasetError::Validation {
            index,
            question_id,
            message: format!("expected {NUM_CHOICES} options, got {}", options.len()),
        });
    }
    let duration_s = match rec.get(&fields.duration) {
        None | Some(Value::Null) => DEFAULT_DURATION_S,
        Some(v) => v.as_f64().ok_or_else(|| DatasetError::Parse {
            index,
            message: format!("`{}` must be a number", fields.duration),
        })?,
    };
    let options: [String; NUM_CHOICES] = options.try_into().expect("length checked");
    let q = VideoQuestion {
        question_id,
        video_id,
        question_text,
        options,
        categories: Vec::new(),
        ground_truth: None,
        duration_s,
    };
    q.validate().map_err(|message| DatasetError::Validation {
        index,
        question_id: q.question_id.clone(),
        message,
    })?;
    Ok(q)
}

/// Reads a dataset file, optionally merging ground-truth answers.
pub fn parse_dataset(
    path: &Path,
    answers_path: Option<&Path>,
) -> Result<Vec<VideoQuestion>, DatasetError> {
    parse_dataset_with(path, answers_path, &FieldMap::default())
}

pub fn parse_dataset_with(
    path: &Path,
    answers_path: Option<&Path>,
    fields: &FieldMap,
) -> Result<Vec<VideoQuestion>, DatasetError> {
    let text = read_to_string(path)?;
    let mut questions = parse_records(&text, fields)?;
    if let Some(ap) = answers_path {
        let answers = load_answers(ap)?;
        for q in &mut questions {
            if let Some(a) = answers.get(&q.question_id) {
                q.ground_truth = Some(*a);
            }
        }
    }
    Ok(questions)
}

/// Parses dataset text (JSON array or JSON Lines).
pub fn parse_records(text: &str, fields: &FieldMap) -> Result<Vec<VideoQuestion>, DatasetError> {
    let records = raw_records(text)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let q = record_to_question(rec, index, fields)?;
        if !seen.insert(q.question_id.clone()) {
            return Err(DatasetError::Validation {
                index,
                question_id: q.question_id,
                message: "duplicate question id".into(),
            });
        }
        out.push(q);
    }
    Ok(out)
}

/// Reads a `{question_id: 0..=4}` answers object.
pub fn load_answers(path: &Path) -> Result<BTreeMap<String, ChoiceIndex>, DatasetError> {
    let text = read_to_string(path)?;
    let raw: BTreeMap<String, Value> =
        serde_json::from_str(&text).map_err(|e| DatasetError::Answers(e.to_string()))?;
    raw.into_iter()
        .map(|(k, v)| {
            let idx = v
                .as_u64()
                .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
                .and_then(|n| u8::try_from(n).ok())
                .and_then(ChoiceIndex::new)
                .ok_or_else(|| DatasetError::Answers(format!("{k}: invalid answer {v}")))?;
            Ok((k, idx))
        })
        .collect()
}

/// Reads a `{question_id: category | [category, ...]}` object.
pub fn load_categories(
    path: &Path,
) -> Result<BTreeMap<String, Vec<QuestionCategory>>, DatasetError> {
    let text = read_to_string(path)?;
    let raw: BTreeMap<String, Value> =
        serde_json::from_str(&text).map_err(|e| DatasetError::Categories(e.to_string()))?;
    let parse_one = |k: &str, v: &Value| -> Result<QuestionCategory, DatasetError> {
        v.as_str()
            .ok_or_else(|| DatasetError::Categories(format!("{k}: expected string label")))?
            .parse()
            .map_err(|e: String| DatasetError::Categories(format!("{k}: {e}")))
    };
    raw.into_iter()
        .map(|(k, v)| {
            let labels = match &v {
                Value::Array(items) => items
                    .iter()
                    .map(|i| parse_one(&k, i))
                    .collect::<Result<Vec<_>, _>>()?,
                other => vec![parse_one(&k, other)?],
            };
            Ok((k, labels))
        })
        .collect()
}

pub fn apply_categories(
    questions: &mut [VideoQuestion],
    categories: &BTreeMap<String, Vec<QuestionCategory>>,
) {
    for q in questions {
        if let Some(c) = categories.get(&q.question_id) {
            q.categories = c.clone();
        }
    }
}

/// Serializes questions as JSON Lines in the default field layout.
pub fn serialize_dataset(questions: &[VideoQuestion]) -> String {
    let fields = FieldMap::default();
    let mut out = String::new();
    for q in questions {
        let mut m = Map::new();
        m.insert(fields.question_id.clone(), Value::from(q.question_id.clone()));
        m.insert(fields.video_id.clone(), Value::from(q.video_id.clone()));
        m.insert(fields.question.clone(), Value::from(q.question_text.clone()));
        for (i, o) in q.options.iter().enumerate() {
            m.insert(format!("{}{i}", fields.option_prefix), Value::from(o.clone()));
        }
        if q.duration_s != DEFAULT_DURATION_S {
            m.insert(fields.duration.clone(), Value::from(q.duration_s));
        }
        out.push_str(&Value::Object(m).to_string());
        out.push('\n');
    }
    out
}

/// Answers object for the questions that carry ground truth.
pub fn serialize_answers(questions: &[VideoQuestion]) -> String {
    let map: BTreeMap<&str, u8> = questions
        .iter()
        .filter_map(|q| q.ground_truth.map(|g| (q.question_id.as_str(), g.get())))
        .collect();
    serde_json::to_string_pretty(&map).expect("map serializes")
}

/// Picks `n` questions by a seeded shuffle. Deterministic for a given seed.
pub fn subset_select(
    questions: &[VideoQuestion],
    n: usize,
    seed: u64,
) -> Result<Vec<VideoQuestion>, DatasetError> {
    if n > questions.len() {
        return Err(DatasetError::SubsetSize {
            requested: n,
            available: questions.len(),
        });
    }
    let mut idx: Vec<usize> = (0..questions.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    Ok(idx[..n].iter().map(|&i| questions[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// A request sent to a language-model backend.
    Request,
    /// The backend's reply text.
    Reply,
    ToolCall,
    ToolResult,
    /// A fallback, abstention, or other degraded path.
    Flag,
    Error,
}

/// One labeled entry in a prediction transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub kind: EventKind,
    /// Which agent produced the event, e.g. `dag`, `expert:Culinary Expert`, `organizer`.
    pub agent: String,
    /// Purpose tag, e.g. `dag`, `route`, `answer`, `organizer`, `analyzer`.
    pub label: String,
    pub text: String,
}

/// Append-only ordered log of what happened while answering one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript(Vec<TranscriptEvent>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        kind: EventKind,
        agent: impl Into<String>,
        label: impl Into<String>,
        text: impl Into<String>,
    ) {
        self.0.push(TranscriptEvent {
            kind,
            agent: agent.into(),
            label: label.into(),
            text: text.into(),
        });
    }

    pub fn flag(&mut self, agent: impl Into<String>, label: impl Into<String>, text: impl Into<String>) {
        self.push(EventKind::Flag, agent, label, text);
    }

    pub fn extend(&mut self, other: Transcript) {
        self.0.extend(other.0);
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of backend requests carrying the given purpose label.
    pub fn request_count(&self, label: &str) -> usize {
        self.0
            .iter()
            .filter(|e| e.kind == EventKind::Request && e.label == label)
            .count()
    }

    pub fn total_requests(&self) -> usize {
        self.0.iter().filter(|e| e.kind == EventKind::Request).count()
    }

    pub fn flags(&self) -> impl Iterator<Item = &TranscriptEvent> {
        self.0.iter().filter(|e| e.kind == EventKind::Flag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    Answered,
    /// No choice could be produced; scored as incorrect.
    Unanswered,
}

/// The outcome of one model configuration on one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub model_id: String,
    pub status: PredictionStatus,
    pub choice: Option<ChoiceIndex>,
    /// Set only when ground truth was available when the record was scored.
    pub correct: Option<bool>,
    pub transcript: Transcript,
}

impl PredictionRecord {
    pub fn answered(
        question_id: impl Into<String>,
        model_id: impl Into<String>,
        choice: ChoiceIndex,
        transcript: Transcript,
    ) -> Self {
        PredictionRecord {
            question_id: question_id.into(),
            model_id: model_id.into(),
            status: PredictionStatus::Answered,
            choice: Some(choice),
            correct: None,
            transcript,
        }
    }

    pub fn unanswered(
        question_id: impl Into<String>,
        model_id: impl Into<String>,
        transcript: Transcript,
    ) -> Self {
        PredictionRecord {
            question_id: question_id.into(),
            model_id: model_id.into(),
            status: PredictionStatus::Unanswered,
            choice: None,
            correct: None,
            transcript,
        }
    }

    /// Sets `correct` from the ground truth, or clears it when none is known.
    pub fn score(&mut self, truth: Option<ChoiceIndex>) {
        self.correct = truth.map(|t| self.choice == Some(t));
    }

    pub fn is_answered(&self) -> bool {
        self.status == PredictionStatus::Answered
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn opts(prefix: &str) -> [String; 5] {
        std::array::from_fn(|i| format!("{prefix} option {i}"))
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn record(id: &str) -> String {
        format!(
            r#"{{"question_uid":"{id}","video_uid":"v{id}","question":"What is c doing?","option0":"a","option1":"b","option2":"c","option3":"d","option4":"e"}}"#
        )
    }

    #[test]
    fn parses_records_in_file_order() {
        let f = write_tmp(&format!("{}\n{}\n{}\n", record("q3"), record("q1"), record("q2")));
        let qs = parse_dataset(f.path(), None).unwrap();
        let ids: Vec<_> = qs.iter().map(|q| q.question_id.as_str()).collect();
        assert_eq!(ids, ["q3", "q1", "q2"]);
        assert_eq!(qs[0].options[2], "c");
        assert_eq!(qs[0].duration_s, 180.0);
        assert!(qs.iter().all(|q| q.ground_truth.is_none()));
    }

    #[test]
    fn accepts_json_array_and_spaced_option_keys() {
        let text = r#"[{"question_uid":"a","video_uid":"v","question":"q","option 0":"a","option 1":"b","option 2":"c","option 3":"d","option 4":"e"}]"#;
        let qs = parse_records(text, &FieldMap::default()).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].options[4], "e");
    }

    #[test]
    fn four_options_is_a_validation_error() {
        let text = r#"{"question_uid":"a","video_uid":"v","question":"q","option0":"a","option1":"b","option2":"c","option3":"d"}"#;
        let err = parse_records(text, &FieldMap::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Validation { .. }));
        assert!(err.to_string().contains("expected 5 options, got 4"), "{err}");
    }

    #[test]
    fn missing_field_names_index_and_field() {
        let text = format!(
            "{}\n{}\n",
            record("ok"),
            r#"{"question_uid":"b","question":"q","option0":"a","option1":"b","option2":"c","option3":"d","option4":"e"}"#
        );
        let err = parse_records(&text, &FieldMap::default()).unwrap_err();
        match err {
            DatasetError::MissingField { index, field } => {
                assert_eq!(index, 1);
                assert_eq!(field, "video_uid");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_option_rejected() {
        let text = r#"{"question_uid":"a","video_uid":"v","question":"q","options":["a","","c","d","e"]}"#;
        let err = parse_records(text, &FieldMap::default()).unwrap_err();
        assert!(err.to_string().contains("option 1 is empty"));
    }

    #[test]
    fn custom_field_map() {
        let fields = FieldMap {
            question_id: "q_uid".into(),
            video_id: "google_drive_id".into(),
            option_prefix: "option ".into(),
            ..FieldMap::default()
        };
        let text = r#"{"q_uid":"x","google_drive_id":"g","question":"q","option 0":"a","option 1":"b","option 2":"c","option 3":"d","option 4":"e"}"#;
        let qs = parse_records(text, &fields).unwrap();
        assert_eq!(qs[0].video_id, "g");
    }

    #[test]
    fn merges_answers_for_500_questions() {
        let mut data = String::new();
        let mut answers = BTreeMap::new();
        for i in 0..500 {
            data.push_str(&record(&format!("q{i:03}")));
            data.push('\n');
            answers.insert(format!("q{i:03}"), i % 5);
        }
        let df = write_tmp(&data);
        let af = write_tmp(&serde_json::to_string(&answers).unwrap());
        let qs = parse_dataset(df.path(), Some(af.path())).unwrap();
        assert_eq!(qs.len(), 500);
        let labeled = qs.iter().filter(|q| q.ground_truth.is_some()).count();
        assert_eq!(labeled, 500);
        assert_eq!(qs[7].ground_truth, ChoiceIndex::new(2));
    }

    #[test]
    fn answers_out_of_range_rejected() {
        let af = write_tmp(r#"{"a": 5}"#);
        assert!(matches!(load_answers(af.path()), Err(DatasetError::Answers(_))));
    }

    #[test]
    fn categories_accept_single_and_multi_labels() {
        let cf = write_tmp(
            r#"{"a": "purpose_goal", "b": ["Tools and Materials Usage", "KeyAction"], "c": []}"#,
        );
        let cats = load_categories(cf.path()).unwrap();
        assert_eq!(cats["a"], vec![QuestionCategory::PurposeGoal]);
        assert_eq!(
            cats["b"],
            vec![QuestionCategory::ToolsMaterials, QuestionCategory::KeyAction]
        );
        assert!(cats["c"].is_empty());
    }

    #[test]
    fn subset_edges() {
        let qs: Vec<_> = (0..10)
            .map(|i| VideoQuestion::new(format!("q{i}"), "v", "t", opts("x")).unwrap())
            .collect();
        assert!(subset_select(&qs, 0, 1).unwrap().is_empty());
        let all = subset_select(&qs, 10, 1).unwrap();
        let mut ids: Vec<_> = all.iter().map(|q| q.question_id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = qs.iter().map(|q| q.question_id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        assert!(matches!(
            subset_select(&qs, 11, 1),
            Err(DatasetError::SubsetSize { requested: 11, available: 10 })
        ));
        assert_eq!(subset_select(&qs, 4, 9).unwrap(), subset_select(&qs, 4, 9).unwrap());
    }

    #[test]
    fn choice_index_bounds() {
        assert!(ChoiceIndex::new(4).is_some());
        assert!(ChoiceIndex::new(5).is_none());
        assert!(serde_json::from_str::<ChoiceIndex>("7").is_err());
        assert_eq!(serde_json::from_str::<ChoiceIndex>("3").unwrap().get(), 3);
    }

    #[test]
    fn question_invariants() {
        let mut q = VideoQuestion::new("a", "v", "t", opts("y")).unwrap();
        q.duration_s = 0.0;
        assert!(q.validate().is_err());
    }

    #[test]
    fn scoring_sets_correct_only_with_truth() {
        let mut r = PredictionRecord::answered("q", "m", ChoiceIndex::new(1).unwrap(), Transcript::new());
        r.score(None);
        assert_eq!(r.correct, None);
        r.score(ChoiceIndex::new(1));
        assert_eq!(r.correct, Some(true));
        let mut u = PredictionRecord::unanswered("q", "m", Transcript::new());
        u.score(ChoiceIndex::new(1));
        assert_eq!(u.correct, Some(false));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn question() -> impl Strategy<Value = VideoQuestion> {
            (
                "[a-z0-9]{1,8}",
                "[a-z0-9]{1,8}",
                ".{0,40}",
                proptest::array::uniform5("[a-zA-Z ]{0,10}[a-z]"),
                proptest::option::of(0u8..5),
                prop_oneof![Just(180.0f64), 1.0f64..600.0],
            )
                .prop_map(|(id, vid, text, options, gt, dur)| VideoQuestion {
                    question_id: id,
                    video_id: vid,
                    question_text: text,
                    options,
                    categories: Vec::new(),
                    ground_truth: gt.and_then(ChoiceIndex::new),
                    duration_s: dur,
                })
        }

        proptest! {
            #[test]
            fn serialize_parse_round_trip(qs in proptest::collection::vec(question(), 0..8)) {
                let mut seen = HashSet::new();
                let qs: Vec<_> = qs.into_iter().filter(|q| seen.insert(q.question_id.clone())).collect();
                let text = serialize_dataset(&qs);
                let mut back = parse_records(&text, &FieldMap::default()).unwrap();
                let answers: BTreeMap<String, u8> = serde_json::from_str(&serialize_answers(&qs)).unwrap();
                for q in &mut back {
                    q.ground_truth = answers.get(&q.question_id).and_then(|a| ChoiceIndex::new(*a));
                }
                prop_assert_eq!(back, qs);
            }

            #[test]
            fn subset_is_deterministic_duplicate_free_subset(len in 0usize..40, seed in any::<u64>(), frac in 0.0f64..=1.0) {
                let qs: Vec<_> = (0..len)
                    .map(|i| VideoQuestion::new(format!("q{i}"), "v", "t", opts("z")).unwrap())
                    .collect();
                let n = ((len as f64) * frac).floor() as usize;
                let a = subset_select(&qs, n, seed).unwrap();
                let b = subset_select(&qs, n, seed).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.len(), n);
                let ids: HashSet<_> = a.iter().map(|q| q.question_id.clone()).collect();
                prop_assert_eq!(ids.len(), n);
                prop_assert!(a.iter().all(|q| qs.contains(q)));
            }
        }
    }
}
