//! Model configurations and the majority-vote ensemble.
//!
//! Ties among the top-voted choices are resolved by the individual accuracy
//! of the models that voted for them: the highest-accuracy model among the
//! tied voters decides, with equal accuracies ordered by model id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChoiceIndex, PredictionRecord, VideoQuestion, NUM_CHOICES};
use crate::qa::{OrganizerVariant, PipelineDeps};
use crate::runner::{run_model, RunControl, RunError};
use crate::store::ResultsStore;
use crate::tools::{AnalyzerMode, ToolId};

pub const DEFAULT_FRAMES: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// One direct vision call per question.
    SingleAgent,
    /// Generated experts plus one organizer.
    MultiAgent { n_experts: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    /// Experts generated per question.
    #[default]
    Dag,
    /// Identical generic assistants.
    AiAssistant,
}

fn default_frames() -> usize {
    DEFAULT_FRAMES
}

/// One ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub topology: Topology,
    #[serde(default)]
    pub profile_source: ProfileSource,
    /// Backend generating expert profiles.
    pub dag_backend: String,
    /// Backend the experts (or the single agent) converse with.
    pub agent_backend: String,
    /// Organizer backend; defaults to `agent_backend`.
    #[serde(default)]
    pub organizer_backend: Option<String>,
    #[serde(default)]
    pub expert_tools: BTreeSet<ToolId>,
    #[serde(default)]
    pub analyzer_mode: AnalyzerMode,
    #[serde(default)]
    pub organizer_variant: OrganizerVariant,
    #[serde(default)]
    pub organizer_tools: BTreeSet<ToolId>,
    pub analyzer_backend: String,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub reference_accuracy: Option<f64>,
}

impl ModelConfig {
    pub fn organizer_backend(&self) -> String {
        self.organizer_backend.clone().unwrap_or_else(|| self.agent_backend.clone())
    }

    pub fn n_experts(&self) -> Option<usize> {
        match self.topology {
            Topology::SingleAgent => None,
            Topology::MultiAgent { n_experts } => Some(n_experts),
        }
    }

    /// Every tool this configuration may invoke.
    pub fn tools_in_use(&self) -> BTreeSet<ToolId> {
        match self.topology {
            Topology::SingleAgent => BTreeSet::new(),
            Topology::MultiAgent { .. } => self.expert_tools.union(&self.organizer_tools).copied().collect(),
        }
    }

    /// Whether the configuration sends frames to a backend.
    pub fn needs_frames(&self) -> bool {
        matches!(self.topology, Topology::SingleAgent) || self.tools_in_use().contains(&ToolId::VideoAnalyzer)
    }

    pub fn needs_captions(&self) -> bool {
        self.tools_in_use().contains(&ToolId::Captioner)
    }

    /// Backends that must accept images.
    pub fn vision_backends(&self) -> Vec<&str> {
        match self.topology {
            Topology::SingleAgent => vec![self.agent_backend.as_str()],
            Topology::MultiAgent { .. } if self.needs_frames() => vec![self.analyzer_backend.as_str()],
            Topology::MultiAgent { .. } => vec![],
        }
    }

    pub fn backends(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        s.insert(self.agent_backend.clone());
        if let Topology::MultiAgent { .. } = self.topology {
            if self.profile_source == ProfileSource::Dag {
                s.insert(self.dag_backend.clone());
            }
            s.insert(self.organizer_backend());
            if self.needs_frames() {
                s.insert(self.analyzer_backend.clone());
            }
        }
        s
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.is_empty() {
            return Err("model_id is empty".into());
        }
        if let Topology::MultiAgent { n_experts } = self.topology {
            if n_experts == 0 {
                return Err(format!("{}: n_experts must be >= 1", self.model_id));
            }
            if self.expert_tools.is_empty() {
                return Err(format!("{}: multi-agent topology needs at least one expert tool", self.model_id));
            }
        }
        if self.frames == 0 {
            return Err(format!("{}: frames must be >= 1", self.model_id));
        }
        if let Some(a) = self.reference_accuracy {
            if !(0.0..=100.0).contains(&a) {
                return Err(format!("{}: reference_accuracy {a} outside [0, 100]", self.model_id));
            }
        }
        Ok(())
    }
}

/// The five ensemble members: one single-agent model and four multi-agent
/// variants differing in expert count, analyzer, and organizer prompt.
pub fn builtin_configs() -> Vec<ModelConfig> {
    let both: BTreeSet<ToolId> = [ToolId::Captioner, ToolId::VideoAnalyzer].into();
    let model1 = ModelConfig {
        model_id: "model1".into(),
        topology: Topology::SingleAgent,
        profile_source: ProfileSource::Dag,
        dag_backend: "gpt-4-vision".into(),
        agent_backend: "gpt-4-vision".into(),
        organizer_backend: None,
        expert_tools: BTreeSet::new(),
        analyzer_mode: AnalyzerMode::SingleBest,
        organizer_variant: OrganizerVariant::Default,
        organizer_tools: BTreeSet::new(),
        analyzer_backend: "gpt-4-vision".into(),
        frames: DEFAULT_FRAMES,
        reference_accuracy: Some(62.7),
    };
    let model2 = ModelConfig {
        model_id: "model2".into(),
        topology: Topology::MultiAgent { n_experts: 2 },
        dag_backend: "gpt-4".into(),
        agent_backend: "gpt-4".into(),
        expert_tools: both.clone(),
        organizer_tools: both.clone(),
        reference_accuracy: Some(63.4),
        ..model1.clone()
    };
    let model3 = ModelConfig {
        model_id: "model3".into(),
        dag_backend: "gpt-4o".into(),
        agent_backend: "gpt-4o".into(),
        analyzer_mode: AnalyzerMode::PerChoiceVerdict,
        organizer_tools: BTreeSet::new(),
        reference_accuracy: Some(62.8),
        ..model2.clone()
    };
    let model4 = ModelConfig {
        model_id: "model4".into(),
        topology: Topology::MultiAgent { n_experts: 3 },
        analyzer_backend: "gpt-4o".into(),
        reference_accuracy: Some(68.4),
        ..model3.clone()
    };
    let model5 = ModelConfig {
        model_id: "model5".into(),
        organizer_variant: OrganizerVariant::PreferConcise,
        reference_accuracy: Some(63.5),
        ..model4.clone()
    };
    vec![model1, model2, model3, model4, model5]
}

// ---------------------------------------------------------------------------
// Voting
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("no votes to aggregate")]
    NoVotes,
    #[error("model {0} voted more than once")]
    DuplicateVoter(String),
    #[error("tie cannot be broken: no accuracy for model {0}")]
    MissingAccuracy(String),
    #[error("duplicate model id {0}")]
    DuplicateModel(String),
    #[error("no model configurations given")]
    NoConfigs,
    #[error("missing predictions for {} (model, question) pairs: {}", .0.len(), preview(.0))]
    MissingPredictions(Vec<(String, String)>),
}

fn preview(pairs: &[(String, String)]) -> String {
    let mut s = pairs
        .iter()
        .take(10)
        .map(|(m, q)| format!("({m}, {q})"))
        .collect::<Vec<_>>()
        .join(", ");
    if pairs.len() > 10 {
        s.push_str(", ...");
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakRule {
    /// The highest-accuracy model among those voting for a tied choice decides.
    #[default]
    TiedVoters,
    /// The highest-accuracy voting model decides, even if its choice is not
    /// among the tied ones.
    GlobalBest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub counts: [usize; NUM_CHOICES],
    /// Contributing votes sorted by model id.
    pub votes: Vec<(String, ChoiceIndex)>,
}

impl VoteTally {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub choice: ChoiceIndex,
    pub tally: VoteTally,
    pub tie_broken: bool,
    pub tie_breaker_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub question_id: String,
    /// `None` when no model produced an answer.
    pub final_choice: Option<ChoiceIndex>,
    pub tally: VoteTally,
    pub tie_broken: bool,
    pub tie_breaker_model: Option<String>,
}

impl EnsembleResult {
    pub fn is_answered(&self) -> bool {
        self.final_choice.is_some()
    }
}

/// Plurality vote with accuracy-based tie-breaking.
pub fn majority_vote(
    predictions: &[(String, ChoiceIndex)],
    accuracies: &BTreeMap<String, f64>,
    rule: TieBreakRule,
) -> Result<VoteOutcome, EnsembleError> {
    if predictions.is_empty() {
        return Err(EnsembleError::NoVotes);
    }
    let mut votes = predictions.to_vec();
    votes.sort();
    for w in votes.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(EnsembleError::DuplicateVoter(w[0].0.clone()));
        }
    }
    let mut counts = [0usize; NUM_CHOICES];
    for (_, c) in &votes {
        counts[c.as_usize()] += 1;
    }
    let top = *counts.iter().max().expect("nonempty");
    let tied: Vec<ChoiceIndex> = ChoiceIndex::all().filter(|c| counts[c.as_usize()] == top).collect();
    let tally = VoteTally { counts, votes };

    if tied.len() == 1 {
        return Ok(VoteOutcome { choice: tied[0], tally, tie_broken: false, tie_breaker_model: None });
    }

    let mut best: Option<(&str, f64, ChoiceIndex)> = None;
    for (model, choice) in &tally.votes {
        if rule == TieBreakRule::TiedVoters && !tied.contains(choice) {
            continue;
        }
        let acc = *accuracies
            .get(model)
            .ok_or_else(|| EnsembleError::MissingAccuracy(model.clone()))?;
        // votes are sorted by model id, so strict `>` keeps the smallest id on equal accuracy
        if best.is_none_or(|(_, a, _)| acc > a) {
            best = Some((model, acc, *choice));
        }
    }
    let (model, _, choice) = best.expect("tied set has voters");
    Ok(VoteOutcome { choice, tie_broken: true, tie_breaker_model: Some(model.to_string()), tally })
}

// ---------------------------------------------------------------------------
// Ensemble run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub results: Vec<EnsembleResult>,
    /// Per model, records in question order.
    pub records: BTreeMap<String, Vec<PredictionRecord>>,
    pub accuracies: BTreeMap<String, f64>,
}

#[derive(Debug, Error)]
pub enum EnsembleRunError {
    #[error(transparent)]
    Vote(#[from] EnsembleError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Per-model accuracy used to break ties: the configured reference accuracy,
/// or the measured accuracy on questions with ground truth.
pub fn tie_break_accuracies(
    configs: &[ModelConfig],
    records: &BTreeMap<String, Vec<PredictionRecord>>,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for c in configs {
        if let Some(a) = c.reference_accuracy {
            out.insert(c.model_id.clone(), a);
            continue;
        }
        let scored: Vec<bool> = records
            .get(&c.model_id)
            .map(|rs| rs.iter().filter_map(|r| r.correct).collect())
            .unwrap_or_default();
        if !scored.is_empty() {
            let correct = scored.iter().filter(|b| **b).count();
            out.insert(c.model_id.clone(), 100.0 * correct as f64 / scored.len() as f64);
        }
    }
    out
}

/// Votes per question over already available records.
pub fn vote_all(
    questions: &[VideoQuestion],
    records: &BTreeMap<String, Vec<PredictionRecord>>,
    accuracies: &BTreeMap<String, f64>,
    rule: TieBreakRule,
) -> Result<Vec<EnsembleResult>, EnsembleError> {
    let mut by_q: BTreeMap<&str, Vec<(String, ChoiceIndex)>> = BTreeMap::new();
    for rs in records.values() {
        for r in rs {
            if let Some(c) = r.choice {
                by_q.entry(r.question_id.as_str()).or_default().push((r.model_id.clone(), c));
            }
        }
    }
    questions
        .iter()
        .map(|q| match by_q.get(q.question_id.as_str()) {
            Some(votes) if !votes.is_empty() => {
                let o = majority_vote(votes, accuracies, rule)?;
                Ok(EnsembleResult {
                    question_id: q.question_id.clone(),
                    final_choice: Some(o.choice),
                    tally: o.tally,
                    tie_broken: o.tie_broken,
                    tie_breaker_model: o.tie_breaker_model,
                })
            }
            _ => Ok(EnsembleResult {
                question_id: q.question_id.clone(),
                final_choice: None,
                tally: VoteTally { counts: [0; NUM_CHOICES], votes: Vec::new() },
                tie_broken: false,
                tie_breaker_model: None,
            }),
        })
        .collect()
}

/// Runs (or reuses) every configuration on every question, then votes.
///
/// With `deps = None` nothing is executed and every (model, question) pair
/// must already be persisted.
pub fn run_ensemble(
    questions: &[VideoQuestion],
    configs: &[ModelConfig],
    deps: Option<&PipelineDeps>,
    store: &ResultsStore,
    control: &RunControl,
    rule: TieBreakRule,
) -> Result<EnsembleRun, EnsembleRunError> {
    if configs.is_empty() {
        return Err(EnsembleError::NoConfigs.into());
    }
    let mut ids = BTreeSet::new();
    for c in configs {
        if !ids.insert(c.model_id.as_str()) {
            return Err(EnsembleError::DuplicateModel(c.model_id.clone()).into());
        }
    }

    let mut records = BTreeMap::new();
    match deps {
        Some(deps) => {
            for c in configs {
                let summary = run_model(questions, c, deps, store, control)?;
                records.insert(c.model_id.clone(), summary.records);
            }
        }
        None => {
            let mut missing = Vec::new();
            for c in configs {
                let mut rs = Vec::with_capacity(questions.len());
                for q in questions {
                    match store.load(&c.model_id, &q.question_id).map_err(RunError::from)? {
                        Some(mut r) => {
                            r.score(q.ground_truth);
                            rs.push(r);
                        }
                        None => missing.push((c.model_id.clone(), q.question_id.clone())),
                    }
                }
                records.insert(c.model_id.clone(), rs);
            }
            if !missing.is_empty() {
                return Err(EnsembleError::MissingPredictions(missing).into());
            }
        }
    }

    let accuracies = tie_break_accuracies(configs, &records);
    let results = vote_all(questions, &records, &accuracies, rule)?;
    Ok(EnsembleRun { results, records, accuracies })
}
