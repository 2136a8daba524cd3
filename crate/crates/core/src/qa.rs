//! Question answering: expert agents, the organizer, and the per-question
//! pipeline that ties both stages together.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{ask_parsed, CallTag, Parsed};
use crate::dag::{build_video_context, fallback_assistants, generate_experts, ExpertProfile, VideoContext};
use crate::dataset::{ChoiceIndex, EventKind, PredictionRecord, Transcript, VideoQuestion, NUM_CHOICES};
use crate::ensemble::{ModelConfig, ProfileSource, Topology};
use crate::llm::{BackendError, BackendRegistry, ChatMessage, LlmClient};
use crate::prompts::PromptSet;
use crate::tools::{
    analyze_video, captioner_lookup, format_verdicts, resolve_frames, select_tool, AnalyzerMode, CaptionLibrary,
    FrameLibrary, ToolDescriptor, ToolError, ToolId, ToolResult,
};

pub const DEFAULT_CONTEXT_BUDGET: usize = 4000;

/// Everything a pipeline run needs besides the question and the config.
#[derive(Debug, Clone)]
pub struct PipelineDeps {
    pub backends: BackendRegistry,
    pub captions: CaptionLibrary,
    pub frames: FrameLibrary,
    pub prompts: PromptSet,
    pub context_budget: usize,
    /// Tool used when tool selection cannot be parsed.
    pub default_tool: ToolId,
    pub parallel_experts: bool,
}

impl PipelineDeps {
    pub fn new(backends: BackendRegistry) -> Self {
        PipelineDeps {
            backends,
            captions: CaptionLibrary::default(),
            frames: FrameLibrary::default(),
            prompts: PromptSet::builtin(),
            context_budget: DEFAULT_CONTEXT_BUDGET,
            default_tool: ToolId::Captioner,
            parallel_experts: true,
        }
    }

    pub fn with_captions(mut self, captions: CaptionLibrary) -> Self {
        self.captions = captions;
        self
    }

    pub fn with_frames(mut self, frames: FrameLibrary) -> Self {
        self.frames = frames;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertResponse {
    pub expert_name: String,
    pub choice: ChoiceIndex,
    pub reasoning: String,
    pub tool_used: ToolId,
    pub tool_result_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpertOutcome {
    Answered(ExpertResponse),
    /// No usable answer; excluded from the organizer's input.
    Abstained { expert_name: String, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrganizerVariant {
    #[default]
    Default,
    /// Prefer the shorter, more concise option when unsure.
    PreferConcise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganizerVerdict {
    pub choice: ChoiceIndex,
    pub rationale: String,
    /// Fraction of expert responses whose choice equals `choice`.
    pub expert_agreement: f64,
    /// Set when the verdict came from the plurality fallback.
    pub fallback: bool,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(?:^\s*\(?([0-4])\b|\b(?:choice|answer|option|final)\b\s*(?:is\s*)?[:#=]?\s*\*{0,2}\(?([0-4])\b)",
        )
        .unwrap()
    })
}

fn reasoning_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)\b(?:reasoning|rationale)\s*:\s*(.*)$").unwrap())
}

/// Reads a choice from "Choice: k", "Answer: k", "option k", "Final: k", or
/// a bare leading integer; the earliest match wins.
pub fn parse_choice(text: &str) -> Option<ChoiceIndex> {
    let caps = answer_re().captures(text)?;
    let d = caps.get(1).or_else(|| caps.get(2))?.as_str();
    ChoiceIndex::new(d.parse().ok()?)
}

/// Choice plus the explanation: the text after "Reasoning:"/"Rationale:" or,
/// failing that, the whole reply.
pub fn parse_answer(text: &str) -> Option<(ChoiceIndex, String)> {
    let choice = parse_choice(text)?;
    let reasoning = reasoning_re()
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .filter(|r| !r.is_empty())
        .unwrap_or_else(|| text.trim().to_string());
    Some((choice, reasoning))
}

fn tool_request_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\btool\s*:\s*([a-z_ \-]+)").unwrap())
}

enum OrganizerReply {
    Final(ChoiceIndex, String),
    Tool(ToolId),
}

fn parse_organizer_reply(text: &str, tools: &[ToolId]) -> Option<OrganizerReply> {
    if !tools.is_empty() {
        if let Some(c) = tool_request_re().captures(text) {
            if let Some(t) = crate::tools::parse_tool_choice(&c[1], tools) {
                return Some(OrganizerReply::Tool(t));
            }
        }
    }
    parse_answer(text).map(|(c, r)| OrganizerReply::Final(c, r))
}

fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Most common choice; ties go to the lowest index.
pub fn plurality(choices: impl IntoIterator<Item = ChoiceIndex>) -> Option<ChoiceIndex> {
    let mut counts = [0usize; NUM_CHOICES];
    let mut any = false;
    for c in choices {
        counts[c.as_usize()] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let best = *counts.iter().max().unwrap();
    ChoiceIndex::new(counts.iter().position(|&c| c == best).unwrap() as u8)
}

pub fn agreement(responses: &[ExpertResponse], choice: ChoiceIndex) -> f64 {
    if responses.is_empty() {
        return 0.0;
    }
    responses.iter().filter(|r| r.choice == choice).count() as f64 / responses.len() as f64
}

// ---------------------------------------------------------------------------
// Tools as invoked by agents
// ---------------------------------------------------------------------------

/// Settings for the tools an agent may call.
#[derive(Debug, Clone, Copy)]
pub struct ToolSettings<'a> {
    pub analyzer: &'a LlmClient,
    pub analyzer_mode: AnalyzerMode,
    pub frames: usize,
}

fn invoke_tool(
    tool: ToolId,
    question: &VideoQuestion,
    settings: ToolSettings<'_>,
    deps: &PipelineDeps,
    agent: &str,
    transcript: &mut Transcript,
) -> Result<ToolResult, ToolError> {
    match tool {
        ToolId::Captioner => {
            transcript.push(
                EventKind::ToolCall,
                agent,
                "captioner",
                format!("captioner window=[0, {}]", question.duration_s),
            );
            let track = deps.captions.get(&question.video_id)?;
            let r = captioner_lookup(&track, 0.0, question.duration_s)?;
            transcript.push(EventKind::ToolResult, agent, "captioner", r.payload.clone());
            Ok(r)
        }
        ToolId::VideoAnalyzer => {
            let store = deps.frames.get(&question.video_id, question.duration_s)?;
            analyze_video(
                settings.analyzer,
                &store,
                question,
                settings.analyzer_mode,
                settings.frames,
                &deps.prompts,
                agent,
                transcript,
            )
        }
    }
}

/// Text handed to an agent for a tool result, or a note when the tool failed.
fn tool_payload_text(result: &Result<ToolResult, ToolError>) -> String {
    match result {
        Ok(r) => {
            let mut s = if r.payload.trim().is_empty() {
                "(no output)".to_string()
            } else {
                r.payload.clone()
            };
            if let Some(v) = &r.verdicts {
                s.push_str("\n\nPer-option verdicts:\n");
                s.push_str(&format_verdicts(v));
            }
            s
        }
        Err(e) => format!("(tool unavailable: {e})"),
    }
}

// ---------------------------------------------------------------------------
// Experts
// ---------------------------------------------------------------------------

/// One expert: pick a tool, use it, answer once.
pub fn run_expert(
    profile: &ExpertProfile,
    question: &VideoQuestion,
    tools: &[ToolDescriptor],
    agent_client: &LlmClient,
    settings: ToolSettings<'_>,
    deps: &PipelineDeps,
    transcript: &mut Transcript,
) -> ExpertOutcome {
    let agent = format!("expert:{}", profile.name);
    let abstain = |transcript: &mut Transcript, reason: String| {
        transcript.flag(agent.as_str(), "abstain", reason.clone());
        ExpertOutcome::Abstained { expert_name: profile.name.clone(), reason }
    };
    if tools.is_empty() {
        return abstain(transcript, "no tools configured".into());
    }

    let tool = select_tool(
        agent_client,
        Some(&profile.system_prompt),
        question,
        tools,
        deps.default_tool,
        &deps.prompts,
        &agent,
        transcript,
    );
    let mut settings = settings;
    if let Some(mode) = tools.iter().find(|d| d.tool_id == tool).and_then(|d| d.analyzer_mode) {
        settings.analyzer_mode = mode;
    }
    let result = invoke_tool(tool, question, settings, deps, &agent, transcript);
    if let Err(e) = &result {
        transcript.flag(agent.as_str(), tool.as_str(), format!("tool failed: {e}"));
    }
    let payload = tool_payload_text(&result);

    let options = question.options_block();
    let prompt = match deps.prompts.expert_answer.render(&[
        ("question", question.question_text.as_str()),
        ("options", options.as_str()),
        ("tool_id", tool.as_str()),
        ("tool_output", payload.as_str()),
    ]) {
        Ok(p) => p,
        Err(e) => return abstain(transcript, e.to_string()),
    };
    let messages = vec![ChatMessage::system(profile.system_prompt.clone()), ChatMessage::user(prompt)];
    let instruction = "Reply exactly in the form \"Choice: <option number 0-4>\" followed by \"Reasoning: <explanation>\".";
    match ask_parsed(
        agent_client,
        &deps.prompts,
        messages,
        instruction,
        CallTag::new(&agent, "answer"),
        transcript,
        parse_answer,
    ) {
        Ok(Parsed::Ok((choice, reasoning))) => ExpertOutcome::Answered(ExpertResponse {
            expert_name: profile.name.clone(),
            choice,
            reasoning,
            tool_used: tool,
            tool_result_digest: digest(&payload),
        }),
        Ok(Parsed::Unparseable { .. }) => abstain(transcript, "answer unparseable after re-ask".into()),
        Err(e) => abstain(transcript, format!("backend failure: {e}")),
    }
}

// ---------------------------------------------------------------------------
// Organizer
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
#[error("organizer needs at least one expert response")]
pub struct NoResponses;

fn expert_answers_block(question: &VideoQuestion, responses: &[ExpertResponse]) -> String {
    responses
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "Expert {} ({}): Choice {} ({})\nReasoning: {}",
                i + 1,
                r.expert_name,
                r.choice,
                question.options[r.choice.as_usize()],
                r.reasoning
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Consolidates expert responses into a final choice. With tools, the
/// organizer may request one tool round before deciding. Unparseable replies
/// or backend failures fall back to the experts' plurality (flagged).
#[allow(clippy::too_many_arguments)]
pub fn run_organizer(
    client: &LlmClient,
    question: &VideoQuestion,
    responses: &[ExpertResponse],
    variant: OrganizerVariant,
    tools: &[ToolDescriptor],
    settings: ToolSettings<'_>,
    deps: &PipelineDeps,
    transcript: &mut Transcript,
) -> Result<OrganizerVerdict, NoResponses> {
    if responses.is_empty() {
        return Err(NoResponses);
    }
    let agent = "organizer";
    let fallback = |transcript: &mut Transcript, why: String| {
        let choice = plurality(responses.iter().map(|r| r.choice)).expect("nonempty");
        transcript.flag(agent, "organizer", format!("{why}; using expert plurality {choice}"));
        OrganizerVerdict {
            choice,
            rationale: format!("plurality of {} expert responses", responses.len()),
            expert_agreement: agreement(responses, choice),
            fallback: true,
        }
    };

    let tool_ids: Vec<ToolId> = tools.iter().map(|t| t.tool_id).collect();
    let tool_instructions = if tools.is_empty() {
        String::new()
    } else {
        let list = tools
            .iter()
            .map(|d| format!("- {}: {}", d.tool_id, d.description))
            .collect::<Vec<_>>()
            .join("\n");
        deps.prompts
            .organizer_tools
            .render(&[("tools", list.as_str())])
            .unwrap_or_default()
    };
    let options = question.options_block();
    let answers = expert_answers_block(question, responses);
    let mut prompt = match deps.prompts.organizer_default.render(&[
        ("question", question.question_text.as_str()),
        ("options", options.as_str()),
        ("expert_answers", answers.as_str()),
        ("tool_instructions", tool_instructions.as_str()),
    ]) {
        Ok(p) => p,
        Err(e) => return Ok(fallback(transcript, e.to_string())),
    };
    if variant == OrganizerVariant::PreferConcise {
        prompt.push('\n');
        prompt.push_str(deps.prompts.organizer_concise.text().trim_end());
        prompt.push('\n');
    }

    let instruction = "Reply exactly in the form \"Final: <option number 0-4>\" followed by \"Rationale: <explanation>\".";
    let tag = CallTag::new(agent, "organizer");
    let mut messages = vec![ChatMessage::user(prompt)];
    let first = ask_parsed(client, &deps.prompts, messages.clone(), instruction, tag, transcript, |r| {
        parse_organizer_reply(r, &tool_ids).map(|p| (p, r.to_string()))
    });
    let decided = match first {
        Ok(Parsed::Ok((OrganizerReply::Final(c, r), _))) => Some((c, r)),
        Ok(Parsed::Ok((OrganizerReply::Tool(tool), raw))) => {
            let result = invoke_tool(tool, question, settings, deps, agent, transcript);
            if let Err(e) = &result {
                transcript.flag(agent, tool.as_str(), format!("tool failed: {e}"));
            }
            messages.push(ChatMessage::assistant(raw));
            messages.push(ChatMessage::user(format!(
                "Output of the {tool} tool:\n{}\n\nNow decide. {instruction}",
                tool_payload_text(&result)
            )));
            match ask_parsed(client, &deps.prompts, messages, instruction, tag, transcript, parse_answer) {
                Ok(Parsed::Ok(v)) => Some(v),
                Ok(Parsed::Unparseable { .. }) => None,
                Err(e) => return Ok(fallback(transcript, format!("organizer backend failure: {e}"))),
            }
        }
        Ok(Parsed::Unparseable { .. }) => None,
        Err(e) => return Ok(fallback(transcript, format!("organizer backend failure: {e}"))),
    };
    Ok(match decided {
        Some((choice, rationale)) => OrganizerVerdict {
            choice,
            rationale,
            expert_agreement: agreement(responses, choice),
            fallback: false,
        },
        None => fallback(transcript, "organizer reply unparseable after re-ask".into()),
    })
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

fn unanswered(question: &VideoQuestion, config: &ModelConfig, mut t: Transcript, why: String) -> PredictionRecord {
    t.push(EventKind::Error, "pipeline", "unanswered", why);
    let mut rec = PredictionRecord::unanswered(&question.question_id, &config.model_id, t);
    rec.score(question.ground_truth);
    rec
}

fn run_single_agent(
    question: &VideoQuestion,
    config: &ModelConfig,
    deps: &PipelineDeps,
    mut t: Transcript,
) -> PredictionRecord {
    let client = match deps.backends.get(&config.agent_backend) {
        Ok(c) => c,
        Err(e) => return unanswered(question, config, t, e.to_string()),
    };
    let frames = match deps
        .frames
        .get(&question.video_id, question.duration_s)
        .and_then(|s| resolve_frames(&s, question.duration_s, config.frames))
    {
        Ok(f) => f,
        Err(e) => return unanswered(question, config, t, e.to_string()),
    };
    let n_frames = frames.len().to_string();
    let options = question.options_block();
    let prompt = match deps.prompts.single_agent.render(&[
        ("question", question.question_text.as_str()),
        ("options", options.as_str()),
        ("n_frames", n_frames.as_str()),
    ]) {
        Ok(p) => p,
        Err(e) => return unanswered(question, config, t, e.to_string()),
    };
    let images = frames.into_iter().map(|(_, i)| i).collect();
    let instruction = "Reply exactly in the form \"Answer: <option number 0-4>\" followed by \"Reasoning: <explanation>\".";
    match ask_parsed(
        client,
        &deps.prompts,
        vec![ChatMessage::user_with_images(prompt, images)],
        instruction,
        CallTag::new("single_agent", "single_agent"),
        &mut t,
        parse_answer,
    ) {
        Ok(Parsed::Ok((choice, _))) => {
            let mut rec = PredictionRecord::answered(&question.question_id, &config.model_id, choice, t);
            rec.score(question.ground_truth);
            rec
        }
        Ok(Parsed::Unparseable { .. }) => unanswered(question, config, t, "answer unparseable after re-ask".into()),
        Err(e) => unanswered(question, config, t, e.to_string()),
    }
}

fn profiles_for(
    question: &VideoQuestion,
    config: &ModelConfig,
    n: usize,
    deps: &PipelineDeps,
    t: &mut Transcript,
) -> Result<Vec<ExpertProfile>, BackendError> {
    match config.profile_source {
        ProfileSource::AiAssistant => Ok(fallback_assistants(n, &deps.prompts)),
        ProfileSource::Dag => {
            let context = match deps.captions.get(&question.video_id) {
                Ok(track) => build_video_context(&track, deps.context_budget).unwrap_or_else(|e| {
                    t.flag("dag", "context", e);
                    VideoContext::empty(deps.context_budget)
                }),
                Err(e) => {
                    t.flag("dag", "context", format!("{e}; generating experts without video context"));
                    VideoContext::empty(deps.context_budget)
                }
            };
            if context.empty_warning {
                t.flag("dag", "context", "video context is empty");
            }
            let client = deps.backends.get(&config.dag_backend)?;
            generate_experts(client, question, &context, n, &deps.prompts, t)
        }
    }
}

fn run_multi_agent(
    question: &VideoQuestion,
    config: &ModelConfig,
    n: usize,
    deps: &PipelineDeps,
    mut t: Transcript,
) -> PredictionRecord {
    let profiles = match profiles_for(question, config, n, deps, &mut t) {
        Ok(p) => p,
        Err(e) => return unanswered(question, config, t, format!("expert generation failed: {e}")),
    };
    let (agent_client, analyzer) = match (
        deps.backends.get(&config.agent_backend),
        deps.backends.get(&config.analyzer_backend),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return unanswered(question, config, t, e.to_string()),
    };
    let settings = ToolSettings { analyzer, analyzer_mode: config.analyzer_mode, frames: config.frames };
    let expert_tools: Vec<ToolDescriptor> = config
        .expert_tools
        .iter()
        .map(|&id| ToolDescriptor::for_tool(id, config.analyzer_mode))
        .collect();

    let run_one = |p: &ExpertProfile| {
        let mut sub = Transcript::new();
        let out = run_expert(p, question, &expert_tools, agent_client, settings, deps, &mut sub);
        (out, sub)
    };
    // Experts are independent; their transcripts are appended in profile order.
    let results: Vec<(ExpertOutcome, Transcript)> = if deps.parallel_experts && profiles.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = profiles.iter().map(|p| s.spawn(move || run_one(p))).collect();
            handles.into_iter().map(|h| h.join().expect("expert thread panicked")).collect()
        })
    } else {
        profiles.iter().map(run_one).collect()
    };
    let mut responses = Vec::new();
    for (outcome, sub) in results {
        t.extend(sub);
        if let ExpertOutcome::Answered(r) = outcome {
            responses.push(r);
        }
    }
    if responses.is_empty() {
        return unanswered(question, config, t, "all experts abstained".into());
    }

    let organizer_client = match deps.backends.get(&config.organizer_backend()) {
        Ok(c) => c,
        Err(e) => return unanswered(question, config, t, e.to_string()),
    };
    let organizer_tools: Vec<ToolDescriptor> = config
        .organizer_tools
        .iter()
        .map(|&id| ToolDescriptor::for_tool(id, config.analyzer_mode))
        .collect();
    let verdict = run_organizer(
        organizer_client,
        question,
        &responses,
        config.organizer_variant,
        &organizer_tools,
        settings,
        deps,
        &mut t,
    )
    .expect("responses nonempty");
    t.push(
        EventKind::Flag,
        "organizer",
        "verdict",
        format!(
            "final={} agreement={}/{} fallback={}",
            verdict.choice,
            responses.iter().filter(|r| r.choice == verdict.choice).count(),
            responses.len(),
            verdict.fallback
        ),
    );
    let mut rec = PredictionRecord::answered(&question.question_id, &config.model_id, verdict.choice, t);
    rec.score(question.ground_truth);
    rec
}

/// Answers one question with one model configuration. Always returns a
/// record; failures yield an unanswered record.
pub fn run_pipeline(question: &VideoQuestion, config: &ModelConfig, deps: &PipelineDeps) -> PredictionRecord {
    let t = Transcript::new();
    if let Err(e) = config.validate() {
        return unanswered(question, config, t, format!("invalid config: {e}"));
    }
    match config.topology {
        Topology::SingleAgent => run_single_agent(question, config, deps, t),
        Topology::MultiAgent { n_experts } => run_multi_agent(question, config, n_experts, deps, t),
    }
}
