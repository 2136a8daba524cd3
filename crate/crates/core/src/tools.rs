//! Agent tools: caption lookup over precomputed caption tracks and a
//! frame-based video analyzer, plus LLM-mediated tool selection.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ask, ask_parsed, CallTag, Parsed};
use crate::dataset::{EventKind, Transcript, VideoQuestion, NUM_CHOICES};
use crate::llm::{BackendError, ChatMessage, ImageRef, LlmClient};
use crate::prompts::PromptSet;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("no caption track for video {0}")]
    MissingCaptions(String),
    #[error("no frames for video {0}")]
    MissingFrames(String),
    #[error("invalid caption track for video {video_id}: {message}")]
    InvalidTrack { video_id: String, message: String },
    #[error("invalid frame store for video {video_id}: {message}")]
    InvalidFrames { video_id: String, message: String },
    #[error("invalid time window [{start}, {end}]")]
    InvalidWindow { start: f64, end: f64 },
    #[error("frame count must be at least 1")]
    ZeroFrames,
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("backend {0} cannot analyze images")]
    NotVisionCapable(String),
    #[error("analyzer reply could not be parsed into five verdicts: {0:?}")]
    VerdictParse(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    Captioner,
    VideoAnalyzer,
}

impl ToolId {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolId::Captioner => "captioner",
            ToolId::VideoAnalyzer => "video_analyzer",
        }
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "captioner" => Ok(ToolId::Captioner),
            "video_analyzer" => Ok(ToolId::VideoAnalyzer),
            other => Err(format!("unknown tool `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerMode {
    /// The analyzer names the single most accurate option.
    #[default]
    SingleBest,
    /// The analyzer marks each of the five options correct or incorrect.
    PerChoiceVerdict,
}

/// A tool as presented to an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub tool_id: ToolId,
    pub description: String,
    #[serde(default)]
    pub analyzer_mode: Option<AnalyzerMode>,
}

impl ToolDescriptor {
    pub fn captioner() -> Self {
        ToolDescriptor {
            tool_id: ToolId::Captioner,
            description: "Returns time-stamped text captions describing what the camera wearer sees and \
                          does throughout the video, roughly one caption per second. Best for questions \
                          about the overall activity, its purpose, and the order of events."
                .into(),
            analyzer_mode: None,
        }
    }

    pub fn video_analyzer(mode: AnalyzerMode) -> Self {
        let description = match mode {
            AnalyzerMode::SingleBest => {
                "Shows frames sampled from the video to a vision model, which analyzes them and reports \
                 the single option that best answers the question. Best for questions about objects, \
                 tools, and fine visual detail."
            }
            AnalyzerMode::PerChoiceVerdict => {
                "Shows frames sampled from the video to a vision model, which analyzes them and reports \
                 for each of the five options whether it is correct or incorrect. Best for questions \
                 about objects, tools, and fine visual detail."
            }
        };
        ToolDescriptor {
            tool_id: ToolId::VideoAnalyzer,
            description: description.into(),
            analyzer_mode: Some(mode),
        }
    }

    pub fn for_tool(tool: ToolId, mode: AnalyzerMode) -> Self {
        match tool {
            ToolId::Captioner => Self::captioner(),
            ToolId::VideoAnalyzer => Self::video_analyzer(mode),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.description.trim().is_empty() {
            return Err(format!("tool {} has an empty description", self.tool_id));
        }
        if self.analyzer_mode.is_some() != (self.tool_id == ToolId::VideoAnalyzer) {
            return Err(format!("analyzer_mode is only valid for video_analyzer (tool {})", self.tool_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_id: ToolId,
    pub payload: String,
    /// Per-option verdicts; present exactly in per-choice-verdict mode.
    #[serde(default)]
    pub verdicts: Option<[bool; NUM_CHOICES]>,
}

// ---------------------------------------------------------------------------
// Captions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

impl CaptionSegment {
    pub fn new(start_s: f64, end_s: f64, text: impl Into<String>) -> Self {
        CaptionSegment { start_s, end_s, text: text.into() }
    }

    pub fn render(&self) -> String {
        format!("[{}-{}s] {}", fmt_secs(self.start_s), fmt_secs(self.end_s), self.text)
    }
}

fn fmt_secs(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t:.1}")
    }
}

/// Precomputed captions for one video, sorted by start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionTrack {
    video_id: String,
    segments: Vec<CaptionSegment>,
}

impl CaptionTrack {
    pub fn new(video_id: impl Into<String>, segments: Vec<CaptionSegment>) -> Result<Self, ToolError> {
        let video_id = video_id.into();
        let bad = |message: String| ToolError::InvalidTrack { video_id: video_id.clone(), message };
        for (i, s) in segments.iter().enumerate() {
            if !(s.start_s >= 0.0) || !s.end_s.is_finite() {
                return Err(bad(format!("segment {i} has an invalid timestamp")));
            }
            if s.start_s >= s.end_s {
                return Err(bad(format!("segment {i}: start {} is not before end {}", s.start_s, s.end_s)));
            }
            if i > 0 && segments[i - 1].start_s > s.start_s {
                return Err(bad(format!("segment {i} is out of order")));
            }
        }
        Ok(CaptionTrack { video_id, segments })
    }

    /// Parses `start<TAB>end<TAB>caption` lines. Blank lines are skipped.
    pub fn parse(video_id: impl Into<String>, text: &str) -> Result<Self, ToolError> {
        let video_id = video_id.into();
        let mut segments = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(a), Some(b), Some(c)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ToolError::InvalidTrack {
                    video_id,
                    message: format!("line {}: expected start<TAB>end<TAB>caption", n + 1),
                });
            };
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| ToolError::InvalidTrack {
                    video_id: video_id.clone(),
                    message: format!("line {}: bad timestamp {s:?}", n + 1),
                })
            };
            segments.push(CaptionSegment::new(num(a)?, num(b)?, c.trim()));
        }
        Self::new(video_id, segments)
    }

    pub fn to_tsv(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("{}\t{}\t{}\n", s.start_s, s.end_s, s.text))
            .collect()
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn segments(&self) -> &[CaptionSegment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// End of the last segment, or 0 for an empty track.
    pub fn end_s(&self) -> f64 {
        self.segments.iter().map(|s| s.end_s).fold(0.0, f64::max)
    }
}

/// Captions of every segment overlapping `[start_s, end_s]`, one per line,
/// each prefixed with its time range. An empty overlap is an empty payload.
pub fn captioner_lookup(track: &CaptionTrack, start_s: f64, end_s: f64) -> Result<ToolResult, ToolError> {
    if !(start_s >= 0.0) || !(start_s < end_s) {
        return Err(ToolError::InvalidWindow { start: start_s, end: end_s });
    }
    let payload = track
        .segments
        .iter()
        .filter(|s| s.start_s <= end_s && s.end_s > start_s)
        .map(CaptionSegment::render)
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ToolResult { tool_id: ToolId::Captioner, payload, verdicts: None })
}

/// Caption tracks by video id, from a directory of `<video_id>.txt` files or
/// from memory.
#[derive(Debug, Clone)]
pub enum CaptionLibrary {
    Dir(PathBuf),
    Memory(BTreeMap<String, Arc<CaptionTrack>>),
}

impl Default for CaptionLibrary {
    fn default() -> Self {
        CaptionLibrary::Memory(BTreeMap::new())
    }
}

impl CaptionLibrary {
    pub fn from_tracks(tracks: impl IntoIterator<Item = CaptionTrack>) -> Self {
        CaptionLibrary::Memory(
            tracks.into_iter().map(|t| (t.video_id.clone(), Arc::new(t))).collect(),
        )
    }

    pub fn get(&self, video_id: &str) -> Result<Arc<CaptionTrack>, ToolError> {
        match self {
            CaptionLibrary::Memory(m) => m
                .get(video_id)
                .cloned()
                .ok_or_else(|| ToolError::MissingCaptions(video_id.to_string())),
            CaptionLibrary::Dir(dir) => {
                let path = dir.join(format!("{video_id}.txt"));
                let text = std::fs::read_to_string(&path)
                    .map_err(|_| ToolError::MissingCaptions(video_id.to_string()))?;
                Ok(Arc::new(CaptionTrack::parse(video_id, &text)?))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// Uniform mid-interval sampling: `t_i = (i + 0.5) * duration / f`.
pub fn sample_frames(duration_s: f64, f: usize) -> Result<Vec<f64>, ToolError> {
    if f == 0 {
        return Err(ToolError::ZeroFrames);
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(ToolError::BadDuration(duration_s));
    }
    let n = f as f64;
    Ok((0..f).map(|i| (i as f64 + 0.5) * duration_s / n).collect())
}

/// Pre-extracted frames of one video keyed by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStore {
    video_id: String,
    /// Sorted by timestamp, no duplicates.
    frames: Vec<(f64, ImageRef)>,
    pub fps: Option<f64>,
}

impl FrameStore {
    pub fn new(
        video_id: impl Into<String>,
        mut frames: Vec<(f64, ImageRef)>,
        duration_s: f64,
        fps: Option<f64>,
    ) -> Result<Self, ToolError> {
        let video_id = video_id.into();
        if frames.is_empty() {
            return Err(ToolError::MissingFrames(video_id));
        }
        if let Some((t, _)) = frames.iter().find(|(t, _)| !(*t >= 0.0 && *t <= duration_s)) {
            return Err(ToolError::InvalidFrames {
                video_id,
                message: format!("timestamp {t} outside [0, {duration_s}]"),
            });
        }
        frames.sort_by(|a, b| a.0.total_cmp(&b.0));
        frames.dedup_by(|a, b| a.0 == b.0);
        Ok(FrameStore { video_id, frames, fps })
    }

    /// In-memory store with one placeholder frame every `1/fps` seconds over
    /// `[0, duration_s)`.
    pub fn synthetic(video_id: impl Into<String>, duration_s: f64, fps: f64) -> Self {
        let video_id = video_id.into();
        let count = (duration_s * fps).floor() as usize;
        let frames = (0..count.max(1))
            .map(|k| {
                let t = k as f64 / fps;
                (t, ImageRef::File(PathBuf::from(format!("{video_id}/{}.jpg", fmt_secs(t)))))
            })
            .collect();
        FrameStore::new(video_id, frames, duration_s, Some(fps)).expect("synthetic frames are valid")
    }

    /// Loads `<dir>/<timestamp_seconds>.<jpg|jpeg|png|webp>` files.
    pub fn from_dir(video_id: impl Into<String>, dir: &Path, duration_s: f64) -> Result<Self, ToolError> {
        let video_id = video_id.into();
        let entries = std::fs::read_dir(dir).map_err(|_| ToolError::MissingFrames(video_id.clone()))?;
        let mut frames = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png" | "webp"));
            let ts = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<f64>().ok());
            if let (true, Some(t)) = (is_image, ts) {
                frames.push((t, ImageRef::File(path)));
            }
        }
        FrameStore::new(video_id, frames, duration_s, None)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|(t, _)| *t)
    }

    /// Frame closest to `t`; ties go to the earlier frame.
    pub fn nearest(&self, t: f64) -> (f64, &ImageRef) {
        let idx = self.frames.partition_point(|(ts, _)| *ts < t);
        let pick = if idx == 0 {
            0
        } else if idx == self.frames.len() {
            idx - 1
        } else if (self.frames[idx].0 - t) < (t - self.frames[idx - 1].0) {
            idx
        } else {
            idx - 1
        };
        let (ts, img) = &self.frames[pick];
        (*ts, img)
    }
}

/// Frame stores by video id: `<dir>/<video_id>/` or in memory.
#[derive(Debug, Clone)]
pub enum FrameLibrary {
    Dir(PathBuf),
    Memory(BTreeMap<String, Arc<FrameStore>>),
}

impl Default for FrameLibrary {
    fn default() -> Self {
        FrameLibrary::Memory(BTreeMap::new())
    }
}

impl FrameLibrary {
    pub fn from_stores(stores: impl IntoIterator<Item = FrameStore>) -> Self {
        FrameLibrary::Memory(stores.into_iter().map(|s| (s.video_id.clone(), Arc::new(s))).collect())
    }

    pub fn get(&self, video_id: &str, duration_s: f64) -> Result<Arc<FrameStore>, ToolError> {
        match self {
            FrameLibrary::Memory(m) => m
                .get(video_id)
                .cloned()
                .ok_or_else(|| ToolError::MissingFrames(video_id.to_string())),
            FrameLibrary::Dir(dir) => Ok(Arc::new(FrameStore::from_dir(video_id, &dir.join(video_id), duration_s)?)),
        }
    }
}

/// The frames sent for `f` samples, resolved by nearest neighbour.
pub fn resolve_frames(store: &FrameStore, duration_s: f64, f: usize) -> Result<Vec<(f64, ImageRef)>, ToolError> {
    Ok(sample_frames(duration_s, f)?
        .into_iter()
        .map(|t| {
            let (ts, img) = store.nearest(t);
            (ts, img.clone())
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Video analyzer
// ---------------------------------------------------------------------------

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)(?:\b(?:option|choice)\s*)?\b([0-4])\s*[:=.)\-]\s*\**\s*(incorrect|correct|yes|no|true|false)\b",
        )
        .unwrap()
    })
}

/// Parses one verdict per option index. Returns `None` unless all five
/// indices receive a verdict and no index receives conflicting ones.
pub fn parse_verdicts(text: &str) -> Option<[bool; NUM_CHOICES]> {
    let mut out: [Option<bool>; NUM_CHOICES] = [None; NUM_CHOICES];
    for caps in verdict_re().captures_iter(text) {
        let idx: usize = caps[1].parse().ok()?;
        let v = matches!(caps[2].to_ascii_lowercase().as_str(), "correct" | "yes" | "true");
        match out[idx] {
            Some(prev) if prev != v => return None,
            _ => out[idx] = Some(v),
        }
    }
    let mut verdicts = [false; NUM_CHOICES];
    for (i, v) in out.into_iter().enumerate() {
        verdicts[i] = v?;
    }
    Some(verdicts)
}

pub fn format_verdicts(verdicts: &[bool; NUM_CHOICES]) -> String {
    verdicts
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{i}: {}", if *v { "correct" } else { "incorrect" }))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Sends `f` uniformly sampled frames plus the question to a vision backend.
#[allow(clippy::too_many_arguments)]
pub fn analyze_video(
    client: &LlmClient,
    store: &FrameStore,
    question: &VideoQuestion,
    mode: AnalyzerMode,
    f: usize,
    prompts: &PromptSet,
    agent: &str,
    transcript: &mut Transcript,
) -> Result<ToolResult, ToolError> {
    if !client.spec().supports_images {
        return Err(ToolError::NotVisionCapable(client.spec().backend_id.clone()));
    }
    let frames = resolve_frames(store, question.duration_s, f)?;
    let times = frames.iter().map(|(t, _)| fmt_secs(*t)).collect::<Vec<_>>().join(", ");
    transcript.push(
        EventKind::ToolCall,
        agent,
        "analyzer",
        format!("video_analyzer mode={mode:?} frames={f} at [{times}]"),
    );
    let template = match mode {
        AnalyzerMode::SingleBest => &prompts.analyzer_single,
        AnalyzerMode::PerChoiceVerdict => &prompts.analyzer_verdict,
    };
    let n_frames = f.to_string();
    let options = question.options_block();
    let text = template
        .render(&[
            ("question", question.question_text.as_str()),
            ("options", options.as_str()),
            ("n_frames", n_frames.as_str()),
        ])
        .map_err(|e| ToolError::Backend(BackendError::Precondition(e.to_string())))?;
    let images = frames.into_iter().map(|(_, img)| img).collect();
    let messages = vec![ChatMessage::user_with_images(text, images)];
    let tag = CallTag::new(agent, "analyzer");

    let result = match mode {
        AnalyzerMode::SingleBest => {
            let reply = ask(client, &messages, tag, transcript)?;
            ToolResult { tool_id: ToolId::VideoAnalyzer, payload: reply, verdicts: None }
        }
        AnalyzerMode::PerChoiceVerdict => {
            let instruction = "List one verdict per option on its own line, exactly as \"<option number>: correct\" or \"<option number>: incorrect\", for options 0, 1, 2, 3 and 4.";
            let parsed = ask_parsed(client, prompts, messages, instruction, tag, transcript, |r| {
                parse_verdicts(r).map(|v| (v, r.to_string()))
            })?;
            match parsed {
                Parsed::Ok((verdicts, reply)) => ToolResult {
                    tool_id: ToolId::VideoAnalyzer,
                    payload: reply,
                    verdicts: Some(verdicts),
                },
                Parsed::Unparseable { last_reply } => {
                    transcript.push(EventKind::Error, agent, "analyzer", "verdict parse failed after re-ask");
                    return Err(ToolError::VerdictParse(last_reply));
                }
            }
        }
    };
    transcript.push(EventKind::ToolResult, agent, "analyzer", result.payload.clone());
    Ok(result)
}

// ---------------------------------------------------------------------------
// Tool selection
// ---------------------------------------------------------------------------

/// Finds the earliest mention of an offered tool in a reply.
pub fn parse_tool_choice(reply: &str, offered: &[ToolId]) -> Option<ToolId> {
    let lower = reply.to_ascii_lowercase().replace(['-', ' '], "_");
    offered
        .iter()
        .filter_map(|t| {
            let pos = match t {
                ToolId::Captioner => lower.find("captioner").or_else(|| lower.find("caption")),
                ToolId::VideoAnalyzer => lower.find("video_analyzer").or_else(|| lower.find("analyzer")),
            }?;
            Some((pos, *t))
        })
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, t)| t)
}

/// Asks the backend which tool to use. Unrecognized replies get one re-ask;
/// after that, or on backend failure, `default` is used and flagged.
#[allow(clippy::too_many_arguments)]
pub fn select_tool(
    client: &LlmClient,
    system_prompt: Option<&str>,
    question: &VideoQuestion,
    descriptors: &[ToolDescriptor],
    default: ToolId,
    prompts: &PromptSet,
    agent: &str,
    transcript: &mut Transcript,
) -> ToolId {
    let offered: Vec<ToolId> = descriptors.iter().map(|d| d.tool_id).collect();
    let fallback = if offered.contains(&default) || offered.is_empty() {
        default
    } else {
        offered[0]
    };
    let tools = descriptors
        .iter()
        .map(|d| format!("- {}: {}", d.tool_id, d.description))
        .collect::<Vec<_>>()
        .join("\n");
    let options = question.options_block();
    let first_tool = offered.first().copied().unwrap_or(default).as_str();
    let prompt = match prompts.route.render(&[
        ("question", question.question_text.as_str()),
        ("options", options.as_str()),
        ("tools", tools.as_str()),
        ("first_tool", first_tool),
    ]) {
        Ok(p) => p,
        Err(e) => {
            transcript.flag(agent, "route", format!("route prompt failed ({e}); using {fallback}"));
            return fallback;
        }
    };
    let mut messages = Vec::new();
    if let Some(sp) = system_prompt {
        messages.push(ChatMessage::system(sp));
    }
    messages.push(ChatMessage::user(prompt));
    let ids = offered.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" or ");
    let instruction = format!("Reply with exactly one tool identifier: {ids}.");
    let tag = CallTag::new(agent, "route");
    match ask_parsed(client, prompts, messages, &instruction, tag, transcript, |r| {
        parse_tool_choice(r, &offered)
    }) {
        Ok(Parsed::Ok(t)) => t,
        Ok(Parsed::Unparseable { .. }) => {
            transcript.flag(agent, "route", format!("no tool named after re-ask; falling back to {fallback}"));
            fallback
        }
        Err(e) => {
            transcript.flag(agent, "route", format!("tool selection failed ({e}); falling back to {fallback}"));
            fallback
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendSpec, MockBackend};

    fn q() -> VideoQuestion {
        VideoQuestion::new(
            "q1",
            "v1",
            "What is the main purpose of c's actions?",
            ["cook", "clean", "paint", "read", "sew"].map(String::from),
        )
        .unwrap()
    }

    fn vision(mock: Arc<MockBackend>) -> LlmClient {
        LlmClient::new(BackendSpec::new("vision").with_images(true).with_retries(0), mock)
    }

    #[test]
    fn lookup_overlap_in_order() {
        let track = CaptionTrack::new(
            "v",
            vec![CaptionSegment::new(0.0, 60.0, "opens drawer"), CaptionSegment::new(60.0, 120.0, "cuts vegetables")],
        )
        .unwrap();
        let r = captioner_lookup(&track, 50.0, 70.0).unwrap();
        assert_eq!(r.payload, "[0-60s] opens drawer\n[60-120s] cuts vegetables");
        assert_eq!(r.verdicts, None);
        assert_eq!(captioner_lookup(&track, 130.0, 140.0).unwrap().payload, "");
        assert!(matches!(captioner_lookup(&track, 70.0, 50.0), Err(ToolError::InvalidWindow { .. })));
    }

    #[test]
    fn full_window_over_per_second_track() {
        let segs = (0..180).map(|i| CaptionSegment::new(i as f64, i as f64 + 1.0, format!("c{i}"))).collect();
        let track = CaptionTrack::new("v", segs).unwrap();
        let payload = captioner_lookup(&track, 0.0, 180.0).unwrap().payload;
        let lines: Vec<_> = payload.lines().collect();
        assert_eq!(lines.len(), 180);
        for (i, l) in lines.iter().enumerate() {
            assert_eq!(*l, format!("[{i}-{}s] c{i}", i + 1));
        }
    }

    #[test]
    fn track_invariants_enforced() {
        assert!(CaptionTrack::new("v", vec![CaptionSegment::new(5.0, 5.0, "x")]).is_err());
        assert!(CaptionTrack::new("v", vec![CaptionSegment::new(-1.0, 5.0, "x")]).is_err());
        assert!(CaptionTrack::new(
            "v",
            vec![CaptionSegment::new(5.0, 6.0, "x"), CaptionSegment::new(1.0, 2.0, "y")]
        )
        .is_err());
    }

    #[test]
    fn tsv_parse_round_trip() {
        let t = CaptionTrack::parse("v", "0\t1\tC looks around\n\n1\t2\tC picks up a knife\n").unwrap();
        assert_eq!(t.segments().len(), 2);
        assert_eq!(CaptionTrack::parse("v", &t.to_tsv()).unwrap(), t);
        assert!(CaptionTrack::parse("v", "0 1 no tabs").is_err());
    }

    #[test]
    fn missing_track_in_library() {
        let lib = CaptionLibrary::default();
        assert!(matches!(lib.get("nope"), Err(ToolError::MissingCaptions(_))));
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("v9.txt"), "0\t1\thello\n").unwrap();
        let lib = CaptionLibrary::Dir(dir.path().to_path_buf());
        assert_eq!(lib.get("v9").unwrap().segments()[0].text, "hello");
        assert!(matches!(lib.get("v8"), Err(ToolError::MissingCaptions(_))));
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_frames(180.0, 1).unwrap(), vec![90.0]);
        let s18 = sample_frames(180.0, 18).unwrap();
        let expected: Vec<f64> = (0..18).map(|i| 5.0 + 10.0 * i as f64).collect();
        assert_eq!(s18, expected);
        let s90 = sample_frames(180.0, 90).unwrap();
        assert_eq!(s90.len(), 90);
        assert_eq!(s90[0], 1.0);
        assert!(s90.windows(2).all(|w| (w[1] - w[0] - 2.0).abs() < 1e-9));
        assert!(matches!(sample_frames(180.0, 0), Err(ToolError::ZeroFrames)));
        assert!(matches!(sample_frames(0.0, 3), Err(ToolError::BadDuration(_))));
    }

    #[test]
    fn nearest_neighbour_resolution() {
        let store = FrameStore::new(
            "v",
            vec![
                (0.0, ImageRef::DataUrl("a".into())),
                (2.0, ImageRef::DataUrl("b".into())),
                (10.0, ImageRef::DataUrl("c".into())),
            ],
            10.0,
            None,
        )
        .unwrap();
        assert_eq!(store.nearest(-1.0).0, 0.0);
        assert_eq!(store.nearest(1.0).0, 0.0); // tie -> earlier
        assert_eq!(store.nearest(1.1).0, 2.0);
        assert_eq!(store.nearest(6.5).0, 10.0);
        assert_eq!(store.nearest(99.0).0, 10.0);
        assert!(FrameStore::new("v", vec![], 10.0, None).is_err());
        assert!(FrameStore::new("v", vec![(11.0, ImageRef::DataUrl("x".into()))], 10.0, None).is_err());
    }

    #[test]
    fn frames_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let vdir = dir.path().join("v1");
        std::fs::create_dir(&vdir).unwrap();
        for t in ["0", "5.5", "12"] {
            std::fs::write(vdir.join(format!("{t}.jpg")), b"\xff\xd8").unwrap();
        }
        std::fs::write(vdir.join("notes.txt"), "x").unwrap();
        let lib = FrameLibrary::Dir(dir.path().to_path_buf());
        let store = lib.get("v1", 180.0).unwrap();
        assert_eq!(store.timestamps().collect::<Vec<_>>(), vec![0.0, 5.5, 12.0]);
        assert!(matches!(lib.get("v2", 180.0), Err(ToolError::MissingFrames(_))));
    }

    #[test]
    fn verdict_parsing_variants() {
        let v = parse_verdicts("0:incorrect 1:correct 2:incorrect 3:incorrect 4:incorrect").unwrap();
        assert_eq!(v, [false, true, false, false, false]);
        let v = parse_verdicts("Option 0 - no\nOption 1 - no\nOption 2 - YES\nOption 3 - no\nOption 4 = false").unwrap();
        assert_eq!(v, [false, false, true, false, false]);
        let v = parse_verdicts("0) true 1) true 2) false 3) false 4) true").unwrap();
        assert_eq!(v, [true, true, false, false, true]);
        assert_eq!(parse_verdicts("0: correct 1: incorrect 2: incorrect 3: incorrect"), None);
        assert_eq!(parse_verdicts("0: correct 0: incorrect 1: no 2: no 3: no 4: no"), None);
        assert_eq!(parse_verdicts("maybe"), None);
        let all = [true, false, true, false, false];
        assert_eq!(parse_verdicts(&format_verdicts(&all)), Some(all));
    }

    #[test]
    fn analyzer_per_choice_mode() {
        let mock = Arc::new(MockBackend::new("0:incorrect 1:correct 2:incorrect 3:incorrect 4:incorrect"));
        let store = FrameStore::synthetic("v1", 180.0, 1.0);
        let mut t = Transcript::new();
        let r = analyze_video(&vision(mock), &store, &q(), AnalyzerMode::PerChoiceVerdict, 18, &PromptSet::builtin(), "x", &mut t)
            .unwrap();
        assert_eq!(r.verdicts, Some([false, true, false, false, false]));
        assert_eq!(t.request_count("analyzer"), 1);
    }

    #[test]
    fn analyzer_single_best_keeps_payload() {
        let mock = Arc::new(MockBackend::new("The best answer is option 3."));
        let store = FrameStore::synthetic("v1", 180.0, 1.0);
        let mut t = Transcript::new();
        let r = analyze_video(&vision(mock), &store, &q(), AnalyzerMode::SingleBest, 18, &PromptSet::builtin(), "x", &mut t)
            .unwrap();
        assert_eq!(r.payload, "The best answer is option 3.");
        assert_eq!(r.verdicts, None);
    }

    #[test]
    fn analyzer_sends_frames_at_sampled_times() {
        let mock = Arc::new(MockBackend::new("ok"));
        let store = FrameStore::synthetic("v1", 180.0, 1.0);
        let mut t = Transcript::new();
        analyze_video(&vision(mock.clone()), &store, &q(), AnalyzerMode::SingleBest, 18, &PromptSet::builtin(), "x", &mut t)
            .unwrap();
        let req = &mock.requests()[0];
        let sent: Vec<_> = req.messages[0].images.clone();
        let expected: Vec<_> = (0..18)
            .map(|i| ImageRef::File(PathBuf::from(format!("v1/{}.jpg", 5 + 10 * i))))
            .collect();
        assert_eq!(sent, expected);
        assert!(req.messages[0].text.contains("Question: What is the main purpose"));
        assert!(req.messages[0].text.contains("4. sew"));
    }

    #[test]
    fn analyzer_verdict_parse_error_after_one_reask() {
        let mock = Arc::new(MockBackend::new("I cannot tell."));
        let store = FrameStore::synthetic("v1", 180.0, 1.0);
        let mut t = Transcript::new();
        let err = analyze_video(&vision(mock.clone()), &store, &q(), AnalyzerMode::PerChoiceVerdict, 4, &PromptSet::builtin(), "x", &mut t)
            .unwrap_err();
        assert!(matches!(err, ToolError::VerdictParse(_)));
        assert_eq!(mock.calls(), 2);
        assert!(t.events().iter().any(|e| e.kind == EventKind::Error));
    }

    #[test]
    fn analyzer_requires_vision_backend() {
        let mock = Arc::new(MockBackend::new("ok"));
        let client = LlmClient::new(BackendSpec::new("text"), mock.clone());
        let store = FrameStore::synthetic("v1", 180.0, 1.0);
        let mut t = Transcript::new();
        let err = analyze_video(&client, &store, &q(), AnalyzerMode::SingleBest, 4, &PromptSet::builtin(), "x", &mut t);
        assert!(matches!(err, Err(ToolError::NotVisionCapable(_))));
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn select_tool_parses_and_falls_back() {
        let tools = [ToolDescriptor::captioner(), ToolDescriptor::video_analyzer(AnalyzerMode::SingleBest)];
        let p = PromptSet::builtin();
        let mock = Arc::new(MockBackend::new("use video_analyzer"));
        let c = LlmClient::new(BackendSpec::new("t"), mock);
        let mut t = Transcript::new();
        assert_eq!(select_tool(&c, None, &q(), &tools, ToolId::Captioner, &p, "e", &mut t), ToolId::VideoAnalyzer);
        assert_eq!(t.flags().count(), 0);

        let mock = Arc::new(MockBackend::new("flip a coin"));
        let c = LlmClient::new(BackendSpec::new("t"), mock.clone());
        let mut t = Transcript::new();
        assert_eq!(select_tool(&c, None, &q(), &tools, ToolId::Captioner, &p, "e", &mut t), ToolId::Captioner);
        assert_eq!(mock.calls(), 2);
        assert!(t.flags().any(|f| f.text.contains("falling back to captioner")));
    }

    #[test]
    fn tool_choice_earliest_mention() {
        let both = [ToolId::Captioner, ToolId::VideoAnalyzer];
        assert_eq!(parse_tool_choice("Video Analyzer, not the captioner", &both), Some(ToolId::VideoAnalyzer));
        assert_eq!(parse_tool_choice("captions please", &both), Some(ToolId::Captioner));
        assert_eq!(parse_tool_choice("video analyzer", &[ToolId::Captioner]), None);
    }

    #[test]
    fn descriptor_invariants() {
        ToolDescriptor::captioner().validate().unwrap();
        ToolDescriptor::video_analyzer(AnalyzerMode::PerChoiceVerdict).validate().unwrap();
        let mut bad = ToolDescriptor::captioner();
        bad.analyzer_mode = Some(AnalyzerMode::SingleBest);
        assert!(bad.validate().is_err());
        bad = ToolDescriptor::captioner();
        bad.description = " ".into();
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampling_count_spacing_bounds(f in 1usize..=1000, duration in 1.0f64..3600.0) {
                let ts = sample_frames(duration, f).unwrap();
                prop_assert_eq!(ts.len(), f);
                let step = duration / f as f64;
                for w in ts.windows(2) {
                    prop_assert!(w[1] > w[0]);
                    prop_assert!((w[1] - w[0] - step).abs() < 1e-9);
                }
                prop_assert!(ts[0] > 0.0 && *ts.last().unwrap() < duration);
            }

            #[test]
            fn lookup_is_time_ordered(a in 0.0f64..200.0, len in 0.1f64..100.0) {
                let segs = (0..180).map(|i| CaptionSegment::new(i as f64, i as f64 + 1.0, format!("c{i}"))).collect();
                let track = CaptionTrack::new("v", segs).unwrap();
                let payload = captioner_lookup(&track, a, a + len).unwrap().payload;
                let starts: Vec<f64> = payload
                    .lines()
                    .map(|l| l[1..l.find('-').unwrap()].parse().unwrap())
                    .collect();
                prop_assert!(starts.windows(2).all(|w| w[0] <= w[1]));
            }

            #[test]
            fn verdicts_all_or_nothing(picks in proptest::collection::vec((0u8..5, any::<bool>()), 0..8)) {
                let text = picks
                    .iter()
                    .map(|(i, v)| format!("{i}: {}", if *v { "correct" } else { "incorrect" }))
                    .collect::<Vec<_>>()
                    .join("\n");
                if let Some(v) = parse_verdicts(&text) {
                    for (i, b) in v.iter().enumerate() {
                        prop_assert!(picks.iter().any(|(j, w)| *j as usize == i && w == b));
                    }
                } else {
                    let covered: std::collections::HashSet<_> = picks.iter().map(|p| p.0).collect();
                    let conflict = picks.iter().any(|(i, v)| picks.iter().any(|(j, w)| i == j && v != w));
                    prop_assert!(covered.len() < 5 || conflict);
                }
            }
        }
    }
}
