//! Scripted fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use vdma_core::config::default_backends;
use vdma_core::dataset::{
    serialize_answers, serialize_dataset, ChoiceIndex, PredictionRecord, QuestionCategory, Transcript, VideoQuestion,
};
use vdma_core::llm::{Backoff, BackendRegistry, MockBackend, MockScript, MockScriptRule};
use vdma_core::qa::PipelineDeps;
use vdma_core::tools::{CaptionLibrary, CaptionSegment, CaptionTrack, FrameLibrary, FrameStore};

pub const EXPERTS: [&str; 3] = ["Kitchen Analyst", "Motion Tracker", "Object Specialist"];

pub fn choice(i: usize) -> ChoiceIndex {
    ChoiceIndex::new(i as u8).unwrap()
}

pub fn truth(i: usize) -> usize {
    i % 5
}

/// Organizer answer: wrong on every fifth question starting at 3.
pub fn organizer_answer(i: usize) -> usize {
    if i % 5 == 3 {
        (truth(i) + 1) % 5
    } else {
        truth(i)
    }
}

/// Single-agent answer: right on even questions only.
pub fn single_answer(i: usize) -> usize {
    if i % 2 == 0 {
        truth(i)
    } else {
        (truth(i) + 2) % 5
    }
}

pub fn questions(n: usize) -> Vec<VideoQuestion> {
    (0..n)
        .map(|i| {
            let options = [
                format!("C is cooking a meal ({i})"),
                format!("C is cleaning the kitchen ({i})"),
                format!("C is repairing a shelf ({i})"),
                format!("C is sorting laundry ({i})"),
                format!("C is watering plants ({i})"),
            ];
            VideoQuestion::new(
                format!("q{i:02}"),
                format!("v{i:02}"),
                format!("What is the overall goal of C in clip {i:02}?"),
                options,
            )
            .unwrap()
            .with_ground_truth(choice(truth(i)))
        })
        .collect()
}

pub fn caption_track(video_id: &str) -> CaptionTrack {
    let segs = (0..18)
        .map(|k| CaptionSegment::new(k as f64 * 10.0, (k + 1) as f64 * 10.0, format!("C handles item {k} in {video_id}")))
        .collect();
    CaptionTrack::new(video_id, segs).unwrap()
}

fn expert_block() -> String {
    let experts: Vec<serde_json::Value> = EXPERTS
        .iter()
        .map(|n| {
            serde_json::json!({
                "name": n,
                "domain": format!("{n} domain"),
                "system_prompt": format!("You are {n}, a specialist in first-person video."),
            })
        })
        .collect();
    format!("Here is the team.\n```json\n{}\n```", serde_json::to_string_pretty(&experts).unwrap())
}

fn rule(pattern: String, reply: String) -> MockScriptRule {
    MockScriptRule { fingerprint: None, pattern: Some(pattern), reply }
}

/// Replies for every call the built-in models make on `questions(n)`.
/// The "Motion Tracker" expert routes to the video analyzer, the others to
/// the captioner.
pub fn script(n: usize) -> MockScript {
    let mut rules = vec![
        rule(r"# Expert team design".into(), expert_block()),
        rule(r"(?s)You are Motion Tracker.*# Tool selection".into(), "use video_analyzer".into()),
        rule(r"# Tool selection".into(), "use captioner".into()),
        rule(
            r"# Video analysis \(per option\)".into(),
            "The frames show a kitchen.\n0: correct\n1: incorrect\n2: incorrect\n3: incorrect\n4: incorrect".into(),
        ),
        rule(r"# Video analysis".into(), "The frames show a kitchen; option 0 fits best.".into()),
    ];
    for i in 0..n {
        let clip = format!("clip {i:02}\\?");
        rules.push(rule(
            format!("(?s)# Expert answer.*{clip}"),
            format!("Choice: {}\nReasoning: the captions support it", truth(i)),
        ));
        rules.push(rule(
            format!("(?s)# Organizer decision.*{clip}"),
            format!("Final: {}\nRationale: the experts agree", organizer_answer(i)),
        ));
        rules.push(rule(
            format!("(?s)# Direct answer.*{clip}"),
            format!("Answer: {}\nReasoning: visible in the frames", single_answer(i)),
        ));
    }
    MockScript { fallback: "I cannot tell.".into(), garbage_rate: 0.0, garbage_seed: 0, rules }
}

pub fn mock(n: usize) -> Arc<MockBackend> {
    Arc::new(script(n).build().unwrap())
}

pub fn deps(mock: Arc<MockBackend>, questions: &[VideoQuestion]) -> PipelineDeps {
    let backends = BackendRegistry::shared(default_backends(), mock, Backoff::none());
    PipelineDeps::new(backends)
        .with_captions(CaptionLibrary::from_tracks(questions.iter().map(|q| caption_track(&q.video_id))))
        .with_frames(FrameLibrary::from_stores(
            questions.iter().map(|q| FrameStore::synthetic(q.video_id.clone(), q.duration_s, 1.0)),
        ))
}

/// Dataset, answers, captions, and mock script on disk for CLI runs.
pub struct DiskFixture {
    pub dataset: std::path::PathBuf,
    pub answers: std::path::PathBuf,
    pub captions: std::path::PathBuf,
    pub script: std::path::PathBuf,
}

pub fn write_fixture(dir: &Path, n: usize) -> DiskFixture {
    let qs = questions(n);
    let dataset = dir.join("questions.jsonl");
    let answers = dir.join("answers.json");
    let captions = dir.join("captions");
    let script_path = dir.join("mock.json");
    std::fs::write(&dataset, serialize_dataset(&qs)).unwrap();
    std::fs::write(&answers, serialize_answers(&qs)).unwrap();
    std::fs::create_dir_all(&captions).unwrap();
    for q in &qs {
        std::fs::write(captions.join(format!("{}.txt", q.video_id)), caption_track(&q.video_id).to_tsv()).unwrap();
    }
    std::fs::write(&script_path, serde_json::to_string_pretty(&script(n)).unwrap()).unwrap();
    DiskFixture { dataset, answers, captions, script: script_path }
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs the CLI in-process and returns (exit code, stdout).
pub fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("vdma").chain(args.iter().copied()).map(std::ffi::OsString::from);
    let code = vdma_core::cli::main_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

pub struct CategoryFixture {
    pub f18: Vec<PredictionRecord>,
    pub f90: Vec<PredictionRecord>,
    pub truths: BTreeMap<String, ChoiceIndex>,
    pub categories: BTreeMap<String, Vec<QuestionCategory>>,
}

/// 500 questions whose per-category counts and correct answers reproduce
/// the frame-count comparison table. 101 questions carry a second label, so
/// category sizes are 246/109/108/91/47.
///
/// Groups: (labels, size, correct at 18 frames, correct at 90 frames).
pub fn category_fixture() -> CategoryFixture {
    use QuestionCategory::*;
    let groups: [(&[QuestionCategory], usize, usize, usize); 8] = [
        (&[PurposeGoal], 145, 115, 116),
        (&[PurposeGoal, ActionSequence], 50, 40, 40),
        (&[PurposeGoal, CharacterInteraction], 20, 15, 15),
        (&[PurposeGoal, ToolsMaterials], 31, 25, 24),
        (&[ToolsMaterials], 78, 54, 59),
        (&[KeyAction], 108, 68, 70),
        (&[ActionSequence], 41, 29, 35),
        (&[CharacterInteraction], 27, 20, 18),
    ];
    let mut fx = CategoryFixture {
        f18: Vec::new(),
        f90: Vec::new(),
        truths: BTreeMap::new(),
        categories: BTreeMap::new(),
    };
    let mut i = 0;
    for (labels, size, c18, c90) in groups {
        for k in 0..size {
            let qid = format!("q{i:03}");
            fx.truths.insert(qid.clone(), choice(0));
            fx.categories.insert(qid.clone(), labels.to_vec());
            let pick = |ok: bool| choice(if ok { 0 } else { 1 });
            fx.f18.push(PredictionRecord::answered(&qid, "model4", pick(k < c18), Transcript::new()));
            fx.f90.push(PredictionRecord::answered(&qid, "model4", pick(k < c90), Transcript::new()));
            i += 1;
        }
    }
    fx
}
