//! Dynamic agent generation: expert personas built per question from the
//! question text and a caption-derived video context.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::{ask_parsed, CallTag, Parsed};
use crate::dataset::{Transcript, VideoQuestion};
use crate::llm::{BackendError, ChatMessage, LlmClient};
use crate::prompts::PromptSet;
use crate::tools::CaptionTrack;

pub const MIN_CONTEXT_BUDGET: usize = 100;
pub const STATIC_SOURCE: &str = "static";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub name: String,
    pub domain: String,
    pub system_prompt: String,
    /// Backend id that generated the profile, or `"static"`.
    pub generated_by: String,
}

/// Condensed caption text handed to the expert generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoContext {
    pub summary: String,
    pub budget: usize,
    /// Set when no captions were available.
    pub empty_warning: bool,
}

impl VideoContext {
    pub fn empty(budget: usize) -> Self {
        VideoContext { summary: String::new(), budget, empty_warning: true }
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn truncate_chars(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Evenly spaced caption lines, always including the first and last segment,
/// concatenated within `budget` characters.
pub fn build_video_context(track: &CaptionTrack, budget: usize) -> Result<VideoContext, String> {
    if budget < MIN_CONTEXT_BUDGET {
        return Err(format!("context budget must be at least {MIN_CONTEXT_BUDGET}, got {budget}"));
    }
    let lines: Vec<String> = track.segments().iter().map(|s| s.render()).collect();
    let n = lines.len();
    if n == 0 {
        return Ok(VideoContext::empty(budget));
    }
    let joined_len = |idx: &[usize]| -> usize {
        idx.iter().map(|&i| char_len(&lines[i])).sum::<usize>() + idx.len().saturating_sub(1)
    };
    let spaced = |k: usize| -> Vec<usize> {
        if k == 1 {
            return vec![0];
        }
        let mut idx: Vec<usize> = (0..k)
            .map(|i| ((i * (n - 1)) as f64 / (k - 1) as f64).round() as usize)
            .collect();
        idx.dedup();
        idx
    };

    let min_k = n.min(2);
    let mut k = n;
    while k >= min_k {
        let idx = spaced(k);
        if joined_len(&idx) <= budget {
            let summary = idx.iter().map(|&i| lines[i].as_str()).collect::<Vec<_>>().join("\n");
            return Ok(VideoContext { summary, budget, empty_warning: false });
        }
        k -= 1;
    }

    // Even first + last do not fit: keep a prefix of each.
    let ellipsis = "...";
    let clip = |s: &str, max: usize| {
        if char_len(s) <= max {
            s.to_string()
        } else {
            format!("{}{ellipsis}", truncate_chars(s, max - ellipsis.len()))
        }
    };
    let summary = if n == 1 {
        clip(&lines[0], budget)
    } else {
        let half = (budget - 1) / 2;
        format!("{}\n{}", clip(&lines[0], half), clip(&lines[n - 1], half))
    };
    debug_assert!(char_len(&summary) <= budget);
    Ok(VideoContext { summary, budget, empty_warning: false })
}

/// `n` generic assistants with identical system prompts.
pub fn fallback_assistants(n: usize, prompts: &PromptSet) -> Vec<ExpertProfile> {
    (1..=n)
        .map(|i| ExpertProfile {
            name: format!("Assistant {i}"),
            domain: "general AI assistant".into(),
            system_prompt: prompts.assistant_system.text().trim().to_string(),
            generated_by: STATIC_SOURCE.into(),
        })
        .collect()
}

#[derive(Debug, Deserialize, Serialize)]
struct WireExpert {
    name: String,
    #[serde(default)]
    domain: String,
    system_prompt: String,
}

fn fenced_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*\s*\n?(.*?)```").unwrap())
}

/// Parses exactly `n` experts from a reply containing a fenced JSON block (or
/// a bare JSON array). Names must be distinct and prompts nonempty.
pub fn parse_expert_block(reply: &str, n: usize, generated_by: &str) -> Option<Vec<ExpertProfile>> {
    let candidates: Vec<&str> = fenced_re()
        .captures_iter(reply)
        .map(|c| c.get(1).unwrap().as_str())
        .chain(std::iter::once(reply))
        .collect();
    for body in candidates {
        let Some(start) = body.find('[') else { continue };
        let Some(end) = body.rfind(']') else { continue };
        if end < start {
            continue;
        }
        let Ok(experts) = serde_json::from_str::<Vec<WireExpert>>(&body[start..=end]) else {
            continue;
        };
        if experts.len() != n {
            return None;
        }
        let mut names = HashSet::new();
        let mut out = Vec::with_capacity(n);
        for e in experts {
            let name = e.name.trim().to_string();
            if name.is_empty() || e.system_prompt.trim().is_empty() || !names.insert(name.clone()) {
                return None;
            }
            out.push(ExpertProfile {
                name,
                domain: e.domain.trim().to_string(),
                system_prompt: e.system_prompt.trim().to_string(),
                generated_by: generated_by.to_string(),
            });
        }
        return Some(out);
    }
    None
}

/// Renders profiles in the fenced layout [`parse_expert_block`] reads.
pub fn format_expert_block(profiles: &[ExpertProfile]) -> String {
    let wire: Vec<WireExpert> = profiles
        .iter()
        .map(|p| WireExpert {
            name: p.name.clone(),
            domain: p.domain.clone(),
            system_prompt: p.system_prompt.clone(),
        })
        .collect();
    format!("```json\n{}\n```", serde_json::to_string_pretty(&wire).expect("serializes"))
}

/// Asks the backend for `n` experts. Two unparseable replies fall back to
/// generic assistants (flagged). Transport errors propagate.
pub fn generate_experts(
    client: &LlmClient,
    question: &VideoQuestion,
    context: &VideoContext,
    n: usize,
    prompts: &PromptSet,
    transcript: &mut Transcript,
) -> Result<Vec<ExpertProfile>, BackendError> {
    assert!(n >= 1, "expert count must be at least 1");
    let n_str = n.to_string();
    let options = question.options_block();
    let video_context = if context.summary.is_empty() {
        "(no captions available)"
    } else {
        context.summary.as_str()
    };
    let prompt = prompts
        .dag
        .render(&[
            ("question", question.question_text.as_str()),
            ("options", options.as_str()),
            ("video_context", video_context),
            ("n", n_str.as_str()),
        ])
        .map_err(|e| BackendError::Precondition(e.to_string()))?;
    let backend_id = client.spec().backend_id.clone();
    let instruction = format!(
        "Reply with exactly {n} experts as a fenced ```json block containing an array of objects with keys \"name\", \"domain\" and \"system_prompt\"; names must be distinct."
    );
    let parsed = ask_parsed(
        client,
        prompts,
        vec![ChatMessage::user(prompt)],
        &instruction,
        CallTag::new("dag", "dag"),
        transcript,
        |r| parse_expert_block(r, n, &backend_id),
    )?;
    Ok(match parsed {
        Parsed::Ok(p) => p,
        Parsed::Unparseable { .. } => {
            transcript.flag("dag", "dag", format!("expert generation unparseable after re-ask; using {n} generic assistants"));
            fallback_assistants(n, prompts)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendSpec, MockBackend};
    use crate::tools::CaptionSegment;
    use std::sync::Arc;

    fn track(n: usize) -> CaptionTrack {
        CaptionTrack::new(
            "v",
            (0..n)
                .map(|i| CaptionSegment::new(i as f64, i as f64 + 1.0, format!("C does step number {i}")))
                .collect(),
        )
        .unwrap()
    }

    fn q() -> VideoQuestion {
        VideoQuestion::new("q", "v", "Why does c stir the pot?", ["a", "b", "c", "d", "e"].map(String::from)).unwrap()
    }

    fn three() -> String {
        let profiles: Vec<_> = ["Culinary Expert", "Ergonomics Analyst", "Activity Recognition Specialist"]
            .iter()
            .map(|n| ExpertProfile {
                name: n.to_string(),
                domain: format!("{n} domain"),
                system_prompt: format!("You are a {n}."),
                generated_by: "gpt-4o".into(),
            })
            .collect();
        format!("Here is the team.\n{}\nGood luck.", format_expert_block(&profiles))
    }

    #[test]
    fn context_keeps_everything_when_it_fits() {
        let ctx = build_video_context(&track(2), 1000).unwrap();
        assert_eq!(ctx.summary, "[0-1s] C does step number 0\n[1-2s] C does step number 1");
        assert!(!ctx.empty_warning);
    }

    #[test]
    fn context_tight_budget_keeps_endpoints() {
        let t = track(180);
        let ctx = build_video_context(&t, 300).unwrap();
        assert!(ctx.summary.chars().count() <= 300);
        let lines: Vec<_> = ctx.summary.lines().collect();
        assert_eq!(lines.first().unwrap(), &t.segments()[0].render());
        assert_eq!(lines.last().unwrap(), &t.segments()[179].render());
        assert!(lines.len() > 2);
    }

    #[test]
    fn context_truncates_oversized_endpoints() {
        let long = "x".repeat(500);
        let t = CaptionTrack::new(
            "v",
            vec![CaptionSegment::new(0.0, 1.0, long.clone()), CaptionSegment::new(1.0, 2.0, long)],
        )
        .unwrap();
        let ctx = build_video_context(&t, 100).unwrap();
        assert!(ctx.summary.chars().count() <= 100);
        assert!(ctx.summary.starts_with("[0-1s]"));
        assert!(ctx.summary.lines().nth(1).unwrap().starts_with("[1-2s]"));
    }

    #[test]
    fn context_single_oversized_line_not_duplicated() {
        let t = CaptionTrack::new("v", vec![CaptionSegment::new(0.0, 1.0, "y".repeat(500))]).unwrap();
        let ctx = build_video_context(&t, 100).unwrap();
        assert_eq!(ctx.summary.lines().count(), 1);
        assert_eq!(ctx.summary.chars().count(), 100);
        assert!(ctx.summary.ends_with("..."));
    }

    #[test]
    fn context_empty_track_warns() {
        let ctx = build_video_context(&CaptionTrack::new("v", vec![]).unwrap(), 200).unwrap();
        assert!(ctx.summary.is_empty());
        assert!(ctx.empty_warning);
        assert!(build_video_context(&track(3), 99).is_err());
    }

    #[test]
    fn parses_three_named_experts() {
        let mock = Arc::new(MockBackend::new(three()));
        let c = LlmClient::new(BackendSpec::new("gpt-4o"), mock.clone());
        let mut t = Transcript::new();
        let ctx = build_video_context(&track(10), 500).unwrap();
        let p = generate_experts(&c, &q(), &ctx, 3, &PromptSet::builtin(), &mut t).unwrap();
        let names: Vec<_> = p.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["Culinary Expert", "Ergonomics Analyst", "Activity Recognition Specialist"]);
        assert!(p.iter().all(|e| e.generated_by == "gpt-4o"));
        assert_eq!(mock.calls(), 1);
        assert_eq!(t.request_count("dag"), 1);
        let sent = &mock.requests()[0].messages[0].text;
        assert!(sent.contains("[9-10s] C does step number 9"));
        assert!(sent.contains("team of 3 experts"));
    }

    #[test]
    fn garbage_twice_falls_back() {
        let mock = Arc::new(MockBackend::new("no idea"));
        let c = LlmClient::new(BackendSpec::new("gpt-4o"), mock.clone());
        let mut t = Transcript::new();
        let p = generate_experts(&c, &q(), &VideoContext::empty(200), 3, &PromptSet::builtin(), &mut t).unwrap();
        assert_eq!(p, fallback_assistants(3, &PromptSet::builtin()));
        assert_eq!(mock.calls(), 2);
        assert!(t.flags().any(|f| f.text.contains("generic assistants")));
    }

    #[test]
    fn count_mismatch_is_a_parse_failure() {
        let mock = Arc::new(MockBackend::new(three()));
        let c = LlmClient::new(BackendSpec::new("gpt-4"), mock);
        let mut t = Transcript::new();
        let p = generate_experts(&c, &q(), &VideoContext::empty(200), 2, &PromptSet::builtin(), &mut t).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|e| e.generated_by == STATIC_SOURCE));
    }

    #[test]
    fn two_expert_request() {
        let two: Vec<_> = ["Chef", "Safety Officer"]
            .iter()
            .map(|n| ExpertProfile {
                name: n.to_string(),
                domain: "d".into(),
                system_prompt: "p".into(),
                generated_by: "gpt-4".into(),
            })
            .collect();
        let mock = Arc::new(MockBackend::new(format_expert_block(&two)));
        let c = LlmClient::new(BackendSpec::new("gpt-4"), mock);
        let mut t = Transcript::new();
        let p = generate_experts(&c, &q(), &VideoContext::empty(200), 2, &PromptSet::builtin(), &mut t).unwrap();
        assert_eq!(p, two);
    }

    #[test]
    fn duplicate_names_rejected() {
        let reply = r#"[{"name":"A","domain":"x","system_prompt":"p"},{"name":"A","domain":"y","system_prompt":"q"}]"#;
        assert_eq!(parse_expert_block(reply, 2, "b"), None);
        let bare = r#"[{"name":"A","system_prompt":"p"},{"name":"B","system_prompt":"q"}]"#;
        assert_eq!(parse_expert_block(bare, 2, "b").unwrap()[1].name, "B");
    }

    #[test]
    fn fallback_assistants_shape() {
        let p = PromptSet::builtin();
        let a = fallback_assistants(3, &p);
        assert_eq!(a.iter().map(|e| e.name.as_str()).collect::<Vec<_>>(), ["Assistant 1", "Assistant 2", "Assistant 3"]);
        assert!(a.iter().all(|e| e.system_prompt == a[0].system_prompt && !e.system_prompt.is_empty()));
        assert!(a.iter().all(|e| e.generated_by == "static"));
        assert_eq!(fallback_assistants(1, &p).len(), 1);
        assert_eq!(fallback_assistants(3, &p), a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn profile() -> impl Strategy<Value = ExpertProfile> {
            ("[A-Z][a-z]{2,10}( [A-Z][a-z]{2,10})?", "[a-z ]{0,20}", "[A-Za-z .,\"\\[\\]`]{1,60}[a-z]")
                .prop_map(|(name, domain, sp)| ExpertProfile {
                    name,
                    domain: domain.trim().to_string(),
                    system_prompt: sp.trim().to_string(),
                    generated_by: "b".into(),
                })
        }

        proptest! {
            #[test]
            fn expert_block_round_trip(ps in proptest::collection::vec(profile(), 1..5)) {
                let mut seen = HashSet::new();
                let ps: Vec<_> = ps.into_iter().filter(|p| seen.insert(p.name.clone())).collect();
                let text = format_expert_block(&ps);
                prop_assert_eq!(parse_expert_block(&text, ps.len(), "b"), Some(ps));
            }

            #[test]
            fn context_within_budget(n in 0usize..300, budget in 100usize..2000) {
                let ctx = build_video_context(&track(n), budget).unwrap();
                prop_assert!(ctx.summary.chars().count() <= budget);
                if n > 0 {
                    let t = track(n);
                    let lines: Vec<_> = ctx.summary.lines().collect();
                    prop_assert!(lines[0].starts_with("[0-1s]"));
                    let last_prefix = format!("[{}-{}s]", n - 1, n);
                    prop_assert!(lines.last().unwrap().starts_with(&last_prefix));
                    let _ = t;
                }
            }
        }
    }
}
