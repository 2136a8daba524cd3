//! Backend calls with transcript recording and the single re-ask rule.

use crate::dataset::{EventKind, Transcript};
use crate::llm::{canonical_text, BackendError, ChatMessage, LlmClient};
use crate::prompts::PromptSet;

/// Who is speaking and what for, as recorded in the transcript.
#[derive(Debug, Clone, Copy)]
pub struct CallTag<'a> {
    pub agent: &'a str,
    pub label: &'a str,
}

impl<'a> CallTag<'a> {
    pub fn new(agent: &'a str, label: &'a str) -> Self {
        CallTag { agent, label }
    }
}

/// One backend call, logged as a request/reply pair.
pub fn ask(
    client: &LlmClient,
    messages: &[ChatMessage],
    tag: CallTag<'_>,
    transcript: &mut Transcript,
) -> Result<String, BackendError> {
    transcript.push(EventKind::Request, tag.agent, tag.label, canonical_text(messages));
    match client.complete(messages) {
        Ok(resp) => {
            transcript.push(EventKind::Reply, tag.agent, tag.label, resp.text.clone());
            Ok(resp.text)
        }
        Err(e) => {
            transcript.push(EventKind::Error, tag.agent, tag.label, e.to_string());
            Err(e)
        }
    }
}

/// Outcome of [`ask_parsed`].
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed<T> {
    Ok(T),
    /// Both the first reply and the re-ask reply failed to parse.
    Unparseable { last_reply: String },
}

/// Calls the backend and parses the reply; on a parse failure, re-asks once
/// with the `reask` template and `instruction`, then gives up.
pub fn ask_parsed<T>(
    client: &LlmClient,
    prompts: &PromptSet,
    mut messages: Vec<ChatMessage>,
    instruction: &str,
    tag: CallTag<'_>,
    transcript: &mut Transcript,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Parsed<T>, BackendError> {
    let first = ask(client, &messages, tag, transcript)?;
    if let Some(v) = parse(&first) {
        return Ok(Parsed::Ok(v));
    }
    transcript.flag(tag.agent, tag.label, "reply unparseable; re-asking");
    let reask = prompts
        .reask
        .render(&[("instruction", instruction)])
        .unwrap_or_else(|_| instruction.to_string());
    messages.push(ChatMessage::assistant(if first.is_empty() { "(empty)".to_string() } else { first }));
    messages.push(ChatMessage::user(reask));
    let second = ask(client, &messages, tag, transcript)?;
    Ok(match parse(&second) {
        Some(v) => Parsed::Ok(v),
        None => Parsed::Unparseable { last_reply: second },
    })
}
