//! The LLM backend contract plus a deterministic mock. Transport-specific
//! clients (HTTP) live outside this crate; everything here is pure.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use thiserror::Error;

use serde::{Deserialize, Serialize};

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("backend transport failed: {0}")]
    Transport(String),
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("prompt shape not recognized: {0}")]
    UnrecognizedPrompt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    /// Deterministic decoding; every backend must honor this.
    pub greedy: bool,
    pub repetition_penalty: f64,
}

impl LlmRequest {
    /// Decode settings used everywhere: greedy, repetition penalty 1.1.
    pub fn new(prompt: String, max_new_tokens: u32) -> Self {
        LlmRequest { prompt, max_new_tokens, greedy: true, repetition_penalty: 1.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub tokens: u32,
}

pub trait LlmBackend {
    fn generate(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError>;
}

/// Pure stand-in for a real model. Summary prompts echo the record text
/// between the `Record: ` and `Summary:` markers; classification prompts
/// answer with the majority label among the demonstrations, breaking ties
/// toward the last (most similar) demonstration.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

const RECORD_MARK: &str = "Record: ";
const SUMMARY_MARK: &str = "\nSummary:";
const ANSWER_MARK: &str = "Risk of ADRD:";

impl LlmBackend for MockBackend {
    fn generate(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let prompt = request.prompt.as_str();
        if let Some(text) = extract_summary_echo(prompt) {
            return Ok(respond(text));
        }
        if let Some(answer) = majority_of_demos(prompt) {
            return Ok(respond(answer));
        }
        let head: String = prompt.chars().take(60).collect();
        Err(BackendError::UnrecognizedPrompt(head))
    }
}

fn respond(text: String) -> LlmResponse {
    let tokens = text.split_whitespace().count() as u32;
    LlmResponse { text, tokens }
}

fn extract_summary_echo(prompt: &str) -> Option<String> {
    if !prompt.starts_with("You are an expert medical professional. Please summarize") {
        return None;
    }
    let start = prompt.find(RECORD_MARK)? + RECORD_MARK.len();
    let end = prompt.rfind(SUMMARY_MARK)?;
    (start <= end).then(|| prompt[start..end].to_string())
}

fn majority_of_demos(prompt: &str) -> Option<String> {
    let mut yes = 0usize;
    let mut no = 0usize;
    let mut last: Option<bool> = None;
    let mut slots = prompt.split(ANSWER_MARK);
    slots.next()?; // text before the first answer slot
    let mut open_slot_seen = false;
    for after in slots {
        let token = after
            .split(|c: char| !c.is_alphanumeric())
            .find(|t| !t.is_empty())
            .map(|t| t.to_lowercase());
        match token.as_deref() {
            Some("yes") => {
                yes += 1;
                last = Some(true);
            }
            Some("no") => {
                no += 1;
                last = Some(false);
            }
            // The final, unanswered slot.
            _ => open_slot_seen = true,
        }
    }
    if !open_slot_seen || yes + no == 0 {
        return None;
    }
    let answer = match yes.cmp(&no) {
        core::cmp::Ordering::Greater => true,
        core::cmp::Ordering::Less => false,
        core::cmp::Ordering::Equal => last?,
    };
    Some(String::from(if answer { "Yes" } else { "No" }))
}

/// Response cache keyed by exact prompt text. Sound because prompt building
/// is pure and decoding is greedy: the same prompt always earns the same
/// completion. A threshold sweep re-queries every unconfident sample once per
/// sigma; with the cache each distinct prompt costs one backend call total.
/// `max_new_tokens` is not part of the key; the summary and answer prompts
/// never collide textually.
pub struct CachedBackend<'a> {
    inner: &'a dyn LlmBackend,
    cache: core::cell::RefCell<BTreeMap<String, LlmResponse>>,
    hits: core::cell::Cell<usize>,
    misses: core::cell::Cell<usize>,
}

impl<'a> CachedBackend<'a> {
    pub fn new(inner: &'a dyn LlmBackend) -> Self {
        CachedBackend::preloaded(inner, BTreeMap::new())
    }

    /// Starts warm, e.g. from a persisted cache file.
    pub fn preloaded(inner: &'a dyn LlmBackend, cache: BTreeMap<String, LlmResponse>) -> Self {
        CachedBackend {
            inner,
            cache: core::cell::RefCell::new(cache),
            hits: core::cell::Cell::new(0),
            misses: core::cell::Cell::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.get()
    }

    /// Backend calls that actually went through to the inner client.
    pub fn misses(&self) -> usize {
        self.misses.get()
    }

    pub fn snapshot(&self) -> BTreeMap<String, LlmResponse> {
        self.cache.borrow().clone()
    }
}

impl LlmBackend for CachedBackend<'_> {
    fn generate(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        if let Some(found) = self.cache.borrow().get(&request.prompt) {
            self.hits.set(self.hits.get() + 1);
            return Ok(found.clone());
        }
        // Errors are not cached; a retried prompt should hit the backend again.
        let response = self.inner.generate(request)?;
        self.misses.set(self.misses.get() + 1);
        self.cache.borrow_mut().insert(request.prompt.clone(), response.clone());
        Ok(response)
    }
}
