//! The in-context inference path: denoised demonstration pools, similarity
//! retrieval, prompt text, and the backend contract.

pub mod backend;
pub mod similarity;
pub mod text;

pub use backend::{BackendError, CachedBackend, LlmBackend, LlmRequest, LlmResponse, MockBackend};
pub use similarity::{
    random_demonstrations, retrieve_demonstrations, similarity, DemoOrder, DEFAULT_K_DEMOS,
    DEFAULT_LAMBDA,
};
pub use text::{
    build_icl_prompt, build_icl_prompt_with, build_summary_prompt, build_summary_prompt_with,
    concat_serialize, parse_label, render_number, summarize, summarize_with, PromptTemplates,
    ICL_HEADER, SUMMARY_TEMPLATE,
};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::OofTable;
use crate::patient::PatientId;
use crate::sample::LabeledSample;
use crate::schema::{CodeDescriptions, CodeSpace, FeatureSchema};

#[derive(Debug, Error, PartialEq)]
pub enum IclError {
    #[error("reliable set came out empty")]
    EmptyReliableSet,
    #[error("no out-of-fold probabilities for {0:?}")]
    MissingOof(PatientId),
    #[error("sample width does not match the schema")]
    SchemaMismatch,
    #[error("no description for {space} code {code}")]
    MissingDescription { space: CodeSpace, code: String },
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("pool has {pool} members, need {k}")]
    PoolSmallerThanK { pool: usize, k: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// How the demonstration pool is denoised before retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReliableStrategy {
    /// Everything, no filtering.
    Full,
    /// Samples every ensemble model classifies correctly out of fold.
    AllCorrect,
    /// Samples at least one model classifies correctly out of fold.
    AnyCorrect,
    /// Samples whose mean out-of-fold true-class probability reaches tau.
    HighConfidence,
}

impl ReliableStrategy {
    /// The serialized form, handy as a report row label.
    pub fn name(self) -> &'static str {
        match self {
            ReliableStrategy::Full => "full",
            ReliableStrategy::AllCorrect => "all_correct",
            ReliableStrategy::AnyCorrect => "any_correct",
            ReliableStrategy::HighConfidence => "high_confidence",
        }
    }
}

pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliableMember {
    pub sample: LabeledSample,
    /// Cached once at pool construction; k demonstrations per query would
    /// otherwise re-summarize the same records over and over.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliableSet {
    pub strategy: ReliableStrategy,
    pub tau: f64,
    pub members: Vec<ReliableMember>,
}

/// Indices (into `samples`, input order) that survive the strategy's filter.
pub fn select_reliable(
    samples: &[LabeledSample],
    oof: &OofTable,
    strategy: ReliableStrategy,
    tau: f64,
) -> Result<Vec<usize>, IclError> {
    let mut kept = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        if strategy == ReliableStrategy::Full {
            kept.push(i);
            continue;
        }
        let probs = oof
            .get(&sample.patient_id)
            .ok_or_else(|| IclError::MissingOof(sample.patient_id.clone()))?;
        let correct = |p: f64| (p >= 0.5) == sample.label.is_case();
        let keep = match strategy {
            ReliableStrategy::Full => unreachable!(),
            ReliableStrategy::AllCorrect => probs.iter().all(|&p| correct(p)),
            ReliableStrategy::AnyCorrect => probs.iter().any(|&p| correct(p)),
            ReliableStrategy::HighConfidence => {
                let true_class: f64 = probs
                    .iter()
                    .map(|&p| if sample.label.is_case() { p } else { 1.0 - p })
                    .sum::<f64>()
                    / probs.len() as f64;
                true_class >= tau
            }
        };
        if keep {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(IclError::EmptyReliableSet);
    }
    Ok(kept)
}

/// Filters the pool and caches one summary per surviving member.
/// `templates: None` summarizes with the built-in prompt text.
pub fn build_reliable_set(
    samples: &[LabeledSample],
    oof: &OofTable,
    strategy: ReliableStrategy,
    tau: f64,
    backend: &dyn LlmBackend,
    schema: &FeatureSchema,
    descriptions: &CodeDescriptions,
    templates: Option<&PromptTemplates>,
) -> Result<ReliableSet, IclError> {
    let summary_template = templates.map_or(SUMMARY_TEMPLATE, |t| t.summary.as_str());
    let kept = select_reliable(samples, oof, strategy, tau)?;
    let mut members = Vec::with_capacity(kept.len());
    for i in kept {
        let record = concat_serialize(&samples[i], schema, descriptions)?;
        let summary = summarize_with(backend, summary_template, &record)?;
        members.push(ReliableMember { sample: samples[i].clone(), summary });
    }
    Ok(ReliableSet { strategy, tau, members })
}

/// Pool variant that never calls the language model: each member's "summary"
/// is its raw serialized record. This is the without-summarizer arm of the
/// ablation, and the only pool a run without a generation budget can build.
pub fn build_reliable_set_raw(
    samples: &[LabeledSample],
    oof: &OofTable,
    strategy: ReliableStrategy,
    tau: f64,
    schema: &FeatureSchema,
    descriptions: &CodeDescriptions,
) -> Result<ReliableSet, IclError> {
    let kept = select_reliable(samples, oof, strategy, tau)?;
    let mut members = Vec::with_capacity(kept.len());
    for i in kept {
        let summary = concat_serialize(&samples[i], schema, descriptions)?;
        members.push(ReliableMember { sample: samples[i].clone(), summary });
    }
    Ok(ReliableSet { strategy, tau, members })
}
