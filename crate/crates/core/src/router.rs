//! Confidence routing: samples the ensemble agrees on confidently keep the
//! ensemble's answer; the rest go to the language model with retrieved
//! demonstrations. The two invariants every prediction carries:
//! path = SL  <=>  sl_confidence >= sigma, and
//! demonstrations_used nonempty  <=>  path = LLM.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ensemble::TrainedEnsemble;
use crate::icl::{
    build_icl_prompt_with, concat_serialize, parse_label, random_demonstrations,
    retrieve_demonstrations, summarize_with, DemoOrder, IclError, LlmBackend, LlmRequest,
    PromptTemplates, ReliableSet, DEFAULT_K_DEMOS, DEFAULT_LAMBDA, ICL_HEADER, SUMMARY_TEMPLATE,
};
use crate::patient::PatientId;
use crate::sample::{Label, LabeledSample};
use crate::schema::{CodeDescriptions, FeatureSchema};

pub const DEFAULT_SIGMA: f64 = 0.6;

/// Generation cap for the Yes/No answer slot. The verbalized label is one
/// token; the headroom absorbs leading punctuation or a short clause.
pub const ANSWER_TOKENS: u32 = 8;

/// How demonstrations are picked from the pool. `Random` is the ablation
/// baseline: uniform draws, deterministic per (seed, query id).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    Similarity,
    Random { seed: u64 },
}

/// What stands in for the query record inside the prompt: a model-written
/// summary, or the raw serialized record (the without-summarizer ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryText {
    Summarized,
    RawRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutePath {
    Sl,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedPrediction {
    pub sample_id: PatientId,
    pub path: RoutePath,
    pub label: Label,
    /// Averaged probability of the likelier class, whichever path was taken.
    pub sl_confidence: f64,
    /// Demonstration patient ids in prompt order; empty on the SL path.
    pub demonstrations_used: Vec<PatientId>,
    /// The model answered but no yes/no could be read; label fell back to
    /// control. Counted upstream as a warning, never dropped.
    pub parse_failed: bool,
}

/// The language-model arm, bundled: demonstration pool, backend, and the
/// pieces needed to serialize a query the same way the pool was serialized.
pub struct IclArm<'a> {
    pub reliable: &'a ReliableSet,
    pub backend: &'a dyn LlmBackend,
    pub schema: &'a FeatureSchema,
    pub descriptions: &'a CodeDescriptions,
    pub k_demos: usize,
    pub lambda: f64,
    pub order: DemoOrder,
    pub retrieval: RetrievalMode,
    pub query_text: QueryText,
    /// `None` uses the built-in prompt text.
    pub templates: Option<&'a PromptTemplates>,
}

impl<'a> IclArm<'a> {
    /// Standard arm; override fields for the ablation variants.
    pub fn new(
        reliable: &'a ReliableSet,
        backend: &'a dyn LlmBackend,
        schema: &'a FeatureSchema,
        descriptions: &'a CodeDescriptions,
    ) -> Self {
        IclArm {
            reliable,
            backend,
            schema,
            descriptions,
            k_demos: DEFAULT_K_DEMOS,
            lambda: DEFAULT_LAMBDA,
            order: DemoOrder::MostSimilarLast,
            retrieval: RetrievalMode::Similarity,
            query_text: QueryText::Summarized,
            templates: None,
        }
    }
}

/// One routed prediction. The SL branch never constructs a prompt or touches
/// the backend, so it works identically with an unreachable endpoint.
pub fn route_predict(
    sample: &LabeledSample,
    ensemble: &TrainedEnsemble,
    icl: &IclArm<'_>,
    sigma: f64,
) -> Result<RoutedPrediction, IclError> {
    let features = sample.full_vector();
    let sl_confidence = ensemble.max_confidence(&features);
    if sl_confidence >= sigma {
        return Ok(RoutedPrediction {
            sample_id: sample.patient_id.clone(),
            path: RoutePath::Sl,
            label: ensemble.predicted_label(&features),
            sl_confidence,
            demonstrations_used: Vec::new(),
            parse_failed: false,
        });
    }

    let demos = match icl.retrieval {
        RetrievalMode::Similarity => {
            retrieve_demonstrations(sample, icl.reliable, icl.k_demos, icl.lambda, icl.order)?
        }
        RetrievalMode::Random { seed } => {
            random_demonstrations(sample, icl.reliable, icl.k_demos, seed)?
        }
    };
    let (summary_template, icl_header) = match icl.templates {
        Some(t) => (t.summary.as_str(), t.icl_header.as_str()),
        None => (SUMMARY_TEMPLATE, ICL_HEADER),
    };
    let record = concat_serialize(sample, icl.schema, icl.descriptions)?;
    let query_summary = match icl.query_text {
        QueryText::Summarized => summarize_with(icl.backend, summary_template, &record)?,
        QueryText::RawRecord => record,
    };
    let pairs: Vec<(&str, Label)> =
        demos.iter().map(|m| (m.summary.as_str(), m.sample.label)).collect();
    let prompt = build_icl_prompt_with(icl_header, &pairs, &query_summary);
    let response = icl.backend.generate(&LlmRequest::new(prompt, ANSWER_TOKENS))?;
    let (label, parse_failed) = match parse_label(&response.text) {
        Some(label) => (label, false),
        None => (Label::Control, true),
    };
    Ok(RoutedPrediction {
        sample_id: sample.patient_id.clone(),
        path: RoutePath::Llm,
        label,
        sl_confidence,
        demonstrations_used: demos.iter().map(|m| m.sample.patient_id.clone()).collect(),
        parse_failed,
    })
}

/// Routes every sample, in input order. Any single failure aborts the batch:
/// a report over a silently thinned test set would be worse than no report.
pub fn route_all(
    samples: &[LabeledSample],
    ensemble: &TrainedEnsemble,
    icl: &IclArm<'_>,
    sigma: f64,
) -> Result<Vec<RoutedPrediction>, IclError> {
    samples.iter().map(|s| route_predict(s, ensemble, icl, sigma)).collect()
}

/// Splits a set by the routing statistic: easy = confidently predicted
/// (max averaged probability >= sigma), hard = the rest. Input order kept.
pub fn stratify_by_confidence(
    samples: &[LabeledSample],
    ensemble: &TrainedEnsemble,
    sigma: f64,
) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let mut easy = Vec::new();
    let mut hard = Vec::new();
    for sample in samples {
        if ensemble.max_confidence(&sample.full_vector()) >= sigma {
            easy.push(sample.clone());
        } else {
            hard.push(sample.clone());
        }
    }
    (easy, hard)
}
