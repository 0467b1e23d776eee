//! Record serialization, summarization, prompt assembly, and answer
//! parsing. Every template here is pinned by tests; downstream text
//! artifacts (cached prompts, transcripts) depend on byte stability.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::backend::{BackendError, LlmBackend, LlmRequest};
use super::IclError;
use crate::sample::{Label, LabeledSample};
use crate::schema::{CodeDescriptions, CodeSpace, FeatureSchema};
#[cfg(not(feature = "std"))]
use num_traits::Float;

pub const SUMMARY_TEMPLATE: &str = "You are an expert medical professional. Please summarize the patient's medical record in one paragraph.\nRecord: {record}\nSummary: ";

pub const ICL_HEADER: &str = "You are an expert medical professional. Given each patient record below, assess the risk of Alzheimer's disease and related dementias (ADRD). Answer Yes or No.\n\n";

/// Prompt scaffolding loaded from editable text files; the defaults are the
/// pinned constants above. A summary template must contain the `{record}`
/// marker. The deterministic mock only understands the default templates, so
/// overrides are for real backends.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub summary: String,
    pub icl_header: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            summary: String::from(SUMMARY_TEMPLATE),
            icl_header: String::from(ICL_HEADER),
        }
    }
}

/// Integers render bare; everything else gets two decimals with trailing
/// zeros trimmed.
pub fn render_number(v: f64) -> String {
    if v == 0.0 {
        return String::from("0");
    }
    if v.fract() == 0.0 && v.abs() < 1e15 {
        return alloc::format!("{}", v as i64);
    }
    let mut s = alloc::format!("{v:.2}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Flat text rendering of one sample: continuous features in schema order,
/// then described active codes under Diagnoses / Medications / Orders.
/// Empty sections render "none" so no list header dangles.
pub fn concat_serialize(
    sample: &LabeledSample,
    schema: &FeatureSchema,
    descriptions: &CodeDescriptions,
) -> Result<String, IclError> {
    if sample.continuous.len() != schema.continuous_width()
        || sample.categorical.len() != schema.categorical_width()
    {
        return Err(IclError::SchemaMismatch);
    }
    let mut parts: Vec<String> = Vec::new();
    for (feature, value) in schema.continuous().iter().zip(&sample.continuous) {
        parts.push(alloc::format!("The patient's {}: {}.", feature.name, render_number(*value)));
    }
    let mut offset = 0;
    for (space, heading) in [
        (CodeSpace::Phecode, "Diagnoses"),
        (CodeSpace::Ingredient, "Medications"),
        (CodeSpace::Ccs, "Orders"),
    ] {
        let vocab = schema.vocabulary(space);
        let mut described: Vec<&str> = Vec::new();
        for (code, &active) in vocab.iter().zip(&sample.categorical[offset..offset + vocab.len()])
        {
            if active == 1 {
                described.push(descriptions.describe(space, code).ok_or_else(|| {
                    IclError::MissingDescription { space, code: code.clone() }
                })?);
            }
        }
        let list = if described.is_empty() { String::from("none") } else { described.join(", ") };
        parts.push(alloc::format!("{heading}: {list}."));
        offset += vocab.len();
    }
    Ok(parts.join(" "))
}

pub fn build_summary_prompt_with(template: &str, record: &str) -> String {
    template.replace("{record}", record)
}

pub fn build_summary_prompt(record: &str) -> String {
    build_summary_prompt_with(SUMMARY_TEMPLATE, record)
}

/// One backend round trip; an empty generation falls back to the raw record
/// text so downstream prompts never embed an empty summary.
pub fn summarize_with(
    backend: &dyn LlmBackend,
    template: &str,
    record: &str,
) -> Result<String, BackendError> {
    let request = LlmRequest::new(build_summary_prompt_with(template, record), 256);
    let response = backend.generate(&request)?;
    let text = response.text.trim();
    if text.is_empty() {
        Ok(record.to_string())
    } else {
        Ok(text.to_string())
    }
}

pub fn summarize(backend: &dyn LlmBackend, record: &str) -> Result<String, BackendError> {
    summarize_with(backend, SUMMARY_TEMPLATE, record)
}

/// Demonstrations render in the order given; the caller already arranged
/// them so the most similar sits immediately before the query.
pub fn build_icl_prompt_with(
    header: &str,
    demos: &[(&str, Label)],
    query_summary: &str,
) -> String {
    let mut prompt = String::from(header);
    for (summary, label) in demos {
        prompt.push_str("Patient record: ");
        prompt.push_str(summary);
        prompt.push_str("\nRisk of ADRD: ");
        prompt.push_str(label.verbalize());
        prompt.push('\n');
    }
    prompt.push_str("Patient record: ");
    prompt.push_str(query_summary);
    prompt.push_str("\nRisk of ADRD:");
    prompt
}

pub fn build_icl_prompt(demos: &[(&str, Label)], query_summary: &str) -> String {
    build_icl_prompt_with(ICL_HEADER, demos, query_summary)
}

/// Scans the first line, case-insensitively, for a yes/no token; whichever
/// appears first decides. `None` means the response was unparseable.
pub fn parse_label(response: &str) -> Option<Label> {
    let first_line = response.lines().next()?;
    for token in first_line.split(|c: char| !c.is_alphanumeric()) {
        if token.eq_ignore_ascii_case("yes") {
            return Some(Label::Case);
        }
        if token.eq_ignore_ascii_case("no") {
            return Some(Label::Control);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use crate::icl::backend::MockBackend;
    use crate::patient::PatientId;
    use crate::schema::{ContinuousFeature, FeatureCategory};
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn tiny_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![ContinuousFeature {
                name: String::from("age"),
                unit: String::from("years"),
                category: FeatureCategory::Vital,
            }],
            vec![String::from("PH-1")],
            vec![String::from("ING-1")],
            vec![String::from("CCS-1")],
        )
        .unwrap()
    }

    fn named_descriptions() -> CodeDescriptions {
        CodeDescriptions {
            phecode: BTreeMap::from([(String::from("PH-1"), String::from("Pneumonia"))]),
            ingredient: BTreeMap::from([(String::from("ING-1"), String::from("Estrogen"))]),
            ccs: BTreeMap::from([(String::from("CCS-1"), String::from("DME and supplies"))]),
        }
    }

    fn sample(cont: Vec<f64>, cat: Vec<u8>) -> LabeledSample {
        LabeledSample {
            patient_id: PatientId::from("x"),
            index_date: Date::from_days(0),
            continuous: cont,
            categorical: cat,
            label: Label::Case,
        }
    }

    #[test]
    fn serialization_matches_the_frozen_template() {
        let text = concat_serialize(
            &sample(vec![70.0], vec![1, 1, 1]),
            &tiny_schema(),
            &named_descriptions(),
        )
        .unwrap();
        assert_eq!(
            text,
            "The patient's age: 70. Diagnoses: Pneumonia. Medications: Estrogen. Orders: DME and supplies."
        );
    }

    #[test]
    fn inactive_sections_render_none() {
        let text = concat_serialize(
            &sample(vec![69.5], vec![0, 0, 0]),
            &tiny_schema(),
            &named_descriptions(),
        )
        .unwrap();
        assert_eq!(text, "The patient's age: 69.5. Diagnoses: none. Medications: none. Orders: none.");
    }

    #[test]
    fn serialization_is_deterministic() {
        let s = sample(vec![70.0], vec![1, 0, 1]);
        let a = concat_serialize(&s, &tiny_schema(), &named_descriptions()).unwrap();
        let b = concat_serialize(&s, &tiny_schema(), &named_descriptions()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_description_is_an_error() {
        let mut descriptions = named_descriptions();
        descriptions.phecode.clear();
        let err = concat_serialize(&sample(vec![1.0], vec![1, 0, 0]), &tiny_schema(), &descriptions)
            .unwrap_err();
        assert!(matches!(err, IclError::MissingDescription { space: CodeSpace::Phecode, .. }));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let err = concat_serialize(&sample(vec![], vec![1, 0, 0]), &tiny_schema(), &named_descriptions())
            .unwrap_err();
        assert_eq!(err, IclError::SchemaMismatch);
    }

    #[test]
    fn number_rendering_conventions() {
        assert_eq!(render_number(70.0), "70");
        assert_eq!(render_number(0.0), "0");
        assert_eq!(render_number(-0.0), "0");
        assert_eq!(render_number(3.5), "3.5");
        assert_eq!(render_number(3.456), "3.46");
        assert_eq!(render_number(0.05), "0.05");
        assert_eq!(render_number(-2.5), "-2.5");
        assert_eq!(render_number(120.25), "120.25");
    }

    #[test]
    fn summary_prompt_contains_the_record_verbatim() {
        let record = "The patient's age: 70. Diagnoses: none. Medications: none. Orders: none.";
        let prompt = build_summary_prompt(record);
        assert!(prompt.contains(record));
        assert!(prompt.starts_with("You are an expert medical professional. Please summarize"));
        assert!(prompt.ends_with("\nSummary: "));
    }

    #[test]
    fn single_demo_prompt_matches_the_frozen_shape() {
        let prompt = build_icl_prompt(&[("A", Label::Case)], "Q");
        let expected = alloc::format!(
            "{ICL_HEADER}Patient record: A\nRisk of ADRD: Yes\nPatient record: Q\nRisk of ADRD:"
        );
        assert_eq!(prompt, expected);
    }

    #[test]
    fn prompt_grows_with_each_demonstration() {
        let one = build_icl_prompt(&[("A", Label::Case)], "Q");
        let two = build_icl_prompt(&[("A", Label::Case), ("B", Label::Control)], "Q");
        assert!(two.len() > one.len());
        assert!(two.contains("Risk of ADRD: No\n"));
    }

    #[test]
    fn custom_templates_substitute_at_the_markers() {
        assert_eq!(build_summary_prompt_with("Condense: {record} ->", "R"), "Condense: R ->");
        let icl = build_icl_prompt_with("H\n", &[("A", Label::Control)], "Q");
        assert_eq!(icl, "H\nPatient record: A\nRisk of ADRD: No\nPatient record: Q\nRisk of ADRD:");
        let defaults = PromptTemplates::default();
        assert_eq!(defaults.summary, SUMMARY_TEMPLATE);
        assert_eq!(defaults.icl_header, ICL_HEADER);
    }

    #[test]
    fn summarize_round_trips_through_the_mock() {
        let record = "The patient's age: 70. Diagnoses: none. Medications: none. Orders: none.";
        let summary = summarize(&MockBackend, record).unwrap();
        assert_eq!(summary, record);
    }

    #[test]
    fn answer_parsing_covers_the_contract() {
        assert_eq!(parse_label("Yes, the patient is at risk."), Some(Label::Case));
        assert_eq!(parse_label("No."), Some(Label::Control));
        assert_eq!(parse_label("  yes"), Some(Label::Case));
        assert_eq!(parse_label("The answer is NO"), Some(Label::Control));
        assert_eq!(parse_label("Uncertain."), None);
        assert_eq!(parse_label(""), None);
        // Only the first line counts.
        assert_eq!(parse_label("Unclear.\nYes on reflection."), None);
        // First decisive token wins.
        assert_eq!(parse_label("Yes or no? Yes."), Some(Label::Case));
    }
}
