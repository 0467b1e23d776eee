//! Retrospective case/control cohort construction: case-definition labeling,
//! eligibility screening, propensity fitting, optimal control matching, and
//! prediction-window truncation.

mod assignment;
mod eligibility;
mod label;
mod matching;
mod propensity;
mod windows;

pub use assignment::solve_assignment;
pub use eligibility::{comorbidity_features, find_eligible_controls};
pub use label::{label_cases, CaseLabeling};
pub use matching::match_controls;
pub use propensity::{fit_propensity, GdSettings, PropensityFit};
pub use windows::{derive_windows, Role, WindowedMember};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::date::Date;
use crate::patient::{PatientId, RawPatient};

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("empty patient list")]
    EmptyInput,
    #[error("case definition matched no patients")]
    NoCases,
    #[error("control ratio must be at least 1")]
    InvalidRatio,
    #[error("case {case} has {eligible} eligible candidates, needs {needed}")]
    InsufficientCandidates {
        case: PatientId,
        eligible: usize,
        needed: usize,
    },
    #[error("no feasible assignment of distinct controls to case slots")]
    InfeasibleAssignment,
    #[error("patient {0} referenced by the cohort is missing from the dataset")]
    UnknownPatient(PatientId),
    #[error("propensity features must be finite")]
    NonFiniteFeatures,
}

/// Case-definition rule: how many diagnosis-coded encounters make a case,
/// which codes count, which medications independently make a case, and which
/// extra codes disqualify a patient from the control pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpRule {
    pub min_diagnosis_encounters: u32,
    pub adrd_code_set: BTreeSet<String>,
    pub adrd_medication_set: BTreeSet<String>,
    #[serde(default)]
    pub exclusion_code_set: BTreeSet<String>,
}

impl CpRule {
    pub fn new(
        min_diagnosis_encounters: u32,
        adrd_code_set: BTreeSet<String>,
        adrd_medication_set: BTreeSet<String>,
    ) -> Self {
        CpRule {
            min_diagnosis_encounters,
            adrd_code_set,
            adrd_medication_set,
            exclusion_code_set: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedControl {
    pub patient_id: PatientId,
    /// Earliest qualifying encounter date inside this case's eligibility
    /// window; the control's clock starts here.
    pub index_date: Date,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedCase {
    pub case_id: PatientId,
    pub case_index_date: Date,
    pub controls: Vec<MatchedControl>,
}

/// Result of control matching: one entry per case, each with exactly `ratio`
/// distinct controls; no control appears under two cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedCohort {
    pub ratio: u32,
    pub members: Vec<MatchedCase>,
    /// Total |propensity gap| of the optimal assignment, kept for diagnostics.
    pub total_gap: f64,
}

impl MatchedCohort {
    pub fn n_cases(&self) -> usize {
        self.members.len()
    }

    pub fn n_controls(&self) -> usize {
        self.members.iter().map(|m| m.controls.len()).sum()
    }
}

/// Builds the patient lookup the cohort functions operate on.
pub fn index_patients(patients: Vec<RawPatient>) -> BTreeMap<PatientId, RawPatient> {
    patients
        .into_iter()
        .map(|p| (p.patient_id.clone(), p))
        .collect()
}
