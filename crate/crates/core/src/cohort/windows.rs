//! Prediction-window truncation: pushes every member's usable history back
//! `pw` years from their index date and drops members whose remaining
//! observation span is too short.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CohortError, MatchedCohort};
use crate::date::Date;
use crate::patient::{PatientId, RawPatient};

pub const DAYS_PER_YEAR: i32 = 365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "matched_case")]
pub enum Role {
    Case,
    Control(PatientId),
}

/// One cohort member with history truncated to its prediction window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedMember {
    pub patient_id: PatientId,
    pub role: Role,
    pub index_date: Date,
    /// Exclusive upper bound on usable encounter dates:
    /// `index_date - pw_years * 365`.
    pub window_start: Date,
    pub patient: RawPatient,
}

impl WindowedMember {
    pub fn is_case(&self) -> bool {
        matches!(self.role, Role::Case)
    }
}

/// Applies a `pw_years` prediction window to a matched cohort.
///
/// Each member keeps only encounters strictly before
/// `index_date - pw_years * 365` days. Members whose observation span (first
/// encounter to window start) falls below `min_observation_years * 365` days
/// are dropped; dropping a case drops its matched controls with it.
pub fn derive_windows(
    cohort: &MatchedCohort,
    patients: &BTreeMap<PatientId, RawPatient>,
    pw_years: u32,
    min_observation_years: f64,
) -> Result<Vec<WindowedMember>, CohortError> {
    let min_days = min_observation_years * DAYS_PER_YEAR as f64;

    let build = |id: &PatientId, role: Role, index_date: Date| -> Result<Option<WindowedMember>, CohortError> {
        let patient = patients
            .get(id)
            .ok_or_else(|| CohortError::UnknownPatient(id.clone()))?;
        let window_start = index_date.plus_days(-(pw_years as i32 * DAYS_PER_YEAR));
        let Some(first) = patient.first_encounter_date() else {
            return Ok(None);
        };
        let span_days = window_start.days_since(first);
        if (span_days as f64) < min_days {
            return Ok(None);
        }
        Ok(Some(WindowedMember {
            patient_id: id.clone(),
            role,
            index_date,
            window_start,
            patient: patient.truncated_before(window_start),
        }))
    };

    let mut members = Vec::new();
    for case in &cohort.members {
        let Some(windowed_case) = build(&case.case_id, Role::Case, case.case_index_date)? else {
            continue; // case dropped: its controls go with it
        };
        members.push(windowed_case);
        for control in &case.controls {
            if let Some(windowed) = build(
                &control.patient_id,
                Role::Control(case.case_id.clone()),
                control.index_date,
            )? {
                members.push(windowed);
            }
        }
    }
    Ok(members)
}
