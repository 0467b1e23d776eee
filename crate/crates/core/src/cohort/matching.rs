//! Optimal control matching: propensity gaps as assignment costs, each case
//! replicated into `ratio` slots, solved exactly so no control is reused.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::assignment::{assignment_cost, solve_assignment};
use super::{
    comorbidity_features, find_eligible_controls, fit_propensity, CaseLabeling, CohortError,
    GdSettings, MatchedCase, MatchedCohort, MatchedControl,
};
use crate::date::Date;
use crate::patient::{PatientId, RawPatient};
use crate::schema::CodeMaps;

/// Matches `ratio` distinct controls to every case by minimum total
/// |propensity gap|, ineligible pairs forbidden, ties toward lower candidate
/// ids. Candidates eligible for several cases are scored at their earliest
/// candidate index date.
pub fn match_controls(
    patients: &BTreeMap<PatientId, RawPatient>,
    labeling: &CaseLabeling,
    maps: &CodeMaps,
    ratio: u32,
    gd: GdSettings,
) -> Result<MatchedCohort, CohortError> {
    if ratio == 0 {
        return Err(CohortError::InvalidRatio);
    }
    if labeling.cases.is_empty() {
        return Err(CohortError::NoCases);
    }

    // Per-case eligibility, cases in id order.
    let mut case_ids: Vec<&PatientId> = Vec::with_capacity(labeling.cases.len());
    let mut eligibility: Vec<BTreeMap<PatientId, Date>> = Vec::with_capacity(labeling.cases.len());
    for (case_id, &index_date) in &labeling.cases {
        let case = patients
            .get(case_id)
            .ok_or_else(|| CohortError::UnknownPatient(case_id.clone()))?;
        let eligible =
            find_eligible_controls(case.birth_date, index_date, &labeling.control_pool, patients);
        if eligible.len() < ratio as usize {
            return Err(CohortError::InsufficientCandidates {
                case: case_id.clone(),
                eligible: eligible.len(),
                needed: ratio as usize,
            });
        }
        case_ids.push(case_id);
        eligibility.push(eligible);
    }

    // Union candidate pool in id order; each candidate's scoring date is its
    // earliest eligibility date across cases.
    let mut candidate_dates: BTreeMap<&PatientId, Date> = BTreeMap::new();
    for eligible in &eligibility {
        for (id, &date) in eligible {
            let id_ref = labeling.control_pool.get(id).expect("candidate came from pool");
            candidate_dates
                .entry(id_ref)
                .and_modify(|d| *d = (*d).min(date))
                .or_insert(date);
        }
    }
    let candidates: Vec<&PatientId> = candidate_dates.keys().copied().collect();
    let candidate_col: BTreeMap<&PatientId, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();

    // One propensity model over cases and candidates together.
    let mut rows: Vec<(Vec<f64>, bool)> = Vec::with_capacity(case_ids.len() + candidates.len());
    for (case_id, &index_date) in &labeling.cases {
        let features = comorbidity_features(&patients[case_id], index_date, maps);
        rows.push((features.to_vec(), true));
    }
    for id in &candidates {
        let features = comorbidity_features(&patients[*id], candidate_dates[*id], maps);
        rows.push((features.to_vec(), false));
    }
    let fit = fit_propensity(&rows, gd)?;
    let case_scores: Vec<f64> = rows[..case_ids.len()]
        .iter()
        .map(|(f, _)| fit.score(f))
        .collect();
    let candidate_scores: Vec<f64> = rows[case_ids.len()..]
        .iter()
        .map(|(f, _)| fit.score(f))
        .collect();

    // Slot-replicated cost matrix: slots are case-major, so slot s belongs to
    // case s / ratio.
    let n_slots = case_ids.len() * ratio as usize;
    let n_cols = candidates.len();
    if n_slots > n_cols {
        return Err(CohortError::InfeasibleAssignment);
    }
    let mut cost = alloc::vec![f64::INFINITY; n_slots * n_cols];
    for (case_idx, eligible) in eligibility.iter().enumerate() {
        for (id, _) in eligible {
            let col = candidate_col[id];
            let gap = (case_scores[case_idx] - candidate_scores[col]).abs();
            for slot in 0..ratio as usize {
                cost[(case_idx * ratio as usize + slot) * n_cols + col] = gap;
            }
        }
    }

    let assignment = solve_assignment(&cost, n_slots, n_cols)?;
    let total_gap = assignment_cost(&cost, n_cols, &assignment);

    let mut members = Vec::with_capacity(case_ids.len());
    for (case_idx, case_id) in case_ids.iter().enumerate() {
        let mut controls: Vec<MatchedControl> = (0..ratio as usize)
            .map(|slot| {
                let col = assignment[case_idx * ratio as usize + slot];
                let id = candidates[col].clone();
                let index_date = eligibility[case_idx][&id];
                MatchedControl {
                    patient_id: id,
                    index_date,
                }
            })
            .collect();
        controls.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        members.push(MatchedCase {
            case_id: (*case_id).clone(),
            case_index_date: labeling.cases[*case_id],
            controls,
        });
    }

    Ok(MatchedCohort {
        ratio,
        members,
        total_gap,
    })
}
