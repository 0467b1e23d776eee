//! Case-definition labeling: splits a dataset into cases (with index dates),
//! the control candidate pool, and excluded patients.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CohortError, CpRule};
use crate::date::Date;
use crate::patient::{PatientId, RawPatient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabeling {
    /// Case id -> index date (earliest qualifying diagnosis or prescription).
    pub cases: BTreeMap<PatientId, Date>,
    pub control_pool: BTreeSet<PatientId>,
    pub excluded: BTreeSet<PatientId>,
}

/// Applies a case-definition rule to every patient.
///
/// A patient is a case when at least `min_diagnosis_encounters` encounters
/// carry a qualifying diagnosis code, or any encounter carries a qualifying
/// medication. Non-cases carrying any qualifying diagnosis, qualifying
/// medication, or configured exclusion code are excluded from the pool.
pub fn label_cases(
    patients: &BTreeMap<PatientId, RawPatient>,
    rule: &CpRule,
) -> Result<CaseLabeling, CohortError> {
    if patients.is_empty() {
        return Err(CohortError::EmptyInput);
    }

    let mut cases = BTreeMap::new();
    let mut control_pool = BTreeSet::new();
    let mut excluded = BTreeSet::new();

    for (id, patient) in patients {
        let mut diagnosis_dates: Vec<Date> = Vec::new();
        let mut medication_date: Option<Date> = None;
        let mut carries_exclusion = false;

        for enc in &patient.encounters {
            if enc.icd_codes.iter().any(|c| rule.adrd_code_set.contains(c)) {
                diagnosis_dates.push(enc.date);
            }
            if medication_date.is_none()
                && enc
                    .rxnorm_codes
                    .iter()
                    .any(|c| rule.adrd_medication_set.contains(c))
            {
                medication_date = Some(enc.date);
            }
            if enc
                .icd_codes
                .iter()
                .any(|c| rule.exclusion_code_set.contains(c))
            {
                carries_exclusion = true;
            }
        }

        let qualifies = diagnosis_dates.len() >= rule.min_diagnosis_encounters as usize
            || medication_date.is_some();
        if qualifies {
            let first_diagnosis = diagnosis_dates.first().copied();
            let index = match (first_diagnosis, medication_date) {
                (Some(d), Some(m)) => d.min(m),
                (Some(d), None) => d,
                (None, Some(m)) => m,
                (None, None) => unreachable!("qualifying patient has a qualifying date"),
            };
            cases.insert(id.clone(), index);
        } else if !diagnosis_dates.is_empty() || medication_date.is_some() || carries_exclusion {
            excluded.insert(id.clone());
        } else {
            control_pool.insert(id.clone());
        }
    }

    Ok(CaseLabeling {
        cases,
        control_pool,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::index_patients;
    use crate::patient::Encounter;
    use alloc::string::ToString;

    fn rule(min_dx: u32) -> CpRule {
        let mut r = CpRule::new(
            min_dx,
            ["G30.9".to_string()].into_iter().collect(),
            ["donepezil".to_string()].into_iter().collect(),
        );
        r.exclusion_code_set.insert("G20".to_string());
        r
    }

    fn patient_with(id: &str, encounters: Vec<Encounter>) -> RawPatient {
        RawPatient {
            patient_id: PatientId::from(id),
            birth_date: Date::from_ymd(1940, 1, 1).unwrap(),
            encounters,
        }
    }

    fn coded(date: Date, icd: &str) -> Encounter {
        let mut e = Encounter::at(date);
        e.icd_codes.insert(icd.to_string());
        e
    }

    #[test]
    fn single_coded_encounter_is_case_under_min_one() {
        let d = Date::from_ymd(2015, 3, 1).unwrap();
        let patients = index_patients(alloc::vec![patient_with("p1", alloc::vec![coded(d, "G30.9")])]);
        let labeling = label_cases(&patients, &rule(1)).unwrap();
        assert_eq!(labeling.cases.get(&PatientId::from("p1")), Some(&d));
    }

    #[test]
    fn single_coded_encounter_is_excluded_under_min_two() {
        let d = Date::from_ymd(2015, 3, 1).unwrap();
        let patients = index_patients(alloc::vec![patient_with("p1", alloc::vec![coded(d, "G30.9")])]);
        let labeling = label_cases(&patients, &rule(2)).unwrap();
        assert!(labeling.cases.is_empty());
        assert!(labeling.excluded.contains(&PatientId::from("p1")));
    }

    #[test]
    fn medication_alone_makes_a_case_with_prescription_index() {
        let d1 = Date::from_ymd(2014, 1, 1).unwrap();
        let d2 = Date::from_ymd(2014, 6, 1).unwrap();
        let mut e2 = Encounter::at(d2);
        e2.rxnorm_codes.insert("donepezil".to_string());
        let patients =
            index_patients(alloc::vec![patient_with("p1", alloc::vec![Encounter::at(d1), e2])]);
        let labeling = label_cases(&patients, &rule(2)).unwrap();
        assert_eq!(labeling.cases.get(&PatientId::from("p1")), Some(&d2));
    }

    #[test]
    fn index_is_earliest_qualifying_event() {
        let dx1 = Date::from_ymd(2013, 1, 1).unwrap();
        let dx2 = Date::from_ymd(2013, 9, 1).unwrap();
        let med = Date::from_ymd(2013, 5, 1).unwrap();
        let mut med_enc = Encounter::at(med);
        med_enc.rxnorm_codes.insert("donepezil".to_string());
        let patients = index_patients(alloc::vec![patient_with(
            "p1",
            alloc::vec![coded(dx1, "G30.9"), med_enc, coded(dx2, "G30.9")],
        )]);
        // Two diagnosis encounters satisfy min 2; earliest qualifying event
        // is still the first diagnosis, before the prescription.
        let labeling = label_cases(&patients, &rule(2)).unwrap();
        assert_eq!(labeling.cases.get(&PatientId::from("p1")), Some(&dx1));
    }

    #[test]
    fn exclusion_codes_and_clean_controls() {
        let d = Date::from_ymd(2012, 1, 1).unwrap();
        let patients = index_patients(alloc::vec![
            patient_with("park", alloc::vec![coded(d, "G20")]),
            patient_with("clean", alloc::vec![coded(d, "J18.9")]),
        ]);
        let labeling = label_cases(&patients, &rule(1)).unwrap();
        assert!(labeling.excluded.contains(&PatientId::from("park")));
        assert!(labeling.control_pool.contains(&PatientId::from("clean")));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(
            label_cases(&BTreeMap::new(), &rule(1)).unwrap_err(),
            CohortError::EmptyInput
        );
    }
}
