//! Control eligibility screening and comorbidity summaries.

use alloc::collections::{BTreeMap, BTreeSet};

use crate::date::Date;
use crate::patient::{PatientId, RawPatient};
use crate::schema::{CodeMaps, CodeSpace};

/// Birth dates may differ by at most this many days in either direction.
pub const BIRTH_WINDOW_DAYS: i32 = 365;
/// A candidate needs an encounter within this many days after the case's
/// index date.
pub const INDEX_WINDOW_DAYS: i32 = 183;

/// Screens the control pool for one case.
///
/// A pool member is eligible when born within [`BIRTH_WINDOW_DAYS`] of the
/// case and having at least one encounter in the closed window
/// `[case_index, case_index + INDEX_WINDOW_DAYS]`. The returned map carries
/// each eligible candidate's control index date: its earliest encounter in
/// that window.
pub fn find_eligible_controls(
    case_birth: Date,
    case_index: Date,
    pool: &BTreeSet<PatientId>,
    patients: &BTreeMap<PatientId, RawPatient>,
) -> BTreeMap<PatientId, Date> {
    let mut eligible = BTreeMap::new();
    for id in pool {
        let Some(candidate) = patients.get(id) else {
            continue;
        };
        if (candidate.birth_date.days_since(case_birth)).abs() > BIRTH_WINDOW_DAYS {
            continue;
        }
        let window_end = case_index.plus_days(INDEX_WINDOW_DAYS);
        let first_in_window = candidate
            .encounters
            .iter()
            .map(|e| e.date)
            .find(|d| *d >= case_index && *d <= window_end);
        if let Some(date) = first_in_window {
            eligible.insert(id.clone(), date);
        }
    }
    eligible
}

/// Comorbidity burden as of a date: (distinct mapped diagnosis groups,
/// encounter count), both over encounters dated up to and including `as_of`.
pub fn comorbidity_features(patient: &RawPatient, as_of: Date, maps: &CodeMaps) -> [f64; 2] {
    let mut phecodes: BTreeSet<&str> = BTreeSet::new();
    let mut encounters = 0_usize;
    for enc in &patient.encounters {
        if enc.date > as_of {
            break;
        }
        encounters += 1;
        for code in &enc.icd_codes {
            if let Some(target) = maps.map(CodeSpace::Phecode, code) {
                phecodes.insert(target);
            }
        }
    }
    [phecodes.len() as f64, encounters as f64]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::index_patients;
    use crate::patient::Encounter;
    use alloc::string::ToString;
    use alloc::vec::Vec;

    fn patient(id: &str, birth: Date, encounter_days: &[i32]) -> RawPatient {
        RawPatient {
            patient_id: PatientId::from(id),
            birth_date: birth,
            encounters: encounter_days
                .iter()
                .map(|&d| Encounter::at(Date::from_days(d)))
                .collect(),
        }
    }

    #[test]
    fn birth_and_index_windows() {
        let case_birth = Date::from_ymd(1940, 1, 1).unwrap();
        let case_index = Date::from_days(16000);
        let patients = index_patients(alloc::vec![
            // Same birth day, encounter 30 days after index: eligible.
            patient("close", case_birth, &[16030]),
            // Born exactly 365 days earlier: still inside the window.
            patient("edge", case_birth.plus_days(-365), &[16030]),
            // Born 400 days earlier: out.
            patient("early_birth", case_birth.plus_days(-400), &[16030]),
            // Encounters only before the index date: out.
            patient("history_only", case_birth, &[15000, 15999]),
            // Encounter exactly at the window end: in.
            patient("window_end", case_birth, &[16000 + INDEX_WINDOW_DAYS]),
            // Encounter one day past the window: out.
            patient("too_late", case_birth, &[16000 + INDEX_WINDOW_DAYS + 1]),
        ]);
        let pool: BTreeSet<PatientId> = patients.keys().cloned().collect();
        let eligible = find_eligible_controls(case_birth, case_index, &pool, &patients);

        let ids: Vec<&str> = eligible.keys().map(|p| p.as_str()).collect();
        assert_eq!(ids, ["close", "edge", "window_end"]);
        // Control index date is the earliest in-window encounter.
        assert_eq!(eligible[&PatientId::from("close")], Date::from_days(16030));
    }

    #[test]
    fn control_index_is_first_in_window_not_first_overall() {
        let birth = Date::from_ymd(1940, 1, 1).unwrap();
        let patients = index_patients(alloc::vec![patient("c", birth, &[15900, 16010, 16020])]);
        let pool: BTreeSet<PatientId> = patients.keys().cloned().collect();
        let eligible = find_eligible_controls(birth, Date::from_days(16000), &pool, &patients);
        assert_eq!(eligible[&PatientId::from("c")], Date::from_days(16010));
    }

    #[test]
    fn comorbidity_counts_distinct_groups_and_encounters() {
        let mut maps = CodeMaps::default();
        maps.icd_to_phecode.insert("J18.9".to_string(), "480".to_string());
        maps.icd_to_phecode.insert("J18.0".to_string(), "480".to_string());
        maps.icd_to_phecode.insert("I10".to_string(), "401".to_string());

        let birth = Date::from_ymd(1940, 1, 1).unwrap();
        let mut p = patient("p", birth, &[]);
        for (day, code) in [(100, "J18.9"), (200, "J18.0"), (300, "I10")] {
            let mut e = Encounter::at(Date::from_days(day));
            e.icd_codes.insert(code.to_string());
            p.encounters.push(e);
        }

        // Three encounters carrying groups {480, 480, 401}.
        assert_eq!(comorbidity_features(&p, Date::from_days(300), &maps), [2.0, 3.0]);
        // As-of before every encounter.
        assert_eq!(comorbidity_features(&p, Date::from_days(50), &maps), [0.0, 0.0]);
        // Boundary: the as-of day itself counts.
        assert_eq!(comorbidity_features(&p, Date::from_days(200), &maps), [1.0, 2.0]);

        // Uncoded encounters still count toward the encounter total.
        let bare = patient("bare", birth, &[10, 20]);
        assert_eq!(comorbidity_features(&bare, Date::from_days(30), &maps), [0.0, 2.0]);
    }
}
