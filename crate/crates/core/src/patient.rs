//! Raw longitudinal patient records as they arrive from the source system.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::date::Date;

/// Opaque patient identifier; ordering is lexicographic and used wherever a
/// deterministic iteration order over patients is needed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn new(id: impl Into<String>) -> Self {
        PatientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl core::fmt::Display for PatientId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        PatientId(String::from(s))
    }
}

/// One dated visit: the billing codes recorded plus any vital and lab
/// measurements taken. Code sets are deduplicated by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub date: Date,
    #[serde(default)]
    pub icd_codes: BTreeSet<String>,
    #[serde(default)]
    pub rxnorm_codes: BTreeSet<String>,
    #[serde(default)]
    pub cpt_codes: BTreeSet<String>,
    #[serde(default)]
    pub vitals: BTreeMap<String, f64>,
    #[serde(default)]
    pub labs: BTreeMap<String, f64>,
}

impl Encounter {
    pub fn at(date: Date) -> Self {
        Encounter {
            date,
            icd_codes: BTreeSet::new(),
            rxnorm_codes: BTreeSet::new(),
            cpt_codes: BTreeSet::new(),
            vitals: BTreeMap::new(),
            labs: BTreeMap::new(),
        }
    }
}

/// A patient's full record: birth date plus encounters sorted ascending by
/// date (validation enforces the ordering; construction here does not sort).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPatient {
    pub patient_id: PatientId,
    pub birth_date: Date,
    pub encounters: Vec<Encounter>,
}

impl RawPatient {
    pub fn first_encounter_date(&self) -> Option<Date> {
        self.encounters.first().map(|e| e.date)
    }

    pub fn last_encounter_date(&self) -> Option<Date> {
        self.encounters.last().map(|e| e.date)
    }

    /// The record truncated to encounters strictly before `cutoff`.
    pub fn truncated_before(&self, cutoff: Date) -> RawPatient {
        RawPatient {
            patient_id: self.patient_id.clone(),
            birth_date: self.birth_date,
            encounters: self
                .encounters
                .iter()
                .filter(|e| e.date < cutoff)
                .cloned()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_is_strict() {
        let d = |days| Date::from_days(days);
        let p = RawPatient {
            patient_id: PatientId::from("p1"),
            birth_date: d(-10000),
            encounters: alloc::vec![Encounter::at(d(0)), Encounter::at(d(100)), Encounter::at(d(200))],
        };
        let t = p.truncated_before(d(100));
        assert_eq!(t.encounters.len(), 1);
        assert_eq!(t.encounters[0].date, d(0));
        assert_eq!(t.first_encounter_date(), Some(d(0)));
    }
}
