//! Structural validation of raw patient datasets against a schema and code
//! maps. Everything downstream assumes a clean report.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::patient::{PatientId, RawPatient};
use crate::schema::{CodeMaps, CodeSpace, FeatureCategory, FeatureSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ViolationKind {
    DuplicatePatientId,
    EncountersOutOfOrder,
    EncounterBeforeBirth,
    EmptyCode { stream: CodeSpace },
    UnmappedCode { stream: CodeSpace, code: String },
    UnknownMeasurement { name: String },
    MiscategorizedMeasurement { name: String },
    NonFiniteMeasurement { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub patient_id: PatientId,
    /// Index into the patient's encounter list, when the violation is local
    /// to one encounter.
    pub encounter: Option<usize>,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "patient {}", self.patient_id)?;
        if let Some(i) = self.encounter {
            write!(f, " encounter {i}")?;
        }
        match &self.kind {
            ViolationKind::DuplicatePatientId => write!(f, ": duplicate patient id"),
            ViolationKind::EncountersOutOfOrder => write!(f, ": encounters out of date order"),
            ViolationKind::EncounterBeforeBirth => write!(f, ": encounter precedes birth date"),
            ViolationKind::EmptyCode { stream } => write!(f, ": empty {stream} source code"),
            ViolationKind::UnmappedCode { stream, code } => {
                write!(f, ": code {code:?} has no {stream} mapping")
            }
            ViolationKind::UnknownMeasurement { name } => {
                write!(f, ": measurement {name:?} is not in the schema")
            }
            ViolationKind::MiscategorizedMeasurement { name } => {
                write!(f, ": measurement {name:?} recorded under the wrong stream")
            }
            ViolationKind::NonFiniteMeasurement { name } => {
                write!(f, ": measurement {name:?} is not finite")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every patient against the schema and translation maps. Pure; the
/// report lists all violations rather than stopping at the first.
pub fn validate_dataset(
    patients: &[RawPatient],
    schema: &FeatureSchema,
    maps: &CodeMaps,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen_ids: BTreeSet<&PatientId> = BTreeSet::new();

    for patient in patients {
        let mut push = |encounter: Option<usize>, kind: ViolationKind| {
            violations.push(Violation {
                patient_id: patient.patient_id.clone(),
                encounter,
                kind,
            });
        };

        if !seen_ids.insert(&patient.patient_id) {
            push(None, ViolationKind::DuplicatePatientId);
        }
        if patient
            .encounters
            .windows(2)
            .any(|w| w[0].date > w[1].date)
        {
            push(None, ViolationKind::EncountersOutOfOrder);
        }

        for (i, enc) in patient.encounters.iter().enumerate() {
            if enc.date < patient.birth_date {
                push(Some(i), ViolationKind::EncounterBeforeBirth);
            }
            let streams = [
                (CodeSpace::Phecode, &enc.icd_codes),
                (CodeSpace::Ingredient, &enc.rxnorm_codes),
                (CodeSpace::Ccs, &enc.cpt_codes),
            ];
            for (stream, codes) in streams {
                for code in codes {
                    if code.is_empty() {
                        push(Some(i), ViolationKind::EmptyCode { stream });
                    } else if maps.map(stream, code).is_none() {
                        push(
                            Some(i),
                            ViolationKind::UnmappedCode {
                                stream,
                                code: code.clone(),
                            },
                        );
                    }
                }
            }
            let measurements = [
                (FeatureCategory::Vital, &enc.vitals),
                (FeatureCategory::Lab, &enc.labs),
            ];
            for (expected, table) in measurements {
                for (name, value) in table {
                    match schema.continuous_index(name) {
                        None => push(
                            Some(i),
                            ViolationKind::UnknownMeasurement { name: name.clone() },
                        ),
                        Some(idx) if schema.continuous()[idx].category != expected => push(
                            Some(i),
                            ViolationKind::MiscategorizedMeasurement { name: name.clone() },
                        ),
                        Some(_) => {}
                    }
                    if !value.is_finite() {
                        push(
                            Some(i),
                            ViolationKind::NonFiniteMeasurement { name: name.clone() },
                        );
                    }
                }
            }
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use crate::patient::Encounter;
    use crate::schema::ContinuousFeature;
    use alloc::string::ToString;

    fn schema_and_maps() -> (FeatureSchema, CodeMaps) {
        let mut maps = CodeMaps::default();
        maps.icd_to_phecode.insert("J18.9".to_string(), "480".to_string());
        maps.rxnorm_to_ingredient.insert("r1".to_string(), "ing".to_string());
        maps.cpt_to_ccs.insert("c1".to_string(), "ccs".to_string());
        let schema = FeatureSchema::from_maps(
            alloc::vec![
                ContinuousFeature {
                    name: "sbp".to_string(),
                    unit: "mmHg".to_string(),
                    category: FeatureCategory::Vital,
                },
                ContinuousFeature {
                    name: "glucose".to_string(),
                    unit: "mg/dL".to_string(),
                    category: FeatureCategory::Lab,
                },
            ],
            &maps,
        )
        .unwrap();
        (schema, maps)
    }

    fn patient(id: &str) -> RawPatient {
        RawPatient {
            patient_id: PatientId::from(id),
            birth_date: Date::from_ymd(1940, 1, 1).unwrap(),
            encounters: alloc::vec![],
        }
    }

    #[test]
    fn clean_dataset_gives_empty_report() {
        let (schema, maps) = schema_and_maps();
        let mut p = patient("p1");
        let mut e = Encounter::at(Date::from_ymd(2010, 1, 1).unwrap());
        e.icd_codes.insert("J18.9".to_string());
        e.vitals.insert("sbp".to_string(), 121.0);
        e.labs.insert("glucose".to_string(), 97.0);
        p.encounters.push(e);
        let report = validate_dataset(&[p], &schema, &maps);
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn catches_each_violation_class() {
        let (schema, maps) = schema_and_maps();

        let mut disordered = patient("p1");
        disordered.encounters = alloc::vec![
            Encounter::at(Date::from_ymd(2011, 1, 1).unwrap()),
            Encounter::at(Date::from_ymd(2010, 1, 1).unwrap()),
        ];

        let mut bad_codes = patient("p2");
        let mut e = Encounter::at(Date::from_ymd(1930, 1, 1).unwrap());
        e.icd_codes.insert(String::new());
        e.rxnorm_codes.insert("mystery".to_string());
        e.vitals.insert("glucose".to_string(), 90.0);
        e.labs.insert("ldl".to_string(), f64::NAN);
        bad_codes.encounters.push(e);

        let dup = patient("p1");

        let report = validate_dataset(&[disordered, bad_codes, dup], &schema, &maps);
        let kinds: Vec<_> = report.violations.iter().map(|v| &v.kind).collect();
        assert!(kinds.iter().any(|k| matches!(k, ViolationKind::EncountersOutOfOrder)));
        assert!(kinds.iter().any(|k| matches!(k, ViolationKind::EncounterBeforeBirth)));
        assert!(kinds.iter().any(|k| matches!(k, ViolationKind::EmptyCode { .. })));
        assert!(kinds
            .iter()
            .any(|k| matches!(k, ViolationKind::UnmappedCode { code, .. } if code == "mystery")));
        assert!(kinds.iter().any(
            |k| matches!(k, ViolationKind::MiscategorizedMeasurement { name } if name == "glucose")
        ));
        assert!(kinds
            .iter()
            .any(|k| matches!(k, ViolationKind::UnknownMeasurement { name } if name == "ldl")));
        assert!(kinds
            .iter()
            .any(|k| matches!(k, ViolationKind::NonFiniteMeasurement { name } if name == "ldl")));
        assert!(kinds.iter().any(|k| matches!(k, ViolationKind::DuplicatePatientId)));
    }
}
