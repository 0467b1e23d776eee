//! Feature preprocessing fitted on training members only: patient-level
//! aggregation, lab missingness filtering, outlier nulling, median
//! imputation, code decoding, and vectorization.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Role, WindowedMember};
use crate::patient::RawPatient;
use crate::sample::{Label, LabeledSample};
use crate::schema::{CodeMaps, CodeSpace, FeatureCategory, FeatureSchema};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("feature {0:?} has no observed training values")]
    NoObservedValues(String),
    #[error("code {code:?} has no {space} mapping")]
    UnmappedCode { space: CodeSpace, code: String },
}

/// Per-feature training statistics, aligned with the filtered schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation of the observed patient aggregates.
    pub std: f64,
    pub median: f64,
    /// Fraction of training patients with no recorded value.
    pub missing_fraction: f64,
}

/// Everything needed to turn a raw record into a dense vector: the filtered
/// schema (sparse labs removed) plus per-feature statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub schema: FeatureSchema,
    pub stats: Vec<FeatureStats>,
    pub n_train_patients: usize,
    /// Labs removed for exceeding the missingness cap, with their observed
    /// missing fraction.
    pub dropped_labs: Vec<(String, f64)>,
}

/// Labs missing for strictly more than this fraction of training patients
/// are dropped; a lab at exactly the cap stays.
pub const LAB_MISSINGNESS_CAP: f64 = 0.5;
/// Observed values farther than this many standard deviations from the
/// training mean are treated as missing.
pub const OUTLIER_SIGMA: f64 = 3.0;

/// Patient-level aggregate per schema feature: the mean of recorded values
/// across the patient's encounters, `None` when never recorded.
pub fn aggregate_patient(patient: &RawPatient, schema: &FeatureSchema) -> Vec<Option<f64>> {
    let mut sums = alloc::vec![0.0_f64; schema.continuous_width()];
    let mut counts = alloc::vec![0_usize; schema.continuous_width()];
    for enc in &patient.encounters {
        for (name, value) in enc.vitals.iter().chain(enc.labs.iter()) {
            if let Some(idx) = schema.continuous_index(name) {
                sums[idx] += value;
                counts[idx] += 1;
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Fits preprocessing statistics on training patients only.
///
/// Labs missing for more than [`LAB_MISSINGNESS_CAP`] of patients are dropped
/// from the schema (vitals are never dropped). Mean, population std, and
/// median are computed over the observed patient aggregates of each kept
/// feature.
pub fn fit_stats(
    patients: &[&RawPatient],
    schema: &FeatureSchema,
) -> Result<PreprocessStats, PreprocessError> {
    if patients.is_empty() {
        return Err(PreprocessError::EmptyTrainingSet);
    }
    let n = patients.len();
    let aggregates: Vec<Vec<Option<f64>>> = patients
        .iter()
        .map(|p| aggregate_patient(p, schema))
        .collect();

    let mut missing = alloc::vec![0.0_f64; schema.continuous_width()];
    for row in &aggregates {
        for (m, v) in missing.iter_mut().zip(row) {
            if v.is_none() {
                *m += 1.0 / n as f64;
            }
        }
    }

    let mut dropped_labs = Vec::new();
    let mut keep = alloc::vec![true; schema.continuous_width()];
    for (i, feature) in schema.continuous().iter().enumerate() {
        if feature.category == FeatureCategory::Lab && missing[i] > LAB_MISSINGNESS_CAP {
            keep[i] = false;
            dropped_labs.push((feature.name.clone(), missing[i]));
        }
    }
    let filtered = schema.retain_continuous(|f| {
        keep[schema.continuous_index(&f.name).expect("feature from schema")]
    });

    let mut stats = Vec::with_capacity(filtered.continuous_width());
    for feature in filtered.continuous() {
        let original_idx = schema.continuous_index(&feature.name).expect("kept feature");
        let mut observed: Vec<f64> = aggregates
            .iter()
            .filter_map(|row| row[original_idx])
            .collect();
        if observed.is_empty() {
            return Err(PreprocessError::NoObservedValues(feature.name.clone()));
        }
        observed.sort_by(f64::total_cmp);
        let count = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / count;
        let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        stats.push(FeatureStats {
            name: feature.name.clone(),
            mean,
            std: var.sqrt(),
            median: median_of(&observed),
            missing_fraction: missing[original_idx],
        });
    }

    Ok(PreprocessStats {
        schema: filtered,
        stats,
        n_train_patients: n,
        dropped_labs,
    })
}

/// Marks outliers missing in place: strictly beyond [`OUTLIER_SIGMA`]
/// standard deviations from the training mean, or any deviation at all when
/// the training std is zero. Values exactly at the boundary stay.
pub fn null_outliers(values: &mut [Option<f64>], stats: &PreprocessStats) {
    debug_assert_eq!(values.len(), stats.stats.len());
    for (slot, fs) in values.iter_mut().zip(&stats.stats) {
        if let Some(v) = *slot {
            let outlier = if fs.std > 0.0 {
                (v - fs.mean).abs() > OUTLIER_SIGMA * fs.std
            } else {
                v != fs.mean
            };
            if outlier {
                *slot = None;
            }
        }
    }
}

/// Replaces every missing entry with the training median.
pub fn impute(values: &[Option<f64>], stats: &PreprocessStats) -> Vec<f64> {
    debug_assert_eq!(values.len(), stats.stats.len());
    values
        .iter()
        .zip(&stats.stats)
        .map(|(v, fs)| v.unwrap_or(fs.median))
        .collect()
}

/// Distinct mapped target codes per space, over all the patient's encounters.
/// Unmapped source codes are an error (validation should have caught them).
pub fn decode_codes(
    patient: &RawPatient,
    maps: &CodeMaps,
) -> Result<[BTreeSet<String>; 3], PreprocessError> {
    let mut decoded: [BTreeSet<String>; 3] = Default::default();
    for enc in &patient.encounters {
        let streams = [
            (CodeSpace::Phecode, &enc.icd_codes, 0),
            (CodeSpace::Ingredient, &enc.rxnorm_codes, 1),
            (CodeSpace::Ccs, &enc.cpt_codes, 2),
        ];
        for (space, codes, slot) in streams {
            for code in codes {
                match maps.map(space, code) {
                    Some(target) => {
                        decoded[slot].insert(String::from(target));
                    }
                    None => {
                        return Err(PreprocessError::UnmappedCode {
                            space,
                            code: code.clone(),
                        })
                    }
                }
            }
        }
    }
    Ok(decoded)
}

/// Full vectorization of one patient record against fitted statistics:
/// aggregate, null outliers, impute, decode codes, one-hot.
pub fn vectorize(
    patient: &RawPatient,
    label: Label,
    index_date: crate::date::Date,
    stats: &PreprocessStats,
    maps: &CodeMaps,
) -> Result<LabeledSample, PreprocessError> {
    let mut values = aggregate_patient(patient, &stats.schema);
    null_outliers(&mut values, stats);
    let continuous = impute(&values, stats);

    let decoded = decode_codes(patient, maps)?;
    let mut categorical = alloc::vec![0_u8; stats.schema.categorical_width()];
    let spaces = [
        (CodeSpace::Phecode, &decoded[0]),
        (CodeSpace::Ingredient, &decoded[1]),
        (CodeSpace::Ccs, &decoded[2]),
    ];
    for (space, codes) in spaces {
        for code in codes {
            if let Some(idx) = stats.schema.categorical_index(space, code) {
                categorical[idx] = 1;
            }
        }
    }

    Ok(LabeledSample {
        patient_id: patient.patient_id.clone(),
        index_date,
        continuous,
        categorical,
        label,
    })
}

/// Vectorizes a windowed cohort member, labeling by role.
pub fn vectorize_member(
    member: &WindowedMember,
    stats: &PreprocessStats,
    maps: &CodeMaps,
) -> Result<LabeledSample, PreprocessError> {
    let label = match member.role {
        Role::Case => Label::Case,
        Role::Control(_) => Label::Control,
    };
    vectorize(&member.patient, label, member.index_date, stats, maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use crate::patient::{Encounter, PatientId};
    use crate::schema::ContinuousFeature;
    use alloc::string::ToString;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            alloc::vec![
                ContinuousFeature {
                    name: "sbp".to_string(),
                    unit: "mmHg".to_string(),
                    category: FeatureCategory::Vital,
                },
                ContinuousFeature {
                    name: "rare_lab".to_string(),
                    unit: "x".to_string(),
                    category: FeatureCategory::Lab,
                },
                ContinuousFeature {
                    name: "common_lab".to_string(),
                    unit: "x".to_string(),
                    category: FeatureCategory::Lab,
                },
            ],
            alloc::vec!["480".to_string(), "401".to_string()],
            alloc::vec![],
            alloc::vec![],
        )
        .unwrap()
    }

    fn patient_with_values(id: &str, sbp: &[f64], rare: &[f64], common: &[f64]) -> RawPatient {
        let mut encounters = Vec::new();
        let longest = sbp.len().max(rare.len()).max(common.len());
        for i in 0..longest {
            let mut e = Encounter::at(Date::from_days(100 + i as i32));
            if let Some(v) = sbp.get(i) {
                e.vitals.insert("sbp".to_string(), *v);
            }
            if let Some(v) = rare.get(i) {
                e.labs.insert("rare_lab".to_string(), *v);
            }
            if let Some(v) = common.get(i) {
                e.labs.insert("common_lab".to_string(), *v);
            }
            encounters.push(e);
        }
        RawPatient {
            patient_id: PatientId::from(id),
            birth_date: Date::from_days(0),
            encounters,
        }
    }

    fn stats_with(mean: f64, std: f64, median: f64) -> PreprocessStats {
        let schema = FeatureSchema::new(
            alloc::vec![ContinuousFeature {
                name: "f".to_string(),
                unit: "u".to_string(),
                category: FeatureCategory::Vital,
            }],
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
        )
        .unwrap();
        PreprocessStats {
            schema,
            stats: alloc::vec![FeatureStats {
                name: "f".to_string(),
                mean,
                std,
                median,
                missing_fraction: 0.0,
            }],
            n_train_patients: 1,
            dropped_labs: alloc::vec![],
        }
    }

    #[test]
    fn aggregation_is_patient_level_mean() {
        let p = patient_with_values("p", &[120.0, 130.0], &[], &[1.0]);
        let agg = aggregate_patient(&p, &schema());
        assert_eq!(agg, alloc::vec![Some(125.0), None, Some(1.0)]);
    }

    #[test]
    fn lab_dropping_keeps_exactly_half_missing() {
        // rare_lab observed by 1 of 4 patients (75% missing) -> dropped;
        // common_lab observed by 2 of 4 (exactly 50% missing) -> kept.
        let patients = alloc::vec![
            patient_with_values("a", &[120.0], &[1.0], &[5.0]),
            patient_with_values("b", &[110.0], &[], &[7.0]),
            patient_with_values("c", &[130.0], &[], &[]),
            patient_with_values("d", &[140.0], &[], &[]),
        ];
        let refs: Vec<&RawPatient> = patients.iter().collect();
        let stats = fit_stats(&refs, &schema()).unwrap();
        assert_eq!(stats.schema.continuous_width(), 2);
        assert!(stats.schema.continuous_index("rare_lab").is_none());
        assert!(stats.schema.continuous_index("common_lab").is_some());
        assert_eq!(stats.dropped_labs, alloc::vec![("rare_lab".to_string(), 0.75)]);
        // Vitals are never dropped regardless of missingness.
        assert!(stats.schema.continuous_index("sbp").is_some());
    }

    #[test]
    fn median_convention() {
        let patients = alloc::vec![
            patient_with_values("a", &[1.0], &[], &[]),
            patient_with_values("b", &[2.0], &[], &[]),
            patient_with_values("c", &[4.0], &[], &[]),
        ];
        let refs: Vec<&RawPatient> = patients.iter().collect();
        let schema = FeatureSchema::new(
            alloc::vec![ContinuousFeature {
                name: "sbp".to_string(),
                unit: "mmHg".to_string(),
                category: FeatureCategory::Vital,
            }],
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
        )
        .unwrap();
        let stats = fit_stats(&refs, &schema).unwrap();
        assert_eq!(stats.stats[0].median, 2.0);
        // Even count averages the middle pair.
        let patients = alloc::vec![
            patient_with_values("a", &[1.0], &[], &[]),
            patient_with_values("b", &[2.0], &[], &[]),
            patient_with_values("c", &[4.0], &[], &[]),
            patient_with_values("d", &[10.0], &[], &[]),
        ];
        let refs: Vec<&RawPatient> = patients.iter().collect();
        let stats = fit_stats(&refs, &schema).unwrap();
        assert_eq!(stats.stats[0].median, 3.0);
    }

    #[test]
    fn outlier_boundary_is_strict() {
        let stats = stats_with(10.0, 2.0, 10.0);
        let mut values = alloc::vec![Some(15.0)];
        null_outliers(&mut values, &stats);
        assert_eq!(values[0], Some(15.0));

        // Exactly three standard deviations out: retained.
        let mut values = alloc::vec![Some(16.0)];
        null_outliers(&mut values, &stats);
        assert_eq!(values[0], Some(16.0));

        let mut values = alloc::vec![Some(17.0)];
        null_outliers(&mut values, &stats);
        assert_eq!(values[0], None);
    }

    #[test]
    fn zero_std_marks_any_deviation() {
        let stats = stats_with(5.0, 0.0, 5.0);
        let mut values = alloc::vec![Some(5.0)];
        null_outliers(&mut values, &stats);
        assert_eq!(values[0], Some(5.0));
        let mut values = alloc::vec![Some(5.0001)];
        null_outliers(&mut values, &stats);
        assert_eq!(values[0], None);
    }

    #[test]
    fn null_then_impute_is_idempotent() {
        let stats = stats_with(10.0, 2.0, 9.5);
        let clean = |raw: Option<f64>| -> f64 {
            let mut values = alloc::vec![raw];
            null_outliers(&mut values, &stats);
            impute(&values, &stats)[0]
        };
        for raw in [Some(40.0), None, Some(11.0)] {
            let once = clean(raw);
            let twice = clean(Some(once));
            assert_eq!(once, twice, "second pass changed {raw:?}");
        }
        assert_eq!(clean(Some(40.0)), 9.5);
        assert_eq!(clean(None), 9.5);
        assert_eq!(clean(Some(11.0)), 11.0);
    }

    #[test]
    fn vectorize_sets_indicators_and_errors_on_unmapped() {
        let mut maps = CodeMaps::default();
        maps.icd_to_phecode.insert("J18.9".to_string(), "480".to_string());
        maps.icd_to_phecode.insert("I10".to_string(), "401".to_string());

        let mut p = patient_with_values("p", &[120.0], &[1.0], &[5.0]);
        p.encounters[0].icd_codes.insert("J18.9".to_string());

        let refs = [&p];
        let stats = fit_stats(&refs[..], &schema()).unwrap();
        let sample =
            vectorize(&p, Label::Case, Date::from_days(200), &stats, &maps).unwrap();
        assert_eq!(sample.categorical, alloc::vec![1, 0]); // ["480", "401"] order from schema
        assert_eq!(sample.continuous.len(), stats.schema.continuous_width());

        p.encounters[0].icd_codes.insert("unknown".to_string());
        let err = vectorize(&p, Label::Case, Date::from_days(200), &stats, &maps).unwrap_err();
        assert!(matches!(err, PreprocessError::UnmappedCode { .. }));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert_eq!(
            fit_stats(&[], &schema()).unwrap_err(),
            PreprocessError::EmptyTrainingSet
        );
    }
}
