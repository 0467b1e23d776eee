//! Synthetic longitudinal records with a planted, tunable class signal.
//!
//! Each patient draws from an independent RNG stream, so record content
//! depends only on the configuration, the seed, and the patient's position,
//! never on how many other patients exist. `signal_strength = 0` produces
//! pure noise (class rates equal); larger values shift continuous features
//! and enrich marker codes for cases. A fraction `noise_rate` of patients
//! draws features from the opposite class, planting irreducible error.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::CpRule;
use crate::date::Date;
use crate::patient::{Encounter, PatientId, RawPatient};
use crate::sample::Label;
use crate::schema::{CodeMaps, ContinuousFeature, FeatureCategory, FeatureSchema};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// 0 removes every class difference; ~4 is a strong signal.
    pub signal_strength: f64,
    /// Probability that a patient is a true case.
    pub base_rate: f64,
    /// Fraction of patients whose features are drawn from the wrong class.
    pub noise_rate: f64,
    pub n_vitals: usize,
    pub n_labs: usize,
    pub n_background_icd: usize,
    pub n_rxnorm: usize,
    pub n_cpt: usize,
    pub min_encounters: usize,
    pub max_encounters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 400,
            seed: 0,
            signal_strength: 4.0,
            base_rate: 0.05,
            noise_rate: 0.0,
            n_vitals: 4,
            n_labs: 8,
            n_background_icd: 36,
            n_rxnorm: 14,
            n_cpt: 12,
            min_encounters: 6,
            max_encounters: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub patients: Vec<RawPatient>,
    pub schema: FeatureSchema,
    pub maps: CodeMaps,
    /// Case definition matching the planted diagnosis codes and medications.
    pub rule: CpRule,
    /// Ground-truth labels, independent of what the case rule later derives.
    pub labels: BTreeMap<PatientId, Label>,
}

const N_MARKER_ICD: usize = 6;
const N_DIAGNOSIS_ICD: usize = 3;
const N_DIAGNOSIS_RX: usize = 2;
const N_EXCLUSION_ICD: usize = 2;

fn build_maps(config: &SynthConfig) -> CodeMaps {
    let mut icd = BTreeMap::new();
    for j in 0..config.n_background_icd {
        icd.insert(format!("ICD-{j:03}"), format!("PH-{:03}", j / 3));
    }
    for j in 0..N_MARKER_ICD {
        icd.insert(format!("ICD-M{j:02}"), format!("PH-M{:02}", j / 2));
    }
    for j in 0..N_DIAGNOSIS_ICD {
        icd.insert(format!("ICD-D{j:02}"), String::from("PH-D00"));
    }
    for j in 0..N_EXCLUSION_ICD {
        icd.insert(format!("ICD-X{j:02}"), String::from("PH-X00"));
    }
    let mut rx = BTreeMap::new();
    for j in 0..config.n_rxnorm {
        rx.insert(format!("RX-{j:03}"), format!("ING-{:03}", j / 2));
    }
    for j in 0..N_DIAGNOSIS_RX {
        rx.insert(format!("RX-D{j:02}"), String::from("ING-D00"));
    }
    let mut cpt = BTreeMap::new();
    for j in 0..config.n_cpt {
        cpt.insert(format!("CPT-{j:03}"), format!("CCS-{:03}", j / 2));
    }
    CodeMaps { icd_to_phecode: icd, rxnorm_to_ingredient: rx, cpt_to_ccs: cpt }
}

fn continuous_features(config: &SynthConfig) -> Vec<ContinuousFeature> {
    let mut out = Vec::new();
    for v in 0..config.n_vitals {
        out.push(ContinuousFeature {
            name: format!("vital_{v}"),
            unit: String::from("unit"),
            category: FeatureCategory::Vital,
        });
    }
    for l in 0..config.n_labs {
        out.push(ContinuousFeature {
            name: format!("lab_{l}"),
            unit: String::from("unit"),
            category: FeatureCategory::Lab,
        });
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SynthData, SynthError> {
    if config.n_patients == 0 {
        return Err(SynthError::InvalidConfig("n_patients must be positive"));
    }
    if !(0.0..=1.0).contains(&config.base_rate) || !(0.0..=1.0).contains(&config.noise_rate) {
        return Err(SynthError::InvalidConfig("rates must lie in [0, 1]"));
    }
    if config.min_encounters < 4 || config.max_encounters < config.min_encounters {
        return Err(SynthError::InvalidConfig("encounter range must be sane and at least 4"));
    }
    if config.signal_strength < 0.0 {
        return Err(SynthError::InvalidConfig("signal_strength must be non-negative"));
    }
    if config.n_vitals == 0 || config.n_labs < 2 {
        return Err(SynthError::InvalidConfig("need at least one vital and two labs"));
    }

    let maps = build_maps(config);
    let schema = FeatureSchema::from_maps(continuous_features(config), &maps)
        .expect("generated schema is never empty");

    let adrd_codes: BTreeSet<String> =
        (0..N_DIAGNOSIS_ICD).map(|j| format!("ICD-D{j:02}")).collect();
    let adrd_meds: BTreeSet<String> = (0..N_DIAGNOSIS_RX).map(|j| format!("RX-D{j:02}")).collect();
    let exclusion: BTreeSet<String> =
        (0..N_EXCLUSION_ICD).map(|j| format!("ICD-X{j:02}")).collect();
    let mut rule = CpRule::new(2, adrd_codes.clone(), adrd_meds.clone());
    rule.exclusion_code_set = exclusion.clone();

    let start = Date::from_ymd(2010, 1, 1).expect("fixed anchor date");
    let mut patients = Vec::with_capacity(config.n_patients);
    let mut labels = BTreeMap::new();

    for i in 0..config.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + i as u64);

        let is_case = rng.random::<f64>() < config.base_rate;
        let flipped = rng.random::<f64>() < config.noise_rate;
        let feature_class = is_case != flipped;
        // Exclusion codes go to a sliver of non-cases so downstream cohort
        // assembly has something to exclude.
        let gets_exclusion = !is_case && rng.random::<f64>() < 0.03;
        let med_only = is_case && rng.random::<f64>() < 0.1;
        let gets_med = is_case && (med_only || rng.random::<f64>() < 0.3);

        let id = PatientId(format!("P{i:05}"));
        let birth_year = 1930 + rng.random_range(0..35);
        let birth_month = 1 + rng.random_range(0..12u32);
        let birth_day = 1 + rng.random_range(0..28u32);
        let birth = Date::from_ymd(birth_year, birth_month, birth_day)
            .expect("generated birth date is valid");

        let n_enc = rng.random_range(config.min_encounters..=config.max_encounters);
        let mut day = start.days() + rng.random_range(0..1200);
        let mut dates = Vec::with_capacity(n_enc);
        for _ in 0..n_enc {
            dates.push(Date::from_days(day));
            day += rng.random_range(40..180);
        }

        let marker_rate_case = 0.05 + (0.07 * config.signal_strength).min(0.7);
        let marker_rate_ctrl = 0.05;
        let mut encounters = Vec::with_capacity(n_enc);
        for (e, &date) in dates.iter().enumerate() {
            let mut enc = Encounter::at(date);
            // Background diagnoses, prescriptions, procedures.
            for _ in 0..rng.random_range(1..4) {
                let j = rng.random_range(0..config.n_background_icd);
                enc.icd_codes.insert(format!("ICD-{j:03}"));
            }
            for _ in 0..rng.random_range(0..3) {
                let j = rng.random_range(0..config.n_rxnorm);
                enc.rxnorm_codes.insert(format!("RX-{j:03}"));
            }
            for _ in 0..rng.random_range(0..3) {
                let j = rng.random_range(0..config.n_cpt);
                enc.cpt_codes.insert(format!("CPT-{j:03}"));
            }
            // Class marker codes.
            let marker_rate = if feature_class { marker_rate_case } else { marker_rate_ctrl };
            for j in 0..N_MARKER_ICD {
                if rng.random::<f64>() < marker_rate {
                    enc.icd_codes.insert(format!("ICD-M{j:02}"));
                }
            }
            // Continuous measurements; labs have graded availability so some
            // exceed the missingness cap.
            for v in 0..config.n_vitals {
                if rng.random::<f64>() < 0.9 {
                    let dir = if v % 2 == 0 { 1.0 } else { -1.0 };
                    let shift = if feature_class { 0.35 * config.signal_strength * dir } else { 0.0 };
                    let dist = Normal::new(80.0 + 10.0 * v as f64 + 8.0 * shift, 8.0).unwrap();
                    enc.vitals.insert(format!("vital_{v}"), dist.sample(&mut rng));
                }
            }
            for l in 0..config.n_labs {
                let availability = 0.95 - 0.9 * l as f64 / (config.n_labs - 1) as f64;
                if rng.random::<f64>() < availability {
                    let dir = if l % 2 == 0 { -1.0 } else { 1.0 };
                    let shift = if feature_class { 0.3 * config.signal_strength * dir } else { 0.0 };
                    let dist = Normal::new(3.0 + l as f64 + 1.2 * shift, 1.2).unwrap();
                    enc.labs.insert(format!("lab_{l}"), dist.sample(&mut rng));
                }
            }
            // Qualifying events arrive late in the history: two diagnosis
            // encounters (unless medication-only) and optionally a
            // prescription on the last one.
            if is_case && !med_only && (e == n_enc - 2 || e == n_enc - 1) {
                let j = rng.random_range(0..N_DIAGNOSIS_ICD);
                enc.icd_codes.insert(format!("ICD-D{j:02}"));
            }
            if gets_med && e == n_enc - 1 {
                let j = rng.random_range(0..N_DIAGNOSIS_RX);
                enc.rxnorm_codes.insert(format!("RX-D{j:02}"));
            }
            if gets_exclusion && e == n_enc / 2 {
                let j = rng.random_range(0..N_EXCLUSION_ICD);
                enc.icd_codes.insert(format!("ICD-X{j:02}"));
            }
            encounters.push(enc);
        }

        labels.insert(id.clone(), if is_case { Label::Case } else { Label::Control });
        patients.push(RawPatient { patient_id: id, birth_date: birth, encounters });
    }

    Ok(SynthData { patients, schema, maps, rule, labels })
}
