//! Vectorized, labeled samples: what the models and the router consume.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::date::Date;
use crate::patient::PatientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Case,
    Control,
}

impl Label {
    pub fn is_case(self) -> bool {
        matches!(self, Label::Case)
    }

    /// Prompt verbalization ("Yes"/"No").
    pub fn verbalize(self) -> &'static str {
        match self {
            Label::Case => "Yes",
            Label::Control => "No",
        }
    }
}

/// One vectorized patient: dense continuous block plus a 0/1 categorical
/// block, both laid out against a single `FeatureSchema`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub patient_id: PatientId,
    pub index_date: Date,
    pub continuous: Vec<f64>,
    pub categorical: Vec<u8>,
    pub label: Label,
}

impl LabeledSample {
    /// Continuous block followed by the categorical block as floats.
    pub fn full_vector(&self) -> Vec<f64> {
        self.continuous
            .iter()
            .copied()
            .chain(self.categorical.iter().map(|&b| b as f64))
            .collect()
    }

    pub fn width(&self) -> usize {
        self.continuous.len() + self.categorical.len()
    }
}
