//! Confidence-routed hybrid classification for longitudinal health records.
//!
//! The crate covers the full modeling path: case/control cohort construction
//! (case-definition rules, eligibility, propensity matching, prediction
//! windows), feature preprocessing, a three-model supervised ensemble with
//! SMOTE balancing and out-of-fold probabilities, demonstration retrieval for
//! in-context LLM inference, and a confidence router that sends each sample
//! down the ensemble path or the LLM path.
//!
//! Everything here is deterministic given its seeds and runs without `std`
//! (`alloc` required); IO, file formats, and the HTTP backend live in the
//! companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ablate;
pub mod cohort;
pub mod date;
pub mod ensemble;
pub mod eval;
pub mod icl;
pub mod patient;
pub mod preprocess;
pub mod router;
pub mod sample;
pub mod schema;
pub mod synth;
pub mod validate;

pub use date::Date;
pub use patient::{Encounter, PatientId, RawPatient};
pub use sample::{Label, LabeledSample};
pub use schema::{CodeDescriptions, CodeMaps, FeatureSchema};
