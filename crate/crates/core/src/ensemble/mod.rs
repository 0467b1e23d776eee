//! The supervised side of the router: three deterministic trainers (linear,
//! boosted trees, neural), SMOTE balancing, stratified cross-validation for
//! tuning, and out-of-fold probabilities for downstream demonstration
//! selection.

mod folds;
mod gbt;
mod logistic;
mod mlp;
mod smote;

pub use folds::{cross_validate, oof_probabilities, stratified_folds, CvOutcome};
pub use gbt::{train_gbt, GbtModel, GbtParams, Node, Tree};
pub use logistic::{train_lr, LrModel, LrParams};
pub use mlp::{mlp_loss_and_grad, train_mlp, Activation, LrSchedule, MlpArch, MlpModel, MlpParams, MlpSolver};
pub use smote::{smote, SmoteSettings};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patient::PatientId;
use crate::sample::LabeledSample;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains a single class")]
    SingleClass,
    #[error("samples disagree on feature width")]
    RaggedFeatures,
    #[error("k_neighbors = {k} needs more than {minority} minority samples")]
    TooFewMinoritySamples { k: usize, minority: usize },
    #[error("fold count {k} outside 2..=sample count {n}")]
    BadFoldCount { k: usize, n: usize },
    #[error("a class has fewer than 2 members; folds would go single-class")]
    ClassTooSmall,
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("unsupported {field} value {value:?}")]
    UnsupportedParam { field: &'static str, value: String },
}

/// Fixed model order used everywhere a per-model vector appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Gbt,
    Mlp,
}

pub const MODEL_ORDER: [ModelKind; 3] = [ModelKind::Lr, ModelKind::Gbt, ModelKind::Mlp];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "params")]
pub enum ModelParams {
    Lr(LrParams),
    Gbt(GbtParams),
    Mlp(MlpParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Lr(_) => ModelKind::Lr,
            ModelParams::Gbt(_) => ModelKind::Gbt,
            ModelParams::Mlp(_) => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "model")]
pub enum Model {
    Lr(LrModel),
    Gbt(GbtModel),
    Mlp(MlpModel),
}

impl Model {
    /// Class probabilities `[p(control), p(case)]`; the pair sums to one by
    /// construction.
    pub fn predict_proba(&self, features: &[f64]) -> [f64; 2] {
        let positive = match self {
            Model::Lr(m) => m.predict_positive(features),
            Model::Gbt(m) => m.predict_positive(features),
            Model::Mlp(m) => m.predict_positive(features),
        };
        [1.0 - positive, positive]
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lr(_) => ModelKind::Lr,
            Model::Gbt(_) => ModelKind::Gbt,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }
}

/// Trains one model; `seed` drives every stochastic choice inside the
/// trainer, so identical inputs give identical models.
pub fn train(
    params: &ModelParams,
    samples: &[LabeledSample],
    seed: u64,
) -> Result<Model, EnsembleError> {
    check_trainable(samples)?;
    match params {
        ModelParams::Lr(p) => train_lr(p, samples).map(Model::Lr),
        ModelParams::Gbt(p) => train_gbt(p, samples, seed).map(Model::Gbt),
        ModelParams::Mlp(p) => train_mlp(p, samples, seed).map(Model::Mlp),
    }
}

pub(crate) fn check_trainable(samples: &[LabeledSample]) -> Result<(), EnsembleError> {
    if samples.is_empty() {
        return Err(EnsembleError::EmptyTrainingSet);
    }
    let width = samples[0].width();
    if samples.iter().any(|s| s.width() != width) {
        return Err(EnsembleError::RaggedFeatures);
    }
    let cases = samples.iter().filter(|s| s.label.is_case()).count();
    if cases == 0 || cases == samples.len() {
        return Err(EnsembleError::SingleClass);
    }
    Ok(())
}

/// Out-of-fold positive-class probabilities per training sample, one column
/// per model in [`MODEL_ORDER`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OofTable {
    pub probs: BTreeMap<PatientId, [f64; 3]>,
}

impl OofTable {
    pub fn from_columns(
        samples: &[LabeledSample],
        columns: [&[f64]; 3],
    ) -> Self {
        let mut probs = BTreeMap::new();
        for (i, sample) in samples.iter().enumerate() {
            probs.insert(
                sample.patient_id.clone(),
                [columns[0][i], columns[1][i], columns[2][i]],
            );
        }
        OofTable { probs }
    }

    pub fn get(&self, id: &PatientId) -> Option<&[f64; 3]> {
        self.probs.get(id)
    }
}

/// Candidate parameters per model kind; each kind tunes on its own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleGrids {
    pub lr: Vec<LrParams>,
    pub gbt: Vec<GbtParams>,
    pub mlp: Vec<MlpParams>,
}

impl Default for EnsembleGrids {
    fn default() -> Self {
        EnsembleGrids {
            lr: alloc::vec![LrParams::default()],
            gbt: alloc::vec![GbtParams::default()],
            mlp: alloc::vec![MlpParams::default()],
        }
    }
}

/// Where minority oversampling happens relative to fold construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebalanceOrder {
    /// Augment the whole training split once, then fold it. Synthetic
    /// neighbors of a sample can land in other folds, so validation scores
    /// are optimistic; kept as the default because it mirrors the original
    /// pipeline order.
    BeforeFolds,
    /// Augment each fold's training complement separately, leaving every
    /// validation fold untouched by synthetic points.
    InsideFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Folds for hyperparameter tuning.
    pub cv_folds: usize,
    /// Folds for the out-of-fold probability pass; every training sample
    /// must land in a test fold exactly once.
    pub oof_folds: usize,
    /// Minority oversampling applied to training data; `None` trains on the
    /// data as-is.
    pub rebalance: Option<SmoteSettings>,
    pub rebalance_order: RebalanceOrder,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            cv_folds: 5,
            oof_folds: 10,
            rebalance: Some(SmoteSettings::default()),
            rebalance_order: RebalanceOrder::BeforeFolds,
            seed: 0,
        }
    }
}

/// Tunes each model kind by stratified cross-validation, refits the winner
/// on the full (optionally rebalanced) training set, and keeps each kind's
/// out-of-fold probabilities. Samples are handled in canonical patient-id
/// order throughout, so the result is invariant to input permutation.
pub fn fit_ensemble(
    grids: &EnsembleGrids,
    samples: &[LabeledSample],
    settings: &FitSettings,
) -> Result<TrainedEnsemble, EnsembleError> {
    let mut canonical: Vec<LabeledSample> = samples.to_vec();
    canonical.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    let kind_grids: [Vec<ModelParams>; 3] = [
        grids.lr.iter().cloned().map(ModelParams::Lr).collect(),
        grids.gbt.iter().cloned().map(ModelParams::Gbt).collect(),
        grids.mlp.iter().cloned().map(ModelParams::Mlp).collect(),
    ];
    let rebalance = settings.rebalance.as_ref();
    // BeforeFolds folds an already-augmented split; InsideFolds hands the
    // raw split down and lets each fold rebalance its own training view.
    let (fold_view, fold_rebalance): (Vec<LabeledSample>, Option<&SmoteSettings>) =
        match (rebalance, settings.rebalance_order) {
            (Some(s), RebalanceOrder::BeforeFolds) => (smote(&canonical, s)?, None),
            (other, _) => (canonical.clone(), other),
        };
    let final_train: Vec<LabeledSample> = match (rebalance, settings.rebalance_order) {
        (Some(_), RebalanceOrder::BeforeFolds) => fold_view.clone(),
        (Some(s), RebalanceOrder::InsideFolds) => smote(&canonical, s)?,
        (None, _) => canonical.clone(),
    };
    let mut models = Vec::with_capacity(kind_grids.len());
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(kind_grids.len());
    for (ki, grid) in kind_grids.iter().enumerate() {
        // Decorrelate the per-kind seed streams without losing determinism.
        let seed = settings.seed.wrapping_add((ki as u64) << 32);
        let cv = cross_validate(grid, &fold_view, settings.cv_folds, seed, fold_rebalance)?;
        let best = &grid[cv.best_index];
        models.push(train(best, &final_train, seed)?);
        columns.push(oof_probabilities(
            best,
            &fold_view,
            settings.oof_folds,
            seed,
            fold_rebalance,
        )?);
    }
    let mut oof = OofTable::from_columns(&fold_view, [&columns[0], &columns[1], &columns[2]]);
    // Synthetic rows are fold filler, not samples anyone may query later.
    oof.probs
        .retain(|id, _| canonical.binary_search_by(|s| s.patient_id.cmp(id)).is_ok());
    Ok(TrainedEnsemble { models, oof })
}

/// The three fitted models plus the out-of-fold table they were audited with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub models: Vec<Model>,
    pub oof: OofTable,
}

impl TrainedEnsemble {
    /// Averaged class probabilities `[p(control), p(case)]`: the mean of the
    /// member models' positive probabilities, complement derived so the pair
    /// sums to one exactly enough for threshold comparisons at 0.5.
    pub fn confidence(&self, features: &[f64]) -> [f64; 2] {
        debug_assert!(!self.models.is_empty());
        let positive = self
            .models
            .iter()
            .map(|m| m.predict_proba(features)[1])
            .sum::<f64>()
            / self.models.len() as f64;
        [1.0 - positive, positive]
    }

    /// The routing statistic: the averaged probability of the likelier class.
    pub fn max_confidence(&self, features: &[f64]) -> f64 {
        let [neg, pos] = self.confidence(features);
        neg.max(pos)
    }

    pub fn predicted_label(&self, features: &[f64]) -> crate::sample::Label {
        if self.confidence(features)[1] >= 0.5 {
            crate::sample::Label::Case
        } else {
            crate::sample::Label::Control
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use crate::sample::Label;

    pub(crate) fn sample(id: &str, features: &[f64], label: Label) -> LabeledSample {
        LabeledSample {
            patient_id: PatientId::from(id),
            index_date: Date::from_days(0),
            continuous: features.to_vec(),
            categorical: alloc::vec![],
            label,
        }
    }

    #[test]
    fn trainable_preconditions() {
        assert_eq!(check_trainable(&[]).unwrap_err(), EnsembleError::EmptyTrainingSet);
        let one_class = alloc::vec![
            sample("a", &[1.0], Label::Case),
            sample("b", &[2.0], Label::Case),
        ];
        assert_eq!(check_trainable(&one_class).unwrap_err(), EnsembleError::SingleClass);
        let ragged = alloc::vec![
            sample("a", &[1.0], Label::Case),
            sample("b", &[2.0, 3.0], Label::Control),
        ];
        assert_eq!(check_trainable(&ragged).unwrap_err(), EnsembleError::RaggedFeatures);
    }

    #[test]
    fn confidence_pair_sums_to_one_and_covers_half() {
        // A single trivial model keeps this test independent of trainers.
        let model = Model::Lr(LrModel::constant(0.37));
        let ensemble = TrainedEnsemble {
            models: alloc::vec![model],
            oof: OofTable::default(),
        };
        let [neg, pos] = ensemble.confidence(&[0.0]);
        assert!((neg + pos - 1.0).abs() < 1e-9);
        assert!(ensemble.max_confidence(&[0.0]) >= 0.5);
    }

    /// Light grids so the full three-kind fit stays fast under test.
    pub(crate) fn small_grids() -> EnsembleGrids {
        let gbt = GbtParams { n_estimators: 20, min_child_samples: 2, ..GbtParams::default() };
        let mlp = MlpParams {
            hidden_layer_sizes: alloc::vec![6],
            max_iter: 80,
            ..MlpParams::default()
        };
        EnsembleGrids {
            lr: alloc::vec![LrParams::default()],
            gbt: alloc::vec![gbt],
            mlp: alloc::vec![mlp],
        }
    }

    fn blobs(n_per_class: usize) -> Vec<LabeledSample> {
        (0..2 * n_per_class)
            .map(|i| {
                let case = i % 2 == 0;
                let center = if case { 2.5 } else { -2.5 };
                let jitter = (i as f64 * 0.37).sin();
                sample(
                    &alloc::format!("p{i:03}"),
                    &[center + jitter, center - jitter],
                    if case { Label::Case } else { Label::Control },
                )
            })
            .collect()
    }

    #[test]
    fn fit_ensemble_produces_three_models_and_full_oof_coverage() {
        let data = blobs(14);
        let settings =
            FitSettings { cv_folds: 4, oof_folds: 4, rebalance: None, seed: 11, ..FitSettings::default() };
        let fitted = fit_ensemble(&small_grids(), &data, &settings).unwrap();

        assert_eq!(fitted.models.len(), 3);
        for (model, kind) in fitted.models.iter().zip(MODEL_ORDER) {
            assert_eq!(model.kind(), kind);
        }
        assert_eq!(fitted.oof.probs.len(), data.len());
        for s in &data {
            let probs = fitted.oof.get(&s.patient_id).unwrap();
            assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        // Separable blobs: the averaged prediction should be confident and
        // right nearly everywhere.
        let correct = data
            .iter()
            .filter(|s| fitted.predicted_label(&s.full_vector()) == s.label)
            .count();
        assert!(correct as f64 / data.len() as f64 > 0.9, "{correct}/{}", data.len());
    }

    #[test]
    fn fit_ensemble_ignores_input_order_and_tracks_seed() {
        let data = blobs(12);
        let settings =
            FitSettings { cv_folds: 3, oof_folds: 3, rebalance: None, seed: 5, ..FitSettings::default() };
        let fitted = fit_ensemble(&small_grids(), &data, &settings).unwrap();

        let mut reversed = data.clone();
        reversed.reverse();
        let refitted = fit_ensemble(&small_grids(), &reversed, &settings).unwrap();
        assert_eq!(fitted, refitted);

        let reseeded = fit_ensemble(
            &small_grids(),
            &data,
            &FitSettings { seed: 6, ..settings },
        )
        .unwrap();
        assert_ne!(fitted, reseeded);
    }

    #[test]
    fn fit_ensemble_applies_rebalancing_and_rejects_empty_grids() {
        // 6 cases vs 18 controls; SMOTE needs minority > k_neighbors.
        let mut data: Vec<LabeledSample> = (0..6)
            .map(|i| sample(&alloc::format!("c{i}"), &[2.0 + i as f64 * 0.1, 1.0], Label::Case))
            .collect();
        for i in 0..18 {
            data.push(sample(
                &alloc::format!("k{i:02}"),
                &[-2.0 - (i as f64) * 0.05, -1.0],
                Label::Control,
            ));
        }
        let settings = FitSettings {
            cv_folds: 3,
            oof_folds: 3,
            rebalance: Some(SmoteSettings { k_neighbors: 3, ..SmoteSettings::default() }),
            seed: 2,
            ..FitSettings::default()
        };
        let fitted = fit_ensemble(&small_grids(), &data, &settings).unwrap();
        assert_eq!(fitted.models.len(), 3);

        // Folding an augmented split and augmenting inside folds partition
        // the data differently, so the audit tables disagree; neither order
        // may leak synthetic ids into the table.
        let inside = fit_ensemble(
            &small_grids(),
            &data,
            &FitSettings { rebalance_order: RebalanceOrder::InsideFolds, ..settings.clone() },
        )
        .unwrap();
        for table in [&fitted.oof, &inside.oof] {
            assert_eq!(table.probs.len(), data.len());
            assert!(table
                .probs
                .keys()
                .all(|id| data.iter().any(|s| &s.patient_id == id)));
        }
        assert_ne!(fitted.oof, inside.oof);

        let mut empty = small_grids();
        empty.lr.clear();
        let err = fit_ensemble(&empty, &data, &settings).unwrap_err();
        assert_eq!(err, EnsembleError::EmptyGrid);
    }
}
