//! Stratified k-fold machinery. Folds are assigned over samples in
//! canonical patient-id order, so fold membership is a function of the data
//! and the seed, never of input order. Training sets derived from folds are
//! also consumed in canonical order, which makes tuning and out-of-fold
//! probabilities invariant to permutations of the input slice.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_trainable, smote, EnsembleError, ModelParams, SmoteSettings};
use crate::sample::LabeledSample;

/// Index sets per fold. Each class is spread round-robin after a seeded
/// shuffle, with a cursor shared across classes so fold sizes differ by at
/// most one overall and per class.
pub fn stratified_folds(
    samples: &[LabeledSample],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EnsembleError> {
    check_trainable(samples)?;
    if k < 2 || k > samples.len() {
        return Err(EnsembleError::BadFoldCount { k, n: samples.len() });
    }
    let mut by_id: Vec<usize> = (0..samples.len()).collect();
    by_id.sort_by(|&a, &b| {
        samples[a]
            .patient_id
            .cmp(&samples[b].patient_id)
            .then(a.cmp(&b))
    });
    let cases: Vec<usize> = by_id.iter().copied().filter(|&i| samples[i].label.is_case()).collect();
    let controls: Vec<usize> =
        by_id.iter().copied().filter(|&i| !samples[i].label.is_case()).collect();
    if cases.len() < 2 || controls.len() < 2 {
        return Err(EnsembleError::ClassTooSmall);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0;
    for class in [cases, controls] {
        let mut class = class;
        class.shuffle(&mut rng);
        for idx in class {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Training view for one held-out fold: the complement in canonical
/// patient-id order, optionally rebalanced.
fn fold_training_set(
    samples: &[LabeledSample],
    folds: &[Vec<usize>],
    held_out: usize,
    rebalance: Option<&SmoteSettings>,
) -> Result<Vec<LabeledSample>, EnsembleError> {
    let mut train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != held_out)
        .flat_map(|(_, idxs)| idxs.iter().copied())
        .collect();
    train_idx.sort_by(|&a, &b| {
        samples[a]
            .patient_id
            .cmp(&samples[b].patient_id)
            .then(a.cmp(&b))
    });
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    match rebalance {
        Some(settings) => smote(&train, settings),
        None => Ok(train),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// Index into the grid of the winning parameters; ties keep the
    /// earliest grid entry.
    pub best_index: usize,
    /// Mean F1 across folds, per grid entry.
    pub mean_f1: Vec<f64>,
}

pub fn cross_validate(
    grid: &[ModelParams],
    samples: &[LabeledSample],
    k: usize,
    seed: u64,
    rebalance: Option<&SmoteSettings>,
) -> Result<CvOutcome, EnsembleError> {
    if grid.is_empty() {
        return Err(EnsembleError::EmptyGrid);
    }
    let folds = stratified_folds(samples, k, seed)?;
    let mut mean_f1 = Vec::with_capacity(grid.len());
    for (gi, params) in grid.iter().enumerate() {
        let mut total = 0.0;
        for (fi, fold) in folds.iter().enumerate() {
            let train = fold_training_set(samples, &folds, fi, rebalance)?;
            let model =
                super::train(params, &train, seed.wrapping_add((gi * k + fi) as u64))?;
            let preds: Vec<bool> = fold
                .iter()
                .map(|&i| model.predict_proba(&samples[i].full_vector())[1] >= 0.5)
                .collect();
            let truth: Vec<bool> = fold.iter().map(|&i| samples[i].label.is_case()).collect();
            total += f1_from_preds(&preds, &truth);
        }
        mean_f1.push(total / k as f64);
    }
    let mut best_index = 0;
    for (i, &score) in mean_f1.iter().enumerate() {
        if score > mean_f1[best_index] {
            best_index = i;
        }
    }
    Ok(CvOutcome { best_index, mean_f1 })
}

/// Positive-class probability for each sample, predicted by a model whose
/// training folds excluded that sample. Output is aligned with the input
/// slice.
pub fn oof_probabilities(
    params: &ModelParams,
    samples: &[LabeledSample],
    k: usize,
    seed: u64,
    rebalance: Option<&SmoteSettings>,
) -> Result<Vec<f64>, EnsembleError> {
    let folds = stratified_folds(samples, k, seed)?;
    let mut out = vec![0.0; samples.len()];
    for (fi, fold) in folds.iter().enumerate() {
        let train = fold_training_set(samples, &folds, fi, rebalance)?;
        let model = super::train(params, &train, seed.wrapping_add(fi as u64))?;
        for &i in fold {
            out[i] = model.predict_proba(&samples[i].full_vector())[1];
        }
    }
    Ok(out)
}

fn f1_from_preds(preds: &[bool], truth: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 || tp + fn_ == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use crate::patient::PatientId;
    use crate::sample::Label;
    use alloc::collections::BTreeSet;
    use alloc::string::String;
    use rand::Rng;

    fn sample(id: usize, features: &[f64], label: Label) -> LabeledSample {
        LabeledSample {
            patient_id: PatientId(alloc::format!("p{id:04}")),
            index_date: Date::from_days(0),
            continuous: features.to_vec(),
            categorical: vec![],
            label,
        }
    }

    fn blobs(n: usize, gap: f64, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 3 == 0 { Label::Case } else { Label::Control };
                let shift = if label.is_case() { gap } else { 0.0 };
                let f: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + shift).collect();
                sample(i, &f, label)
            })
            .collect()
    }

    fn fold_size_check(n: usize) {
        let data = blobs(n, 1.0, 42);
        let folds = stratified_folds(&data, 10, 7).unwrap();
        assert_eq!(folds.len(), 10);
        let mut seen = BTreeSet::new();
        let mut sizes: Vec<usize> = Vec::new();
        for fold in &folds {
            sizes.push(fold.len());
            for &i in fold {
                assert!(seen.insert(i), "index {i} in two folds");
            }
        }
        assert_eq!(seen.len(), n);
        let max = *sizes.iter().max().unwrap();
        let min = *sizes.iter().min().unwrap();
        assert!(max - min <= 1, "fold sizes {sizes:?}");
        // Classes are balanced across folds too.
        for class in [true, false] {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| data[i].label.is_case() == class).count())
                .collect();
            let cmax = counts.iter().max().unwrap();
            let cmin = counts.iter().min().unwrap();
            assert!(cmax - cmin <= 1, "class {class}: {counts:?}");
        }
    }

    #[test]
    fn ten_folds_partition_twenty_samples() {
        fold_size_check(20);
    }

    #[test]
    fn ten_folds_partition_one_hundred_three_samples() {
        fold_size_check(103);
        let data = blobs(103, 1.0, 42);
        let folds = stratified_folds(&data, 10, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![10, 10, 10, 10, 10, 10, 10, 11, 11, 11]);
    }

    #[test]
    fn ten_folds_partition_one_thousand_samples() {
        fold_size_check(1000);
        let data = blobs(1000, 1.0, 42);
        let folds = stratified_folds(&data, 10, 7).unwrap();
        assert!(folds.iter().all(|f| f.len() == 100));
    }

    #[test]
    fn fold_membership_ignores_input_order() {
        let data = blobs(57, 1.0, 3);
        let mut shuffled = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        shuffled.shuffle(&mut rng);

        let ids = |samples: &[LabeledSample], folds: &[Vec<usize>]| -> Vec<BTreeSet<String>> {
            folds
                .iter()
                .map(|f| f.iter().map(|&i| samples[i].patient_id.0.clone()).collect())
                .collect()
        };
        let a = stratified_folds(&data, 5, 9).unwrap();
        let b = stratified_folds(&shuffled, 5, 9).unwrap();
        assert_eq!(ids(&data, &a), ids(&shuffled, &b));
    }

    #[test]
    fn bad_fold_counts_are_rejected() {
        let data = blobs(10, 1.0, 0);
        assert_eq!(
            stratified_folds(&data, 1, 0).unwrap_err(),
            EnsembleError::BadFoldCount { k: 1, n: 10 }
        );
        assert_eq!(
            stratified_folds(&data, 11, 0).unwrap_err(),
            EnsembleError::BadFoldCount { k: 11, n: 10 }
        );
    }

    #[test]
    fn single_member_class_is_rejected() {
        let mut data = blobs(12, 1.0, 0);
        for s in &mut data[1..] {
            s.label = Label::Control;
        }
        assert_eq!(stratified_folds(&data, 3, 0).unwrap_err(), EnsembleError::ClassTooSmall);
    }

    fn small_lr_grid() -> Vec<ModelParams> {
        vec![
            ModelParams::Lr(crate::ensemble::LrParams { c: 0.001, ..Default::default() }),
            ModelParams::Lr(crate::ensemble::LrParams { c: 10.0, ..Default::default() }),
        ]
    }

    #[test]
    fn cross_validation_prefers_the_better_grid_point() {
        // With a strong signal, near-unregularized LR should beat c=0.001.
        let data = blobs(90, 2.5, 21);
        let outcome = cross_validate(&small_lr_grid(), &data, 5, 11, None).unwrap();
        assert_eq!(outcome.best_index, 1);
        assert!(outcome.mean_f1[1] > outcome.mean_f1[0]);
    }

    #[test]
    fn cross_validation_is_input_order_invariant() {
        let data = blobs(60, 1.2, 33);
        let mut shuffled = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        shuffled.shuffle(&mut rng);
        let a = cross_validate(&small_lr_grid(), &data, 4, 5, None).unwrap();
        let b = cross_validate(&small_lr_grid(), &shuffled, 4, 5, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tied_grid_points_keep_the_first() {
        let data = blobs(60, 2.0, 8);
        let grid = vec![small_lr_grid()[1].clone(), small_lr_grid()[1].clone()];
        let outcome = cross_validate(&grid, &data, 4, 2, None).unwrap();
        assert_eq!(outcome.mean_f1[0], outcome.mean_f1[1]);
        assert_eq!(outcome.best_index, 0);
    }

    #[test]
    fn out_of_fold_probabilities_cover_every_sample() {
        let data = blobs(103, 2.0, 51);
        let params = small_lr_grid()[1].clone();
        let probs = oof_probabilities(&params, &data, 10, 13, None).unwrap();
        assert_eq!(probs.len(), data.len());
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        // Strong signal: out-of-fold calls should mostly agree with labels.
        let correct = probs
            .iter()
            .zip(&data)
            .filter(|(p, s)| (**p >= 0.5) == s.label.is_case())
            .count();
        assert!(correct as f64 / data.len() as f64 > 0.9, "{correct}/103");
    }

    #[test]
    fn per_fold_rebalancing_runs_and_stays_deterministic() {
        let data = blobs(80, 1.5, 62);
        let params = small_lr_grid()[1].clone();
        let settings = SmoteSettings { target_ratio: 1.0, k_neighbors: 3, seed: 5 };
        let a = oof_probabilities(&params, &data, 5, 3, Some(&settings)).unwrap();
        let b = oof_probabilities(&params, &data, 5, 3, Some(&settings)).unwrap();
        assert_eq!(a, b);
    }
}
