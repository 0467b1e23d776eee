//! Minority oversampling: synthetic samples interpolated between a minority
//! sample and one of its k nearest minority neighbors. Indicator columns are
//! interpolated like everything else, then rounded back to {0, 1}.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_trainable, EnsembleError};
use crate::patient::PatientId;
use crate::sample::{Label, LabeledSample};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteSettings {
    /// Desired minority:majority count ratio after augmentation.
    pub target_ratio: f64,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteSettings {
    fn default() -> Self {
        SmoteSettings { target_ratio: 1.0, k_neighbors: 5, seed: 0 }
    }
}

/// Returns the input followed by synthetic minority samples. Synthetic ids
/// are `smote-NNNNNN`, guaranteed distinct from real patient ids by prefix.
pub fn smote(
    samples: &[LabeledSample],
    settings: &SmoteSettings,
) -> Result<Vec<LabeledSample>, EnsembleError> {
    check_trainable(samples)?;
    if !(settings.target_ratio > 0.0) || settings.k_neighbors == 0 {
        return Err(EnsembleError::UnsupportedParam {
            field: "smote",
            value: format!("target_ratio={}, k_neighbors={}", settings.target_ratio, settings.k_neighbors),
        });
    }

    let n_case = samples.iter().filter(|s| s.label.is_case()).count();
    let n_control = samples.len() - n_case;
    let minority_label = if n_case <= n_control { Label::Case } else { Label::Control };
    let (n_min, n_maj) = if n_case <= n_control { (n_case, n_control) } else { (n_control, n_case) };

    let wanted = (settings.target_ratio * n_maj as f64).round() as usize;
    let n_synth = wanted.saturating_sub(n_min);
    if n_synth == 0 {
        return Ok(samples.to_vec());
    }
    if settings.k_neighbors >= n_min {
        return Err(EnsembleError::TooFewMinoritySamples {
            k: settings.k_neighbors,
            minority: n_min,
        });
    }

    let minority: Vec<&LabeledSample> =
        samples.iter().filter(|s| s.label == minority_label).collect();
    let vectors: Vec<Vec<f64>> = minority.iter().map(|s| s.full_vector()).collect();

    // k nearest minority neighbors per minority sample, self excluded,
    // ties broken by index.
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut order: Vec<usize> = (0..minority.len()).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                sq_dist(&vectors[i], &vectors[a])
                    .total_cmp(&sq_dist(&vectors[i], &vectors[b]))
                    .then(a.cmp(&b))
            });
            order.truncate(settings.k_neighbors);
            order
        })
        .collect();

    let d_cont = samples[0].continuous.len();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut out = samples.to_vec();
    for s in 0..n_synth {
        let base = s % minority.len();
        let nn = neighbors[base][rng.random_range(0..settings.k_neighbors)];
        let gap: f64 = rng.random();
        let blended: Vec<f64> = vectors[base]
            .iter()
            .zip(&vectors[nn])
            .map(|(&a, &b)| a + gap * (b - a))
            .collect();
        out.push(LabeledSample {
            patient_id: PatientId(format!("smote-{s:06}")),
            index_date: minority[base].index_date,
            continuous: blended[..d_cont].to_vec(),
            categorical: blended[d_cont..].iter().map(|&v| if v >= 0.5 { 1 } else { 0 }).collect(),
            label: minority_label,
        });
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use rand::Rng;

    fn sample(id: &str, cont: &[f64], cat: &[u8], label: Label) -> LabeledSample {
        LabeledSample {
            patient_id: PatientId::from(id),
            index_date: Date::from_days(100),
            continuous: cont.to_vec(),
            categorical: cat.to_vec(),
            label,
        }
    }

    fn skewed_cloud(n_min: usize, n_maj: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n_min {
            let cont: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 3.0).collect();
            let cat = [rng.random_range(0..2u8), rng.random_range(0..2u8)];
            out.push(sample(&format!("case-{i:03}"), &cont, &cat, Label::Case));
        }
        for i in 0..n_maj {
            let cont: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 3.0 + 5.0).collect();
            out.push(sample(&format!("ctrl-{i:03}"), &cont, &[0, 0], Label::Control));
        }
        out
    }

    #[test]
    fn balances_to_target_ratio() {
        let data = skewed_cloud(20, 200, 7);
        let aug = smote(&data, &SmoteSettings::default()).unwrap();
        let cases = aug.iter().filter(|s| s.label.is_case()).count();
        let controls = aug.iter().filter(|s| !s.label.is_case()).count();
        assert_eq!((cases, controls), (200, 200));
        // Originals are untouched and lead the output.
        assert_eq!(&aug[..data.len()], &data[..]);
    }

    #[test]
    fn half_ratio_synthesizes_half_as_much() {
        let data = skewed_cloud(20, 200, 8);
        let settings = SmoteSettings { target_ratio: 0.5, ..SmoteSettings::default() };
        let aug = smote(&data, &settings).unwrap();
        assert_eq!(aug.iter().filter(|s| s.label.is_case()).count(), 100);
    }

    #[test]
    fn already_balanced_input_passes_through() {
        let data = skewed_cloud(30, 30, 9);
        let aug = smote(&data, &SmoteSettings::default()).unwrap();
        assert_eq!(aug, data);
    }

    #[test]
    fn synthetics_lie_on_minority_segments() {
        // Membership oracle: every synthetic point must sit on a segment
        // between two distinct minority samples, coordinatewise to 1e-9 on
        // the continuous block, with the interpolation factor in [0, 1].
        let data = skewed_cloud(20, 120, 11);
        let aug = smote(&data, &SmoteSettings::default()).unwrap();
        let minority: Vec<Vec<f64>> = data
            .iter()
            .filter(|s| s.label.is_case())
            .map(|s| s.continuous.clone())
            .collect();
        let synths: Vec<&LabeledSample> =
            aug.iter().filter(|s| s.patient_id.0.starts_with("smote-")).collect();
        assert_eq!(synths.len(), 100);
        for synth in synths {
            let v = &synth.continuous;
            let mut found = false;
            'pairs: for a in &minority {
                for b in &minority {
                    // Derive the factor from the first coordinate that moves.
                    let Some(j) = (0..v.len()).find(|&j| (b[j] - a[j]).abs() > 1e-12) else {
                        continue;
                    };
                    let g = (v[j] - a[j]) / (b[j] - a[j]);
                    if !(-1e-9..=1.0 + 1e-9).contains(&g) {
                        continue;
                    }
                    let hit = (0..v.len()).all(|j| (a[j] + g * (b[j] - a[j]) - v[j]).abs() < 1e-9);
                    if hit {
                        found = true;
                        break 'pairs;
                    }
                }
            }
            assert!(found, "synthetic {:?} off every minority segment", synth.patient_id);
            assert!(synth.categorical.iter().all(|&c| c <= 1));
            assert!(synth.label.is_case());
        }
    }

    #[test]
    fn seed_changes_output_and_repeats_exactly() {
        let data = skewed_cloud(10, 40, 3);
        let a = smote(&data, &SmoteSettings { seed: 1, ..SmoteSettings::default() }).unwrap();
        let b = smote(&data, &SmoteSettings { seed: 1, ..SmoteSettings::default() }).unwrap();
        let c = smote(&data, &SmoteSettings { seed: 2, ..SmoteSettings::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_minority_samples_is_an_error() {
        let data = skewed_cloud(4, 40, 5);
        let err = smote(&data, &SmoteSettings::default()).unwrap_err();
        assert_eq!(err, EnsembleError::TooFewMinoritySamples { k: 5, minority: 4 });
    }
}
