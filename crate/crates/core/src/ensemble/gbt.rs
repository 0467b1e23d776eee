//! Gradient-boosted decision trees for binary log loss, grown leaf-wise
//! (best gain first) with second-order split scoring. A backtracking guard
//! halves a new tree's leaf values until the full-data training loss is
//! non-increasing, so the recorded loss trace is monotone by construction.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::EnsembleError;
use crate::sample::LabeledSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub num_leaves: usize,
    /// 0 or negative means unlimited depth.
    pub max_depth: i32,
    pub min_child_samples: usize,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub min_split_gain: f64,
    /// Row fraction drawn without replacement per tree.
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    /// Only "gbdt" is supported; the field exists so sweep configs round-trip.
    pub boosting_type: String,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 100,
            learning_rate: 0.1,
            num_leaves: 31,
            max_depth: -1,
            min_child_samples: 20,
            min_child_weight: 1e-3,
            min_split_gain: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            reg_alpha: 0.0,
            reg_lambda: 0.0,
            boosting_type: String::from("gbdt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Mean log loss on the training set: entry 0 is the prior-only loss,
    /// entry t the loss after tree t. Non-increasing.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn predict_positive(&self, features: &[f64]) -> f64 {
        let mut score = self.base_score;
        for tree in &self.trees {
            score += tree.eval(features);
        }
        sigmoid(score)
    }
}

pub fn train_gbt(
    params: &GbtParams,
    samples: &[LabeledSample],
    seed: u64,
) -> Result<GbtModel, EnsembleError> {
    if params.boosting_type != "gbdt" {
        return Err(EnsembleError::UnsupportedParam {
            field: "boosting_type",
            value: params.boosting_type.clone(),
        });
    }
    if params.num_leaves < 2 || params.n_estimators == 0 {
        return Err(EnsembleError::UnsupportedParam {
            field: "num_leaves/n_estimators",
            value: alloc::format!("{}/{}", params.num_leaves, params.n_estimators),
        });
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0)
        || !(params.colsample_bytree > 0.0 && params.colsample_bytree <= 1.0)
    {
        return Err(EnsembleError::UnsupportedParam {
            field: "subsample/colsample_bytree",
            value: alloc::format!("{}/{}", params.subsample, params.colsample_bytree),
        });
    }

    let n = samples.len();
    let d = samples[0].width();
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.full_vector()).collect();
    let ys: Vec<f64> = samples
        .iter()
        .map(|s| if s.label.is_case() { 1.0 } else { 0.0 })
        .collect();

    let prior = ys.iter().sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let mut scores = vec![base_score; n];
    let mut loss = mean_log_loss(&scores, &ys);
    let mut train_loss = vec![loss];
    let mut trees = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..params.n_estimators {
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - ys[i];
            hess[i] = (p * (1.0 - p)).max(1e-12);
        }

        let rows = draw_subset(n, params.subsample, &mut rng);
        let mut cols = draw_subset(d, params.colsample_bytree, &mut rng);
        cols.sort_unstable();

        let Some(mut tree) = grow_tree(params, &xs, &grad, &hess, rows, &cols) else {
            break; // no splittable structure left
        };

        // Guard: halve the tree's contribution until full-data loss does not
        // increase; give up on the round (and boosting) if thirty halvings
        // are not enough.
        let mut delta: Vec<f64> = xs.iter().map(|x| tree.eval(x)).collect();
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> =
                scores.iter().zip(&delta).map(|(s, d)| s + d).collect();
            let candidate_loss = mean_log_loss(&candidate, &ys);
            if candidate_loss <= loss + 1e-12 {
                scores = candidate;
                loss = candidate_loss.min(loss);
                accepted = true;
                break;
            }
            tree.scale_leaves(0.5);
            for d in &mut delta {
                *d *= 0.5;
            }
        }
        if !accepted {
            break;
        }
        train_loss.push(loss);
        trees.push(tree);
    }

    Ok(GbtModel { base_score, trees, train_loss })
}

fn mean_log_loss(scores: &[f64], ys: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&z, &y) in scores.iter().zip(ys) {
        // log(1 + e^-|z|) form keeps this finite for large |z|.
        let softplus = if z >= 0.0 { (1.0 + (-z).exp()).ln() } else { -z + (1.0 + z.exp()).ln() };
        total += softplus + (1.0 - y) * z;
    }
    total / scores.len() as f64
}

fn draw_subset(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let take = ((n as f64 * fraction) as usize).max(1);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(take);
    all
}

struct PendingLeaf {
    node: usize,
    rows: Vec<usize>,
    depth: i32,
    grad_sum: f64,
    hess_sum: f64,
    best: Option<SplitChoice>,
}

#[derive(Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

fn grow_tree(
    params: &GbtParams,
    xs: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    root_rows: Vec<usize>,
    cols: &[usize],
) -> Option<Tree> {
    let leaf_score = |g: f64, h: f64| {
        let t = soft_threshold(g, params.reg_alpha);
        t * t / (h + params.reg_lambda).max(1e-12)
    };
    let leaf_value = |g: f64, h: f64| {
        -soft_threshold(g, params.reg_alpha) / (h + params.reg_lambda).max(1e-12)
    };

    let best_split = |rows: &[usize], g_sum: f64, h_sum: f64, depth: i32| -> Option<SplitChoice> {
        if params.max_depth > 0 && depth >= params.max_depth {
            return None;
        }
        if rows.len() < 2 * params.min_child_samples.max(1) {
            return None;
        }
        let parent = leaf_score(g_sum, h_sum);
        let mut best: Option<SplitChoice> = None;
        let mut sorted: Vec<usize> = Vec::with_capacity(rows.len());
        for &feature in cols {
            sorted.clear();
            sorted.extend_from_slice(rows);
            sorted.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]));
            let mut gl = 0.0;
            let mut hl = 0.0;
            for pos in 0..sorted.len() - 1 {
                gl += grad[sorted[pos]];
                hl += hess[sorted[pos]];
                let here = xs[sorted[pos]][feature];
                let next = xs[sorted[pos + 1]][feature];
                if here == next {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = sorted.len() - n_left;
                if n_left < params.min_child_samples.max(1)
                    || n_right < params.min_child_samples.max(1)
                {
                    continue;
                }
                let gr = g_sum - gl;
                let hr = h_sum - hl;
                if hl < params.min_child_weight || hr < params.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (leaf_score(gl, hl) + leaf_score(gr, hr) - parent);
                if !gain.is_finite() || gain <= params.min_split_gain || gain <= 0.0 {
                    continue;
                }
                let mut threshold = here / 2.0 + next / 2.0;
                if !(threshold > here && threshold <= next) {
                    threshold = next;
                }
                // Strict > keeps the first (lowest feature, lowest
                // threshold) candidate on ties: deterministic trees.
                if best.map_or(true, |b| gain > b.gain) {
                    best = Some(SplitChoice { feature, threshold, gain });
                }
            }
        }
        best
    };

    let sum_gh = |rows: &[usize]| {
        let mut g = 0.0;
        let mut h = 0.0;
        for &i in rows {
            g += grad[i];
            h += hess[i];
        }
        (g, h)
    };

    let (g0, h0) = sum_gh(&root_rows);
    let mut nodes = vec![Node::Leaf { value: params.learning_rate * leaf_value(g0, h0) }];
    let root_best = best_split(&root_rows, g0, h0, 0);
    root_best?;
    let mut pending = vec![PendingLeaf {
        node: 0,
        rows: root_rows,
        depth: 0,
        grad_sum: g0,
        hess_sum: h0,
        best: root_best,
    }];
    let mut n_leaves = 1;

    while n_leaves < params.num_leaves {
        // Split the pending leaf with the largest gain; ties go to the
        // lowest node id (creation order), for deterministic trees.
        let Some(pick) = pending
            .iter()
            .enumerate()
            .filter(|(_, p)| p.best.is_some())
            .max_by(|(_, a), (_, b)| {
                a.best
                    .unwrap()
                    .gain
                    .total_cmp(&b.best.unwrap().gain)
                    .then(b.node.cmp(&a.node))
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let leaf = pending.swap_remove(pick);
        let choice = leaf.best.unwrap();

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = leaf
            .rows
            .iter()
            .partition(|&&i| xs[i][choice.feature] < choice.threshold);
        let (lg, lh) = sum_gh(&left_rows);
        let (rg, rh) = (leaf.grad_sum - lg, leaf.hess_sum - lh);

        let left_id = nodes.len();
        nodes.push(Node::Leaf { value: params.learning_rate * leaf_value(lg, lh) });
        let right_id = nodes.len();
        nodes.push(Node::Leaf { value: params.learning_rate * leaf_value(rg, rh) });
        nodes[leaf.node] = Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left: left_id,
            right: right_id,
        };
        n_leaves += 1;

        let left_best = best_split(&left_rows, lg, lh, leaf.depth + 1);
        pending.push(PendingLeaf {
            node: left_id,
            rows: left_rows,
            depth: leaf.depth + 1,
            grad_sum: lg,
            hess_sum: lh,
            best: left_best,
        });
        let right_best = best_split(&right_rows, rg, rh, leaf.depth + 1);
        pending.push(PendingLeaf {
            node: right_id,
            rows: right_rows,
            depth: leaf.depth + 1,
            grad_sum: rg,
            hess_sum: rh,
            best: right_best,
        });
    }

    Some(Tree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::Date;
    use crate::patient::PatientId;
    use crate::sample::Label;
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

    fn noisy_cloud(n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Case } else { Label::Control };
                let shift = if label.is_case() { 0.8 } else { 0.0 };
                let f: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + shift).collect();
                sample(i, &f, label)
            })
            .collect()
    }

    fn stump_params() -> GbtParams {
        GbtParams {
            n_estimators: 1,
            learning_rate: 1.0,
            num_leaves: 2,
            min_child_samples: 1,
            min_child_weight: 0.0,
            ..GbtParams::default()
        }
    }

    #[test]
    fn first_stump_matches_exhaustive_split_search() {
        let data = vec![
            sample(0, &[1.0, 5.0], Label::Control),
            sample(1, &[2.0, 4.5], Label::Control),
            sample(2, &[2.5, 1.0], Label::Case),
            sample(3, &[3.0, 4.0], Label::Control),
            sample(4, &[4.0, 1.5], Label::Case),
            sample(5, &[4.5, 3.5], Label::Case),
            sample(6, &[5.0, 2.0], Label::Control),
            sample(7, &[6.0, 2.5], Label::Case),
        ];
        let model = train_gbt(&stump_params(), &data, 0).unwrap();
        assert_eq!(model.trees.len(), 1);
        let tree = &model.trees[0];
        assert_eq!(tree.n_leaves(), 2);

        // Independent oracle: enumerate every (feature, boundary) partition
        // and score it from first principles at the constant prior score.
        let ys: Vec<f64> = data.iter().map(|s| if s.label.is_case() { 1.0 } else { 0.0 }).collect();
        let prior: f64 = ys.iter().sum::<f64>() / 8.0;
        let g: Vec<f64> = ys.iter().map(|y| prior - y).collect();
        let h = prior * (1.0 - prior);
        let score = |rows: &[usize]| {
            let gs: f64 = rows.iter().map(|&i| g[i]).sum();
            gs * gs / (h * rows.len() as f64)
        };
        let all: Vec<usize> = (0..8).collect();
        let mut best_gain = f64::NEG_INFINITY;
        let mut best_partition = Vec::new();
        for feature in 0..2 {
            let mut vals: Vec<f64> = data.iter().map(|s| s.continuous[feature]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let cut = (w[0] + w[1]) / 2.0;
                let left: Vec<usize> =
                    (0..8).filter(|&i| data[i].continuous[feature] < cut).collect();
                let right: Vec<usize> =
                    (0..8).filter(|&i| data[i].continuous[feature] >= cut).collect();
                let gain = 0.5 * (score(&left) + score(&right) - score(&all));
                if gain > best_gain {
                    best_gain = gain;
                    best_partition = left;
                }
            }
        }

        // The grown stump must induce the oracle's best partition and match
        // its leaf values -G/H exactly.
        let Node::Split { left, .. } = &tree.nodes[0] else { panic!("stump did not split") };
        let tree_left: Vec<usize> = (0..8)
            .filter(|&i| {
                let Node::Split { feature, threshold, .. } = &tree.nodes[0] else { unreachable!() };
                data[i].continuous[*feature] < *threshold
            })
            .collect();
        assert_eq!(tree_left, best_partition);
        let Node::Leaf { value } = &tree.nodes[*left] else { panic!() };
        let gs: f64 = best_partition.iter().map(|&i| g[i]).sum();
        let expect = -gs / (h * best_partition.len() as f64);
        assert!((value - expect).abs() < 1e-9, "{value} vs {expect}");
    }

    #[test]
    fn training_loss_trace_is_monotone_over_fifty_rounds() {
        let data = noisy_cloud(80, 13);
        let params = GbtParams {
            n_estimators: 50,
            min_child_samples: 5,
            subsample: 0.8,
            colsample_bytree: 0.75,
            ..GbtParams::default()
        };
        let model = train_gbt(&params, &data, 5).unwrap();
        assert!(model.train_loss.len() >= 30, "trace too short: {}", model.train_loss.len());
        for pair in model.train_loss.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss rose: {} -> {}", pair[0], pair[1]);
        }
        assert_eq!(model.train_loss.len(), model.trees.len() + 1);
    }

    #[test]
    fn depth_one_cap_grows_stumps_only() {
        let data = noisy_cloud(60, 17);
        let params = GbtParams {
            n_estimators: 10,
            max_depth: 1,
            min_child_samples: 2,
            ..GbtParams::default()
        };
        let model = train_gbt(&params, &data, 1).unwrap();
        assert!(!model.trees.is_empty());
        for tree in &model.trees {
            assert!(tree.n_leaves() <= 2);
        }
    }

    #[test]
    fn num_leaves_is_respected() {
        let data = noisy_cloud(200, 23);
        let params = GbtParams {
            n_estimators: 5,
            num_leaves: 4,
            min_child_samples: 2,
            ..GbtParams::default()
        };
        let model = train_gbt(&params, &data, 2).unwrap();
        for tree in &model.trees {
            assert!(tree.n_leaves() <= 4);
            assert!(tree.n_leaves() >= 2);
        }
    }

    #[test]
    fn overfits_a_small_clean_set() {
        let data = noisy_cloud(30, 31);
        let params = GbtParams {
            n_estimators: 60,
            num_leaves: 8,
            min_child_samples: 1,
            min_child_weight: 0.0,
            learning_rate: 0.3,
            ..GbtParams::default()
        };
        let model = train_gbt(&params, &data, 3).unwrap();
        let correct = data
            .iter()
            .filter(|s| (model.predict_positive(&s.full_vector()) >= 0.5) == s.label.is_case())
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn same_seed_same_model_different_seed_different_model() {
        let data = noisy_cloud(100, 41);
        let params = GbtParams {
            n_estimators: 8,
            subsample: 0.6,
            colsample_bytree: 0.5,
            min_child_samples: 3,
            ..GbtParams::default()
        };
        let a = train_gbt(&params, &data, 10).unwrap();
        let b = train_gbt(&params, &data, 10).unwrap();
        let c = train_gbt(&params, &data, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_unknown_boosting_type() {
        let params = GbtParams { boosting_type: String::from("dart"), ..GbtParams::default() };
        let err = train_gbt(&params, &noisy_cloud(20, 1), 0).unwrap_err();
        assert!(matches!(err, EnsembleError::UnsupportedParam { field: "boosting_type", .. }));
    }
}
