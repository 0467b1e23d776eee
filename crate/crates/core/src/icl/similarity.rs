//! Demonstration retrieval: a blended distance (Euclidean on the continuous
//! block, Hamming on the indicator block) ranks the reliable pool; the top-k
//! most similar members are arranged so the closest one lands immediately
//! before the query in the prompt.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{IclError, ReliableMember, ReliableSet};
use crate::sample::LabeledSample;

/// Blend weight default: heavily favors the categorical block.
pub const DEFAULT_LAMBDA: f64 = 0.05;
pub const DEFAULT_K_DEMOS: usize = 10;

/// `lambda * euclidean(continuous) + (1 - lambda) * hamming(categorical)`.
/// Lower is more similar.
pub fn similarity(a: &LabeledSample, b: &LabeledSample, lambda: f64) -> Result<f64, IclError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(IclError::BadLambda(lambda));
    }
    if a.continuous.len() != b.continuous.len() || a.categorical.len() != b.categorical.len() {
        return Err(IclError::SchemaMismatch);
    }
    let euclid = a
        .continuous
        .iter()
        .zip(&b.continuous)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let hamming = a
        .categorical
        .iter()
        .zip(&b.categorical)
        .filter(|(x, y)| x != y)
        .count();
    Ok(lambda * euclid + (1.0 - lambda) * hamming as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrder {
    /// Closest member immediately before the query (the default intent).
    MostSimilarLast,
    /// Literal ascending-score order: closest member first.
    MostSimilarFirst,
}

/// The k pool members closest to the query. Ties break toward the smaller
/// patient id, so retrieval is a pure function of the pool's contents.
pub fn retrieve_demonstrations<'a>(
    query: &LabeledSample,
    pool: &'a ReliableSet,
    k: usize,
    lambda: f64,
    order: DemoOrder,
) -> Result<Vec<&'a ReliableMember>, IclError> {
    if pool.members.len() < k || k == 0 {
        return Err(IclError::PoolSmallerThanK { pool: pool.members.len(), k });
    }
    let mut scored: Vec<(f64, &ReliableMember)> = Vec::with_capacity(pool.members.len());
    for member in &pool.members {
        scored.push((similarity(query, &member.sample, lambda)?, member));
    }
    scored.sort_by(|(sa, ma), (sb, mb)| {
        sa.total_cmp(sb).then_with(|| ma.sample.patient_id.cmp(&mb.sample.patient_id))
    });
    scored.truncate(k);
    if order == DemoOrder::MostSimilarLast {
        scored.reverse();
    }
    Ok(scored.into_iter().map(|(_, m)| m).collect())
}

/// Uniform-random baseline for the retrieval ablation: k distinct pool
/// members drawn without regard to the query's features. Seeding mixes the
/// run seed with the query's patient id, so each query gets its own draw yet
/// the whole thing stays deterministic and input-order invariant.
pub fn random_demonstrations<'a>(
    query: &LabeledSample,
    pool: &'a ReliableSet,
    k: usize,
    seed: u64,
) -> Result<Vec<&'a ReliableMember>, IclError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if pool.members.len() < k || k == 0 {
        return Err(IclError::PoolSmallerThanK { pool: pool.members.len(), k });
    }
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ fnv1a(query.patient_id.0.as_bytes()));
    let mut indices: Vec<usize> = (0..pool.members.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(k);
    Ok(indices.into_iter().map(|i| &pool.members[i]).collect())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
