//! Ranking features, linear scoring, and temperature-annealed Boltzmann
//! selection of the Selected-k items.
//!
//! Every dispatchable item (real or fake order) is embedded as a fixed
//! layout feature vector
//! `[origin embedding | destination embedding | price | duration | kind |
//! destination entropy | destination demand-supply gap]`
//! of length `2 * d_e + 5`, scored against a worker's weight vector by dot
//! product, and drawn sequentially without replacement from a softmax over
//! the remaining scores.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::nn::layers::EmbeddingTable;
use crate::nn::ParamStore;
use crate::sim::{Order, OrderKind, SimState};

/// Scalar-feature count appended after the two grid embeddings.
pub const EXTRA_FEATURES: usize = 5;

#[derive(Clone, Debug)]
pub struct FeatureConfig {
    /// Grid embedding dimension.
    pub d_e: usize,
    /// Price normalizer.
    pub ref_price: f64,
    /// Duration normalizer (episode max duration).
    pub max_duration: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            d_e: 8,
            ref_price: 10.0,
            max_duration: 10.0,
        }
    }
}

impl FeatureConfig {
    pub fn feature_len(&self) -> usize {
        2 * self.d_e + EXTRA_FEATURES
    }
}

/// Builds the ranking feature vector for one order.
pub fn featurize(
    order: &Order,
    state: &SimState,
    table: &EmbeddingTable,
    store: &ParamStore,
    cfg: &FeatureConfig,
) -> Result<Vec<f64>, CoreError> {
    if order.origin >= table.count {
        return Err(CoreError::UnknownGrid(order.origin));
    }
    if order.destination >= table.count {
        return Err(CoreError::UnknownGrid(order.destination));
    }
    let mut e = Vec::with_capacity(cfg.feature_len());
    e.extend_from_slice(table.lookup(store, order.origin));
    e.extend_from_slice(table.lookup(store, order.destination));
    e.push(order.price / cfg.ref_price);
    e.push(order.duration as f64 / cfg.max_duration);
    e.push(match order.kind {
        OrderKind::Real => 0.0,
        OrderKind::Fake => 1.0,
    });
    let dest_obs = state.observe_worker(order.destination);
    e.push(dest_obs.entropy);
    let demand = dest_obs.n_orders as f64;
    let supply = dest_obs.n_vehicles as f64;
    e.push((demand - supply) / (demand + supply).max(1.0));
    Ok(e)
}

/// Scatter-adds a feature gradient back into the embedding table rows the
/// feature was built from (the scalar slots carry no trainable input).
pub fn featurize_backward(
    order: &Order,
    d_feature: &[f64],
    table: &EmbeddingTable,
    store: &mut ParamStore,
    cfg: &FeatureConfig,
) {
    table.accumulate_grad(store, order.origin, &d_feature[..cfg.d_e]);
    table.accumulate_grad(store, order.destination, &d_feature[cfg.d_e..2 * cfg.d_e]);
}

/// `score_i = w . e_i` for every item; linear in both arguments.
pub fn score(weights: &[f64], items: &[Vec<f64>]) -> Result<Vec<f64>, CoreError> {
    let mut out = Vec::with_capacity(items.len());
    for (i, e) in items.iter().enumerate() {
        if e.len() != weights.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "item {i} has {} features, weights have {}",
                e.len(),
                weights.len()
            )));
        }
        out.push(weights.iter().zip(e).map(|(w, x)| w * x).sum());
    }
    Ok(out)
}

/// Samples `k` distinct item indices sequentially without replacement; each
/// draw comes from `softmax(scores_remaining / tau)`. Deterministic under a
/// fixed rng. In the degenerate `tau <= 0` limit the pick is the remaining
/// argmax with ties broken by lowest index.
pub fn selected_k(
    scores: &[f64],
    k: usize,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, CoreError> {
    if k > scores.len() {
        return Err(CoreError::InvalidConfig(format!(
            "cannot select {k} of {} items",
            scores.len()
        )));
    }
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = if tau <= 0.0 {
            argmax_lowest(&remaining, scores)
        } else {
            let max = remaining
                .iter()
                .map(|&i| scores[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = remaining
                .iter()
                .map(|&i| ((scores[i] - max) / tau).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen::<f64>() * total;
            let mut chosen = remaining.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                draw -= w;
                if draw < 0.0 {
                    chosen = j;
                    break;
                }
            }
            chosen
        };
        picked.push(remaining.swap_remove(idx));
    }
    Ok(picked)
}

fn argmax_lowest(remaining: &[usize], scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (j, &i) in remaining.iter().enumerate() {
        let cur = scores[remaining[best]];
        if scores[i] > cur || (scores[i] == cur && i < remaining[best]) {
            best = j;
        }
    }
    best
}

/// Exploration temperature schedule: exponential decay from `start` to
/// `floor` over `horizon` training steps, then flat at the floor.
#[derive(Clone, Copy, Debug)]
pub struct AnnealSchedule {
    pub start: f64,
    pub floor: f64,
    pub horizon: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            start: 1.0,
            floor: 0.01,
            horizon: 1500,
        }
    }
}

pub fn anneal_temperature(step: u64, schedule: &AnnealSchedule) -> f64 {
    if schedule.horizon == 0 || step >= schedule.horizon {
        return schedule.floor;
    }
    let frac = step as f64 / schedule.horizon as f64;
    schedule.start * (schedule.floor / schedule.start).powf(frac)
}
