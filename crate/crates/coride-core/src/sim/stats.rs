//! Supply/demand disorder measures and Poisson rate fitting: the grid
//! entropy, closed-form Poisson KL divergence, and the per-grid per-bucket
//! rate tables used by the district reward.

use crate::error::CoreError;
use crate::hexgrid::{GridId, GridWorld};

/// Boltzmann constant for the market entropy. Only relative scale matters.
pub const K_B: f64 = 1.0;

/// Rates are floored here so the Poisson KL stays finite.
pub const RATE_FLOOR: f64 = 1e-6;

/// Disorder of a grid's idle-vehicle / open-order mix: `-k_B * rho * ln(rho)`
/// with `rho = min(n_vehicles, n_orders) / max(n_vehicles, n_orders)`.
///
/// Zero-supply or zero-demand grids contribute no dispatchable disorder, so
/// the entropy is 0 when either count is 0 (and when the ratio is 1).
pub fn entropy(n_vehicles: u32, n_orders: u32) -> f64 {
    if n_vehicles == 0 || n_orders == 0 {
        return 0.0;
    }
    let (lo, hi) = if n_vehicles < n_orders {
        (n_vehicles as f64, n_orders as f64)
    } else {
        (n_orders as f64, n_vehicles as f64)
    };
    let rho = lo / hi;
    if rho >= 1.0 {
        return 0.0;
    }
    -K_B * rho * rho.ln()
}

/// KL divergence between two Poisson distributions in closed form:
/// `KL(P(l1) || P(l2)) = l1*ln(l1/l2) + l2 - l1`. Inputs are floored at
/// [`RATE_FLOOR`].
pub fn kl_poisson(lambda1: f64, lambda2: f64) -> f64 {
    let l1 = lambda1.max(RATE_FLOOR);
    let l2 = lambda2.max(RATE_FLOOR);
    l1 * (l1 / l2).ln() + l2 - l1
}

/// Raw count observations per (grid, time-of-day bucket), accumulated while
/// a simulation runs. Feeds [`fit_poisson_rates`] and the per-step
/// [`WorldStats`].
#[derive(Clone, Debug)]
pub struct RateHistory {
    buckets: usize,
    counts: Vec<Vec<Vec<u32>>>,
}

impl RateHistory {
    pub fn new(n_grids: usize, buckets: usize) -> Self {
        assert!(buckets > 0, "at least one time-of-day bucket");
        RateHistory {
            buckets,
            counts: vec![vec![Vec::new(); buckets]; n_grids],
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn record(&mut self, grid: GridId, bucket: usize, count: u32) {
        self.counts[grid][bucket % self.buckets].push(count);
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|g| g.iter().all(|b| b.is_empty()))
    }

    /// Mean count for one bucket, floored; the floor also stands in for
    /// buckets that have no observations yet.
    pub fn rate_or_floor(&self, grid: GridId, bucket: usize) -> f64 {
        let obs = &self.counts[grid][bucket % self.buckets];
        if obs.is_empty() {
            return RATE_FLOOR;
        }
        let mean = obs.iter().map(|&c| c as f64).sum::<f64>() / obs.len() as f64;
        mean.max(RATE_FLOOR)
    }
}

/// Fitted rate table: one lambda per (grid, bucket).
#[derive(Clone, Debug)]
pub struct RateTable {
    pub rates: Vec<Vec<f64>>,
}

/// Fits per-bucket Poisson rates as the sample mean of the observed counts,
/// floored at [`RATE_FLOOR`]. Requires at least one observation overall and
/// one per non-empty fit target; buckets with no observations are rejected.
pub fn fit_poisson_rates(history: &RateHistory) -> Result<RateTable, CoreError> {
    if history.is_empty() {
        return Err(CoreError::EmptyHistory);
    }
    let mut rates = Vec::with_capacity(history.counts.len());
    for grid in &history.counts {
        let mut row = Vec::with_capacity(history.buckets);
        for obs in grid {
            if obs.is_empty() {
                return Err(CoreError::EmptyHistory);
            }
            let mean = obs.iter().map(|&c| c as f64).sum::<f64>() / obs.len() as f64;
            row.push(mean.max(RATE_FLOOR));
        }
        rates.push(row);
    }
    Ok(RateTable { rates })
}

/// Per-step world aggregates consumed by the district reward: every grid's
/// entropy, the global mean, and the KL terms of the "areas" (grids whose
/// entropy deviates from the mean by more than one standard deviation).
#[derive(Clone, Debug)]
pub struct WorldStats {
    pub grid_entropy: Vec<f64>,
    pub mean_entropy: f64,
    pub entropy_std: f64,
    /// (grid, KL(order rate || vehicle rate)) for each flagged area grid.
    pub area_kl: Vec<(GridId, f64)>,
}

impl WorldStats {
    pub fn compute(
        world: &GridWorld,
        idle: &[u32],
        pending_counts: &[u32],
        orders_hist: &RateHistory,
        vehicles_hist: &RateHistory,
        bucket: usize,
    ) -> WorldStats {
        let n = world.num_cells();
        let grid_entropy: Vec<f64> = (0..n)
            .map(|g| entropy(idle[g], pending_counts[g]))
            .collect();
        let mean = grid_entropy.iter().sum::<f64>() / n as f64;
        let var = grid_entropy.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let mut area_kl = Vec::new();
        for g in 0..n {
            if (grid_entropy[g] - mean).abs() > std && std > 0.0 {
                let lo = orders_hist.rate_or_floor(g, bucket);
                let lv = vehicles_hist.rate_or_floor(g, bucket);
                area_kl.push((g, kl_poisson(lo, lv)));
            }
        }
        WorldStats {
            grid_entropy,
            mean_entropy: mean,
            entropy_std: std,
            area_kl,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_tagged_examples() {
        assert_eq!(entropy(10, 10), 0.0);
        // Direct evaluation of -0.5 * ln(0.5).
        assert!((entropy(5, 10) - 0.34657359027997264).abs() < 1e-9);
        assert_eq!(entropy(0, 7), 0.0);
        assert_eq!(entropy(7, 0), 0.0);
    }

    #[test]
    fn entropy_is_symmetric_and_nonnegative() {
        for a in 0..=12u32 {
            for b in 0..=12u32 {
                assert_eq!(entropy(a, b), entropy(b, a));
                assert!(entropy(a, b) >= 0.0);
            }
        }
    }

    #[test]
    fn entropy_integer_maximum_sits_nearest_one_over_e() {
        // Brute force over all pairs with counts <= 10; the real-valued
        // maximizer of -rho ln rho is rho = 1/e, and 3/8 is the closest
        // representable ratio, so (3,8) and (8,3) must win.
        let mut best = (0.0f64, Vec::new());
        for a in 0..=10u32 {
            for b in 0..=10u32 {
                let e = entropy(a, b);
                if e > best.0 + 1e-12 {
                    best = (e, vec![(a, b)]);
                } else if (e - best.0).abs() <= 1e-12 && e > 0.0 {
                    best.1.push((a, b));
                }
            }
        }
        assert_eq!(best.1, vec![(3, 8), (8, 3)]);
        let rho: f64 = 3.0 / 8.0;
        assert!((best.0 - (-rho * rho.ln())).abs() < 1e-12);
        // The continuous maximum -(1/e)*ln(1/e) = 1/e bounds all pairs.
        assert!(best.0 <= 1.0 / std::f64::consts::E);
    }

    #[test]
    fn kl_closed_form_matches_truncated_series_oracle() {
        // Independent oracle: sum_{k=0..100} p1(k) * ln(p1(k)/p2(k)).
        fn series(l1: f64, l2: f64) -> f64 {
            let mut sum = 0.0;
            let mut log_fact = 0.0;
            for k in 0..=100u32 {
                if k > 0 {
                    log_fact += (k as f64).ln();
                }
                let log_p1 = -l1 + k as f64 * l1.ln() - log_fact;
                let ratio = (l2 - l1) + k as f64 * (l1 / l2).ln();
                sum += log_p1.exp() * ratio;
            }
            sum
        }
        for (l1, l2) in [(2.0, 1.0), (1.0, 2.0), (0.5, 3.0), (4.0, 4.0)] {
            assert!(
                (kl_poisson(l1, l2) - series(l1, l2)).abs() < 1e-9,
                "lambda pair ({l1},{l2})"
            );
        }
        assert!((kl_poisson(2.0, 1.0) - (2.0 * 2.0f64.ln() - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn kl_identity_and_nonnegativity() {
        for l in [0.1, 1.0, 2.5, 7.0] {
            assert_eq!(kl_poisson(l, l), 0.0);
        }
        for l1 in [0.2, 1.0, 3.0] {
            for l2 in [0.4, 2.0, 5.0] {
                assert!(kl_poisson(l1, l2) >= 0.0);
            }
        }
    }

    #[test]
    fn fit_rates_examples() {
        let mut h = RateHistory::new(1, 2);
        for _ in 0..3 {
            h.record(0, 0, 4);
        }
        h.record(0, 1, 2);
        h.record(0, 1, 4);
        let t = fit_poisson_rates(&h).unwrap();
        assert_eq!(t.rates[0][0], 4.0);
        assert_eq!(t.rates[0][1], 3.0);

        let mut zeros = RateHistory::new(1, 1);
        zeros.record(0, 0, 0);
        let t = fit_poisson_rates(&zeros).unwrap();
        assert_eq!(t.rates[0][0], RATE_FLOOR);

        let empty = RateHistory::new(2, 2);
        assert!(matches!(
            fit_poisson_rates(&empty),
            Err(CoreError::EmptyHistory)
        ));
    }
}
