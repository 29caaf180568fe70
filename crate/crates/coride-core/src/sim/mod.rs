//! Discrete-time market simulator over homogeneous vehicle cohorts.
//!
//! Each step: pending real orders and fake repositioning orders are matched
//! against idle vehicles per grid, dispatched vehicles go on-service for the
//! order duration and reappear idle at the destination, unserved real orders
//! expire, and the metric deltas (ADI / ORR / AST / TNF) are tallied over
//! real orders only.

pub mod order;
pub mod stats;
pub mod streams;

use std::collections::BTreeMap;

use crate::error::CoreError;
use crate::hexgrid::{DistrictId, GridId, GridWorld};

pub use order::{
    build_fake_orders, parse_order_history, Order, OrderKind, OrderSource, SyntheticDemand,
};
pub use stats::{entropy, fit_poisson_rates, kl_poisson, RateHistory, RateTable, WorldStats};
pub use streams::{
    stream_rng, StreamCtx, STREAM_BASELINE, STREAM_CHURN, STREAM_ORDERS, STREAM_SELECT,
};

/// Length of the numeric worker observation vector.
pub const OBS_DIM: usize = 9;
/// Length of the order-feature summary inside an observation.
pub const ORDER_STATS_LEN: usize = 5;

/// Per-worker observation `<N_v, N_o, E, N_f, D_o>`. The order distribution
/// `D_o` is summarized as a fixed-length vector: mean/std of price, mean/std
/// of duration, and the order count (zeros when the grid has no orders).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub n_vehicles: u32,
    pub n_orders: u32,
    pub entropy: f64,
    pub n_fleet: u32,
    pub order_stats: [f64; ORDER_STATS_LEN],
}

impl Observation {
    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.push(self.n_vehicles as f64);
        v.push(self.n_orders as f64);
        v.push(self.entropy);
        v.push(self.n_fleet as f64);
        v.extend_from_slice(&self.order_stats);
        v
    }
}

/// Optional per-grid online/offline vehicle churn, default off. Arrival and
/// departure counts are Poisson draws each step.
#[derive(Clone, Debug)]
pub struct ChurnRates {
    pub online_rate: Vec<f64>,
    pub offline_rate: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Arrival {
    dest: GridId,
    count: u32,
    via_fake: bool,
}

/// Simulator state: one stepping context owns it (single-writer).
#[derive(Clone, Debug)]
pub struct SimState {
    clock: u64,
    idle: Vec<u32>,
    fleet_group: Vec<u32>,
    pending: Vec<Vec<Order>>,
    in_transit: BTreeMap<u64, Vec<Arrival>>,
    churn: Option<ChurnRates>,
    ctx: StreamCtx,
}

/// What one step produced, for metrics and rewards. Fake orders contribute
/// nothing to any metric delta.
#[derive(Clone, Debug, Default)]
pub struct StepOutcome {
    pub served_real: Vec<Order>,
    pub fleet_moves: Vec<(GridId, GridId, u32)>,
    pub adi_delta: f64,
    pub orr_numerator: u32,
    pub orr_denominator: u32,
    pub ast_delta: u64,
    pub tnf_delta: u32,
}

impl SimState {
    pub fn new(
        world: &GridWorld,
        vehicles_per_grid: &[u32],
        ctx: StreamCtx,
    ) -> Result<Self, CoreError> {
        if vehicles_per_grid.len() != world.num_cells() {
            return Err(CoreError::InvalidConfig(format!(
                "vehicle seed list covers {} grids, world has {}",
                vehicles_per_grid.len(),
                world.num_cells()
            )));
        }
        Ok(SimState {
            clock: 0,
            idle: vehicles_per_grid.to_vec(),
            fleet_group: vec![0; world.num_cells()],
            pending: vec![Vec::new(); world.num_cells()],
            in_transit: BTreeMap::new(),
            churn: None,
            ctx,
        })
    }

    pub fn uniform(world: &GridWorld, vehicles_per_grid: u32, ctx: StreamCtx) -> Self {
        SimState::new(world, &vec![vehicles_per_grid; world.num_cells()], ctx)
            .expect("uniform seed list always matches the world")
    }

    pub fn with_churn(mut self, churn: ChurnRates) -> Self {
        self.churn = Some(churn);
        self
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn idle(&self, grid: GridId) -> u32 {
        self.idle[grid]
    }

    pub fn fleet_group(&self, grid: GridId) -> u32 {
        self.fleet_group[grid]
    }

    pub fn pending_orders(&self, grid: GridId) -> &[Order] {
        &self.pending[grid]
    }

    pub fn idle_counts(&self) -> &[u32] {
        &self.idle
    }

    pub fn pending_counts(&self) -> Vec<u32> {
        self.pending.iter().map(|p| p.len() as u32).collect()
    }

    /// Idle plus everything scheduled to reappear: conserved across steps
    /// when churn is off.
    pub fn total_vehicles(&self) -> u64 {
        let idle: u64 = self.idle.iter().map(|&c| c as u64).sum();
        let moving: u64 = self
            .in_transit
            .values()
            .flat_map(|v| v.iter().map(|a| a.count as u64))
            .sum();
        idle + moving
    }

    /// Replaces the pending order lists with freshly generated real orders.
    /// Orders referencing unknown grids are rejected.
    pub fn inject_orders(
        &mut self,
        world: &GridWorld,
        orders: Vec<Order>,
    ) -> Result<(), CoreError> {
        for p in &mut self.pending {
            p.clear();
        }
        for order in orders {
            if order.origin >= world.num_cells() {
                return Err(CoreError::UnknownGrid(order.origin));
            }
            if order.destination >= world.num_cells() {
                return Err(CoreError::UnknownGrid(order.destination));
            }
            self.pending[order.origin].push(order);
        }
        Ok(())
    }

    /// Private observation of one worker grid.
    pub fn observe_worker(&self, grid: GridId) -> Observation {
        let orders = &self.pending[grid];
        let n_orders = orders.len() as u32;
        let stats = order_stats(orders);
        Observation {
            n_vehicles: self.idle[grid],
            n_orders,
            entropy: entropy(self.idle[grid], n_orders),
            n_fleet: self.fleet_group[grid],
            order_stats: stats,
        }
    }

    /// Joint observation of a district: member workers' observations
    /// flattened in canonical member order, zero-padded to the maximal
    /// district size of the world.
    pub fn observe_manager(
        &self,
        world: &GridWorld,
        district: DistrictId,
    ) -> Result<Vec<f64>, CoreError> {
        let members = world.members(district)?;
        let width = world.max_district_size();
        let mut v = Vec::with_capacity(width * OBS_DIM);
        for &g in members {
            v.extend(self.observe_worker(g).as_vec());
        }
        v.resize(width * OBS_DIM, 0.0);
        Ok(v)
    }

    /// Applies one step of per-grid decisions.
    ///
    /// Every decision item must come from that grid's pending real orders or
    /// its fake-order set, and a grid may not consume more vehicles than it
    /// has idle. Selected real orders put a vehicle on-service for
    /// `duration` steps; selected fake orders move an idle vehicle to the
    /// destination by the next step. Unserved real orders expire.
    pub fn step(
        &mut self,
        world: &GridWorld,
        decisions: &[Vec<Order>],
    ) -> Result<StepOutcome, CoreError> {
        if decisions.len() != world.num_cells() {
            return Err(CoreError::ShapeMismatch(format!(
                "decision lists cover {} grids, world has {}",
                decisions.len(),
                world.num_cells()
            )));
        }

        let mut outcome = StepOutcome {
            orr_denominator: self.pending.iter().map(|p| p.len() as u32).sum(),
            ..StepOutcome::default()
        };
        let mut fleet_agg: BTreeMap<(GridId, GridId), u32> = BTreeMap::new();

        for (grid, picks) in decisions.iter().enumerate() {
            if picks.is_empty() {
                continue;
            }
            if picks.len() as u32 > self.idle[grid] {
                return Err(CoreError::InvalidDecision {
                    grid,
                    msg: format!(
                        "{} selections but only {} idle vehicles",
                        picks.len(),
                        self.idle[grid]
                    ),
                });
            }
            let mut used_ids: Vec<u64> = Vec::with_capacity(picks.len());
            for pick in picks {
                if used_ids.contains(&pick.id) {
                    return Err(CoreError::InvalidDecision {
                        grid,
                        msg: format!("order {} selected twice", pick.id),
                    });
                }
                used_ids.push(pick.id);
                match pick.kind {
                    OrderKind::Real => {
                        let pending = &self.pending[grid];
                        let found = pending.iter().find(|o| o.id == pick.id);
                        let order = match found {
                            Some(o) if o == pick => o.clone(),
                            _ => {
                                return Err(CoreError::InvalidDecision {
                                    grid,
                                    msg: format!("order {} is not pending at this grid", pick.id),
                                })
                            }
                        };
                        self.idle[grid] -= 1;
                        let arrive = self.clock + order.duration as u64;
                        self.in_transit.entry(arrive).or_default().push(Arrival {
                            dest: order.destination,
                            count: 1,
                            via_fake: false,
                        });
                        outcome.adi_delta += order.price;
                        outcome.orr_numerator += 1;
                        outcome.ast_delta += order.duration as u64;
                        outcome.tnf_delta += 1;
                        outcome.served_real.push(order);
                    }
                    OrderKind::Fake => {
                        let valid_dest = pick.destination == grid
                            || world.neighbors(grid)?.contains(&pick.destination);
                        if pick.origin != grid
                            || !valid_dest
                            || pick.price != 0.0
                            || pick.duration != 1
                        {
                            return Err(CoreError::InvalidDecision {
                                grid,
                                msg: format!("malformed fake order {}", pick.id),
                            });
                        }
                        self.idle[grid] -= 1;
                        self.in_transit
                            .entry(self.clock + 1)
                            .or_default()
                            .push(Arrival {
                                dest: pick.destination,
                                count: 1,
                                via_fake: true,
                            });
                        *fleet_agg.entry((grid, pick.destination)).or_insert(0) += 1;
                    }
                }
            }
        }

        outcome.fleet_moves = fleet_agg.into_iter().map(|((o, d), c)| (o, d, c)).collect();

        // Unserved real orders expire at the end of the step.
        for p in &mut self.pending {
            p.clear();
        }

        self.clock += 1;

        // Arrivals for the new clock become idle; those that came via fake
        // orders form the fleet-management group for this step.
        self.fleet_group.iter_mut().for_each(|c| *c = 0);
        if let Some(arrivals) = self.in_transit.remove(&self.clock) {
            for a in arrivals {
                self.idle[a.dest] += a.count;
                if a.via_fake {
                    self.fleet_group[a.dest] += a.count;
                }
            }
        }

        if let Some(churn) = self.churn.clone() {
            let mut rng = stream_rng(&self.ctx, STREAM_CHURN, self.clock, 0);
            for g in 0..self.idle.len() {
                let on = order::poisson_draw(&mut rng, churn.online_rate[g]);
                let off = order::poisson_draw(&mut rng, churn.offline_rate[g]);
                self.idle[g] += on;
                self.idle[g] = self.idle[g].saturating_sub(off);
                self.fleet_group[g] = self.fleet_group[g].min(self.idle[g]);
            }
        }

        Ok(outcome)
    }
}

fn order_stats(orders: &[Order]) -> [f64; ORDER_STATS_LEN] {
    if orders.is_empty() {
        return [0.0; ORDER_STATS_LEN];
    }
    let n = orders.len() as f64;
    let mean_price = orders.iter().map(|o| o.price).sum::<f64>() / n;
    let mean_dur = orders.iter().map(|o| o.duration as f64).sum::<f64>() / n;
    let var_price = orders
        .iter()
        .map(|o| (o.price - mean_price).powi(2))
        .sum::<f64>()
        / n;
    let var_dur = orders
        .iter()
        .map(|o| (o.duration as f64 - mean_dur).powi(2))
        .sum::<f64>()
        / n;
    [mean_price, var_price.sqrt(), mean_dur, var_dur.sqrt(), n]
}

/// District reward: served income plus balance terms.
///
/// `r_ADI` sums the prices of real orders served in the district this step.
/// `r_ORR` penalizes entropy spread and the order/vehicle rate mismatch of
/// flagged areas: `-(sum over district grids of (E - mean)^2) - (sum of area
/// KL terms inside the district)`.
pub fn manager_reward(
    world: &GridWorld,
    district: DistrictId,
    outcome: &StepOutcome,
    stats: &WorldStats,
) -> Result<f64, CoreError> {
    let members = world.members(district)?;
    let r_adi: f64 = outcome
        .served_real
        .iter()
        .filter(|o| members.contains(&o.origin))
        .map(|o| o.price)
        .sum();
    let entropy_penalty: f64 = members
        .iter()
        .map(|&g| (stats.grid_entropy[g] - stats.mean_entropy).powi(2))
        .sum();
    let kl_penalty: f64 = stats
        .area_kl
        .iter()
        .filter(|(g, _)| members.contains(g))
        .map(|(_, kl)| kl)
        .sum();
    Ok(r_adi - entropy_penalty - kl_penalty)
}
