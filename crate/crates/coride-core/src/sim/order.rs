//! Orders and order sources. A real order is a paying trip; a fake order
//! encodes a fleet-management move (reposition to a neighbor grid or stay
//! put) and competes with real orders in one ranking item space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::hexgrid::{GridId, GridWorld};
use crate::sim::streams::{stream_rng, StreamCtx, STREAM_ORDERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderKind {
    Real,
    Fake,
}

/// A dispatchable item: either a real trip or a repositioning move.
///
/// Fake orders always have `price = 0`, `duration = 1`, and a destination
/// in `neighbors(origin) + {origin}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Order {
    pub id: u64,
    pub origin: GridId,
    pub destination: GridId,
    pub price: f64,
    pub duration: u32,
    pub kind: OrderKind,
}

impl Order {
    pub fn is_fake(&self) -> bool {
        self.kind == OrderKind::Fake
    }
}

/// One fake order per neighbor plus one stay order for the grid.
///
/// Fake ids are derived from (origin, destination) so they are stable within
/// a step and never collide with generated real-order ids.
pub fn build_fake_orders(world: &GridWorld, grid: GridId) -> Result<Vec<Order>, CoreError> {
    let neighbors = world.neighbors(grid)?;
    let mut out = Vec::with_capacity(neighbors.len() + 1);
    let mut push = |dest: GridId| {
        out.push(Order {
            id: FAKE_ID_BASE + (grid as u64) * FAKE_ID_SPAN + dest as u64,
            origin: grid,
            destination: dest,
            price: 0.0,
            duration: 1,
            kind: OrderKind::Fake,
        });
    };
    push(grid);
    for &n in neighbors {
        push(n);
    }
    Ok(out)
}

pub const FAKE_ID_BASE: u64 = 1 << 40;
const FAKE_ID_SPAN: u64 = 1 << 20;

/// A row of an order history table: `timestep, origin, dest, price, duration`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub timestep: u64,
    pub origin: GridId,
    pub destination: GridId,
    pub price: f64,
    pub duration: u32,
}

/// Where real orders come from each step.
#[derive(Clone, Debug)]
pub enum OrderSource {
    /// Bootstrap from a historical table: rows in the current step's window
    /// are kept with probability `sampling_rate`.
    History {
        rows: Vec<HistoryRow>,
        sampling_rate: f64,
    },
    /// Synthetic per-grid Poisson demand.
    Synthetic(SyntheticDemand),
}

/// Synthetic demand model: per-grid arrival rates (optionally per time-of-day
/// bucket), destinations drawn within a hop radius, duration equal to the
/// hop distance, and price proportional to duration with bounded noise.
#[derive(Clone, Debug)]
pub struct SyntheticDemand {
    /// Base arrival rate per grid per step, scaled by that grid's sampling rate.
    pub base_rate: f64,
    /// Per-grid sampling-rate multipliers in [0, 1].
    pub grid_sampling: Vec<f64>,
    /// Optional per-bucket modulation of the base rate (defaults to flat).
    pub bucket_profile: Vec<f64>,
    /// Time-of-day buckets per episode.
    pub buckets: usize,
    /// Steps per episode (maps step -> bucket).
    pub steps_per_episode: u64,
    /// Maximum trip length in hops.
    pub max_trip_hops: u32,
    /// Price per hop of trip duration.
    pub price_per_hop: f64,
    /// Relative price noise half-width (price *= 1 + U(-w, w)).
    pub price_noise: f64,
}

impl SyntheticDemand {
    pub fn uniform(n_grids: usize, base_rate: f64, steps_per_episode: u64) -> Self {
        SyntheticDemand {
            base_rate,
            grid_sampling: vec![1.0; n_grids],
            bucket_profile: vec![1.0],
            buckets: 1,
            steps_per_episode,
            max_trip_hops: 3,
            price_per_hop: 2.0,
            price_noise: 0.2,
        }
    }

    pub fn bucket_of(&self, t: u64) -> usize {
        if self.steps_per_episode == 0 {
            return 0;
        }
        ((t % self.steps_per_episode) as usize * self.buckets / self.steps_per_episode as usize)
            .min(self.buckets - 1)
    }

    fn rate_at(&self, grid: GridId, t: u64) -> f64 {
        let profile = self.bucket_profile[self.bucket_of(t) % self.bucket_profile.len()];
        self.base_rate * self.grid_sampling[grid] * profile
    }
}

impl OrderSource {
    /// Generates the real orders arriving at step `t`. Deterministic given
    /// the stream context (seed, episode, t, grid).
    pub fn generate(
        &self,
        world: &GridWorld,
        t: u64,
        ctx: &StreamCtx,
    ) -> Result<Vec<Order>, CoreError> {
        match self {
            OrderSource::History {
                rows,
                sampling_rate,
            } => {
                let mut out = Vec::new();
                let mut rng = stream_rng(ctx, STREAM_ORDERS, t, 0);
                let mut seq = 0u64;
                for row in rows.iter().filter(|r| r.timestep == t) {
                    if row.origin >= world.num_cells() {
                        return Err(CoreError::UnknownGrid(row.origin));
                    }
                    if row.destination >= world.num_cells() {
                        return Err(CoreError::UnknownGrid(row.destination));
                    }
                    let keep = if *sampling_rate >= 1.0 {
                        true
                    } else if *sampling_rate <= 0.0 {
                        false
                    } else {
                        rng.gen::<f64>() < *sampling_rate
                    };
                    if keep {
                        out.push(Order {
                            id: order_id(t, seq),
                            origin: row.origin,
                            destination: row.destination,
                            price: row.price,
                            duration: row.duration.max(1),
                            kind: OrderKind::Real,
                        });
                        seq += 1;
                    }
                }
                Ok(out)
            }
            OrderSource::Synthetic(demand) => {
                if demand.grid_sampling.len() != world.num_cells() {
                    return Err(CoreError::InvalidConfig(format!(
                        "synthetic demand covers {} grids, world has {}",
                        demand.grid_sampling.len(),
                        world.num_cells()
                    )));
                }
                let mut out = Vec::new();
                let mut seq = 0u64;
                for grid in world.grid_ids() {
                    let mut rng = stream_rng(ctx, STREAM_ORDERS, t, grid as u64);
                    let count = poisson_draw(&mut rng, demand.rate_at(grid, t));
                    for _ in 0..count {
                        let dest = draw_destination(world, grid, demand.max_trip_hops, &mut rng);
                        let hops = world.grid_distance(grid, dest)?.max(1);
                        let noise = 1.0 + demand.price_noise * (rng.gen::<f64>() * 2.0 - 1.0);
                        out.push(Order {
                            id: order_id(t, seq),
                            origin: grid,
                            destination: dest,
                            price: demand.price_per_hop * hops as f64 * noise,
                            duration: hops,
                            kind: OrderKind::Real,
                        });
                        seq += 1;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn order_id(t: u64, seq: u64) -> u64 {
    t * 1_000_000 + seq
}

/// Knuth's product method; fine for the desk-scale rates used here.
pub fn poisson_draw(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let threshold = (-lambda).exp();
    let mut count = 0u32;
    let mut product = rng.gen::<f64>();
    while product > threshold {
        count += 1;
        product *= rng.gen::<f64>();
    }
    count
}

fn draw_destination(
    world: &GridWorld,
    origin: GridId,
    max_hops: u32,
    rng: &mut ChaCha8Rng,
) -> GridId {
    let candidates: Vec<GridId> = world
        .grid_ids()
        .filter(|&g| {
            g != origin
                && world
                    .grid_distance(origin, g)
                    .map(|d| d <= max_hops)
                    .unwrap_or(false)
        })
        .collect();
    if candidates.is_empty() {
        return origin;
    }
    candidates[rng.gen_range(0..candidates.len())]
}

/// Parses an order history file: header `timestep,origin_grid,dest_grid,price,duration`
/// then one comma-separated row per order. In strict mode any malformed row
/// is fatal; otherwise malformed rows are reported (with line numbers) and
/// skipped.
pub fn parse_order_history(
    text: &str,
    strict: bool,
) -> Result<(Vec<HistoryRow>, Vec<String>), CoreError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
            Some((n, l)) => break (n, l),
            None => {
                return Err(CoreError::Parse {
                    line: 1,
                    msg: "order history is empty (header row required)".into(),
                })
            }
        }
    };
    let expected = "timestep,origin_grid,dest_grid,price,duration";
    let normalized: String = header
        .1
        .split(',')
        .map(|f| f.trim())
        .collect::<Vec<_>>()
        .join(",");
    if normalized != expected {
        return Err(CoreError::Parse {
            line: header.0 + 1,
            msg: format!("header must be `{expected}`, got `{}`", header.1.trim()),
        });
    }

    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        match parse_history_row(content) {
            Ok(row) => rows.push(row),
            Err(msg) => {
                if strict {
                    return Err(CoreError::Parse { line, msg });
                }
                diagnostics.push(format!("line {line}: {msg} (row skipped)"));
            }
        }
    }
    Ok((rows, diagnostics))
}

fn parse_history_row(content: &str) -> Result<HistoryRow, String> {
    let fields: Vec<&str> = content.split(',').map(|f| f.trim()).collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 fields, got {}", fields.len()));
    }
    let timestep = fields[0]
        .parse::<u64>()
        .map_err(|_| format!("bad timestep `{}`", fields[0]))?;
    let origin = fields[1]
        .parse::<usize>()
        .map_err(|_| format!("bad origin_grid `{}`", fields[1]))?;
    let destination = fields[2]
        .parse::<usize>()
        .map_err(|_| format!("bad dest_grid `{}`", fields[2]))?;
    let price = fields[3]
        .parse::<f64>()
        .map_err(|_| format!("bad price `{}`", fields[3]))?;
    if !price.is_finite() || price <= 0.0 {
        return Err(format!(
            "real orders need a positive price, got `{}`",
            fields[3]
        ));
    }
    let duration = fields[4]
        .parse::<u32>()
        .map_err(|_| format!("bad duration `{}`", fields[4]))?;
    if duration == 0 {
        return Err("duration must be positive".into());
    }
    Ok(HistoryRow {
        timestep,
        origin,
        destination,
        price,
        duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgrid::{build_world, Axial, WorldShape};

    fn world() -> GridWorld {
        build_world(&WorldShape::Radius(2)).unwrap()
    }

    #[test]
    fn fake_orders_per_grid() {
        let w = world();
        let center = w.id_of(Axial::new(0, 0)).unwrap();
        let fakes = build_fake_orders(&w, center).unwrap();
        assert_eq!(fakes.len(), 7);

        let corner = w.id_of(Axial::new(2, 0)).unwrap();
        let fakes = build_fake_orders(&w, corner).unwrap();
        assert_eq!(fakes.len(), 4);

        let stay = &fakes[0];
        assert_eq!(stay.destination, stay.origin);
        assert_eq!(stay.duration, 1);
        assert_eq!(stay.price, 0.0);
        assert!(fakes.iter().all(|o| o.kind == OrderKind::Fake));
        assert!(build_fake_orders(&w, 999).is_err());
    }

    #[test]
    fn history_sampling_rates() {
        let w = world();
        let rows = vec![
            HistoryRow {
                timestep: 3,
                origin: 0,
                destination: 1,
                price: 5.0,
                duration: 2,
            },
            HistoryRow {
                timestep: 3,
                origin: 1,
                destination: 2,
                price: 4.0,
                duration: 1,
            },
            HistoryRow {
                timestep: 3,
                origin: 2,
                destination: 0,
                price: 3.0,
                duration: 3,
            },
            HistoryRow {
                timestep: 4,
                origin: 0,
                destination: 1,
                price: 9.0,
                duration: 1,
            },
        ];
        let ctx = StreamCtx {
            seed: 7,
            episode: 0,
        };

        let none = OrderSource::History {
            rows: rows.clone(),
            sampling_rate: 0.0,
        };
        assert!(none.generate(&w, 3, &ctx).unwrap().is_empty());

        let all = OrderSource::History {
            rows: rows.clone(),
            sampling_rate: 1.0,
        };
        let got = all.generate(&w, 3, &ctx).unwrap();
        assert_eq!(got.len(), 3, "window filter keeps only timestep 3");
        assert!(got.iter().all(|o| o.kind == OrderKind::Real));

        let bad = OrderSource::History {
            rows: vec![HistoryRow {
                timestep: 0,
                origin: 99,
                destination: 0,
                price: 1.0,
                duration: 1,
            }],
            sampling_rate: 1.0,
        };
        assert!(matches!(
            bad.generate(&w, 0, &ctx),
            Err(CoreError::UnknownGrid(99))
        ));
    }

    #[test]
    fn poisson_sample_mean_within_three_sigma() {
        let mut rng = stream_rng(
            &StreamCtx {
                seed: 42,
                episode: 0,
            },
            STREAM_ORDERS,
            0,
            0,
        );
        let lambda = 4.0;
        let n = 10_000;
        let total: u64 = (0..n).map(|_| poisson_draw(&mut rng, lambda) as u64).sum();
        let mean = total as f64 / n as f64;
        let sigma = (lambda / n as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn synthetic_generation_is_seed_deterministic() {
        let w = world();
        let demand = SyntheticDemand::uniform(w.num_cells(), 1.5, 144);
        let src = OrderSource::Synthetic(demand);
        let ctx = StreamCtx {
            seed: 11,
            episode: 2,
        };
        let a = src.generate(&w, 5, &ctx).unwrap();
        let b = src.generate(&w, 5, &ctx).unwrap();
        assert_eq!(a, b);
        let other = src
            .generate(
                &w,
                5,
                &StreamCtx {
                    seed: 12,
                    episode: 2,
                },
            )
            .unwrap();
        assert!(a != other || a.is_empty());
        for o in &a {
            assert!(o.price > 0.0);
            assert!(o.duration >= 1);
            assert_ne!(o.origin, o.destination);
        }
    }

    #[test]
    fn history_parser_header_and_rows() {
        let text = "timestep,origin_grid,dest_grid,price,duration\n0,0,1,5.5,2\n\n1,2,0,3.0,1\n";
        let (rows, diags) = parse_order_history(text, true).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(diags.is_empty());
        assert_eq!(
            rows[0],
            HistoryRow {
                timestep: 0,
                origin: 0,
                destination: 1,
                price: 5.5,
                duration: 2
            }
        );

        let bad = "timestep,origin_grid,dest_grid,price,duration\n0,0,1,oops,2\n1,1,0,2.0,1\n";
        let err = parse_order_history(bad, true).unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 2, .. }));
        let (rows, diags) = parse_order_history(bad, false).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].contains("line 2"));

        assert!(parse_order_history("nope\n", true).is_err());
        assert!(parse_order_history("", true).is_err());
    }
}
