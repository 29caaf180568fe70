//! Python bindings for the core simulator types and operations: worlds,
//! entropy and Poisson-KL primitives, Boltzmann Selected-k sampling,
//! temperature annealing, and a seeded simulator driven by the rule-based
//! policies or explicit decisions.

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use coride_core::baselines::{decide, RulePolicy};
use coride_core::error::CoreError;
use coride_core::experiment::build_case_study_world;
use coride_core::hexgrid::{build_world, parse_world_spec, GridWorld, WorldShape};
use coride_core::ranking::{anneal_temperature, selected_k, AnnealSchedule};
use coride_core::sim::{
    build_fake_orders, entropy, kl_poisson, stream_rng, Order, OrderKind, OrderSource, SimState,
    StreamCtx, SyntheticDemand, STREAM_BASELINE, STREAM_SELECT,
};

fn core_err(e: CoreError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Immutable hexagonal grid world.
#[pyclass(name = "World")]
struct PyWorld {
    inner: GridWorld,
    sampling: Option<Vec<f64>>,
}

#[pymethods]
impl PyWorld {
    /// Hex-of-hexes world of the given radius.
    #[staticmethod]
    fn radius(radius: u32) -> PyResult<Self> {
        Ok(PyWorld {
            inner: build_world(&WorldShape::Radius(radius)).map_err(core_err)?,
            sampling: None,
        })
    }

    /// The 21-grid, 3-district case-study world with per-district
    /// sampling-rate discounts.
    #[staticmethod]
    fn case_study(discount_rate: f64) -> PyResult<Self> {
        let (world, sampling) = build_case_study_world(discount_rate).map_err(core_err)?;
        Ok(PyWorld {
            inner: world,
            sampling: Some(sampling),
        })
    }

    /// Parse the plain-text world spec schema.
    #[staticmethod]
    fn from_spec(text: &str) -> PyResult<Self> {
        let shape = parse_world_spec(text).map_err(core_err)?;
        Ok(PyWorld {
            inner: build_world(&shape).map_err(core_err)?,
            sampling: None,
        })
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.num_cells()
    }

    #[getter]
    fn num_districts(&self) -> usize {
        self.inner.num_districts()
    }

    fn neighbors(&self, grid: usize) -> PyResult<Vec<usize>> {
        Ok(self.inner.neighbors(grid).map_err(core_err)?.to_vec())
    }

    fn distance(&self, a: usize, b: usize) -> PyResult<u32> {
        self.inner.grid_distance(a, b).map_err(core_err)
    }

    fn district_of(&self, grid: usize) -> PyResult<usize> {
        self.inner.district_of(grid).map_err(core_err)
    }

    fn members(&self, district: usize) -> PyResult<Vec<usize>> {
        Ok(self.inner.members(district).map_err(core_err)?.to_vec())
    }

    /// Per-grid sampling rates (case-study worlds only).
    fn sampling_rates(&self) -> Option<Vec<f64>> {
        self.sampling.clone()
    }

    fn spec_text(&self) -> String {
        self.inner.to_spec_text()
    }

    /// Number of fake (fleet control) orders a grid offers: its neighbor
    /// count plus the stay order.
    fn fake_order_count(&self, grid: usize) -> PyResult<usize> {
        Ok(build_fake_orders(&self.inner, grid)
            .map_err(core_err)?
            .len())
    }

    fn __repr__(&self) -> String {
        format!(
            "World(cells={}, districts={})",
            self.inner.num_cells(),
            self.inner.num_districts()
        )
    }
}

/// Seeded discrete-time market simulator over one world.
#[pyclass(name = "Simulator", unsendable)]
struct PySimulator {
    world: GridWorld,
    state: SimState,
    source: OrderSource,
    stream: StreamCtx,
    adi: f64,
    orr_num: u64,
    orr_den: u64,
    ast: u64,
    tnf: u32,
}

#[pymethods]
impl PySimulator {
    #[new]
    #[pyo3(signature = (world, vehicles_per_grid, seed, base_rate=1.2, steps_per_episode=144))]
    fn new(
        world: &PyWorld,
        vehicles_per_grid: u32,
        seed: u64,
        base_rate: f64,
        steps_per_episode: u64,
    ) -> PyResult<Self> {
        let stream = StreamCtx { seed, episode: 0 };
        let mut demand =
            SyntheticDemand::uniform(world.inner.num_cells(), base_rate, steps_per_episode);
        if let Some(sampling) = &world.sampling {
            demand.grid_sampling = sampling.clone();
        }
        Ok(PySimulator {
            world: world.inner.clone(),
            state: SimState::uniform(&world.inner, vehicles_per_grid, stream),
            source: OrderSource::Synthetic(demand),
            stream,
            adi: 0.0,
            orr_num: 0,
            orr_den: 0,
            ast: 0,
            tnf: 0,
        })
    }

    #[getter]
    fn clock(&self) -> u64 {
        self.state.clock()
    }

    fn total_vehicles(&self) -> u64 {
        self.state.total_vehicles()
    }

    fn idle(&self, grid: usize) -> u32 {
        self.state.idle(grid)
    }

    /// Worker observation tuple `(n_vehicles, n_orders, entropy, n_fleet,
    /// order_stats)`.
    fn observe(&self, grid: usize) -> (u32, u32, f64, u32, Vec<f64>) {
        let o = self.state.observe_worker(grid);
        (
            o.n_vehicles,
            o.n_orders,
            o.entropy,
            o.n_fleet,
            o.order_stats.to_vec(),
        )
    }

    /// Advance one step under a rule policy ("ran", "res", or "rev").
    /// Returns the step's metric deltas.
    fn step_rule(&mut self, policy: &str) -> PyResult<HashMap<String, f64>> {
        let rule = RulePolicy::parse(policy)
            .ok_or_else(|| PyValueError::new_err(format!("unknown rule policy `{policy}`")))?;
        let t = self.state.clock();
        let orders = self
            .source
            .generate(&self.world, t, &self.stream)
            .map_err(core_err)?;
        self.state
            .inject_orders(&self.world, orders)
            .map_err(core_err)?;
        let mut decisions = vec![Vec::new(); self.world.num_cells()];
        for g in self.world.grid_ids() {
            let mut rng = stream_rng(&self.stream, STREAM_BASELINE, t, g as u64);
            decisions[g] = decide(
                rule,
                self.state.pending_orders(g),
                self.state.idle(g),
                &mut rng,
            );
        }
        let outcome = self.state.step(&self.world, &decisions).map_err(core_err)?;
        self.adi += outcome.adi_delta;
        self.orr_num += outcome.orr_numerator as u64;
        self.orr_den += outcome.orr_denominator as u64;
        self.ast += outcome.ast_delta;
        self.tnf += outcome.tnf_delta;
        let mut out = HashMap::new();
        out.insert("adi_delta".to_string(), outcome.adi_delta);
        out.insert("served".to_string(), outcome.orr_numerator as f64);
        out.insert("generated".to_string(), outcome.orr_denominator as f64);
        out.insert("ast_delta".to_string(), outcome.ast_delta as f64);
        out.insert("tnf_delta".to_string(), outcome.tnf_delta as f64);
        Ok(out)
    }

    /// Move one idle vehicle to a neighbor grid (or keep it in place) via a
    /// fake order.
    fn fleet_move(&mut self, origin: usize, destination: usize) -> PyResult<()> {
        let fakes = build_fake_orders(&self.world, origin).map_err(core_err)?;
        let pick = fakes
            .into_iter()
            .find(|o| o.destination == destination)
            .ok_or_else(|| {
                PyValueError::new_err(format!(
                    "destination {destination} is not reachable from {origin} in one fleet move"
                ))
            })?;
        let mut decisions = vec![Vec::new(); self.world.num_cells()];
        decisions[origin] = vec![pick];
        self.state.step(&self.world, &decisions).map_err(core_err)?;
        Ok(())
    }

    /// Cumulative episode metrics.
    fn metrics(&self) -> HashMap<String, f64> {
        let mut out = HashMap::new();
        out.insert("adi".to_string(), self.adi);
        out.insert(
            "orr".to_string(),
            if self.orr_den == 0 {
                0.0
            } else {
                self.orr_num as f64 / self.orr_den as f64
            },
        );
        out.insert("ast".to_string(), self.ast as f64);
        out.insert("tnf".to_string(), self.tnf as f64);
        out
    }
}

/// Market entropy of a grid's idle-vehicle / open-order mix.
#[pyfunction]
#[pyo3(name = "entropy")]
fn entropy_py(n_vehicles: u32, n_orders: u32) -> f64 {
    entropy(n_vehicles, n_orders)
}

/// Closed-form KL divergence between two Poisson distributions.
#[pyfunction]
#[pyo3(name = "kl_poisson")]
fn kl_poisson_py(lambda1: f64, lambda2: f64) -> f64 {
    kl_poisson(lambda1, lambda2)
}

/// Sequential without-replacement Boltzmann selection of k item indices.
#[pyfunction]
#[pyo3(name = "selected_k")]
fn selected_k_py(scores: Vec<f64>, k: usize, tau: f64, seed: u64) -> PyResult<Vec<usize>> {
    let mut rng = stream_rng(&StreamCtx { seed, episode: 0 }, STREAM_SELECT, 0, 0);
    selected_k(&scores, k, tau, &mut rng).map_err(core_err)
}

/// Exploration temperature at a training step under the exponential
/// schedule from `start` down to `floor` over `horizon` steps.
#[pyfunction]
#[pyo3(name = "anneal_temperature", signature = (step, start=1.0, floor=0.01, horizon=1500))]
fn anneal_temperature_py(step: u64, start: f64, floor: f64, horizon: u64) -> f64 {
    anneal_temperature(
        step,
        &AnnealSchedule {
            start,
            floor,
            horizon,
        },
    )
}

/// The per-grid fake-order list as (origin, destination) pairs.
#[pyfunction]
fn fake_order_moves(world: &PyWorld, grid: usize) -> PyResult<Vec<(usize, usize)>> {
    let fakes = build_fake_orders(&world.inner, grid).map_err(core_err)?;
    debug_assert!(fakes
        .iter()
        .all(|o| o.kind == OrderKind::Fake && o.price == 0.0 && o.duration == 1));
    Ok(fakes
        .iter()
        .map(|o: &Order| (o.origin, o.destination))
        .collect())
}

#[pymodule]
fn coride_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorld>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(entropy_py, m)?)?;
    m.add_function(wrap_pyfunction!(kl_poisson_py, m)?)?;
    m.add_function(wrap_pyfunction!(selected_k_py, m)?)?;
    m.add_function(wrap_pyfunction!(anneal_temperature_py, m)?)?;
    m.add_function(wrap_pyfunction!(fake_order_moves, m)?)?;
    Ok(())
}
