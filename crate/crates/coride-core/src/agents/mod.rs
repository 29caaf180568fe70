//! Hierarchical agents: district managers emit unit-norm goals from a
//! dilated recurrence over their joint observation; grid workers turn their
//! observation, peer message, and goal embedding into a ranking weight
//! vector; two attention levels exchange peer messages. One call to
//! [`coride_step`] runs the whole per-timestep loop against the simulator.

pub mod attention;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::hexgrid::GridWorld;
use crate::nn::layers::{
    DilatedRnn, DilatedState, EmbeddingTable, Linear, Mlp, MlpCache, RnnCache, RnnCell,
};
use crate::nn::{Matrix, ParamStore};
use crate::ranking::{featurize, score, selected_k, FeatureConfig};
use crate::sim::{
    build_fake_orders, manager_reward, stream_rng, Order, SimState, StepOutcome, StreamCtx,
    WorldStats, OBS_DIM, STREAM_SELECT,
};

pub use attention::{AttentionAlpha, AttentionNet};

/// Goals must be unit norm within this tolerance.
pub const GOAL_NORM_TOL: f64 = 1e-6;
/// Below this norm the raw goal falls back to the first basis vector.
const GOAL_FALLBACK_EPS: f64 = 1e-8;

/// Network and reward hyperparameters shared by all agents.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub d_h: usize,
    pub d_g: usize,
    pub d_e: usize,
    pub heads: usize,
    pub dilation: usize,
    /// Intrinsic-reward horizon c.
    pub horizon_c: usize,
    /// Attention softmax temperature.
    pub iota: f64,
    /// Worker reward mix: intrinsic + beta * district reward.
    pub beta: f64,
    pub ref_price: f64,
    pub max_duration: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_h: 64,
            d_g: 16,
            d_e: 8,
            heads: 4,
            dilation: 4,
            horizon_c: 4,
            iota: 1.0,
            beta: 0.5,
            ref_price: 10.0,
            max_duration: 10.0,
        }
    }
}

/// Sizes derived from a world plus a [`ModelConfig`].
#[derive(Clone, Copy, Debug)]
pub struct AgentDims {
    pub obs_worker: usize,
    pub obs_manager: usize,
    pub d_h: usize,
    pub d_g: usize,
    pub feat_len: usize,
    /// Worker observation stored for training: raw observation plus the
    /// goal embedding active at that step.
    pub worker_train_obs: usize,
}

/// Manager module: two-layer MLP encoder over [observation | message],
/// dilated recurrence, and an affine goal head whose output is normalized
/// to the unit sphere.
#[derive(Clone, Debug)]
pub struct ManagerActor {
    pub mlp: Mlp,
    pub cell: DilatedRnn,
    pub goal_head: Linear,
    pub obs_dim: usize,
    pub d_h: usize,
    pub d_g: usize,
}

pub struct ManagerActCache {
    mlp: MlpCache,
    cell: crate::nn::layers::DilatedCache,
    h_m: Vec<f64>,
    ghat: Vec<f64>,
    norm: f64,
}

impl ManagerActor {
    pub fn new(
        store: &mut ParamStore,
        obs_dim: usize,
        d_h: usize,
        d_g: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mlp = Mlp::new(store, "enc", &[obs_dim + d_h, d_h, d_h], rng);
        let cell = DilatedRnn::new(store, "cell", d_h, d_h, dilation, rng);
        let goal_head = Linear::new(store, "goal", d_h, d_g, true, rng);
        ManagerActor {
            mlp,
            cell,
            goal_head,
            obs_dim,
            d_h,
            d_g,
        }
    }

    /// One acting step: returns the unit goal, the advanced recurrent state,
    /// the attention input `h^M`, and the backward cache.
    pub fn act(
        &self,
        store: &ParamStore,
        obs: &[f64],
        msg: &[f64],
        state: &DilatedState,
    ) -> Result<(Vec<f64>, DilatedState, Vec<f64>, ManagerActCache), CoreError> {
        if obs.len() != self.obs_dim || msg.len() != self.d_h {
            return Err(CoreError::ShapeMismatch(format!(
                "manager input {}+{} expected {}+{}",
                obs.len(),
                msg.len(),
                self.obs_dim,
                self.d_h
            )));
        }
        let mut x = Vec::with_capacity(obs.len() + msg.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(msg);
        let (enc, mlp_cache) = self.mlp.forward(store, &x);
        let (next_state, h_m, cell_cache) = self.cell.step(store, state, &enc);
        let ghat = self.goal_head.forward(store, &h_m);
        let norm = ghat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let goal = if norm < GOAL_FALLBACK_EPS {
            let mut g = vec![0.0; self.d_g];
            g[0] = 1.0;
            g
        } else {
            ghat.iter().map(|v| v / norm).collect()
        };
        let cache = ManagerActCache {
            mlp: mlp_cache,
            cell: cell_cache,
            h_m: h_m.clone(),
            ghat,
            norm,
        };
        Ok((goal, next_state, h_m, cache))
    }

    /// Training-path forward: zero recurrent burn-in, message as context.
    pub fn act_train(
        &self,
        store: &ParamStore,
        msg: &[f64],
        obs: &[f64],
    ) -> Result<(Vec<f64>, ManagerActCache), CoreError> {
        let zero = DilatedState::zeros(self.cell.dilation, self.d_h);
        let (goal, _, _, cache) = self.act(store, obs, msg, &zero)?;
        Ok((goal, cache))
    }

    /// Backward from dL/d_goal; accumulates parameter gradients.
    pub fn backward(&self, store: &mut ParamStore, cache: &ManagerActCache, d_goal: &[f64]) {
        // Through the normalization g = ghat / ||ghat||:
        // d_ghat = (d_g - g (g . d_g)) / ||ghat||; zero in the fallback region.
        let d_ghat: Vec<f64> = if cache.norm < GOAL_FALLBACK_EPS {
            vec![0.0; self.d_g]
        } else {
            let g: Vec<f64> = cache.ghat.iter().map(|v| v / cache.norm).collect();
            let inner: f64 = g.iter().zip(d_goal).map(|(a, b)| a * b).sum();
            g.iter()
                .zip(d_goal)
                .map(|(gi, di)| (di - gi * inner) / cache.norm)
                .collect()
        };
        let d_hm = self.goal_head.backward(store, &cache.h_m, &d_ghat);
        let d_enc = self.cell.backward(store, &cache.cell, &d_hm);
        self.mlp.backward(store, &cache.mlp, &d_enc);
    }
}

/// Worker module: tanh recurrence over [observation | message]; the action
/// head maps `[u | u * tile(w)]` to the ranking weight vector, so the goal
/// pathway modulates multiplicatively. Also owns the goal projection and
/// the grid embedding table used by the ranking features.
#[derive(Clone, Debug)]
pub struct WorkerActor {
    pub cell: RnnCell,
    pub head: Linear,
    pub goal_proj: Linear,
    pub embeddings: EmbeddingTable,
    pub obs_dim: usize,
    pub d_h: usize,
    pub d_g: usize,
    pub feat_len: usize,
}

pub struct WorkerActCache {
    rnn: RnnCache,
    u: Vec<f64>,
    tiled: Vec<f64>,
    z: Vec<f64>,
}

impl WorkerActor {
    pub fn new(
        store: &mut ParamStore,
        obs_dim: usize,
        d_h: usize,
        d_g: usize,
        feat_len: usize,
        n_grids: usize,
        d_e: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let cell = RnnCell::new(store, "rnn", obs_dim + d_h, d_h, rng);
        let head = Linear::new(store, "act", 2 * d_h, feat_len, true, rng);
        let goal_proj = Linear::new(store, "goal_proj", d_g, feat_len, false, rng);
        let embeddings = EmbeddingTable::new(store, "embed", n_grids, d_e, rng);
        WorkerActor {
            cell,
            head,
            goal_proj,
            embeddings,
            obs_dim,
            d_h,
            d_g,
            feat_len,
        }
    }

    /// Linear goal embedding `w = W_phi g` (no bias).
    pub fn goal_embed(&self, store: &ParamStore, goal: &[f64]) -> Vec<f64> {
        self.goal_proj.forward(store, goal)
    }

    pub fn act(
        &self,
        store: &ParamStore,
        obs: &[f64],
        msg: &[f64],
        goal_embedding: &[f64],
        h: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, WorkerActCache), CoreError> {
        if obs.len() != self.obs_dim
            || msg.len() != self.d_h
            || goal_embedding.len() != self.feat_len
        {
            return Err(CoreError::ShapeMismatch(format!(
                "worker input obs={} msg={} w={}, expected {}/{}/{}",
                obs.len(),
                msg.len(),
                goal_embedding.len(),
                self.obs_dim,
                self.d_h,
                self.feat_len
            )));
        }
        let mut x = Vec::with_capacity(obs.len() + msg.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(msg);
        let (u, rnn_cache) = self.cell.step(store, &x, h);
        let tiled = tile_to(goal_embedding, self.d_h);
        let mut z = Vec::with_capacity(2 * self.d_h);
        z.extend_from_slice(&u);
        z.extend(u.iter().zip(&tiled).map(|(a, b)| a * b));
        let omega = self.head.forward(store, &z);
        let cache = WorkerActCache {
            rnn: rnn_cache,
            u: u.clone(),
            tiled,
            z,
        };
        Ok((omega, u, cache))
    }

    /// Training-path forward: the stored observation is
    /// `[raw observation | goal embedding]`; burn-in is zero.
    pub fn act_train(
        &self,
        store: &ParamStore,
        msg: &[f64],
        train_obs: &[f64],
    ) -> Result<(Vec<f64>, WorkerActCache), CoreError> {
        if train_obs.len() != self.obs_dim + self.feat_len {
            return Err(CoreError::ShapeMismatch(format!(
                "worker training obs has {} entries, expected {}",
                train_obs.len(),
                self.obs_dim + self.feat_len
            )));
        }
        let (obs, w) = train_obs.split_at(self.obs_dim);
        let zero = vec![0.0; self.d_h];
        let (omega, _, cache) = self.act(store, obs, msg, w, &zero)?;
        Ok((omega, cache))
    }

    /// Backward from dL/d_omega; accumulates parameter gradients and
    /// returns dL/d_goal_embedding.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &WorkerActCache,
        d_omega: &[f64],
    ) -> Vec<f64> {
        let d_z = self.head.backward(store, &cache.z, d_omega);
        let (d_u_direct, d_mod) = d_z.split_at(self.d_h);
        let d_u: Vec<f64> = d_u_direct
            .iter()
            .zip(d_mod)
            .zip(&cache.tiled)
            .map(|((du, dm), t)| du + dm * t)
            .collect();
        let d_tiled: Vec<f64> = d_mod.iter().zip(&cache.u).map(|(dm, u)| dm * u).collect();
        let mut d_w = vec![0.0; self.feat_len];
        for (i, d) in d_tiled.iter().enumerate() {
            d_w[i % self.feat_len] += d;
        }
        self.cell.backward(store, &cache.rnn, &d_u);
        d_w
    }
}

/// Tiles (or truncates) `v` to length `n`.
fn tile_to(v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| v[i % v.len()]).collect()
}

/// Average cosine alignment between recent observation changes and the
/// goals active when those changes began:
/// `(1/c) * sum_{i=1..c} cos(P o_t - P o_{t-i}, g_{t-i})`.
///
/// Observations are mapped into goal space by the fixed projection `proj`.
/// At `t < c` only the available lags are averaged (over `min(c, t)`), and
/// a zero observation difference contributes 0.
pub fn intrinsic_reward(
    obs_history: &[Vec<f64>],
    goal_history: &[Vec<f64>],
    c: usize,
    proj: &Matrix,
) -> Result<f64, CoreError> {
    if obs_history.is_empty() {
        return Err(CoreError::EmptyHistory);
    }
    let t = obs_history.len() - 1;
    let avail = c.min(t).min(goal_history.len());
    if avail == 0 {
        return Ok(0.0);
    }
    let current = proj.matvec(&obs_history[t]);
    let mut total = 0.0;
    for i in 1..=avail {
        let past = proj.matvec(&obs_history[t - i]);
        let diff: Vec<f64> = current.iter().zip(&past).map(|(a, b)| a - b).collect();
        let goal = &goal_history[t - i];
        total += cosine(&diff, goal);
    }
    Ok(total / avail as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// The fixed (seeded, untrained) observation-to-goal-space projection used
/// by the intrinsic reward. Independent of the experiment seed so stored
/// models keep their reward scale.
pub fn fixed_obs_projection(d_g: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5_9035);
    Matrix::xavier(d_g, OBS_DIM, &mut rng)
}

/// Everything learned (or fixed) that defines one policy: shared manager
/// and worker modules, per-level attention, and the ranking feature config.
pub struct CorideModel {
    pub cfg: ModelConfig,
    pub dims: AgentDims,
    pub manager: ManagerActor,
    pub manager_store: ParamStore,
    pub worker: WorkerActor,
    pub worker_store: ParamStore,
    pub attn_worker: AttentionNet,
    pub attn_worker_store: ParamStore,
    pub attn_manager: AttentionNet,
    pub attn_manager_store: ParamStore,
    pub feature_cfg: FeatureConfig,
    pub obs_proj: Matrix,
}

impl CorideModel {
    pub fn new(world: &GridWorld, cfg: &ModelConfig, seed: u64) -> Self {
        let feature_cfg = FeatureConfig {
            d_e: cfg.d_e,
            ref_price: cfg.ref_price,
            max_duration: cfg.max_duration,
        };
        let dims = AgentDims {
            obs_worker: OBS_DIM,
            obs_manager: world.max_district_size() * OBS_DIM,
            d_h: cfg.d_h,
            d_g: cfg.d_g,
            feat_len: feature_cfg.feature_len(),
            worker_train_obs: OBS_DIM + feature_cfg.feature_len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let mut manager_store = ParamStore::new();
        let manager = ManagerActor::new(
            &mut manager_store,
            dims.obs_manager,
            cfg.d_h,
            cfg.d_g,
            cfg.dilation,
            &mut rng,
        );
        let mut worker_store = ParamStore::new();
        let worker = WorkerActor::new(
            &mut worker_store,
            OBS_DIM,
            cfg.d_h,
            cfg.d_g,
            dims.feat_len,
            world.num_cells(),
            cfg.d_e,
            &mut rng,
        );
        let mut attn_worker_store = ParamStore::new();
        let attn_worker = AttentionNet::new(
            &mut attn_worker_store,
            "attn_w",
            cfg.d_h,
            cfg.heads,
            &mut rng,
        );
        let mut attn_manager_store = ParamStore::new();
        let attn_manager = AttentionNet::new(
            &mut attn_manager_store,
            "attn_m",
            cfg.d_h,
            cfg.heads,
            &mut rng,
        );
        CorideModel {
            cfg: cfg.clone(),
            dims,
            manager,
            manager_store,
            worker,
            worker_store,
            attn_worker,
            attn_worker_store,
            attn_manager,
            attn_manager_store,
            feature_cfg,
            obs_proj: fixed_obs_projection(cfg.d_g),
        }
    }

    /// Replaces this model's parameters with checkpointed stores (keyed
    /// `manager_actor`, `worker_actor`, `attn_worker`, `attn_manager`).
    /// Stores absent from the map are left as-is; shapes must match.
    pub fn restore(
        &mut self,
        stores: &std::collections::BTreeMap<String, ParamStore>,
    ) -> Result<(), CoreError> {
        for (name, slot) in [
            ("manager_actor", &mut self.manager_store),
            ("worker_actor", &mut self.worker_store),
            ("attn_worker", &mut self.attn_worker_store),
            ("attn_manager", &mut self.attn_manager_store),
        ] {
            if let Some(loaded) = stores.get(name) {
                crate::nn::soft_update(slot, loaded, 1.0).map_err(|e| {
                    CoreError::Checkpoint(format!("store `{name}` does not fit this model: {e}"))
                })?;
            }
        }
        Ok(())
    }
}

/// Mutable per-episode agent state: messages produced at `t-1`, recurrent
/// states, and the observation/goal histories behind the intrinsic reward.
pub struct EpisodeContext {
    pub stream: StreamCtx,
    pub worker_msgs: Vec<Vec<f64>>,
    pub manager_msgs: Vec<Vec<f64>>,
    pub worker_states: Vec<Vec<f64>>,
    pub manager_states: Vec<DilatedState>,
    pub obs_hist: Vec<Vec<Vec<f64>>>,
    pub goal_hist: Vec<Vec<Vec<f64>>>,
    /// Boltzmann temperature for this step's Selected-k sampling.
    pub temperature: f64,
    /// Whether fake (fleet control) orders join the item space.
    pub fleet_orders: bool,
}

impl EpisodeContext {
    pub fn new(
        world: &GridWorld,
        model: &CorideModel,
        stream: StreamCtx,
        fleet_orders: bool,
    ) -> Self {
        EpisodeContext {
            stream,
            worker_msgs: vec![vec![0.0; model.cfg.d_h]; world.num_cells()],
            manager_msgs: vec![vec![0.0; model.cfg.d_h]; world.num_districts()],
            worker_states: vec![vec![0.0; model.cfg.d_h]; world.num_cells()],
            manager_states: vec![
                DilatedState::zeros(model.cfg.dilation, model.cfg.d_h);
                world.num_districts()
            ],
            obs_hist: vec![Vec::new(); world.num_cells()],
            goal_hist: vec![Vec::new(); world.num_districts()],
            temperature: 1.0,
            fleet_orders,
        }
    }
}

/// Which communication level an exported attention weight belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionLevel {
    Manager,
    Worker,
}

impl AttentionLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionLevel::Manager => "manager",
            AttentionLevel::Worker => "worker",
        }
    }
}

/// One exported attention weight: ids are district ids at the manager level
/// and grid ids at the worker level.
#[derive(Clone, Debug)]
pub struct AttentionLogRow {
    pub step: u64,
    pub level: AttentionLevel,
    pub head: usize,
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Everything one joint step produced, for the simulator metrics and the
/// trainer.
pub struct CorideStepOutput {
    pub decisions: Vec<Vec<Order>>,
    pub outcome: StepOutcome,
    pub manager_obs: Vec<Vec<f64>>,
    pub worker_obs: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    pub goal_embeds: Vec<Vec<f64>>,
    pub omegas: Vec<Vec<f64>>,
    pub manager_rewards: Vec<f64>,
    pub worker_rewards: Vec<f64>,
    pub worker_intrinsic: Vec<f64>,
    pub msgs_prev_worker: Vec<Vec<f64>>,
    pub msgs_prev_manager: Vec<Vec<f64>>,
    pub attention: Vec<AttentionLogRow>,
    pub attention_runs_manager: usize,
    pub attention_runs_worker: usize,
}

/// Runs one full joint step: goal emission per district, ranking-weight
/// actions and Selected-k decisions per grid, the simulator transition,
/// district and worker rewards, then both attention exchanges (whose
/// messages are consumed at the next step).
pub fn coride_step(
    world: &GridWorld,
    model: &CorideModel,
    state: &mut SimState,
    ctx: &mut EpisodeContext,
    stats: &WorldStats,
) -> Result<CorideStepOutput, CoreError> {
    let t = state.clock();
    let n_grids = world.num_cells();
    let n_districts = world.num_districts();
    let msgs_prev_worker = ctx.worker_msgs.clone();
    let msgs_prev_manager = ctx.manager_msgs.clone();

    // Managers act.
    let mut goals = Vec::with_capacity(n_districts);
    let mut goal_embeds = Vec::with_capacity(n_districts);
    let mut manager_obs = Vec::with_capacity(n_districts);
    let mut manager_h = Vec::with_capacity(n_districts);
    for d in 0..n_districts {
        let obs = state.observe_manager(world, d)?;
        let (goal, next_state, h_m, _) = model.manager.act(
            &model.manager_store,
            &obs,
            &ctx.manager_msgs[d],
            &ctx.manager_states[d],
        )?;
        ctx.manager_states[d] = next_state;
        ctx.goal_hist[d].push(goal.clone());
        goal_embeds.push(model.worker.goal_embed(&model.worker_store, &goal));
        goals.push(goal);
        manager_obs.push(obs);
        manager_h.push(h_m);
    }

    // Workers act and select items.
    let mut worker_obs = Vec::with_capacity(n_grids);
    let mut omegas = Vec::with_capacity(n_grids);
    let mut worker_h = Vec::with_capacity(n_grids);
    let mut decisions = vec![Vec::new(); n_grids];
    for g in 0..n_grids {
        let district = world.district_of(g)?;
        let obs = state.observe_worker(g).as_vec();
        ctx.obs_hist[g].push(obs.clone());
        let (omega, u, _) = model.worker.act(
            &model.worker_store,
            &obs,
            &ctx.worker_msgs[g],
            &goal_embeds[district],
            &ctx.worker_states[g],
        )?;
        ctx.worker_states[g] = u.clone();

        let mut items: Vec<Order> = state.pending_orders(g).to_vec();
        if ctx.fleet_orders {
            items.extend(build_fake_orders(world, g)?);
        }
        let k = (state.idle(g) as usize).min(items.len());
        if k > 0 {
            let features: Vec<Vec<f64>> = items
                .iter()
                .map(|o| {
                    featurize(
                        o,
                        state,
                        &model.worker.embeddings,
                        &model.worker_store,
                        &model.feature_cfg,
                    )
                })
                .collect::<Result<_, _>>()?;
            let scores = score(&omega, &features)?;
            let mut rng = stream_rng(&ctx.stream, STREAM_SELECT, t, g as u64);
            let picks = selected_k(&scores, k, ctx.temperature, &mut rng)?;
            decisions[g] = picks.into_iter().map(|i| items[i].clone()).collect();
        }

        worker_obs.push(obs);
        omegas.push(omega);
        worker_h.push(u);
    }

    // Intrinsic rewards are computed from action-time observations.
    let mut worker_intrinsic = Vec::with_capacity(n_grids);
    for g in 0..n_grids {
        let district = world.district_of(g)?;
        let r = intrinsic_reward(
            &ctx.obs_hist[g],
            &ctx.goal_hist[district],
            model.cfg.horizon_c,
            &model.obs_proj,
        )?;
        worker_intrinsic.push(r);
    }

    // Environment transition.
    let outcome = state.step(world, &decisions)?;

    // Rewards.
    let mut manager_rewards = Vec::with_capacity(n_districts);
    for d in 0..n_districts {
        manager_rewards.push(manager_reward(world, d, &outcome, stats)?);
    }
    let worker_rewards: Vec<f64> = (0..n_grids)
        .map(|g| {
            let d = world.district_of(g).expect("validated above");
            worker_intrinsic[g] + model.cfg.beta * manager_rewards[d]
        })
        .collect();

    // Worker-level attention, once per district over its members.
    let mut attention = Vec::new();
    let mut attention_runs_worker = 0;
    for d in 0..n_districts {
        let members = world.members(d)?;
        let inputs: Vec<Vec<f64>> = members.iter().map(|&g| worker_h[g].clone()).collect();
        let hoods: Vec<Vec<usize>> = (0..members.len())
            .map(|_| (0..members.len()).collect())
            .collect();
        let (msgs, alphas, _) = model.attn_worker.exchange(
            &model.attn_worker_store,
            &inputs,
            &hoods,
            model.cfg.iota,
        )?;
        attention_runs_worker += 1;
        for (local, &g) in members.iter().enumerate() {
            ctx.worker_msgs[g] = msgs[local].clone();
        }
        attention.extend(alphas.into_iter().map(|a| AttentionLogRow {
            step: t,
            level: AttentionLevel::Worker,
            head: a.head,
            source: members[a.source],
            target: members[a.target],
            weight: a.weight,
        }));
    }

    // Manager-level attention, once per step over adjacent districts.
    let hoods: Vec<Vec<usize>> = (0..n_districts)
        .map(|d| {
            let mut hood = vec![d];
            hood.extend_from_slice(world.district_neighbors(d).expect("district ids are dense"));
            hood.sort_unstable();
            hood
        })
        .collect();
    let (msgs, alphas, _) = model.attn_manager.exchange(
        &model.attn_manager_store,
        &manager_h,
        &hoods,
        model.cfg.iota,
    )?;
    ctx.manager_msgs = msgs;
    let attention_runs_manager = 1;
    attention.extend(alphas.into_iter().map(|a| AttentionLogRow {
        step: t,
        level: AttentionLevel::Manager,
        head: a.head,
        source: a.source,
        target: a.target,
        weight: a.weight,
    }));

    Ok(CorideStepOutput {
        decisions,
        outcome,
        manager_obs,
        worker_obs,
        goals,
        goal_embeds,
        omegas,
        manager_rewards,
        worker_rewards,
        worker_intrinsic,
        msgs_prev_worker,
        msgs_prev_manager,
        attention,
        attention_runs_manager,
        attention_runs_worker,
    })
}
