//! Deterministic-policy-gradient training: replay buffers over
//! `<m_{t-1}, o_t, a_t, r_t, o_{t+1}, m_t>` tuples, critic regression
//! against soft target networks, actor ascent through the critic, and the
//! episode loop that trains the shared manager and worker modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{coride_step, CorideModel, EpisodeContext, ManagerActor, WorkerActor};
use crate::error::CoreError;
use crate::hexgrid::GridWorld;
use crate::nn::layers::{Mlp, MlpCache};
use crate::nn::{soft_update, Adam, ParamStore};
use crate::ranking::{anneal_temperature, AnnealSchedule};
use crate::sim::{stream_rng, OrderSource, RateHistory, SimState, StreamCtx, WorldStats};

pub const STREAM_TRAIN: u64 = 7;

/// One replay record. Messages stand in for the recurrent context; burn-in
/// at update time is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub msg_prev: Vec<f64>,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub obs_next: Vec<f64>,
    pub msg: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform without-replacement batches.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    msg_dim: usize,
    obs_dim: usize,
    act_dim: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, msg_dim: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            msg_dim,
            obs_dim,
            act_dim,
            data: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn push(&mut self, tr: Transition) -> Result<(), CoreError> {
        if tr.msg_prev.len() != self.msg_dim
            || tr.msg.len() != self.msg_dim
            || tr.obs.len() != self.obs_dim
            || tr.obs_next.len() != self.obs_dim
            || tr.action.len() != self.act_dim
        {
            return Err(CoreError::ShapeMismatch(format!(
                "transition dims msg={}/{} obs={}/{} act={} do not match buffer {}/{}/{}",
                tr.msg_prev.len(),
                tr.msg.len(),
                tr.obs.len(),
                tr.obs_next.len(),
                tr.action.len(),
                self.msg_dim,
                self.obs_dim,
                self.act_dim
            )));
        }
        if self.data.len() < self.capacity {
            self.data.push(tr);
        } else {
            self.data[self.cursor] = tr;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Uniform batch without replacement (partial Fisher-Yates over indices).
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        let n = self.data.len();
        let take = batch.min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..take {
            let j = rng.gen_range(i..n);
            indices.swap(i, j);
        }
        indices[..take].iter().map(|&i| &self.data[i]).collect()
    }
}

/// Q network over `[message | observation | action]`.
#[derive(Clone, Debug)]
pub struct Critic {
    pub mlp: Mlp,
    pub msg_dim: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl Critic {
    pub fn new(
        store: &mut ParamStore,
        msg_dim: usize,
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mlp = Mlp::new(
            store,
            "q",
            &[msg_dim + obs_dim + act_dim, hidden, hidden, 1],
            rng,
        );
        Critic {
            mlp,
            msg_dim,
            obs_dim,
            act_dim,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        msg: &[f64],
        obs: &[f64],
        action: &[f64],
    ) -> Result<(f64, MlpCache), CoreError> {
        if msg.len() != self.msg_dim || obs.len() != self.obs_dim || action.len() != self.act_dim {
            return Err(CoreError::ShapeMismatch(format!(
                "critic input {}+{}+{}, expected {}+{}+{}",
                msg.len(),
                obs.len(),
                action.len(),
                self.msg_dim,
                self.obs_dim,
                self.act_dim
            )));
        }
        let mut x = Vec::with_capacity(self.msg_dim + self.obs_dim + self.act_dim);
        x.extend_from_slice(msg);
        x.extend_from_slice(obs);
        x.extend_from_slice(action);
        let (y, cache) = self.mlp.forward(store, &x);
        Ok((y[0], cache))
    }

    /// Backward from dL/dq; accumulates parameter gradients and returns
    /// dL/d_action.
    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, d_q: f64) -> Vec<f64> {
        let d_in = self.mlp.backward(store, cache, &[d_q]);
        d_in[self.msg_dim + self.obs_dim..].to_vec()
    }

    pub fn q(
        &self,
        store: &ParamStore,
        msg: &[f64],
        obs: &[f64],
        action: &[f64],
    ) -> Result<f64, CoreError> {
        Ok(self.forward(store, msg, obs, action)?.0)
    }
}

/// A deterministic policy head usable in the update path (zero burn-in,
/// message as context).
pub trait PolicyActor {
    fn action_dim(&self) -> usize;
    fn act_policy(
        &self,
        store: &ParamStore,
        msg: &[f64],
        obs: &[f64],
    ) -> Result<Vec<f64>, CoreError>;
    /// Forward plus backward of `d_action` into the store's gradients.
    fn act_and_backprop(
        &self,
        store: &mut ParamStore,
        msg: &[f64],
        obs: &[f64],
        d_action: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, f64), CoreError>;
}

impl PolicyActor for ManagerActor {
    fn action_dim(&self) -> usize {
        self.d_g
    }

    fn act_policy(
        &self,
        store: &ParamStore,
        msg: &[f64],
        obs: &[f64],
    ) -> Result<Vec<f64>, CoreError> {
        Ok(self.act_train(store, msg, obs)?.0)
    }

    fn act_and_backprop(
        &self,
        store: &mut ParamStore,
        msg: &[f64],
        obs: &[f64],
        d_action: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, f64), CoreError> {
        let (action, cache) = self.act_train(store, msg, obs)?;
        let d = d_action(&action);
        let q_like = d.iter().map(|v| v.abs()).sum();
        self.backward(store, &cache, &d);
        Ok((action, q_like))
    }
}

impl PolicyActor for WorkerActor {
    fn action_dim(&self) -> usize {
        self.feat_len
    }

    fn act_policy(
        &self,
        store: &ParamStore,
        msg: &[f64],
        obs: &[f64],
    ) -> Result<Vec<f64>, CoreError> {
        Ok(self.act_train(store, msg, obs)?.0)
    }

    fn act_and_backprop(
        &self,
        store: &mut ParamStore,
        msg: &[f64],
        obs: &[f64],
        d_action: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, f64), CoreError> {
        let (action, cache) = self.act_train(store, msg, obs)?;
        let d = d_action(&action);
        let q_like = d.iter().map(|v| v.abs()).sum();
        self.backward(store, &cache, &d);
        Ok((action, q_like))
    }
}

/// Anything that can report Q and dQ/da, so the actor update can run
/// against either the learned critic or an analytic oracle.
pub trait ActionValue {
    fn q_with_action_grad(
        &mut self,
        msg: &[f64],
        obs: &[f64],
        action: &[f64],
    ) -> Result<(f64, Vec<f64>), CoreError>;
}

/// The learned critic as an [`ActionValue`]. Gradients accumulated into the
/// critic store as a side effect are scratch; critic updates always zero
/// their gradients first, and the critic's values are never touched here.
pub struct CriticEval<'a> {
    pub critic: &'a Critic,
    pub store: &'a mut ParamStore,
}

impl ActionValue for CriticEval<'_> {
    fn q_with_action_grad(
        &mut self,
        msg: &[f64],
        obs: &[f64],
        action: &[f64],
    ) -> Result<(f64, Vec<f64>), CoreError> {
        let (q, cache) = self.critic.forward(self.store, msg, obs, action)?;
        let d_action = self.critic.backward(self.store, &cache, 1.0);
        Ok((q, d_action))
    }
}

/// Bellman backup `y = r + gamma * (1 - done) * Q'(m_t, o_{t+1}, mu'(m_t, o_{t+1}))`.
pub fn critic_target<A: PolicyActor>(
    reward: f64,
    done: bool,
    msg: &[f64],
    obs_next: &[f64],
    target_actor: &A,
    target_actor_store: &ParamStore,
    target_critic: &Critic,
    target_critic_store: &ParamStore,
    gamma: f64,
) -> Result<f64, CoreError> {
    if done || gamma == 0.0 {
        return Ok(reward);
    }
    let action = target_actor.act_policy(target_actor_store, msg, obs_next)?;
    let q = target_critic.q(target_critic_store, msg, obs_next, &action)?;
    Ok(reward + gamma * q)
}

/// One mean-squared-error step on the critic; returns the pre-step loss.
pub fn update_critic(
    critic: &Critic,
    store: &mut ParamStore,
    opt: &mut Adam,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<f64, CoreError> {
    if batch.is_empty() {
        return Err(CoreError::InvalidConfig("empty critic batch".into()));
    }
    store.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (tr, &y) in batch.iter().zip(targets) {
        let (q, cache) = critic.forward(store, &tr.msg_prev, &tr.obs, &tr.action)?;
        let err = q - y;
        loss += err * err * scale;
        critic.backward(store, &cache, 2.0 * err * scale);
    }
    opt.step(store);
    Ok(loss)
}

/// One ascent step on mean Q along the deterministic policy; the critic's
/// values are untouched. Returns the pre-step mean Q.
pub fn update_actor<A: PolicyActor>(
    actor: &A,
    store: &mut ParamStore,
    opt: &mut Adam,
    value: &mut dyn ActionValue,
    batch: &[&Transition],
) -> Result<f64, CoreError> {
    if batch.is_empty() {
        return Err(CoreError::InvalidConfig("empty actor batch".into()));
    }
    store.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut mean_q = 0.0;
    for tr in batch {
        // Two-pass: compute dQ/da at the current action, then push the
        // negated, scaled gradient back through the actor (Adam descends).
        let action = actor.act_policy(store, &tr.msg_prev, &tr.obs)?;
        let (q, d_action) = value.q_with_action_grad(&tr.msg_prev, &tr.obs, &action)?;
        mean_q += q * scale;
        let upstream: Vec<f64> = d_action.iter().map(|d| -d * scale).collect();
        actor.act_and_backprop(store, &tr.msg_prev, &tr.obs, &|_| upstream.clone())?;
    }
    opt.step(store);
    Ok(mean_q)
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub episodes: u32,
    pub steps_per_episode: u64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Minimum stored transitions (per role) before updates begin.
    pub warmup: usize,
    pub soft_tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_hidden: usize,
    pub anneal: AnnealSchedule,
    pub fleet_orders: bool,
    pub updates_per_step: u32,
    pub rate_buckets: usize,
    pub vehicles_per_grid: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 20,
            steps_per_episode: 144,
            gamma: 0.95,
            buffer_capacity: 100_000,
            batch_size: 32,
            warmup: 500,
            soft_tau: 0.01,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            critic_hidden: 64,
            anneal: AnnealSchedule::default(),
            fleet_orders: true,
            updates_per_step: 1,
            rate_buckets: 24,
            vehicles_per_grid: 2,
        }
    }
}

/// Per-episode training log row.
#[derive(Clone, Debug)]
pub struct EpisodeMetrics {
    pub episode: u32,
    pub adi: f64,
    pub orr: f64,
    pub ast: u64,
    pub tnf: u32,
    pub mean_intrinsic: f64,
    pub mean_critic_loss: f64,
}

/// Owns the model, critics, target networks, optimizers, and buffers for
/// one training run. Single-writer over all parameters.
pub struct Trainer {
    pub model: CorideModel,
    pub manager_critic: Critic,
    pub manager_critic_store: ParamStore,
    pub worker_critic: Critic,
    pub worker_critic_store: ParamStore,
    target_manager_actor: ParamStore,
    target_manager_critic: ParamStore,
    target_worker_actor: ParamStore,
    target_worker_critic: ParamStore,
    manager_opt_actor: Adam,
    manager_opt_critic: Adam,
    worker_opt_actor: Adam,
    worker_opt_critic: Adam,
    manager_buffer: ReplayBuffer,
    worker_buffer: ReplayBuffer,
    cfg: TrainConfig,
    seed: u64,
    global_step: u64,
    orders_hist: RateHistory,
    vehicles_hist: RateHistory,
    /// Best-so-far training episode (by ADI) and its actor snapshots.
    best: Option<(f64, ParamStore, ParamStore)>,
}

impl Trainer {
    pub fn new(world: &GridWorld, model: CorideModel, cfg: TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc417_71c5);
        let dims = model.dims;
        let mut manager_critic_store = ParamStore::new();
        let manager_critic = Critic::new(
            &mut manager_critic_store,
            dims.d_h,
            dims.obs_manager,
            dims.d_g,
            cfg.critic_hidden,
            &mut rng,
        );
        let mut worker_critic_store = ParamStore::new();
        let worker_critic = Critic::new(
            &mut worker_critic_store,
            dims.d_h,
            dims.worker_train_obs,
            dims.feat_len,
            cfg.critic_hidden,
            &mut rng,
        );
        let target_manager_actor = model.manager_store.clone();
        let target_manager_critic = manager_critic_store.clone();
        let target_worker_actor = model.worker_store.clone();
        let target_worker_critic = worker_critic_store.clone();
        let manager_buffer =
            ReplayBuffer::new(cfg.buffer_capacity, dims.d_h, dims.obs_manager, dims.d_g);
        let worker_buffer = ReplayBuffer::new(
            cfg.buffer_capacity,
            dims.d_h,
            dims.worker_train_obs,
            dims.feat_len,
        );
        let orders_hist = RateHistory::new(world.num_cells(), cfg.rate_buckets);
        let vehicles_hist = RateHistory::new(world.num_cells(), cfg.rate_buckets);
        Trainer {
            manager_opt_actor: Adam::new(cfg.actor_lr),
            manager_opt_critic: Adam::new(cfg.critic_lr),
            worker_opt_actor: Adam::new(cfg.actor_lr),
            worker_opt_critic: Adam::new(cfg.critic_lr),
            model,
            manager_critic,
            manager_critic_store,
            worker_critic,
            worker_critic_store,
            target_manager_actor,
            target_manager_critic,
            target_worker_actor,
            target_worker_critic,
            manager_buffer,
            worker_buffer,
            cfg,
            seed,
            global_step: 0,
            orders_hist,
            vehicles_hist,
            best: None,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Stores for checkpointing, in a fixed order.
    pub fn checkpoint_stores(&self) -> Vec<(&'static str, &ParamStore)> {
        vec![
            ("manager_actor", &self.model.manager_store),
            ("manager_critic", &self.manager_critic_store),
            ("worker_actor", &self.model.worker_store),
            ("worker_critic", &self.worker_critic_store),
            ("attn_worker", &self.model.attn_worker_store),
            ("attn_manager", &self.model.attn_manager_store),
        ]
    }

    /// Consumes the trainer and returns the model whose actors come from
    /// the best stored training episode (by ADI); the final parameters are
    /// used when no episode ran.
    pub fn into_best_model(self) -> CorideModel {
        let mut model = self.model;
        if let Some((_, manager_store, worker_store)) = self.best {
            model.manager_store = manager_store;
            model.worker_store = worker_store;
        }
        model
    }

    pub fn all_parameters_finite(&self) -> bool {
        self.checkpoint_stores().iter().all(|(_, s)| s.all_finite())
            && self.target_manager_actor.all_finite()
            && self.target_manager_critic.all_finite()
            && self.target_worker_actor.all_finite()
            && self.target_worker_critic.all_finite()
    }

    /// Runs one training episode and returns its metrics.
    pub fn run_episode(
        &mut self,
        world: &GridWorld,
        source: &OrderSource,
        episode: u32,
    ) -> Result<EpisodeMetrics, CoreError> {
        let stream = StreamCtx {
            seed: self.seed,
            episode: episode as u64,
        };
        let mut state = SimState::uniform(world, self.cfg.vehicles_per_grid, stream);
        let mut ctx = EpisodeContext::new(world, &self.model, stream, self.cfg.fleet_orders);
        let mut update_rng = stream_rng(&stream, STREAM_TRAIN, 0, 0);

        let t_max = self.cfg.steps_per_episode;
        let n_districts = world.num_districts();
        let n_grids = world.num_cells();
        let buckets = self.cfg.rate_buckets;

        let mut adi = 0.0;
        let mut orr_num = 0u64;
        let mut orr_den = 0u64;
        let mut ast = 0u64;
        let mut tnf = 0u32;
        let mut intrinsic_sum = 0.0;
        let mut intrinsic_count = 0u64;
        let mut loss_sum = 0.0;
        let mut loss_count = 0u64;

        // Transitions from the previous step awaiting their obs_next.
        let mut pending_m: Vec<Transition> = Vec::new();
        let mut pending_w: Vec<Transition> = Vec::new();

        for t in 0..t_max {
            let orders = source.generate(world, t, &stream)?;
            let bucket = bucket_of(t, t_max, buckets);
            let mut per_grid = vec![0u32; n_grids];
            for o in &orders {
                per_grid[o.origin] += 1;
            }
            for g in 0..n_grids {
                self.orders_hist.record(g, bucket, per_grid[g]);
                self.vehicles_hist.record(g, bucket, state.idle(g));
            }
            state.inject_orders(world, orders)?;
            let stats = WorldStats::compute(
                world,
                state.idle_counts(),
                &state.pending_counts(),
                &self.orders_hist,
                &self.vehicles_hist,
                bucket,
            );

            ctx.temperature = anneal_temperature(self.global_step, &self.cfg.anneal);
            let out = coride_step(world, &self.model, &mut state, &mut ctx, &stats)?;

            adi += out.outcome.adi_delta;
            orr_num += out.outcome.orr_numerator as u64;
            orr_den += out.outcome.orr_denominator as u64;
            ast += out.outcome.ast_delta;
            tnf += out.outcome.tnf_delta;
            intrinsic_sum += out.worker_intrinsic.iter().sum::<f64>();
            intrinsic_count += out.worker_intrinsic.len() as u64;

            // Complete last step's transitions with this step's observations.
            for (d, mut tr) in pending_m.drain(..).enumerate() {
                tr.obs_next = out.manager_obs[d].clone();
                self.manager_buffer.push(tr)?;
            }
            for (g, mut tr) in pending_w.drain(..).enumerate() {
                tr.obs_next = worker_train_obs(&out.worker_obs[g], {
                    let d = world.district_of(g)?;
                    &out.goal_embeds[d]
                });
                self.worker_buffer.push(tr)?;
            }

            let done = t + 1 == t_max;
            for d in 0..n_districts {
                let tr = Transition {
                    msg_prev: out.msgs_prev_manager[d].clone(),
                    obs: out.manager_obs[d].clone(),
                    action: out.goals[d].clone(),
                    reward: out.manager_rewards[d],
                    obs_next: vec![0.0; self.model.dims.obs_manager],
                    msg: ctx.manager_msgs[d].clone(),
                    done,
                };
                if done {
                    self.manager_buffer.push(tr)?;
                } else {
                    pending_m.push(tr);
                }
            }
            for g in 0..n_grids {
                let d = world.district_of(g)?;
                let tr = Transition {
                    msg_prev: out.msgs_prev_worker[g].clone(),
                    obs: worker_train_obs(&out.worker_obs[g], &out.goal_embeds[d]),
                    action: out.omegas[g].clone(),
                    reward: out.worker_rewards[g],
                    obs_next: vec![0.0; self.model.dims.worker_train_obs],
                    msg: ctx.worker_msgs[g].clone(),
                    done,
                };
                if done {
                    self.worker_buffer.push(tr)?;
                } else {
                    pending_w.push(tr);
                }
            }

            for _ in 0..self.cfg.updates_per_step {
                if let Some(loss) = self.update_once(&mut update_rng)? {
                    loss_sum += loss;
                    loss_count += 1;
                }
            }
            self.global_step += 1;
        }

        if self.best.as_ref().map_or(true, |(b, _, _)| adi >= *b) {
            self.best = Some((
                adi,
                self.model.manager_store.clone(),
                self.model.worker_store.clone(),
            ));
        }

        Ok(EpisodeMetrics {
            episode,
            adi,
            orr: if orr_den == 0 {
                0.0
            } else {
                orr_num as f64 / orr_den as f64
            },
            ast,
            tnf,
            mean_intrinsic: if intrinsic_count == 0 {
                0.0
            } else {
                intrinsic_sum / intrinsic_count as f64
            },
            mean_critic_loss: if loss_count == 0 {
                0.0
            } else {
                loss_sum / loss_count as f64
            },
        })
    }

    /// One minibatch update for each role, if past warmup. Returns the mean
    /// critic loss across the roles updated.
    fn update_once(&mut self, rng: &mut ChaCha8Rng) -> Result<Option<f64>, CoreError> {
        let ready =
            |buf: &ReplayBuffer, cfg: &TrainConfig| buf.len() >= cfg.warmup.max(cfg.batch_size);
        let manager_ready = ready(&self.manager_buffer, &self.cfg);
        let worker_ready = ready(&self.worker_buffer, &self.cfg);
        if !manager_ready && !worker_ready {
            return Ok(None);
        }
        let mut losses = Vec::new();

        if manager_ready {
            let batch = self.manager_buffer.sample(self.cfg.batch_size, rng);
            let targets: Vec<f64> = batch
                .iter()
                .map(|tr| {
                    critic_target(
                        tr.reward,
                        tr.done,
                        &tr.msg,
                        &tr.obs_next,
                        &self.model.manager,
                        &self.target_manager_actor,
                        &self.manager_critic,
                        &self.target_manager_critic,
                        self.cfg.gamma,
                    )
                })
                .collect::<Result<_, _>>()?;
            losses.push(update_critic(
                &self.manager_critic,
                &mut self.manager_critic_store,
                &mut self.manager_opt_critic,
                &batch,
                &targets,
            )?);
            let mut value = CriticEval {
                critic: &self.manager_critic,
                store: &mut self.manager_critic_store,
            };
            update_actor(
                &self.model.manager,
                &mut self.model.manager_store,
                &mut self.manager_opt_actor,
                &mut value,
                &batch,
            )?;
            soft_update(
                &mut self.target_manager_actor,
                &self.model.manager_store,
                self.cfg.soft_tau,
            )?;
            soft_update(
                &mut self.target_manager_critic,
                &self.manager_critic_store,
                self.cfg.soft_tau,
            )?;
        }

        if worker_ready {
            let batch = self.worker_buffer.sample(self.cfg.batch_size, rng);
            let targets: Vec<f64> = batch
                .iter()
                .map(|tr| {
                    critic_target(
                        tr.reward,
                        tr.done,
                        &tr.msg,
                        &tr.obs_next,
                        &self.model.worker,
                        &self.target_worker_actor,
                        &self.worker_critic,
                        &self.target_worker_critic,
                        self.cfg.gamma,
                    )
                })
                .collect::<Result<_, _>>()?;
            losses.push(update_critic(
                &self.worker_critic,
                &mut self.worker_critic_store,
                &mut self.worker_opt_critic,
                &batch,
                &targets,
            )?);
            let mut value = CriticEval {
                critic: &self.worker_critic,
                store: &mut self.worker_critic_store,
            };
            update_actor(
                &self.model.worker,
                &mut self.model.worker_store,
                &mut self.worker_opt_actor,
                &mut value,
                &batch,
            )?;
            soft_update(
                &mut self.target_worker_actor,
                &self.model.worker_store,
                self.cfg.soft_tau,
            )?;
            soft_update(
                &mut self.target_worker_critic,
                &self.worker_critic_store,
                self.cfg.soft_tau,
            )?;
        }

        if losses.is_empty() {
            Ok(None)
        } else {
            Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
        }
    }
}

pub fn worker_train_obs(raw_obs: &[f64], goal_embed: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(raw_obs.len() + goal_embed.len());
    v.extend_from_slice(raw_obs);
    v.extend_from_slice(goal_embed);
    v
}

pub fn bucket_of(t: u64, steps_per_episode: u64, buckets: usize) -> usize {
    if steps_per_episode == 0 {
        return 0;
    }
    (((t % steps_per_episode) as usize) * buckets / steps_per_episode as usize).min(buckets - 1)
}
