//! Experiment configuration: a flat, human-readable key-value format with
//! one section per subsystem. Unknown sections or keys fail fast with a
//! message naming the offender, and a parsed config re-serializes to a
//! canonical text so output directories are self-describing.

use std::path::PathBuf;

use crate::agents::ModelConfig;
use crate::baselines::RulePolicy;
use crate::error::CoreError;
use crate::ranking::AnnealSchedule;
use crate::training::TrainConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum WorldSource {
    /// The 21-grid, 3-district synthetic world with per-district discounts.
    CaseStudy {
        discount_rate: f64,
    },
    Radius(u32),
    SpecFile(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// Learned policy, dispatch only.
    Coride,
    /// Learned policy with fake (fleet control) orders enabled.
    CoridePlus,
    Rule(RulePolicy),
}

impl PolicyKind {
    pub fn parse(s: &str) -> Option<PolicyKind> {
        match s.to_ascii_lowercase().as_str() {
            "coride" => Some(PolicyKind::Coride),
            "coride+" => Some(PolicyKind::CoridePlus),
            other => RulePolicy::parse(other).map(PolicyKind::Rule),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Coride => "coride",
            PolicyKind::CoridePlus => "coride+",
            PolicyKind::Rule(r) => r.as_str(),
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, PolicyKind::Coride | PolicyKind::CoridePlus)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OrdersSource {
    Synthetic {
        base_rate: f64,
        max_trip_hops: u32,
        price_per_hop: f64,
        price_noise: f64,
    },
    History {
        file: PathBuf,
        sampling_rate: f64,
        strict: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceSpec {
    pub start_grid: usize,
    pub horizon: u64,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub world: WorldSource,
    pub policy: PolicyKind,
    pub orders: OrdersSource,
    pub vehicles_per_grid: u32,
    pub steps_per_episode: u64,
    pub rate_buckets: usize,
    pub model: ModelConfig,
    pub episodes: u32,
    pub eval_episodes: u32,
    pub checkpoint_every: u32,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub soft_tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub anneal: AnnealSchedule,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub trace: Option<TraceSpec>,
    pub export_attention: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            world: WorldSource::CaseStudy { discount_rate: 0.2 },
            policy: PolicyKind::CoridePlus,
            orders: OrdersSource::Synthetic {
                base_rate: 1.2,
                max_trip_hops: 3,
                price_per_hop: 2.0,
                price_noise: 0.2,
            },
            vehicles_per_grid: 2,
            steps_per_episode: 144,
            rate_buckets: 24,
            model: ModelConfig::default(),
            episodes: 20,
            eval_episodes: 3,
            checkpoint_every: 5,
            gamma: t.gamma,
            buffer_capacity: t.buffer_capacity,
            batch_size: t.batch_size,
            warmup: t.warmup,
            soft_tau: t.soft_tau,
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            anneal: AnnealSchedule::default(),
            seeds: vec![1],
            out_dir: PathBuf::from("out"),
            trace: None,
            export_attention: false,
        }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            steps_per_episode: self.steps_per_episode,
            gamma: self.gamma,
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            warmup: self.warmup,
            soft_tau: self.soft_tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            critic_hidden: 64,
            anneal: self.anneal,
            fleet_orders: self.policy == PolicyKind::CoridePlus,
            updates_per_step: 1,
            rate_buckets: self.rate_buckets,
            vehicles_per_grid: self.vehicles_per_grid,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if let WorldSource::CaseStudy { discount_rate } = self.world {
            if !(0.0..0.5).contains(&discount_rate) {
                return Err(CoreError::InvalidConfig(format!(
                    "world.discount_rate must be in [0, 0.5), got {discount_rate}"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(CoreError::InvalidConfig(
                "run.seeds must list at least one seed".into(),
            ));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(CoreError::InvalidConfig(format!(
                "training.batch_size {} must be in 1..=buffer_capacity {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        if self.batch_size > self.warmup {
            return Err(CoreError::InvalidConfig(format!(
                "training.batch_size {} exceeds training.warmup {}",
                self.batch_size, self.warmup
            )));
        }
        if self.eval_episodes == 0 {
            return Err(CoreError::InvalidConfig(
                "training.eval_episodes must be positive".into(),
            ));
        }
        if self.steps_per_episode == 0 {
            return Err(CoreError::InvalidConfig(
                "sim.steps_per_episode must be positive".into(),
            ));
        }
        if let OrdersSource::History { sampling_rate, .. } = &self.orders {
            if !(0.0..=1.0).contains(sampling_rate) {
                return Err(CoreError::InvalidConfig(format!(
                    "orders.sampling_rate must be in [0, 1], got {sampling_rate}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical serialization; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# coride experiment config, format v{CONFIG_FORMAT_VERSION}\n"
        ));
        s.push_str("\n[world]\n");
        match &self.world {
            WorldSource::CaseStudy { discount_rate } => {
                s.push_str("kind = case-study\n");
                s.push_str(&format!("discount_rate = {discount_rate}\n"));
            }
            WorldSource::Radius(r) => {
                s.push_str("kind = radius\n");
                s.push_str(&format!("radius = {r}\n"));
            }
            WorldSource::SpecFile(p) => {
                s.push_str("kind = file\n");
                s.push_str(&format!("file = {}\n", p.display()));
            }
        }
        s.push_str("\n[orders]\n");
        match &self.orders {
            OrdersSource::Synthetic {
                base_rate,
                max_trip_hops,
                price_per_hop,
                price_noise,
            } => {
                s.push_str("source = synthetic\n");
                s.push_str(&format!("base_rate = {base_rate}\n"));
                s.push_str(&format!("max_trip_hops = {max_trip_hops}\n"));
                s.push_str(&format!("price_per_hop = {price_per_hop}\n"));
                s.push_str(&format!("price_noise = {price_noise}\n"));
            }
            OrdersSource::History {
                file,
                sampling_rate,
                strict,
            } => {
                s.push_str("source = history\n");
                s.push_str(&format!("history_file = {}\n", file.display()));
                s.push_str(&format!("sampling_rate = {sampling_rate}\n"));
                s.push_str(&format!("strict = {strict}\n"));
            }
        }
        s.push_str("\n[sim]\n");
        s.push_str(&format!("vehicles_per_grid = {}\n", self.vehicles_per_grid));
        s.push_str(&format!("steps_per_episode = {}\n", self.steps_per_episode));
        s.push_str(&format!("rate_buckets = {}\n", self.rate_buckets));
        s.push_str("\n[policy]\n");
        s.push_str(&format!("kind = {}\n", self.policy.as_str()));
        s.push_str("\n[model]\n");
        s.push_str(&format!("d_h = {}\n", self.model.d_h));
        s.push_str(&format!("d_g = {}\n", self.model.d_g));
        s.push_str(&format!("d_e = {}\n", self.model.d_e));
        s.push_str(&format!("heads = {}\n", self.model.heads));
        s.push_str(&format!("dilation = {}\n", self.model.dilation));
        s.push_str(&format!("horizon_c = {}\n", self.model.horizon_c));
        s.push_str(&format!("iota = {}\n", self.model.iota));
        s.push_str(&format!("beta = {}\n", self.model.beta));
        s.push_str(&format!("ref_price = {}\n", self.model.ref_price));
        s.push_str(&format!("max_duration = {}\n", self.model.max_duration));
        s.push_str("\n[training]\n");
        s.push_str(&format!("episodes = {}\n", self.episodes));
        s.push_str(&format!("eval_episodes = {}\n", self.eval_episodes));
        s.push_str(&format!("checkpoint_every = {}\n", self.checkpoint_every));
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("buffer_capacity = {}\n", self.buffer_capacity));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("warmup = {}\n", self.warmup));
        s.push_str(&format!("soft_tau = {}\n", self.soft_tau));
        s.push_str(&format!("actor_lr = {}\n", self.actor_lr));
        s.push_str(&format!("critic_lr = {}\n", self.critic_lr));
        s.push_str(&format!("anneal_start = {}\n", self.anneal.start));
        s.push_str(&format!("anneal_floor = {}\n", self.anneal.floor));
        s.push_str(&format!("anneal_horizon = {}\n", self.anneal.horizon));
        s.push_str("\n[run]\n");
        s.push_str(&format!(
            "seeds = {}\n",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
        s.push_str(&format!("out = {}\n", self.out_dir.display()));
        if let Some(t) = &self.trace {
            s.push_str(&format!("trace_start_grid = {}\n", t.start_grid));
            s.push_str(&format!("trace_horizon = {}\n", t.horizon));
        }
        s.push_str(&format!("export_attention = {}\n", self.export_attention));
        s
    }
}

/// Parses config text over the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CoreError> {
    let mut cfg = ExperimentConfig::default();
    // Section-local scratch so interdependent keys can land in any order.
    let mut world_kind: Option<String> = None;
    let mut world_dr: Option<f64> = None;
    let mut world_radius: Option<u32> = None;
    let mut world_file: Option<PathBuf> = None;
    let mut orders_source: Option<String> = None;
    let mut base_rate: Option<f64> = None;
    let mut max_trip_hops: Option<u32> = None;
    let mut price_per_hop: Option<f64> = None;
    let mut price_noise: Option<f64> = None;
    let mut history_file: Option<PathBuf> = None;
    let mut sampling_rate: Option<f64> = None;
    let mut strict: Option<bool> = None;
    let mut trace_start: Option<usize> = None;
    let mut trace_horizon: Option<u64> = None;

    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            match section.as_str() {
                "world" | "orders" | "sim" | "policy" | "model" | "training" | "run" => {}
                other => {
                    return Err(CoreError::UnknownKey {
                        line,
                        key: format!("[{other}]"),
                    })
                }
            }
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| CoreError::Parse {
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let full_key = format!("{section}.{key}");

        macro_rules! parse_as {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|_| CoreError::Parse {
                    line,
                    msg: format!("`{full_key}` expects a {}, got `{value}`", stringify!($ty)),
                })?
            };
        }

        match full_key.as_str() {
            "world.kind" => world_kind = Some(value.to_string()),
            "world.discount_rate" => world_dr = Some(parse_as!(f64)),
            "world.radius" => world_radius = Some(parse_as!(u32)),
            "world.file" => world_file = Some(PathBuf::from(value)),
            "orders.source" => orders_source = Some(value.to_string()),
            "orders.base_rate" => base_rate = Some(parse_as!(f64)),
            "orders.max_trip_hops" => max_trip_hops = Some(parse_as!(u32)),
            "orders.price_per_hop" => price_per_hop = Some(parse_as!(f64)),
            "orders.price_noise" => price_noise = Some(parse_as!(f64)),
            "orders.history_file" => history_file = Some(PathBuf::from(value)),
            "orders.sampling_rate" => sampling_rate = Some(parse_as!(f64)),
            "orders.strict" => strict = Some(parse_as!(bool)),
            "sim.vehicles_per_grid" => cfg.vehicles_per_grid = parse_as!(u32),
            "sim.steps_per_episode" => cfg.steps_per_episode = parse_as!(u64),
            "sim.rate_buckets" => cfg.rate_buckets = parse_as!(usize),
            "policy.kind" => {
                cfg.policy = PolicyKind::parse(value).ok_or_else(|| CoreError::Parse {
                    line,
                    msg: format!(
                        "`policy.kind` must be one of coride, coride+, ran, res, rev; got `{value}`"
                    ),
                })?;
            }
            "model.d_h" => cfg.model.d_h = parse_as!(usize),
            "model.d_g" => cfg.model.d_g = parse_as!(usize),
            "model.d_e" => cfg.model.d_e = parse_as!(usize),
            "model.heads" => cfg.model.heads = parse_as!(usize),
            "model.dilation" => cfg.model.dilation = parse_as!(usize),
            "model.horizon_c" => cfg.model.horizon_c = parse_as!(usize),
            "model.iota" => cfg.model.iota = parse_as!(f64),
            "model.beta" => cfg.model.beta = parse_as!(f64),
            "model.ref_price" => cfg.model.ref_price = parse_as!(f64),
            "model.max_duration" => cfg.model.max_duration = parse_as!(f64),
            "training.episodes" => cfg.episodes = parse_as!(u32),
            "training.eval_episodes" => cfg.eval_episodes = parse_as!(u32),
            "training.checkpoint_every" => cfg.checkpoint_every = parse_as!(u32),
            "training.gamma" => cfg.gamma = parse_as!(f64),
            "training.buffer_capacity" => cfg.buffer_capacity = parse_as!(usize),
            "training.batch_size" => cfg.batch_size = parse_as!(usize),
            "training.warmup" => cfg.warmup = parse_as!(usize),
            "training.soft_tau" => cfg.soft_tau = parse_as!(f64),
            "training.actor_lr" => cfg.actor_lr = parse_as!(f64),
            "training.critic_lr" => cfg.critic_lr = parse_as!(f64),
            "training.anneal_start" => cfg.anneal.start = parse_as!(f64),
            "training.anneal_floor" => cfg.anneal.floor = parse_as!(f64),
            "training.anneal_horizon" => cfg.anneal.horizon = parse_as!(u64),
            "run.seeds" => {
                let mut seeds = Vec::new();
                for tok in value.split_whitespace() {
                    seeds.push(tok.parse::<u64>().map_err(|_| CoreError::Parse {
                        line,
                        msg: format!("`run.seeds` expects integers, got `{tok}`"),
                    })?);
                }
                cfg.seeds = seeds;
            }
            "run.out" => cfg.out_dir = PathBuf::from(value),
            "run.trace_start_grid" => trace_start = Some(parse_as!(usize)),
            "run.trace_horizon" => trace_horizon = Some(parse_as!(u64)),
            "run.export_attention" => cfg.export_attention = parse_as!(bool),
            _ => {
                return Err(CoreError::UnknownKey {
                    line,
                    key: full_key,
                })
            }
        }
    }

    if let Some(kind) = world_kind {
        cfg.world = match kind.as_str() {
            "case-study" => WorldSource::CaseStudy {
                discount_rate: world_dr.unwrap_or(0.2),
            },
            "radius" => WorldSource::Radius(world_radius.ok_or_else(|| {
                CoreError::InvalidConfig("world.kind = radius requires world.radius".into())
            })?),
            "file" => WorldSource::SpecFile(world_file.ok_or_else(|| {
                CoreError::InvalidConfig("world.kind = file requires world.file".into())
            })?),
            other => {
                return Err(CoreError::InvalidConfig(format!(
                    "world.kind must be case-study, radius, or file; got `{other}`"
                )))
            }
        };
    } else if let Some(dr) = world_dr {
        cfg.world = WorldSource::CaseStudy { discount_rate: dr };
    }

    let default_synth = match cfg.orders {
        OrdersSource::Synthetic { .. } => cfg.orders.clone(),
        _ => ExperimentConfig::default().orders,
    };
    cfg.orders = match orders_source.as_deref() {
        None | Some("synthetic") => {
            let (dbr, dmt, dpph, dpn) = match default_synth {
                OrdersSource::Synthetic {
                    base_rate,
                    max_trip_hops,
                    price_per_hop,
                    price_noise,
                } => (base_rate, max_trip_hops, price_per_hop, price_noise),
                _ => unreachable!(),
            };
            OrdersSource::Synthetic {
                base_rate: base_rate.unwrap_or(dbr),
                max_trip_hops: max_trip_hops.unwrap_or(dmt),
                price_per_hop: price_per_hop.unwrap_or(dpph),
                price_noise: price_noise.unwrap_or(dpn),
            }
        }
        Some("history") => OrdersSource::History {
            file: history_file.ok_or_else(|| {
                CoreError::InvalidConfig(
                    "orders.source = history requires orders.history_file".into(),
                )
            })?,
            sampling_rate: sampling_rate.unwrap_or(1.0),
            strict: strict.unwrap_or(true),
        },
        Some(other) => {
            return Err(CoreError::InvalidConfig(format!(
                "orders.source must be synthetic or history, got `{other}`"
            )))
        }
    };

    match (trace_start, trace_horizon) {
        (Some(start_grid), horizon) => {
            cfg.trace = Some(TraceSpec {
                start_grid,
                horizon: horizon.unwrap_or(10),
            });
        }
        (None, Some(_)) => {
            return Err(CoreError::InvalidConfig(
                "run.trace_horizon requires run.trace_start_grid".into(),
            ))
        }
        (None, None) => {}
    }

    cfg.validate()?;
    Ok(cfg)
}
