//! Experiment orchestration: builds worlds (including the 21-grid
//! case-study world), wires policies, runs seeded training and evaluation,
//! and writes metric tables, checkpoints, vehicle traces, and attention
//! heatmap data into a self-describing output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::agents::{coride_step, AttentionLogRow, CorideModel, EpisodeContext};
use crate::baselines::{decide, RulePolicy};
use crate::config::{ExperimentConfig, OrdersSource, PolicyKind, TraceSpec, WorldSource};
use crate::error::CoreError;
use crate::hexgrid::{build_world, parse_world_spec, Axial, GridWorld, WorldShape, HEX_DIRS};
use crate::nn::checkpoint;
use crate::sim::{
    parse_order_history, stream_rng, OrderSource, RateHistory, SimState, StreamCtx,
    SyntheticDemand, WorldStats, STREAM_BASELINE,
};
use crate::training::{bucket_of, EpisodeMetrics, Trainer};

/// Evaluation episodes draw from env streams disjoint from training ones.
const EVAL_EPISODE_BASE: u64 = 1_000_000;

/// Builds the synthetic case-study world: 21 grids in 3 flower districts.
/// The district containing the origin cell is "red" (downtown) and samples
/// at 100%; the other two sample at `1 - DR` (yellow) and `1 - 2*DR`
/// (green). Returns the world plus the per-grid sampling multipliers.
pub fn build_case_study_world(discount_rate: f64) -> Result<(GridWorld, Vec<f64>), CoreError> {
    if !(0.0..0.5).contains(&discount_rate) {
        return Err(CoreError::InvalidConfig(format!(
            "discount rate must be in [0, 0.5), got {discount_rate}"
        )));
    }
    let centers = [Axial::new(0, 0), Axial::new(3, -1), Axial::new(1, 2)];
    let mut cells = Vec::new();
    for c in centers {
        cells.push(c);
        for (dq, dr) in HEX_DIRS {
            cells.push(Axial::new(c.q + dq, c.r + dr));
        }
    }
    let world = build_world(&WorldShape::Explicit {
        cells,
        districts: None,
    })?;
    debug_assert_eq!(world.num_cells(), 21);
    debug_assert_eq!(world.num_districts(), 3);

    let rate_for = |center: Axial, rate: f64| -> Result<(usize, f64), CoreError> {
        let id = world.id_of(center).ok_or(CoreError::InvalidConfig(
            "case world is missing a center".into(),
        ))?;
        Ok((world.district_of(id)?, rate))
    };
    let district_rates = [
        rate_for(centers[0], 1.0)?,
        rate_for(centers[1], 1.0 - discount_rate)?,
        rate_for(centers[2], 1.0 - 2.0 * discount_rate)?,
    ];
    let mut sampling = vec![0.0; world.num_cells()];
    for g in world.grid_ids() {
        let d = world.district_of(g)?;
        sampling[g] = district_rates
            .iter()
            .find(|(dd, _)| *dd == d)
            .map(|(_, r)| *r)
            .expect("every district is labeled");
    }
    Ok((world, sampling))
}

/// Resolves the configured world and order source.
pub fn build_environment(cfg: &ExperimentConfig) -> Result<(GridWorld, OrderSource), CoreError> {
    let (world, sampling) = match &cfg.world {
        WorldSource::CaseStudy { discount_rate } => {
            let (w, s) = build_case_study_world(*discount_rate)?;
            (w, Some(s))
        }
        WorldSource::Radius(r) => (build_world(&WorldShape::Radius(*r))?, None),
        WorldSource::SpecFile(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CoreError::io(path.display().to_string(), e))?;
            (build_world(&parse_world_spec(&text)?)?, None)
        }
    };
    let source = match &cfg.orders {
        OrdersSource::Synthetic {
            base_rate,
            max_trip_hops,
            price_per_hop,
            price_noise,
        } => {
            let mut demand =
                SyntheticDemand::uniform(world.num_cells(), *base_rate, cfg.steps_per_episode);
            demand.max_trip_hops = *max_trip_hops;
            demand.price_per_hop = *price_per_hop;
            demand.price_noise = *price_noise;
            if let Some(s) = sampling {
                demand.grid_sampling = s;
            }
            OrderSource::Synthetic(demand)
        }
        OrdersSource::History {
            file,
            sampling_rate,
            strict,
        } => {
            let text = fs::read_to_string(file)
                .map_err(|e| CoreError::io(file.display().to_string(), e))?;
            let (rows, diagnostics) = parse_order_history(&text, *strict)?;
            for d in diagnostics {
                eprintln!("order history: {d}");
            }
            OrderSource::History {
                rows,
                sampling_rate: *sampling_rate,
            }
        }
    };
    Ok((world, source))
}

/// Per-step token of a traced vehicle.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceToken {
    /// Newly dispatched or fleeted to a grid; `fleet` marks fake orders.
    Dispatched {
        dest: usize,
        fleet: bool,
    },
    OnService,
    Waiting,
}

impl TraceToken {
    pub fn render(&self) -> String {
        match self {
            TraceToken::Dispatched { dest, fleet: false } => dest.to_string(),
            TraceToken::Dispatched { dest, fleet: true } => format!("_{dest}"),
            TraceToken::OnService => "O".to_string(),
            TraceToken::Waiting => "W".to_string(),
        }
    }
}

pub fn render_trace(tokens: &[TraceToken]) -> String {
    tokens
        .iter()
        .map(TraceToken::render)
        .collect::<Vec<_>>()
        .join(",")
}

/// Virtual tagged vehicle: it is consumed first whenever its grid dispatches
/// anything, which pins one concrete trajectory through the cohort counts.
struct TraceState {
    spec: TraceSpec,
    pos: usize,
    busy_until: u64,
    tokens: Vec<TraceToken>,
}

impl TraceState {
    fn new(spec: TraceSpec) -> Self {
        TraceState {
            pos: spec.start_grid,
            busy_until: 0,
            tokens: Vec::new(),
            spec,
        }
    }

    fn observe_step(&mut self, t: u64, decisions: &[Vec<crate::sim::Order>]) {
        if t >= self.spec.horizon {
            return;
        }
        if t < self.busy_until {
            self.tokens.push(TraceToken::OnService);
            return;
        }
        match decisions[self.pos].first() {
            Some(order) => {
                self.tokens.push(TraceToken::Dispatched {
                    dest: order.destination,
                    fleet: order.is_fake(),
                });
                self.busy_until = t + order.duration as u64;
                self.pos = order.destination;
            }
            None => self.tokens.push(TraceToken::Waiting),
        }
    }
}

/// Aggregate metrics of one evaluation episode.
#[derive(Clone, Debug, Default)]
pub struct EvalEpisode {
    pub adi: f64,
    pub orr_num: u64,
    pub orr_den: u64,
    pub ast: u64,
    pub tnf: u32,
}

impl EvalEpisode {
    pub fn orr(&self) -> f64 {
        if self.orr_den == 0 {
            0.0
        } else {
            self.orr_num as f64 / self.orr_den as f64
        }
    }
}

enum PolicyRunner {
    Rule(RulePolicy),
    Learned {
        model: Box<CorideModel>,
        fleet: bool,
        temperature: f64,
    },
}

struct EpisodeArtifacts {
    metrics: EvalEpisode,
    attention: Vec<AttentionLogRow>,
    trace: Option<Vec<TraceToken>>,
}

fn run_eval_episode(
    world: &GridWorld,
    source: &OrderSource,
    runner: &PolicyRunner,
    stream: StreamCtx,
    steps: u64,
    vehicles_per_grid: u32,
    rate_buckets: usize,
    trace: Option<TraceSpec>,
    collect_attention: bool,
) -> Result<EpisodeArtifacts, CoreError> {
    let mut state = SimState::uniform(world, vehicles_per_grid, stream);
    let mut metrics = EvalEpisode::default();
    let mut attention = Vec::new();
    let mut tracer = trace.map(TraceState::new);

    let mut learned_ctx = match runner {
        PolicyRunner::Learned {
            model,
            fleet,
            temperature,
        } => {
            let mut ctx = EpisodeContext::new(world, model, stream, *fleet);
            ctx.temperature = *temperature;
            Some(ctx)
        }
        PolicyRunner::Rule(_) => None,
    };
    let mut orders_hist = RateHistory::new(world.num_cells(), rate_buckets);
    let mut vehicles_hist = RateHistory::new(world.num_cells(), rate_buckets);

    for t in 0..steps {
        let orders = source.generate(world, t, &stream)?;
        let bucket = bucket_of(t, steps, rate_buckets);
        let mut per_grid = vec![0u32; world.num_cells()];
        for o in &orders {
            per_grid[o.origin] += 1;
        }
        for g in world.grid_ids() {
            orders_hist.record(g, bucket, per_grid[g]);
            vehicles_hist.record(g, bucket, state.idle(g));
        }
        state.inject_orders(world, orders)?;

        let (decisions, outcome) = match runner {
            PolicyRunner::Rule(policy) => {
                let mut decisions = vec![Vec::new(); world.num_cells()];
                for g in world.grid_ids() {
                    let mut rng = stream_rng(&stream, STREAM_BASELINE, t, g as u64);
                    decisions[g] =
                        decide(*policy, state.pending_orders(g), state.idle(g), &mut rng);
                }
                let outcome = state.step(world, &decisions)?;
                (decisions, outcome)
            }
            PolicyRunner::Learned { model, .. } => {
                let stats = WorldStats::compute(
                    world,
                    state.idle_counts(),
                    &state.pending_counts(),
                    &orders_hist,
                    &vehicles_hist,
                    bucket,
                );
                let ctx = learned_ctx.as_mut().expect("learned runner has a context");
                let out = coride_step(world, model, &mut state, ctx, &stats)?;
                if collect_attention {
                    attention.extend(out.attention);
                }
                (out.decisions, out.outcome)
            }
        };

        if let Some(tracer) = tracer.as_mut() {
            tracer.observe_step(t, &decisions);
        }
        metrics.adi += outcome.adi_delta;
        metrics.orr_num += outcome.orr_numerator as u64;
        metrics.orr_den += outcome.orr_denominator as u64;
        metrics.ast += outcome.ast_delta;
        metrics.tnf += outcome.tnf_delta;
    }

    Ok(EpisodeArtifacts {
        metrics,
        attention,
        trace: tracer.map(|t| t.tokens),
    })
}

/// Mean evaluation summary for one (policy, seed) pair.
#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub policy: String,
    pub seed: u64,
    pub adi: f64,
    pub orr: f64,
    pub ast: f64,
    pub tnf: f64,
    pub normalized_adi_pct: f64,
    pub normalized_orr_pct: f64,
}

/// Everything one seed produced.
pub struct SeedOutputs {
    pub seed: u64,
    pub episode_metrics: Vec<EpisodeMetrics>,
    pub eval: EvalSummary,
    pub trace: Option<Vec<TraceToken>>,
}

pub struct RunOutputs {
    pub out_dir: PathBuf,
    pub per_seed: Vec<SeedOutputs>,
}

fn mean_eval(episodes: &[EvalEpisode]) -> (f64, f64, f64, f64) {
    let n = episodes.len().max(1) as f64;
    (
        episodes.iter().map(|e| e.adi).sum::<f64>() / n,
        episodes.iter().map(|e| e.orr()).sum::<f64>() / n,
        episodes.iter().map(|e| e.ast as f64).sum::<f64>() / n,
        episodes.iter().map(|e| e.tnf as f64).sum::<f64>() / n,
    )
}

fn pct_over(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        0.0
    } else {
        (value - reference) / reference * 100.0
    }
}

/// Evaluates one policy over the eval protocol: `eval_episodes` episodes on
/// env streams shared by every policy under the same seed.
fn evaluate_policy(
    world: &GridWorld,
    source: &OrderSource,
    cfg: &ExperimentConfig,
    runner: &PolicyRunner,
    seed: u64,
    trace: Option<TraceSpec>,
    collect_attention: bool,
) -> Result<
    (
        Vec<EvalEpisode>,
        Vec<AttentionLogRow>,
        Option<Vec<TraceToken>>,
    ),
    CoreError,
> {
    let mut episodes = Vec::new();
    let mut attention = Vec::new();
    let mut trace_tokens = None;
    for e in 0..cfg.eval_episodes {
        let stream = StreamCtx {
            seed,
            episode: EVAL_EPISODE_BASE + e as u64,
        };
        let first = e == 0;
        let art = run_eval_episode(
            world,
            source,
            runner,
            stream,
            cfg.steps_per_episode,
            cfg.vehicles_per_grid,
            cfg.rate_buckets,
            if first { trace } else { None },
            collect_attention && first,
        )?;
        if first {
            attention = art.attention;
            trace_tokens = art.trace;
        }
        episodes.push(art.metrics);
    }
    Ok((episodes, attention, trace_tokens))
}

/// Runs the full experiment described by `cfg`: per seed, train (for
/// learned policies), evaluate against the matched-seed RAN reference, and
/// write the output artifact set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutputs, CoreError> {
    cfg.validate()?;
    let (world, source) = build_environment(cfg)?;
    if let Some(trace) = &cfg.trace {
        if trace.start_grid >= world.num_cells() {
            return Err(CoreError::UnknownGrid(trace.start_grid));
        }
    }
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CoreError::io(cfg.out_dir.display().to_string(), e))?;

    // Self-describing output directory: canonical config copy with the
    // format version stamped on top.
    write_text(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;

    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let outputs = run_seed(&world, &source, cfg, seed)?;
        per_seed.push(outputs);
    }
    Ok(RunOutputs {
        out_dir: cfg.out_dir.clone(),
        per_seed,
    })
}

fn run_seed(
    world: &GridWorld,
    source: &OrderSource,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SeedOutputs, CoreError> {
    let mut episode_metrics = Vec::new();
    let runner: PolicyRunner = match cfg.policy {
        PolicyKind::Rule(rule) => PolicyRunner::Rule(rule),
        PolicyKind::Coride | PolicyKind::CoridePlus => {
            let model = CorideModel::new(world, &cfg.model, seed);
            let mut trainer = Trainer::new(world, model, cfg.train_config(), seed);

            // Initial checkpoint, periodic checkpoints, final checkpoint.
            save_checkpoint(&trainer, &cfg.out_dir, seed, "init")?;
            for e in 0..cfg.episodes {
                let m = trainer.run_episode(world, source, e)?;
                episode_metrics.push(m);
                let nth = e + 1;
                if cfg.checkpoint_every > 0
                    && nth % cfg.checkpoint_every == 0
                    && nth != cfg.episodes
                {
                    save_checkpoint(&trainer, &cfg.out_dir, seed, &format!("ep{nth}"))?;
                }
            }
            save_checkpoint(&trainer, &cfg.out_dir, seed, "final")?;

            // Evaluation uses the best stored model by training ADI.
            let model = trainer.into_best_model();
            checkpoint::save(
                &[
                    ("manager_actor", &model.manager_store),
                    ("worker_actor", &model.worker_store),
                    ("attn_worker", &model.attn_worker_store),
                    ("attn_manager", &model.attn_manager_store),
                ],
                &cfg.out_dir.join(format!("checkpoint_seed{seed}_best.txt")),
            )?;
            PolicyRunner::Learned {
                model: Box::new(model),
                fleet: cfg.policy == PolicyKind::CoridePlus,
                temperature: cfg.anneal.floor,
            }
        }
    };

    let (episodes, attention, trace_tokens) = evaluate_policy(
        world,
        source,
        cfg,
        &runner,
        seed,
        cfg.trace,
        cfg.export_attention,
    )?;
    // Matched-seed RAN reference for normalized metrics.
    let (ran_episodes, _, _) = evaluate_policy(
        world,
        source,
        cfg,
        &PolicyRunner::Rule(RulePolicy::Ran),
        seed,
        None,
        false,
    )?;

    let (adi, orr, ast, tnf) = mean_eval(&episodes);
    let (ran_adi, ran_orr, _, _) = mean_eval(&ran_episodes);
    let eval = EvalSummary {
        policy: cfg.policy.as_str().to_string(),
        seed,
        adi,
        orr,
        ast,
        tnf,
        normalized_adi_pct: pct_over(adi, ran_adi),
        normalized_orr_pct: pct_over(orr, ran_orr),
    };

    // For rule policies the per-episode metric log is the eval protocol.
    if !cfg.policy.is_learned() {
        for (i, e) in episodes.iter().enumerate() {
            episode_metrics.push(EpisodeMetrics {
                episode: i as u32,
                adi: e.adi,
                orr: e.orr(),
                ast: e.ast,
                tnf: e.tnf,
                mean_intrinsic: 0.0,
                mean_critic_loss: 0.0,
            });
        }
    }

    write_metrics(&cfg.out_dir, seed, &episode_metrics)?;
    write_eval(&cfg.out_dir, seed, &eval)?;
    if cfg.export_attention && cfg.policy.is_learned() {
        write_attention(&cfg.out_dir, seed, &attention)?;
    }
    if let Some(tokens) = &trace_tokens {
        write_text(
            &cfg.out_dir.join(format!("trace_seed{seed}.txt")),
            &format!("{}\n", render_trace(tokens)),
        )?;
    }

    Ok(SeedOutputs {
        seed,
        episode_metrics,
        eval,
        trace: trace_tokens,
    })
}

fn save_checkpoint(trainer: &Trainer, dir: &Path, seed: u64, tag: &str) -> Result<(), CoreError> {
    let path = dir.join(format!("checkpoint_seed{seed}_{tag}.txt"));
    checkpoint::save(&trainer.checkpoint_stores(), &path)
}

fn write_text(path: &Path, text: &str) -> Result<(), CoreError> {
    fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn write_metrics(dir: &Path, seed: u64, metrics: &[EpisodeMetrics]) -> Result<(), CoreError> {
    let mut s = String::from("episode,seed,adi,orr,mean_intrinsic_reward,mean_critic_loss\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            m.episode, seed, m.adi, m.orr, m.mean_intrinsic, m.mean_critic_loss
        );
    }
    write_text(&dir.join(format!("metrics_seed{seed}.csv")), &s)
}

fn write_eval(dir: &Path, seed: u64, eval: &EvalSummary) -> Result<(), CoreError> {
    let mut s = String::from("policy,seed,adi,orr,ast,tnf,normalized_adi_pct,normalized_orr_pct\n");
    let _ = writeln!(
        s,
        "{},{},{:.6},{:.6},{:.2},{:.2},{:+.2}%,{:+.2}%",
        eval.policy,
        eval.seed,
        eval.adi,
        eval.orr,
        eval.ast,
        eval.tnf,
        eval.normalized_adi_pct,
        eval.normalized_orr_pct
    );
    write_text(&dir.join(format!("eval_seed{seed}.csv")), &s)
}

fn write_attention(dir: &Path, seed: u64, rows: &[AttentionLogRow]) -> Result<(), CoreError> {
    let mut s = String::from("step,level,head,source,target,weight\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.9}",
            r.step,
            r.level.as_str(),
            r.head,
            r.source,
            r.target,
            r.weight
        );
    }
    write_text(&dir.join(format!("attention_seed{seed}.csv")), &s)
}
