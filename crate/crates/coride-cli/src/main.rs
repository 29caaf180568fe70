//! Experiment CLI: build worlds, run seeded training/evaluation, trace one
//! vehicle, and export attention heatmap data.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coride_core::config::{parse_config, ExperimentConfig, PolicyKind, TraceSpec};
use coride_core::experiment::{build_case_study_world, render_trace, run_experiment};
use coride_core::hexgrid::{build_world, parse_world_spec, WorldShape};

#[derive(Parser)]
#[command(
    name = "coride",
    about = "Hexagonal-grid ride-hailing simulator with hierarchical RL dispatch and fleet management",
    after_help = config_reference()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Full config-key reference with defaults, appended to `--help`.
fn config_reference() -> String {
    format!(
        "Config file format: flat `key = value` lines under bracketed sections; `#` starts a \
comment, unknown keys are rejected. Every key with its default:\n\n{}\n`coride run \
--print-config` shows the fully resolved config for a run.",
        ExperimentConfig::default().to_text()
    )
}

#[derive(Args, Clone)]
struct CommonRunArgs {
    /// Experiment config file (defaults apply for every omitted key).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the seed list with a single seed (repeatable).
    #[arg(long)]
    seed: Vec<u64>,
    /// Override the policy: coride, coride+, ran, res, rev.
    #[arg(long)]
    policy: Option<String>,
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<u32>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and/or evaluate a policy, writing the output artifact set.
    Run {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Print the resolved config and exit without running.
        #[arg(long)]
        print_config: bool,
    },
    /// Build a world and print a summary; optionally write its spec text.
    BuildWorld {
        /// Hex-of-hexes radius.
        #[arg(long, conflicts_with_all = ["spec", "case_study"])]
        radius: Option<u32>,
        /// World spec file to load.
        #[arg(long, conflicts_with = "case_study")]
        spec: Option<PathBuf>,
        /// Build the 21-grid case-study world.
        #[arg(long)]
        case_study: bool,
        /// Discount rate for the case-study world.
        #[arg(long, default_value_t = 0.2)]
        discount_rate: f64,
        /// Write the world's spec text to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run with vehicle tracing enabled and print the trajectory.
    Trace {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Grid the traced vehicle starts at.
        #[arg(long, default_value_t = 12)]
        start_grid: usize,
        /// Timesteps to record.
        #[arg(long, default_value_t = 10)]
        horizon: u64,
    },
    /// Run with attention export enabled (learned policies only).
    ExportAttention {
        #[command(flatten)]
        common: CommonRunArgs,
    },
}

fn load_config(common: &CommonRunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
    }
    if let Some(policy) = &common.policy {
        cfg.policy = PolicyKind::parse(policy).with_context(|| {
            format!("unknown policy `{policy}` (coride, coride+, ran, res, rev)")
        })?;
    }
    if let Some(episodes) = common.episodes {
        cfg.episodes = episodes;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize_run(cfg: &ExperimentConfig) -> Result<()> {
    let outputs = run_experiment(cfg)?;
    for seed_out in &outputs.per_seed {
        let e = &seed_out.eval;
        println!(
            "seed {}: policy {} | eval ADI {:.2} ORR {:.4} AST {:.1} TNF {:.1} | vs RAN: ADI {:+.2}% ORR {:+.2}%",
            e.seed, e.policy, e.adi, e.orr, e.ast, e.tnf, e.normalized_adi_pct, e.normalized_orr_pct
        );
        if let Some(trace) = &seed_out.trace {
            println!("seed {} trace: {}", seed_out.seed, render_trace(trace));
        }
    }
    println!("outputs written to {}", outputs.out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            common,
            print_config,
        } => {
            let cfg = load_config(&common)?;
            if print_config {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            summarize_run(&cfg)
        }
        Command::BuildWorld {
            radius,
            spec,
            case_study,
            discount_rate,
            out,
        } => {
            let (world, note) = if case_study {
                let (world, sampling) = build_case_study_world(discount_rate)?;
                let rates: Vec<String> = (0..world.num_districts())
                    .map(|d| {
                        let g = world.members(d).expect("dense district ids")[0];
                        format!("district {d} -> {:.0}%", sampling[g] * 100.0)
                    })
                    .collect();
                (world, format!("case-study sampling: {}", rates.join(", ")))
            } else if let Some(r) = radius {
                (
                    build_world(&WorldShape::Radius(r))?,
                    format!("hex-of-hexes radius {r}"),
                )
            } else if let Some(path) = spec {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading world spec {}", path.display()))?;
                (
                    build_world(&parse_world_spec(&text)?)?,
                    path.display().to_string(),
                )
            } else {
                bail!("build-world needs one of --radius, --spec, or --case-study");
            };
            println!(
                "{}: {} cells, {} districts (max size {})",
                note,
                world.num_cells(),
                world.num_districts(),
                world.max_district_size()
            );
            for d in 0..world.num_districts() {
                println!("  district {d}: grids {:?}", world.members(d)?);
            }
            if let Some(path) = out {
                fs::write(&path, world.to_spec_text())
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("spec written to {}", path.display());
            }
            Ok(())
        }
        Command::Trace {
            common,
            start_grid,
            horizon,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.trace = Some(TraceSpec {
                start_grid,
                horizon,
            });
            summarize_run(&cfg)
        }
        Command::ExportAttention { common } => {
            let mut cfg = load_config(&common)?;
            if !cfg.policy.is_learned() {
                bail!(
                    "attention export needs a learned policy (coride or coride+), got {}",
                    cfg.policy.as_str()
                );
            }
            cfg.export_attention = true;
            summarize_run(&cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use coride_core::config::WorldSource;

    #[test]
    fn world_source_default_is_case_study() {
        let cfg = ExperimentConfig::default();
        assert!(matches!(cfg.world, WorldSource::CaseStudy { .. }));
    }
}
