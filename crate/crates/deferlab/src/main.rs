//! Command-line front end: train, eval, sweep, genbench.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deferlab::baselines::{
    build_policy, train_static_gate, ConfidenceThresholdPolicy, PolicySpec, RandomDeferPolicy,
    StaticGatePolicy, TrainedPolicy,
};
use deferlab::config::RunConfig;
use deferlab::env::{EpisodeConfig, FatigueSource, InstanceSource};
use deferlab::error::{Error, Result};
use deferlab::eval::{
    build_curve, run_regime_suite, write_auacc_summary, write_curve_csv, write_eval_csv,
    CoverageCurve,
};
use deferlab::net::save_checkpoint;
use deferlab::rng::stream_rng;
use deferlab::trainer::{train, write_training_log, Budget};

#[derive(Parser)]
#[command(
    name = "deferlab",
    version,
    about = "Train and evaluate fatigue-aware human-AI deferral policies"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for episode collection (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (overrides run.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the constrained deferral policy and save its checkpoint.
    Train,
    /// Evaluate the configured policy across the expert regime suite.
    Eval,
    /// Build a coverage-accuracy curve for the configured policy family.
    Sweep,
    /// Generate a benchmark instance stream and per-episode expert draws.
    Genbench {
        /// Number of episodes' worth of instances to generate.
        #[arg(long, default_value_t = 50)]
        episodes: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }

    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.run.out_dir = Some(out);
    }

    match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Genbench { episodes } => cmd_genbench(&cfg, episodes),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .run
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("an output directory is required (--out or run.out_dir)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    cfg.save_resolved(&dir.join("resolved_config.toml"))?;
    let env_cfg = cfg.episode_config()?;
    let result = train(&env_cfg, cfg.net_config(), &cfg.train, Some(&dir))?;
    save_checkpoint(&dir.join("checkpoint_final.json"), &result.net)?;
    write_training_log(&dir.join("training_log.csv"), &result.log)?;
    if let Some(last) = result.log.last() {
        println!(
            "trained {} iterations: reward_rate {:.4}, coverage {:.4}, lambda ({:.4}, {:.4})",
            result.log.len(),
            last.reward_rate,
            last.coverage,
            last.lambda_upper,
            last.lambda_lower
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = cfg
        .run
        .policy
        .as_ref()
        .ok_or_else(|| Error::Config("eval needs run.policy in the config".into()))?;
    let mut policy = build_policy(spec, cfg.run.seed)?;
    let env_cfg = cfg.episode_config()?;
    let results = run_regime_suite(
        policy.as_mut(),
        &env_cfg,
        &cfg.eval.seeds,
        cfg.eval.episodes_per_seed,
    )?;
    for r in &results {
        println!(
            "{:>18}: accuracy {:.4} +- {:.4}, coverage {:.4}, auacc {:.4}",
            r.regime, r.summary.accuracy, r.summary.accuracy_stderr, r.summary.coverage, r.auacc
        );
        write_curve_csv(&dir.join(format!("curve_{}.csv", r.regime)), &r.curve)?;
    }
    let path = dir.join("eval.csv");
    write_eval_csv(&path, &results)?;
    write_auacc_summary(&dir.join("auacc.csv"), &results)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Map a coverage target to a budget band on the deferred fraction.
fn budget_for_coverage(target: f64) -> Budget {
    let cost = 1.0 - target;
    Budget {
        lower: (cost - 0.05).max(0.0),
        upper: (cost + 0.05).min(1.0),
    }
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = cfg
        .run
        .policy
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs run.policy in the config".into()))?;
    let env_cfg = cfg.episode_config()?;
    let seeds = &cfg.eval.seeds;
    let episodes = cfg.eval.episodes_per_seed;
    let targets = &cfg.eval.coverage_targets;
    let master_seed = cfg.run.seed;
    let regime = cfg.fatigue.preset.clone().unwrap_or_else(|| "custom".into());
    let regime = regime.as_str();

    let curve: CoverageCurve = match spec {
        PolicySpec::Random { .. } => {
            build_curve("random", regime, &env_cfg, seeds, episodes, targets, |t| {
                Ok(Box::new(RandomDeferPolicy::new(t, master_seed)?))
            })?
        }
        PolicySpec::Threshold { .. } => {
            // Sweep the threshold directly over the target grid.
            build_curve("threshold", regime, &env_cfg, seeds, episodes, targets, |tau| {
                Ok(Box::new(ConfidenceThresholdPolicy::new(tau)?))
            })?
        }
        PolicySpec::StaticGate { .. } => {
            let instances = gate_training_stream(&env_cfg, master_seed)?;
            build_curve("static_gate", regime, &env_cfg, seeds, episodes, targets, |t| {
                let gate = train_static_gate(&instances, t, 32, 30, master_seed)?;
                Ok(Box::new(StaticGatePolicy::new(gate)))
            })?
        }
        PolicySpec::Learned { .. } => {
            // Each target retrains the policy with a budget band around it.
            build_curve("learned", regime, &env_cfg, seeds, episodes, targets, |t| {
                let mut train_cfg = cfg.train.clone();
                train_cfg.budget = budget_for_coverage(t);
                let result = train(&env_cfg, cfg.net_config(), &train_cfg, None)?;
                Ok(Box::new(TrainedPolicy::new(result.net)))
            })?
        }
        PolicySpec::AiOnly | PolicySpec::HumanOnly => {
            return Err(Error::Config(
                "ai_only and human_only are fixed curve endpoints; sweep a parametric family".into(),
            ))
        }
    };
    let path = dir.join(format!("curve_{}.csv", curve.policy));
    write_curve_csv(&path, &curve)?;
    println!("{}: auacc {:.4}", curve.policy, curve.auacc()?);
    println!("wrote {}", path.display());
    Ok(())
}

/// A labelled instance stream for gate training, drawn independently of the
/// evaluation episodes.
fn gate_training_stream(
    env_cfg: &EpisodeConfig,
    master_seed: u64,
) -> Result<Vec<deferlab::actors::TaskInstance>> {
    match &env_cfg.source {
        InstanceSource::Synthetic(spec) => deferlab::actors::generate_synthetic_stream(
            spec,
            4000,
            &mut stream_rng(master_seed, "gate-train", 0),
        ),
        InstanceSource::Stream { instances, .. } => Ok(instances.as_ref().clone()),
    }
}

fn cmd_genbench(cfg: &RunConfig, episodes: u32) -> Result<()> {
    if episodes == 0 {
        return Err(Error::Config("genbench needs at least one episode".into()));
    }
    let dir = out_dir(cfg)?;
    let env_cfg = cfg.episode_config()?;
    let spec = match &env_cfg.source {
        InstanceSource::Synthetic(spec) => *spec,
        InstanceSource::Stream { .. } => {
            return Err(Error::Config(
                "genbench generates synthetic streams; the task already uses an instance file".into(),
            ))
        }
    };
    let count = episodes
        .checked_mul(env_cfg.length)
        .ok_or_else(|| Error::Config("episode count overflows the stream size".into()))?;
    let mut rng = stream_rng(cfg.run.seed, "genbench", 0);
    let instances = deferlab::actors::generate_synthetic_stream(&spec, count, &mut rng)?;
    let instances_path = dir.join("instances.csv");
    deferlab::actors::write_instance_stream(&instances_path, &instances)?;

    // One expert draw per episode, from the same stream an actual run derives.
    let mut text = String::from("episode,w0,w_peak,w_base,rho_hat,rho_bar,k,horizon_l\n");
    for ep in 0..u64::from(episodes) {
        let params = match &env_cfg.fatigue {
            FatigueSource::Fixed(p) => *p,
            FatigueSource::Ranges(r) => r.sample(&mut stream_rng(cfg.run.seed, "fatigue", ep)),
        };
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            ep, params.w0, params.w_peak, params.w_base, params.rho_hat, params.rho_bar, params.k,
            params.horizon_l
        ));
    }
    let params_path = dir.join("fatigue_params.csv");
    std::fs::write(&params_path, text).map_err(|e| Error::io(&params_path, e))?;
    println!(
        "wrote {} instances to {} and {} expert draws to {}",
        count,
        instances_path.display(),
        episodes,
        params_path.display()
    );
    Ok(())
}
