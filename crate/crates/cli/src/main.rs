use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use e2o::agents::{collect, AgentConfig, AgentKind, RewardChannel};
use e2o::crr::{train_offline, write_metrics_csv, CrrConfig};
use e2o::datastore::{relabel, write_stats_table, Dataset};
use e2o::envsuite::{task_by_name, EnvSpec};
use e2o::evalharness::{
    correlation_report, evaluate_policy, multitask_report, read_records, run_sweep, size_curve_report,
    write_collection_returns, write_correlations, write_multitask, write_records, write_size_curves, SweepConfig,
    CONFIG_FILE, RECORDS_FILE,
};
use e2o::funcapprox::Checkpoint;
use e2o::planner::PlannerConfig;
use e2o::agents::GaussianPolicy;
use e2o::{Error, Result};

#[derive(Parser)]
#[command(name = "e2o", version, about = "Task-agnostic exploration, relabeling and offline RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an exploration agent and save the transitions it collects.
    Collect(CollectArgs),
    /// Replace a dataset's rewards with a task's reward.
    Relabel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy offline on a dataset.
    TrainOffline(TrainArgs),
    /// Evaluate a saved policy with greedy actions.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
    },
    /// Reward statistics of one or more datasets, written as CSV.
    Stats {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Relabel with this task before computing statistics.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a dataset-size sweep described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config file's directory.
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
    /// Analyses over a sweep workdir.
    Report {
        #[arg(long)]
        workdir: PathBuf,
        /// Spearman correlations of return with dataset statistics.
        #[arg(long)]
        correlations: bool,
        /// Relabel each dataset for every task and train on each.
        #[arg(long)]
        multitask: bool,
    },
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    agent: String,
    #[arg(long)]
    env: String,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Task whose reward a task-aware agent learns from (default: the env's training task).
    #[arg(long)]
    task: Option<String>,
    /// TOML file overriding agent hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Policy checkpoint path; the critic and metrics are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with offline-training settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AgentOverrides {
    planner: Option<PlannerConfig>,
    learner_period: Option<usize>,
    batch_size: Option<usize>,
    n_step: Option<usize>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn cmd_collect(a: CollectArgs) -> Result<()> {
    let env = EnvSpec::by_name(&a.env)?;
    let kind: AgentKind = a.agent.parse()?;
    let mut cfg = AgentConfig::new(kind);
    if let Some(path) = &a.config {
        let o: AgentOverrides = read_toml(path)?;
        if let Some(p) = o.planner {
            cfg.planner = p;
        }
        cfg.learner_period = o.learner_period.unwrap_or(cfg.learner_period);
        cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
        cfg.n_step = o.n_step.unwrap_or(cfg.n_step);
    }
    let channel = match kind {
        AgentKind::TaskAware => {
            RewardChannel::Task(task_by_name(&env, a.task.as_deref().unwrap_or("training"))?)
        }
        _ if a.task.is_some() => return Err(Error::config("--task only applies to the task-aware agent")),
        _ => RewardChannel::Default,
    };
    let (ds, log) = collect(&cfg, &env, a.steps, a.seed, &channel)?;
    ds.save(&a.out)?;
    let log_path = sibling(&a.out, ".log.json");
    fs::write(&log_path, serde_json::to_vec_pretty(&log)?)?;
    print(json!({"dataset": a.out, "log": log_path, "transitions": ds.len(), "episodes": log.episode_returns.len()}));
    Ok(())
}

fn cmd_relabel(input: &Path, task: &str, out: &Path) -> Result<()> {
    let ds = Dataset::load(input)?;
    let t = task_by_name(&ds.env_spec()?, task)?;
    let r = relabel(&ds, &t)?;
    r.save(out)?;
    let s = r.stats();
    print(json!({"dataset": out, "task": task, "cumulative_reward": s.cumulative_reward, "mean_reward": s.mean_reward}));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg: CrrConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => CrrConfig::default(),
    };
    let ds = Dataset::load(&a.data)?;
    let task = task_by_name(&ds.env_spec()?, &a.task)?;
    let run = train_offline(&ds, &task, &cfg, a.seed)?;
    run.policy.to_checkpoint().save(&a.out)?;
    let critic = sibling(&a.out, ".critic");
    run.critic.to_checkpoint().save(&critic)?;
    let metrics = sibling(&a.out, ".metrics.csv");
    write_metrics_csv(&metrics, &run.metrics)?;
    print(json!({"policy": a.out, "critic": critic, "metrics": metrics, "steps": cfg.steps}));
    Ok(())
}

fn cmd_eval(policy: &Path, env: &str, task: &str, episodes: usize, seed: u64) -> Result<()> {
    let p = GaussianPolicy::from_checkpoint(&Checkpoint::load(policy)?)?;
    let env = EnvSpec::by_name(env)?;
    let t = task_by_name(&env, task)?;
    let r = evaluate_policy(&p, &env, &t, episodes, seed)?;
    print(json!({"env": env.name, "task": task, "mean_return": r.mean_return, "returns": r.returns}));
    Ok(())
}

fn cmd_stats(data: &[PathBuf], task: Option<&str>, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for path in data {
        let mut ds = Dataset::load(path)?;
        if let Some(t) = task {
            ds = relabel(&ds, &task_by_name(&ds.env_spec()?, t)?)?;
        }
        rows.push((path.display().to_string(), ds.stats()));
    }
    write_stats_table(out, &rows)?;
    print(json!({"table": out, "datasets": rows.len()}));
    Ok(())
}

fn cmd_sweep(config: &Path, workdir: Option<PathBuf>) -> Result<()> {
    let cfg = SweepConfig::load(config)?;
    let workdir = workdir.unwrap_or_else(|| config.parent().map(Path::to_path_buf).unwrap_or_default());
    let out = run_sweep(&cfg, &workdir)?;
    write_size_curves(&workdir.join("size_curves.csv"), &size_curve_report(&out.records))?;
    write_collection_returns(&workdir.join("collection_returns.csv"), &out.collection_logs)?;
    let failed = out.records.iter().filter(|r| !r.is_ok()).count();
    print(json!({"workdir": workdir, "cells": out.records.len(), "trained": out.trained, "failed": failed}));
    Ok(())
}

fn cmd_report(workdir: &Path, correlations: bool, multitask: bool) -> Result<()> {
    let (correlations, multitask) = if correlations || multitask { (correlations, multitask) } else { (true, false) };
    if correlations {
        let records = read_records(&workdir.join(RECORDS_FILE))?;
        let rows = correlation_report(&records)?;
        let path = workdir.join("correlations.csv");
        write_correlations(&path, &rows)?;
        let find = |stat: &str| rows.iter().find(|r| r.scope == "all" && r.statistic == stat).and_then(|r| r.rho);
        let (size, mean) = (find("size"), find("mean_reward"));
        let ordered = match (size, mean) {
            (Some(s), Some(m)) => Some(s >= m),
            _ => None,
        };
        print(json!({"table": path, "rho_size": size, "rho_mean_reward": mean, "size_at_least_mean_reward": ordered}));
    }
    if multitask {
        let cfg = SweepConfig::load(&workdir.join(CONFIG_FILE))?;
        let mut loaded = Vec::new();
        for agent in &cfg.grid.agents {
            for env in &cfg.grid.envs {
                let path = SweepConfig::dataset_path(workdir, agent, env);
                if path.exists() {
                    loaded.push((agent.clone(), Dataset::load(&path)?));
                }
            }
        }
        if loaded.is_empty() {
            return Err(Error::precondition(format!("no datasets under {}", workdir.join("datasets").display())));
        }
        let refs: Vec<(String, &Dataset)> = loaded.iter().map(|(a, d)| (a.clone(), d)).collect();
        let (rows, records) = multitask_report(Some(workdir), &refs, &cfg.crr, &cfg.eval, cfg.grid.seeds)?;
        let path = workdir.join("multitask.csv");
        write_multitask(&path, &rows)?;
        write_records(&workdir.join("multitask_runs.csv"), &records)?;
        print(json!({"table": path, "rows": rows.len()}));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(a) => cmd_collect(a),
        Command::Relabel { input, task, out } => cmd_relabel(&input, &task, &out),
        Command::TrainOffline(a) => cmd_train(a),
        Command::Eval { policy, env, task, episodes, seed } => cmd_eval(&policy, &env, &task, episodes, seed),
        Command::Stats { data, task, out } => cmd_stats(&data, task.as_deref(), &out),
        Command::Sweep { config, workdir } => cmd_sweep(&config, workdir),
        Command::Report { workdir, correlations, multitask } => cmd_report(&workdir, correlations, multitask),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
