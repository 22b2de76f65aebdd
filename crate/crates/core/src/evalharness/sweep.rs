use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluate_policy;
use crate::agents::{collect, AgentConfig, AgentKind, CollectionLog, RewardChannel};
use crate::crr::{train_offline, CrrConfig};
use crate::datastore::{relabel, Dataset, DatasetStats};
use crate::envsuite::{task_by_name, EnvSpec};
use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::planner::PlannerConfig;
use crate::tables::{num, read_table, write_table, ColumnType, JsonLog, TableSchema};

/// Copy of the sweep configuration kept in the workdir.
pub const CONFIG_FILE: &str = "sweep.toml";
/// The merged per-cell results table.
pub const RECORDS_FILE: &str = "runs.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub agents: Vec<String>,
    pub envs: Vec<String>,
    /// Dataset sizes in environment steps, ascending.
    pub sizes: Vec<u64>,
    /// Offline-training seeds per cell.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<String>,
    /// Seed of the collection run behind each (agent, env) dataset.
    #[serde(default)]
    pub collection_seed: u64,
    /// Collect missing datasets instead of reporting them as errors.
    #[serde(default = "default_true")]
    pub collect: bool,
}

fn default_seeds() -> u64 {
    3
}
fn default_tasks() -> Vec<String> {
    vec!["training".into()]
}
fn default_true() -> bool {
    true
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() || self.envs.is_empty() || self.sizes.is_empty() || self.tasks.is_empty() {
            return Err(Error::config("sweep grid needs at least one agent, env, size and task"));
        }
        if self.seeds == 0 {
            return Err(Error::config("sweep grid needs at least one seed"));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) || self.sizes[0] == 0 {
            return Err(Error::config("sweep sizes must be positive and strictly ascending"));
        }
        for a in &self.agents {
            a.parse::<AgentKind>()?;
        }
        for e in &self.envs {
            let env = EnvSpec::by_name(e)?;
            for t in &self.tasks {
                task_by_name(&env, t)?;
            }
        }
        Ok(())
    }

    pub fn max_size(&self) -> u64 {
        *self.sizes.last().expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

fn default_episodes() -> usize {
    20
}
fn default_eval_seed() -> u64 {
    1_000
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: default_episodes(), seed: default_eval_seed() }
    }
}

/// A sweep experiment as read from its TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    /// Planner settings for IMPC collectors.
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub crr: CrrConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("sweep config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("sweep config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.planner.validate()?;
        self.crr.validate()?;
        for a in &self.grid.agents {
            self.agent_config(a)?.validate()?;
        }
        if self.eval.episodes == 0 {
            return Err(Error::config("evaluation needs at least one episode"));
        }
        Ok(())
    }

    pub fn agent_config(&self, agent: &str) -> Result<AgentConfig> {
        Ok(AgentConfig::new(agent.parse()?).with_planner(self.planner.clone()))
    }

    pub fn dataset_path(workdir: &Path, agent: &str, env: &str) -> PathBuf {
        workdir.join("datasets").join(format!("{agent}__{env}.e2o"))
    }

    pub fn collection_log_path(workdir: &Path, agent: &str, env: &str) -> PathBuf {
        workdir.join("datasets").join(format!("{agent}__{env}.log.json"))
    }
}

/// One (agent, env, task, size, seed) cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub agent: String,
    pub env: String,
    pub task: String,
    pub size: u64,
    pub seed: u64,
    /// Mean evaluated return; NaN for failed cells.
    pub eval_return: f64,
    pub mean_reward: f64,
    pub cumulative_reward: f64,
    pub q80_reward: f64,
    pub config_hash: String,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn cell_name(&self) -> String {
        format!("{}__{}__{}__{}__{}.json", self.agent, self.env, self.task, self.size, self.seed)
    }

    fn failed(agent: &str, env: &str, task: &str, size: u64, seed: u64, hash: &str, err: &Error) -> Self {
        Self {
            agent: agent.into(),
            env: env.into(),
            task: task.into(),
            size,
            seed,
            eval_return: f64::NAN,
            mean_reward: f64::NAN,
            cumulative_reward: f64::NAN,
            q80_reward: f64::NAN,
            config_hash: hash.into(),
            error: Some(err.to_string()),
        }
    }
}

pub fn records_schema() -> TableSchema {
    TableSchema::new("runs", "offline policy return per sweep cell with the statistics of its training data")
        .col("agent", ColumnType::String, "collection agent")
        .col("env", ColumnType::String, "environment")
        .col("task", ColumnType::String, "relabeling and evaluation task")
        .col("size", ColumnType::Integer, "dataset size in environment steps (temporal prefix)")
        .col("seed", ColumnType::Integer, "offline training seed")
        .nullable("eval_return", ColumnType::Number, "mean greedy episode return; empty for failed cells")
        .nullable("mean_reward", ColumnType::Number, "mean relabeled reward of the dataset")
        .nullable("cumulative_reward", ColumnType::Number, "summed relabeled reward of the dataset")
        .nullable("q80_reward", ColumnType::Number, "80th percentile relabeled reward")
        .nullable("config_hash", ColumnType::String, "hash of everything that determines the cell")
        .nullable("error", ColumnType::String, "failure message, empty on success")
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.agent.clone(),
                r.env.clone(),
                r.task.clone(),
                r.size.to_string(),
                r.seed.to_string(),
                num(r.eval_return),
                num(r.mean_reward),
                num(r.cumulative_reward),
                num(r.q80_reward),
                r.config_hash.clone(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_table(path, &records_schema(), &rows)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let (schema, rows) = read_table(path)?;
    if schema.table != records_schema().table {
        return Err(Error::contract(format!("{} is a '{}' table, not runs", path.display(), schema.table)));
    }
    let f = |cell: &str| if cell.is_empty() { Ok(f64::NAN) } else { cell.parse::<f64>().map_err(Error::contract) };
    let u = |cell: &str| cell.parse::<u64>().map_err(Error::contract);
    rows.iter()
        .map(|r| {
            Ok(RunRecord {
                agent: r[0].clone(),
                env: r[1].clone(),
                task: r[2].clone(),
                size: u(&r[3])?,
                seed: u(&r[4])?,
                eval_return: f(&r[5])?,
                mean_reward: f(&r[6])?,
                cumulative_reward: f(&r[7])?,
                q80_reward: f(&r[8])?,
                config_hash: r[9].clone(),
                error: if r[10].is_empty() { None } else { Some(r[10].clone()) },
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    /// Cells trained in this call (cached cells are not counted).
    pub trained: usize,
    pub collection_logs: Vec<CollectionLog>,
}

#[derive(Serialize, Deserialize)]
struct CellFile {
    config_hash: String,
    record: RunRecord,
}

/// Loads the (agent, env) dataset from the workdir, collecting it first if
/// allowed. The collection log is written alongside.
fn obtain_dataset(cfg: &SweepConfig, workdir: &Path, agent: &str, env: &str, log: &mut JsonLog) -> Result<(Dataset, Option<CollectionLog>)> {
    let path = SweepConfig::dataset_path(workdir, agent, env);
    let log_path = SweepConfig::collection_log_path(workdir, agent, env);
    if path.exists() {
        let ds = Dataset::load(&path)?;
        let clog = match fs::read(&log_path) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes)?),
            Err(_) => None,
        };
        return Ok((ds, clog));
    }
    if !cfg.grid.collect {
        return Err(Error::precondition(format!("dataset {} is missing", path.display())));
    }
    let spec = EnvSpec::by_name(env)?;
    let agent_cfg = cfg.agent_config(agent)?;
    log.write(&serde_json::json!({"event": "collect", "agent": agent, "env": env, "steps": cfg.grid.max_size()}))?;
    let (ds, clog) = collect(&agent_cfg, &spec, cfg.grid.max_size(), cfg.grid.collection_seed, &RewardChannel::Default)?;
    ds.save(&path)?;
    fs::write(&log_path, serde_json::to_vec_pretty(&clog)?)?;
    Ok((ds, Some(clog)))
}

fn cell_hash(crr: &CrrConfig, eval: &EvalConfig, ds: &Dataset, task: &str, size: u64, seed: u64) -> Result<String> {
    config_hash(&serde_json::json!({
        "dataset": {
            "env": ds.header.env,
            "agent": ds.header.agent,
            "seed": ds.header.seed,
            "config_hash": ds.header.config_hash,
        },
        "task": task,
        "size": size,
        "seed": seed,
        "crr": crr,
        "eval": eval,
    }))
}

#[allow(clippy::too_many_arguments)]
fn run_cell(crr: &CrrConfig, eval: &EvalConfig, ds: &Dataset, agent: &str, task_name: &str, size: u64, seed: u64, hash: &str) -> Result<RunRecord> {
    let env = ds.env_spec()?;
    let task = task_by_name(&env, task_name)?;
    let data = relabel(&ds.prefix(size as usize)?, &task)?;
    let stats = DatasetStats::of(&data);
    let run = train_offline(&data, &task, crr, seed)?;
    let result = evaluate_policy(&run.policy, &env, &task, eval.episodes, eval.seed)?;
    Ok(RunRecord {
        agent: agent.into(),
        env: env.name.clone(),
        task: task_name.into(),
        size,
        seed,
        eval_return: result.mean_return,
        mean_reward: stats.mean_reward,
        cumulative_reward: stats.cumulative_reward,
        q80_reward: stats.q80_reward,
        config_hash: hash.into(),
        error: None,
    })
}

/// Trains and evaluates one cell, reusing the stored result under
/// `workdir/cells` when its configuration hash matches. Returns the record
/// and whether training ran.
#[allow(clippy::too_many_arguments)]
pub fn cached_cell(
    workdir: Option<&Path>,
    crr: &CrrConfig,
    eval: &EvalConfig,
    ds: &Dataset,
    agent: &str,
    task: &str,
    size: u64,
    seed: u64,
) -> Result<(RunRecord, bool)> {
    let hash = cell_hash(crr, eval, ds, task, size, seed)?;
    let probe = RunRecord::failed(agent, &ds.header.env, task, size, seed, &hash, &Error::config(""));
    let cell_path = workdir.map(|w| w.join("cells").join(probe.cell_name()));
    if let Some(path) = &cell_path {
        if let Ok(bytes) = fs::read(path) {
            if let Ok(cell) = serde_json::from_slice::<CellFile>(&bytes) {
                if cell.config_hash == hash && cell.record.is_ok() {
                    return Ok((cell.record, false));
                }
            }
        }
    }
    match run_cell(crr, eval, ds, agent, task, size, seed, &hash) {
        Ok(r) => {
            if let Some(path) = &cell_path {
                fs::create_dir_all(path.parent().expect("cells dir"))?;
                let tmp = path.with_extension("json.tmp");
                fs::write(&tmp, serde_json::to_vec_pretty(&CellFile { config_hash: hash, record: r.clone() })?)?;
                fs::rename(&tmp, path)?;
            }
            Ok((r, true))
        }
        Err(e) => Ok((RunRecord::failed(agent, &ds.header.env, task, size, seed, &hash, &e), false)),
    }
}

/// Runs every cell of the grid under `workdir`. Each finished cell is
/// stored in its own file under `cells/`; a cell whose file carries the
/// current configuration hash is not retrained. Failures become error
/// rows and the sweep moves on. The merged table is written to
/// [`RECORDS_FILE`].
pub fn run_sweep(cfg: &SweepConfig, workdir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    fs::create_dir_all(workdir.join("cells"))?;
    fs::create_dir_all(workdir.join("datasets"))?;
    fs::write(workdir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let mut log = JsonLog::open(&workdir.join("sweep.log.jsonl"))?;
    let mut records = Vec::new();
    let mut logs = Vec::new();
    let mut trained = 0;
    for agent in &cfg.grid.agents {
        for env in &cfg.grid.envs {
            let dataset = obtain_dataset(cfg, workdir, agent, env, &mut log);
            if let Ok((_, Some(clog))) = &dataset {
                logs.push(clog.clone());
            }
            for task in &cfg.grid.tasks {
                for &size in &cfg.grid.sizes {
                    for seed in 0..cfg.grid.seeds {
                        let ds = match &dataset {
                            Ok((ds, _)) => ds,
                            Err(e) => {
                                records.push(RunRecord::failed(agent, env, task, size, seed, "", e));
                                continue;
                            }
                        };
                        let (record, ran) = cached_cell(Some(workdir), &cfg.crr, &cfg.eval, ds, agent, task, size, seed)?;
                        trained += usize::from(ran);
                        log.write(&serde_json::json!({
                            "event": "cell",
                            "agent": agent,
                            "env": env,
                            "task": task,
                            "size": size,
                            "seed": seed,
                            "eval_return": if record.eval_return.is_finite() { Some(record.eval_return) } else { None },
                            "error": record.error,
                        }))?;
                        records.push(record);
                    }
                }
            }
        }
    }
    write_records(&workdir.join(RECORDS_FILE), &records)?;
    Ok(SweepOutcome { records, trained, collection_logs: logs })
}
