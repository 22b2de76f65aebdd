use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sweep::cached_cell;
use super::{median, spearman, EvalConfig, RunRecord};
use crate::agents::CollectionLog;
use crate::crr::CrrConfig;
use crate::datastore::{quantile, Dataset};
use crate::envsuite::task_table;
use crate::error::{Error, Result};
use crate::tables::{num, write_table, ColumnType, TableSchema};

/// Task label of the size-curve rows that aggregate all tasks.
pub const NORMALIZED_TASK: &str = "all-tasks";
const NORMALIZATION_NONE: &str = "none";
const NORMALIZATION_MINMAX: &str = "per-task min-max over all cells, then mean over tasks";

pub const STATISTICS: [&str; 4] = ["size", "mean_reward", "cumulative_reward", "q80_reward"];

fn statistic(r: &RunRecord, name: &str) -> f64 {
    match name {
        "size" => r.size as f64,
        "mean_reward" => r.mean_reward,
        "cumulative_reward" => r.cumulative_reward,
        "q80_reward" => r.q80_reward,
        _ => unreachable!("unknown statistic {name}"),
    }
}

/// Successful records in a canonical order, so every report is independent
/// of the order rows were produced in.
fn canonical(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    ok.sort_by(|a, b| {
        (&a.agent, &a.env, &a.task, a.size, a.seed)
            .cmp(&(&b.agent, &b.env, &b.task, b.size, b.seed))
            .then(a.eval_return.total_cmp(&b.eval_return))
    });
    ok
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// `all` or `<env>/<task>`.
    pub scope: String,
    pub statistic: String,
    /// `None` when the coefficient is undefined (a constant column).
    pub rho: Option<f64>,
    pub n: usize,
}

/// Spearman correlation of evaluated return against each dataset
/// statistic, over all records and per (env, task).
pub fn correlation_report(records: &[RunRecord]) -> Result<Vec<CorrelationRow>> {
    let ok = canonical(records);
    if ok.len() < 3 {
        return Err(Error::precondition(format!("correlation report needs >= 3 successful records, got {}", ok.len())));
    }
    let mut scopes: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    scopes.insert("all".into(), ok.clone());
    for r in &ok {
        scopes.entry(format!("{}/{}", r.env, r.task)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (scope, rs) in &scopes {
        let ret: Vec<f64> = rs.iter().map(|r| r.eval_return).collect();
        for stat in STATISTICS {
            let x: Vec<f64> = rs.iter().map(|r| statistic(r, stat)).collect();
            let rho = if rs.len() >= 2 { spearman(&ret, &x)? } else { None };
            rows.push(CorrelationRow { scope: scope.clone(), statistic: stat.into(), rho, n: rs.len() });
        }
    }
    Ok(rows)
}

pub fn correlation_schema() -> TableSchema {
    TableSchema::new("correlations", "Spearman rank correlation of offline return with dataset statistics")
        .col("scope", ColumnType::String, "'all' or '<env>/<task>'")
        .col("statistic", ColumnType::String, "dataset statistic")
        .nullable("rho", ColumnType::Number, "Spearman rho; empty when undefined (no rank variance)")
        .col("n", ColumnType::Integer, "records in scope")
}

pub fn write_correlations(path: &Path, rows: &[CorrelationRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.scope.clone(), r.statistic.clone(), r.rho.map(num).unwrap_or_default(), r.n.to_string()])
        .collect();
    write_table(path, &correlation_schema(), &rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeCurveRow {
    pub agent: String,
    pub env: String,
    pub task: String,
    pub size: u64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    pub n: usize,
    pub normalization: String,
}

/// Median and 10th/90th percentiles of return per (agent, env, task, size),
/// plus one aggregate row per (agent, size) over min-max normalized tasks.
pub fn size_curve_report(records: &[RunRecord]) -> Vec<SizeCurveRow> {
    let ok = canonical(records);
    let mut cells: BTreeMap<(String, String, String, u64), Vec<f64>> = BTreeMap::new();
    let mut ranges: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for r in &ok {
        cells.entry((r.agent.clone(), r.env.clone(), r.task.clone(), r.size)).or_default().push(r.eval_return);
        let e = ranges.entry((r.env.clone(), r.task.clone())).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(r.eval_return);
        e.1 = e.1.max(r.eval_return);
    }
    let mut rows = Vec::new();
    // (agent, size) -> per-task (median, p10, p90) of normalized returns
    type Spread = (f64, f64, f64);
    let mut normalized: BTreeMap<(String, u64), Vec<Spread>> = BTreeMap::new();
    for ((agent, env, task, size), v) in &cells {
        rows.push(SizeCurveRow {
            agent: agent.clone(),
            env: env.clone(),
            task: task.clone(),
            size: *size,
            median: median(v),
            p10: quantile(v, 0.1),
            p90: quantile(v, 0.9),
            n: v.len(),
            normalization: NORMALIZATION_NONE.into(),
        });
        let (lo, hi) = ranges[&(env.clone(), task.clone())];
        let norm: Vec<f64> = v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect();
        normalized
            .entry((agent.clone(), *size))
            .or_default()
            .push((median(&norm), quantile(&norm, 0.1), quantile(&norm, 0.9)));
    }
    for ((agent, size), per_task) in normalized {
        let k = per_task.len() as f64;
        let mean = |f: fn(&(f64, f64, f64)) -> f64| per_task.iter().map(f).sum::<f64>() / k;
        rows.push(SizeCurveRow {
            agent,
            env: "all".into(),
            task: NORMALIZED_TASK.into(),
            size,
            median: mean(|t| t.0),
            p10: mean(|t| t.1),
            p90: mean(|t| t.2),
            n: per_task.len(),
            normalization: NORMALIZATION_MINMAX.into(),
        });
    }
    rows
}

pub fn size_curve_schema() -> TableSchema {
    TableSchema::new("size_curves", "offline return against dataset size")
        .col("agent", ColumnType::String, "collection agent")
        .col("env", ColumnType::String, "environment, or 'all' for aggregate rows")
        .col("task", ColumnType::String, "task, or the aggregate label")
        .col("size", ColumnType::Integer, "dataset size in environment steps")
        .col("median", ColumnType::Number, "median return across seeds")
        .col("p10", ColumnType::Number, "10th percentile return")
        .col("p90", ColumnType::Number, "90th percentile return")
        .col("n", ColumnType::Integer, "seeds (or tasks for aggregate rows)")
        .col("normalization", ColumnType::String, "how returns were normalized before aggregation")
}

pub fn write_size_curves(path: &Path, rows: &[SizeCurveRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.agent.clone(),
                r.env.clone(),
                r.task.clone(),
                r.size.to_string(),
                num(r.median),
                num(r.p10),
                num(r.p90),
                r.n.to_string(),
                r.normalization.clone(),
            ]
        })
        .collect();
    write_table(path, &size_curve_schema(), &rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultitaskRow {
    pub agent: String,
    pub env: String,
    pub task: String,
    pub goal: [f64; 2],
    pub mean_return: f64,
    pub median_return: f64,
    /// Seeds whose policy scored a positive return.
    pub solved_seeds: usize,
    pub seeds: usize,
}

/// Relabels each dataset for every task of its environment, trains
/// `seeds` offline policies per task and evaluates them. Cells are cached
/// under `workdir` when one is given. Returns the per-task summary and the
/// underlying per-seed records.
pub fn multitask_report(
    workdir: Option<&Path>,
    datasets: &[(String, &Dataset)],
    crr: &CrrConfig,
    eval: &EvalConfig,
    seeds: u64,
) -> Result<(Vec<MultitaskRow>, Vec<RunRecord>)> {
    if seeds == 0 {
        return Err(Error::config("multitask report needs at least one seed"));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (agent, ds) in datasets {
        let env = ds.env_spec()?;
        for task in task_table(&env)? {
            let mut returns = Vec::new();
            for seed in 0..seeds {
                let (rec, _) = cached_cell(workdir, crr, eval, ds, agent, &task.name, ds.len() as u64, seed)?;
                if rec.is_ok() {
                    returns.push(rec.eval_return);
                }
                records.push(rec);
            }
            let (mean_return, median_return) = if returns.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (returns.iter().sum::<f64>() / returns.len() as f64, median(&returns))
            };
            rows.push(MultitaskRow {
                agent: agent.clone(),
                env: env.name.clone(),
                task: task.name.clone(),
                goal: task.goal,
                mean_return,
                median_return,
                solved_seeds: returns.iter().filter(|&&r| r > 0.0).count(),
                seeds: returns.len(),
            });
        }
    }
    Ok((rows, records))
}

pub fn multitask_schema() -> TableSchema {
    TableSchema::new("multitask", "one dataset relabeled for every task of its environment")
        .col("agent", ColumnType::String, "collection agent")
        .col("env", ColumnType::String, "environment")
        .col("task", ColumnType::String, "task role")
        .col("goal_x", ColumnType::Number, "goal x")
        .col("goal_y", ColumnType::Number, "goal y")
        .nullable("mean_return", ColumnType::Number, "mean return over seeds")
        .nullable("median_return", ColumnType::Number, "median return over seeds")
        .col("solved_seeds", ColumnType::Integer, "seeds with positive return")
        .col("seeds", ColumnType::Integer, "successful seeds")
}

pub fn write_multitask(path: &Path, rows: &[MultitaskRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.agent.clone(),
                r.env.clone(),
                r.task.clone(),
                num(r.goal[0]),
                num(r.goal[1]),
                num(r.mean_return),
                num(r.median_return),
                r.solved_seeds.to_string(),
                r.seeds.to_string(),
            ]
        })
        .collect();
    write_table(path, &multitask_schema(), &rows)
}

pub fn collection_returns_schema() -> TableSchema {
    TableSchema::new("collection_returns", "extrinsic episode returns observed while collecting")
        .col("agent", ColumnType::String, "collection agent")
        .col("env", ColumnType::String, "environment")
        .col("seed", ColumnType::Integer, "collection seed")
        .col("episode", ColumnType::Integer, "episode index")
        .col("return", ColumnType::Number, "episode return of the environment's default task")
}

pub fn write_collection_returns(path: &Path, logs: &[CollectionLog]) -> Result<()> {
    let mut rows = Vec::new();
    for log in logs {
        for (i, r) in log.episode_returns.iter().enumerate() {
            rows.push(vec![log.agent.clone(), log.env.clone(), log.seed.to_string(), i.to_string(), num(*r)]);
        }
    }
    write_table(path, &collection_returns_schema(), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(agent: &str, size: u64, seed: u64, ret: f64, mean: f64) -> RunRecord {
        RunRecord {
            agent: agent.into(),
            env: "pointmass".into(),
            task: "training".into(),
            size,
            seed,
            eval_return: ret,
            mean_reward: mean,
            cumulative_reward: mean * size as f64,
            q80_reward: 0.0,
            config_hash: "x".into(),
            error: None,
        }
    }

    #[test]
    fn size_equal_to_return_correlates_perfectly() {
        let rs: Vec<RunRecord> = [10u64, 20, 30, 40].iter().map(|&s| record("a", s, 0, s as f64, 0.5)).collect();
        let rows = correlation_report(&rs).unwrap();
        let size = rows.iter().find(|r| r.scope == "all" && r.statistic == "size").unwrap();
        assert_eq!(size.rho, Some(1.0));
        let q80 = rows.iter().find(|r| r.scope == "all" && r.statistic == "q80_reward").unwrap();
        assert_eq!(q80.rho, None);
    }

    #[test]
    fn reports_ignore_row_order() {
        let mut rs: Vec<RunRecord> = (0..12u64)
            .map(|i| record(if i % 2 == 0 { "a" } else { "b" }, 100 * (1 + i % 3), i / 3, ((i * 7) % 5) as f64, (i % 4) as f64 * 0.1))
            .collect();
        let a = correlation_report(&rs).unwrap();
        let c1 = size_curve_report(&rs);
        rs.reverse();
        rs.swap(2, 7);
        assert_eq!(correlation_report(&rs).unwrap(), a);
        assert_eq!(size_curve_report(&rs), c1);
    }

    #[test]
    fn too_few_records_rejected() {
        let rs = vec![record("a", 1, 0, 1.0, 0.0)];
        assert!(matches!(correlation_report(&rs), Err(Error::Precondition(_))));
    }

    #[test]
    fn size_curve_percentiles_and_normalization() {
        let rs = vec![
            record("a", 10, 0, 0.0, 0.0),
            record("a", 10, 1, 10.0, 0.0),
            record("a", 10, 2, 20.0, 0.0),
            record("a", 20, 0, 40.0, 0.0),
        ];
        let rows = size_curve_report(&rs);
        let first = &rows[0];
        assert_eq!((first.size, first.median, first.n), (10, 10.0, 3));
        assert!((first.p10 - 2.0).abs() < 1e-12 && (first.p90 - 18.0).abs() < 1e-12);
        let agg: Vec<&SizeCurveRow> = rows.iter().filter(|r| r.task == NORMALIZED_TASK).collect();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].median, 0.25);
        assert_eq!(agg[1].median, 1.0);
    }
}
