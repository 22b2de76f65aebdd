use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::Result;
use crate::tables::{num, write_table, ColumnType, TableSchema};

/// Reward statistics of a dataset, in the order they are reported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub size: u64,
    pub mean_reward: f64,
    pub cumulative_reward: f64,
    pub q80_reward: f64,
}

impl DatasetStats {
    pub fn of(ds: &Dataset) -> Self {
        let r = ds.transitions.rewards();
        // Plain left-to-right summation keeps the result reproducible to the bit.
        let sum: f64 = r.iter().sum();
        Self {
            size: r.len() as u64,
            mean_reward: if r.is_empty() { 0.0 } else { sum / r.len() as f64 },
            cumulative_reward: sum,
            q80_reward: quantile(r, 0.8),
        }
    }
}

/// Linear-interpolation quantile (the "type 7" definition); 0 for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn stats_schema() -> TableSchema {
    TableSchema::new("dataset_stats", "reward statistics of datasets")
        .col("dataset", ColumnType::String, "dataset path or label")
        .col("size", ColumnType::Integer, "transitions (environment steps)")
        .col("mean_reward", ColumnType::Number, "mean per-step reward")
        .col("cumulative_reward", ColumnType::Number, "sum of rewards")
        .col("q80_reward", ColumnType::Number, "80th percentile of per-step reward")
}

/// Writes one stats row per dataset, with its schema sidecar.
pub fn write_stats_table(path: &Path, rows: &[(String, DatasetStats)]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, s)| {
            vec![name.clone(), s.size.to_string(), num(s.mean_reward), num(s.cumulative_reward), num(s.q80_reward)]
        })
        .collect();
    write_table(path, &stats_schema(), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_matches_type7() {
        // numpy.quantile([1, 2, 3, 4, 10], 0.8) == 5.2
        assert!((quantile(&[4.0, 1.0, 10.0, 3.0, 2.0], 0.8) - 5.2).abs() < 1e-12);
        assert_eq!(quantile(&[0.0, 0.0, 1.0], 0.8), 0.6000000000000001);
        assert_eq!(quantile(&[], 0.8), 0.0);
    }
}
