//! OverOz improvement and grouped reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("baseline instruction count is zero")]
    InvalidBaseline,
    #[error("no results to aggregate")]
    Empty,
}

/// Extra reduction over the `-Oz` baseline, in percent. Negative when the
/// tuned pipeline is worse.
pub fn overoz(ic_oz: u64, ic_tuned: u64) -> Result<f64, MetricsError> {
    if ic_oz == 0 {
        return Err(MetricsError::InvalidBaseline);
    }
    Ok((ic_oz as f64 - ic_tuned as f64) / ic_oz as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramResult {
    pub program_id: String,
    #[serde(default)]
    pub dataset: Option<String>,
    pub ic_oz: u64,
    pub ic_tuned: u64,
}

impl ProgramResult {
    pub fn overoz_pct(&self) -> Result<f64, MetricsError> {
        overoz(self.ic_oz, self.ic_tuned)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub dataset: String,
    pub programs: usize,
    pub mean_overoz_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    /// Unweighted mean of the group means.
    pub mean_of_group_means: f64,
    /// Mean over all programs regardless of group.
    pub per_program_mean: f64,
}

/// Label used for results without a dataset.
pub const DEFAULT_GROUP: &str = "default";

/// Per-group means of OverOz, plus the mean of those means and the grand
/// per-program mean. Groups are reported in name order.
pub fn aggregate(results: &[ProgramResult]) -> Result<Report, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::with_capacity(results.len());
    for r in results {
        let v = r.overoz_pct()?;
        groups.entry(r.dataset.as_deref().unwrap_or(DEFAULT_GROUP)).or_default().push(v);
        all.push(v);
    }
    let groups: Vec<GroupSummary> = groups
        .into_iter()
        .map(|(name, vals)| GroupSummary {
            dataset: name.to_string(),
            programs: vals.len(),
            mean_overoz_pct: mean(&vals),
        })
        .collect();
    Ok(Report {
        mean_of_group_means: mean(&groups.iter().map(|g| g.mean_overoz_pct).collect::<Vec<_>>()),
        per_program_mean: mean(&all),
        groups,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Report {
    pub fn to_table(&self) -> String {
        let width = self.groups.iter().map(|g| g.dataset.len()).max().unwrap_or(0).max(24);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>10}", "dataset", "programs", "OverOz %");
        for g in &self.groups {
            let _ = writeln!(out, "{:<width$}  {:>8}  {:>10.2}", g.dataset, g.programs, g.mean_overoz_pct);
        }
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>10.2}", "average (of datasets)", "", self.mean_of_group_means);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>10.2}", "average (per program)", "", self.per_program_mean);
        out
    }
}
