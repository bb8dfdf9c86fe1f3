use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::SelectionError;
use crate::metrics::{MetricName, MetricVector};

/// Group name shared by all embedding columns in importance reports.
pub const EMBEDDING_GROUP: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    /// Report group per column; `None` means the column reports under its own name.
    pub groups: Vec<Option<String>>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self, SelectionError> {
        let groups = vec![None; columns.len()];
        Self::with_groups(columns, groups, rows, labels)
    }

    pub fn with_groups(
        columns: Vec<String>,
        groups: Vec<Option<String>>,
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
    ) -> Result<Self, SelectionError> {
        let mut seen = HashSet::new();
        if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(SelectionError::InvalidMatrix(format!("duplicate column {dup:?}")));
        }
        if groups.len() != columns.len() {
            return Err(SelectionError::InvalidMatrix("group count differs from column count".into()));
        }
        if rows.len() != labels.len() {
            return Err(SelectionError::InvalidMatrix(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(SelectionError::InvalidMatrix(format!("row {i} has {} values", rows[i].len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SelectionError::InvalidMatrix("non-finite value".into()));
        }
        Ok(Self { columns, groups, rows, labels })
    }

    /// Prompt-embedding columns (optional) followed by the eight candidate
    /// metrics. Missing metric values are imputed with the column median.
    pub fn from_metrics(
        embeddings: Option<&[Vec<f64>]>,
        metrics: &[MetricVector],
        labels: &[bool],
    ) -> Result<Self, SelectionError> {
        let dim = embeddings.and_then(|e| e.first()).map_or(0, Vec::len);
        if let Some(e) = embeddings {
            if e.len() != metrics.len() {
                return Err(SelectionError::InvalidMatrix("embedding count differs from metric count".into()));
            }
        }
        let mut columns: Vec<String> = (0..dim).map(|i| format!("emb_{i}")).collect();
        let mut groups = vec![Some(EMBEDDING_GROUP.to_string()); dim];
        columns.extend(MetricName::ALL.iter().map(|m| m.as_str().to_string()));
        groups.extend(MetricName::ALL.iter().map(|_| None));

        let medians: Vec<f64> = MetricName::ALL
            .iter()
            .map(|&m| {
                let mut present: Vec<f64> = metrics.iter().filter_map(|v| v.get(m)).collect();
                median(&mut present).unwrap_or(0.0)
            })
            .collect();
        let rows = metrics
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut row = embeddings.map(|e| e[i].clone()).unwrap_or_default();
                row.extend(MetricName::ALL.iter().zip(&medians).map(|(&m, &med)| v.get(m).unwrap_or(med)));
                row
            })
            .collect();
        Self::with_groups(columns, groups, rows, labels.to_vec())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }
}
