use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BoostedTreeModel, SelectionError};
use crate::metrics::MetricName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub name: String,
    pub total_gain: f64,
    pub share: f64,
}

/// Gain importance per report group, in schema order of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainImportance {
    pub entries: Vec<ImportanceEntry>,
}

impl GainImportance {
    /// Build directly from (name, share) pairs, e.g. a transcribed fixture.
    pub fn from_shares<S: Into<String>>(shares: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            entries: shares
                .into_iter()
                .map(|(name, share)| ImportanceEntry { name: name.into(), total_gain: share, share })
                .collect(),
        }
    }

    pub fn share(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.share)
    }

    /// Entries by descending share.
    pub fn ranked(&self) -> Vec<&ImportanceEntry> {
        let mut v: Vec<&ImportanceEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.share.total_cmp(&a.share));
        v
    }

    /// Plain-text table, highest share first.
    pub fn table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(7).max(7);
        let mut out = format!("{:<width$}  {:>12}  {:>7}\n", "feature", "total_gain", "share");
        for e in self.ranked() {
            let _ = writeln!(out, "{:<width$}  {:>12.4}  {:>6.1}%", e.name, e.total_gain, e.share * 100.0);
        }
        out
    }
}

/// Total split gain per schema column.
pub fn column_gains(model: &BoostedTreeModel) -> Vec<f64> {
    let mut gains = vec![0.0; model.columns.len()];
    for (f, g) in model.trees.iter().flat_map(|t| t.splits()) {
        gains[f] += g;
    }
    gains
}

/// Gains accumulated per report group (embedding columns collapse into one).
pub fn gain_importance(model: &BoostedTreeModel) -> Result<GainImportance, SelectionError> {
    let gains = column_gains(model);
    let total: f64 = gains.iter().sum();
    if total <= 0.0 {
        return Err(SelectionError::UndefinedShares);
    }
    let mut entries: Vec<ImportanceEntry> = Vec::new();
    for (i, g) in gains.iter().enumerate() {
        let name = model.groups[i].clone().unwrap_or_else(|| model.columns[i].clone());
        match entries.iter_mut().find(|e| e.name == name) {
            Some(e) => e.total_gain += g,
            None => entries.push(ImportanceEntry { name, total_gain: *g, share: 0.0 }),
        }
    }
    for e in &mut entries {
        e.share = e.total_gain / total;
    }
    Ok(GainImportance { entries })
}

/// Metrics whose share strictly exceeds `threshold`, highest share first.
/// Non-metric entries (such as the embedding group) are never selected.
pub fn select_metrics(importance: &GainImportance, threshold: f64) -> Vec<MetricName> {
    importance
        .ranked()
        .into_iter()
        .filter(|e| e.share > threshold)
        .filter_map(|e| e.name.parse::<MetricName>().ok())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub metrics: Vec<MetricName>,
    pub threshold: f64,
    pub fallback_used: bool,
}

/// [`select_metrics`], falling back to the `k` highest-share metrics when
/// nothing clears the threshold.
pub fn select_with_fallback(importance: &GainImportance, threshold: f64, k: usize) -> Selection {
    let metrics = select_metrics(importance, threshold);
    if !metrics.is_empty() {
        return Selection { metrics, threshold, fallback_used: false };
    }
    let metrics: Vec<MetricName> =
        importance.ranked().into_iter().filter_map(|e| e.name.parse().ok()).take(k).collect();
    log::warn!("no metric share exceeds {threshold}; falling back to top {k}: {metrics:?}");
    Selection { metrics, threshold, fallback_used: true }
}
