//! Second-order gradient boosting with logistic loss and exact greedy splits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, SelectionError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Initial margin (log-odds) for every row.
    pub base_score: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { rounds: 50, max_depth: 4, learning_rate: 0.1, lambda: 1.0, gamma: 0.0, base_score: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, gain: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature, *gain)),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTreeModel {
    pub params: GbdtParams,
    pub columns: Vec<String>,
    pub groups: Vec<Option<String>>,
    pub trees: Vec<Tree>,
}

/// A split chosen during fitting, with the rows that reached the node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    pub rows: Vec<usize>,
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Gradients, hessians and chosen splits of one boosting round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub splits: Vec<NodeSplit>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub rounds: Vec<RoundTrace>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
    splits: Vec<NodeSplit>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn best_split(&self, rows: &[usize]) -> Option<Best> {
        let g_total: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h_total: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let parent = self.score(g_total, h_total);
        let mut best: Option<Best> = None;
        let n_features = self.x.first().map_or(0, Vec::len);
        let mut order = rows.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let r = order[k];
                gl += self.grad[r];
                hl += self.hess[r];
                let (lo, hi) = (self.x[r][f], self.x[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent) - self.params.gamma;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid > lo { mid } else { hi };
                    best = Some(Best { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.params.max_depth && rows.len() >= 2 { self.best_split(&rows) } else { None };
        match split {
            None => {
                let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
                let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
                self.nodes[id] = Node::Leaf { value: -g / (h + self.params.lambda) };
            }
            Some(best) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| self.x[r][best.feature] < best.threshold);
                self.splits.push(NodeSplit { rows, feature: best.feature, threshold: best.threshold, gain: best.gain });
                let l = self.build(left, depth + 1);
                let r = self.build(right, depth + 1);
                self.nodes[id] =
                    Node::Split { feature: best.feature, threshold: best.threshold, gain: best.gain, left: l, right: r };
            }
        }
        id
    }
}

fn validate(matrix: &FeatureMatrix) -> Result<(), SelectionError> {
    if matrix.rows.is_empty() {
        return Err(SelectionError::EmptyMatrix);
    }
    if matrix.labels.iter().all(|&y| y) || matrix.labels.iter().all(|&y| !y) {
        return Err(SelectionError::SingleClass);
    }
    Ok(())
}

/// Fit and also return per-round gradients and chosen splits.
pub fn fit_traced(matrix: &FeatureMatrix, params: &GbdtParams) -> Result<(BoostedTreeModel, FitTrace), SelectionError> {
    validate(matrix)?;
    let n = matrix.n_rows();
    let y: Vec<f64> = matrix.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut margin = vec![params.base_score; n];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut trace = FitTrace::default();
    for _ in 0..params.rounds {
        let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
        let grad: Vec<f64> = p.iter().zip(&y).map(|(p, y)| p - y).collect();
        let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let mut b = Builder { x: &matrix.rows, grad: &grad, hess: &hess, params, nodes: Vec::new(), splits: Vec::new() };
        b.build((0..n).collect(), 0);
        let (nodes, splits) = (b.nodes, b.splits);
        let tree = Tree { nodes };
        for (m, row) in margin.iter_mut().zip(&matrix.rows) {
            *m += params.learning_rate * tree.leaf_value(row);
        }
        trace.rounds.push(RoundTrace { grad, hess, splits });
        trees.push(tree);
    }
    let model = BoostedTreeModel {
        params: *params,
        columns: matrix.columns.clone(),
        groups: matrix.groups.clone(),
        trees,
    };
    Ok((model, trace))
}

pub fn fit(matrix: &FeatureMatrix, params: &GbdtParams) -> Result<BoostedTreeModel, SelectionError> {
    fit_traced(matrix, params).map(|(m, _)| m)
}

pub fn predict_proba(model: &BoostedTreeModel, row: &[f64]) -> Result<f64, SelectionError> {
    if row.len() != model.columns.len() {
        return Err(SelectionError::SchemaMismatch(format!(
            "expected {} features, got {}",
            model.columns.len(),
            row.len()
        )));
    }
    let leaves: f64 = model.trees.iter().map(|t| t.leaf_value(row)).sum();
    Ok(sigmoid(model.params.base_score + model.params.learning_rate * leaves))
}

/// Predict from a name-keyed row; every schema column must be present.
pub fn predict_named(model: &BoostedTreeModel, row: &BTreeMap<String, f64>) -> Result<f64, SelectionError> {
    let values = model
        .columns
        .iter()
        .map(|c| row.get(c).copied().ok_or_else(|| SelectionError::SchemaMismatch(format!("missing feature {c:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    predict_proba(model, &values)
}
