//! Link-prediction and community-recovery metrics, plus the 2-D projections
//! used to inspect fitted geometry.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::objective::edge_logit;
use crate::params::{logistic, ModelState};

/// Evaluation summary. The community metrics are present only when ground
/// truth labels were supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    pub n_test_pairs: usize,
}

/// Edge probability for each queried pair under the fitted state.
pub fn link_scores(state: &ModelState, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = state.z.nrows();
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n {
                return Err(Error::PairOutOfRange { i, j, n });
            }
            let eta = edge_logit(state.z.row(i), state.z.row(j), state.g[i], state.g[j], state.s);
            Ok(logistic(eta))
        })
        .collect()
}

fn check_two_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassLabels {
            positives,
            negatives,
        });
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve via the rank statistic, with tied scores
/// counted half (average ranks), so the result is exact under ties.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LabelLengthMismatch(scores.len(), labels.len()));
    }
    let (positives, negatives) = check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average 1-based ranks over tie groups, summed on the positives.
    let mut rank_sum_pos = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut stop = start + 1;
        while stop < order.len() && scores[order[stop]] == scores[order[start]] {
            stop += 1;
        }
        let avg_rank = (start + 1 + stop) as f64 / 2.0;
        for &idx in &order[start..stop] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        start = stop;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Area under the precision-recall curve by step integration (no
/// interpolation), with tied scores processed as a single group.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LabelLengthMismatch(scores.len(), labels.len()));
    }
    let (positives, _) = check_two_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0f64;
    let mut area = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut stop = start + 1;
        while stop < order.len() && scores[order[stop]] == scores[order[start]] {
            stop += 1;
        }
        for &idx in &order[start..stop] {
            if labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
        start = stop;
    }
    Ok(area)
}

/// Dense contingency table between two label vectors, with marginals.
fn contingency(a: &[usize], b: &[usize]) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let compact = |labels: &[usize]| -> Vec<usize> {
        let mut map = HashMap::new();
        labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect()
    };
    let ca = compact(a);
    let cb = compact(b);
    let ka = ca.iter().max().map_or(0, |m| m + 1);
    let kb = cb.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::<f64>::zeros((ka, kb));
    for (&x, &y) in ca.iter().zip(cb.iter()) {
        table[(x, y)] += 1.0;
    }
    let rows = (0..ka).map(|i| table.row(i).sum()).collect();
    let cols = (0..kb).map(|j| table.column(j).sum()).collect();
    (table, rows, cols)
}

fn check_labels(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LabelLengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty label vectors".into()));
    }
    Ok(())
}

/// Normalized mutual information with arithmetic-mean normalization. Two
/// single-cluster partitions (both entropies zero) score 1; if exactly one
/// partition is constant the score is 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_labels(pred, truth)?;
    let n = pred.len() as f64;
    let (table, rows, cols) = contingency(pred, truth);
    let entropy = |margins: &Vec<f64>| -> f64 {
        margins
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&rows);
    let h_truth = entropy(&cols);
    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0f64;
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            let nij = table[(i, j)];
            if nij > 0.0 {
                let pij = nij / n;
                mi += pij * (pij / ((rows[i] / n) * (cols[j] / n))).ln();
            }
        }
    }
    Ok((mi / (0.5 * (h_pred + h_truth))).clamp(0.0, 1.0))
}

/// Adjusted Rand index with the usual expected-index correction; partitions
/// whose maximum index equals its expectation (e.g. both trivial) score 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_labels(pred, truth)?;
    let n = pred.len() as f64;
    let (table, rows, cols) = contingency(pred, truth);
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Permutation of node ids that groups nodes by hull assignment, then by
/// dominant prototype within the hull, then by node id — the order used to
/// draw block-structured adjacency heatmaps.
pub fn reorder_adjacency(g: &Graph, state: &ModelState) -> Result<Vec<usize>> {
    let n = g.n_nodes;
    if state.z.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "state covers {} nodes but the graph has {}",
            state.z.nrows(),
            n
        )));
    }
    let dominant_prototype = |i: usize| -> usize {
        let row = state.omega.row(i);
        let mut best = 0;
        for r in 1..row.len() {
            if row[r] > row[best] {
                best = r;
            }
        }
        best
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (state.assignments[i], dominant_prototype(i), i));
    Ok(order)
}

/// Projects rows of `points` onto their top two principal components.
/// Returns the M x 2 projection and the two explained variances (top
/// eigenvalues of the sample covariance). Each component's sign is fixed so
/// its largest-magnitude loading is positive.
pub fn pca_project(points: &Array2<f64>) -> Result<(Array2<f64>, [f64; 2])> {
    let (m, d) = points.dim();
    if m < 2 || d == 0 {
        return Err(Error::ShapeMismatch(format!(
            "need at least 2 points of positive dimension for a projection, got {m} x {d}"
        )));
    }
    let mut centered = points.clone();
    for c in 0..d {
        let mean = points.column(c).sum() / m as f64;
        for r in 0..m {
            centered[(r, c)] -= mean;
        }
    }
    let cov = centered.t().dot(&centered) / (m as f64 - 1.0);
    let (eigs, vecs) = crate::linalg::jacobi_eigh(&cov);
    let n_comp = d.min(2);
    let mut basis = Array2::<f64>::zeros((d, 2));
    let mut explained = [0.0f64; 2];
    for c in 0..n_comp {
        let mut v: Vec<f64> = (0..d).map(|r| vecs[(r, c)]).collect();
        let mut lead = 0;
        for (r, x) in v.iter().enumerate() {
            if x.abs() > v[lead].abs() {
                lead = r;
            }
        }
        if v[lead] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        for r in 0..d {
            basis[(r, c)] = v[r];
        }
        explained[c] = eigs[c].max(0.0);
    }
    Ok((centered.dot(&basis), explained))
}

/// A 2-D layout of one hull's nodes inside the regular K-gon of its
/// prototypes: prototype `r` sits on the unit circle at angle `2 pi r / K`,
/// and each node is the loading-weighted average of those anchor positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircularLayout {
    /// One (x, y) row per node of the block.
    pub node_xy: Vec<[f64; 2]>,
    /// One (x, y) row per prototype.
    pub prototype_xy: Vec<[f64; 2]>,
}

pub fn circular_membership_layout(
    omega_block: &Array2<f64>,
    assignments_block: &[usize],
) -> Result<CircularLayout> {
    let (n, k) = omega_block.dim();
    if assignments_block.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} loading rows but {} assignments",
            n,
            assignments_block.len()
        )));
    }
    let prototype_xy: Vec<[f64; 2]> = (0..k)
        .map(|r| {
            let angle = 2.0 * std::f64::consts::PI * r as f64 / k as f64;
            [angle.cos(), angle.sin()]
        })
        .collect();
    let node_xy = (0..n)
        .map(|i| {
            let mut x = 0.0;
            let mut y = 0.0;
            for r in 0..k {
                x += omega_block[(i, r)] * prototype_xy[r][0];
                y += omega_block[(i, r)] * prototype_xy[r][1];
            }
            [x, y]
        })
        .collect();
    Ok(CircularLayout {
        node_xy,
        prototype_xy,
    })
}
