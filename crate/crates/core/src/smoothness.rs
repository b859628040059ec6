//! Smoothness measurements for graph signals and labels.
//!
//! For a Laplacian `L` and a block signal `X`:
//!
//! * Dirichlet energy `E_S = tr(XᵀLX)`
//! * signal energy `E = tr(XᵀX)`
//! * non-smooth energy `E_NS = E - E_S`
//! * S-value `S = E_S / E`; small means smooth, and it can exceed 1.
//!
//! Labels are measured as one-hot `N×C` blocks so the score does not depend
//! on class numbering.

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{OperatorKind, SparseOperator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub laplacian_kind: OperatorKind,
    pub feature_s: f64,
    pub label_s: f64,
    /// `label_s - feature_s`
    pub diff: f64,
    pub node_homophily: f64,
    pub edge_homophily: f64,
    pub component_count: usize,
}

fn check_laplacian(lap: &SparseOperator, x: &Matrix) -> Result<()> {
    if !lap.kind().is_laplacian() {
        return Err(Error::NotALaplacian(lap.kind().flag_name()));
    }
    if x.rows() != lap.dim() {
        return Err(Error::dims(format!("{} rows", lap.dim()), x.rows()));
    }
    Ok(())
}

/// `tr(XᵀLX)`.
pub fn dirichlet_energy(lap: &SparseOperator, x: &Matrix) -> Result<f64> {
    check_laplacian(lap, x)?;
    quadratic_form(lap, x)
}

/// `tr(XᵀMX)` for any operator `M`.
pub fn quadratic_form(op: &SparseOperator, x: &Matrix) -> Result<f64> {
    Ok(x.dot(&op.apply(x)?))
}

/// `tr(XᵀX)`.
pub fn signal_energy(x: &Matrix) -> f64 {
    x.frobenius_sq()
}

pub fn nonsmooth_energy(lap: &SparseOperator, x: &Matrix) -> Result<f64> {
    let es = dirichlet_energy(lap, x)?;
    Ok(signal_energy(x) - es)
}

pub fn s_value(lap: &SparseOperator, x: &Matrix) -> Result<f64> {
    let es = dirichlet_energy(lap, x)?;
    let e = signal_energy(x);
    if e == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(es / e)
}

pub fn one_hot_labels(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: c,
                classes: num_classes,
            });
        }
        m[(i, c)] = 1.0;
    }
    Ok(m)
}

fn check_label_len(g: &Graph, labels: &[usize]) -> Result<()> {
    if labels.len() != g.node_count() {
        return Err(Error::dims(format!("{} labels", g.node_count()), labels.len()));
    }
    Ok(())
}

/// Mean over non-isolated nodes of the fraction of neighbors sharing the
/// node's label.
pub fn node_homophily(g: &Graph, labels: &[usize]) -> Result<f64> {
    check_label_len(g, labels)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..g.node_count() {
        let nbrs = g.neighbors_unchecked(i);
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs.iter().filter(|&&j| labels[j] == labels[i]).count();
        total += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::AllNodesIsolated);
    }
    Ok(total / counted as f64)
}

/// Fraction of edges joining same-label endpoints.
pub fn edge_homophily(g: &Graph, labels: &[usize]) -> Result<f64> {
    check_label_len(g, labels)?;
    if g.edge_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    let intra = g
        .edges()
        .into_iter()
        .filter(|&(u, v)| labels[u] == labels[v])
        .count();
    Ok(intra as f64 / g.edge_count() as f64)
}

/// Feature and label S-values under `kind` plus both homophily metrics.
/// Homophily metrics fall back to 0 on graphs where they are undefined.
pub fn smoothness_report(
    g: &Graph,
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    kind: OperatorKind,
) -> Result<SmoothnessReport> {
    if !kind.is_laplacian() {
        return Err(Error::NotALaplacian(kind.flag_name()));
    }
    let lap = SparseOperator::build(g, kind)?;
    let y = one_hot_labels(labels, num_classes)?;
    let feature_s = s_value(&lap, features)?;
    let label_s = s_value(&lap, &y)?;
    let node_homophily = match node_homophily(g, labels) {
        Err(Error::AllNodesIsolated) => 0.0,
        r => r?,
    };
    let edge_homophily = match edge_homophily(g, labels) {
        Err(Error::EmptyGraph) => 0.0,
        r => r?,
    };
    Ok(SmoothnessReport {
        laplacian_kind: kind,
        feature_s,
        label_s,
        diff: label_s - feature_s,
        node_homophily,
        edge_homophily,
        component_count: g.diagnose().component_count,
    })
}
