//! Laplacian and affinity operators in CSR form.
//!
//! With `A` the adjacency, `D` the degrees, `Ã = A + I` and `D̃ = D + I`:
//!
//! ```text
//! L      = D - A
//! L_sym  = I - D^{-1/2} A D^{-1/2}     A_sym  = D^{-1/2} A D^{-1/2}
//! L_rw   = I - D^{-1} A                A_rw   = D^{-1} A
//! L̂_sym  = I - D̃^{-1/2} Ã D̃^{-1/2}     Â_sym  = D̃^{-1/2} Ã D̃^{-1/2}
//! L̂_rw   = I - D̃^{-1} Ã                Â_rw   = D̃^{-1} Ã
//! ```
//!
//! Every normalized Laplacian has an affinity complement with `L + A = I`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Combinatorial,
    SymNormLaplacian,
    RwNormLaplacian,
    SymAffinity,
    RwAffinity,
    RenormSymAffinity,
    RenormRwAffinity,
    RenormSymLaplacian,
    RenormRwLaplacian,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 9] = [
        OperatorKind::Combinatorial,
        OperatorKind::SymNormLaplacian,
        OperatorKind::RwNormLaplacian,
        OperatorKind::SymAffinity,
        OperatorKind::RwAffinity,
        OperatorKind::RenormSymAffinity,
        OperatorKind::RenormRwAffinity,
        OperatorKind::RenormSymLaplacian,
        OperatorKind::RenormRwLaplacian,
    ];

    /// Short name used on the command line.
    pub fn flag_name(self) -> &'static str {
        use OperatorKind::*;
        match self {
            Combinatorial => "comb",
            SymNormLaplacian => "sym",
            RwNormLaplacian => "rw",
            SymAffinity => "aff-sym",
            RwAffinity => "aff-rw",
            RenormSymAffinity => "renorm-sym",
            RenormRwAffinity => "renorm-rw",
            RenormSymLaplacian => "renorm-lap-sym",
            RenormRwLaplacian => "renorm-lap-rw",
        }
    }

    pub fn is_laplacian(self) -> bool {
        use OperatorKind::*;
        matches!(
            self,
            Combinatorial
                | SymNormLaplacian
                | RwNormLaplacian
                | RenormSymLaplacian
                | RenormRwLaplacian
        )
    }

    pub fn is_renormalized(self) -> bool {
        use OperatorKind::*;
        matches!(
            self,
            RenormSymAffinity | RenormRwAffinity | RenormSymLaplacian | RenormRwLaplacian
        )
    }

    pub fn is_symmetric(self) -> bool {
        use OperatorKind::*;
        matches!(
            self,
            Combinatorial | SymNormLaplacian | SymAffinity | RenormSymAffinity | RenormSymLaplacian
        )
    }

    /// The kind that sums with `self` to the identity. `Combinatorial` has none.
    pub fn complement(self) -> Option<OperatorKind> {
        use OperatorKind::*;
        Some(match self {
            Combinatorial => return None,
            SymNormLaplacian => SymAffinity,
            SymAffinity => SymNormLaplacian,
            RwNormLaplacian => RwAffinity,
            RwAffinity => RwNormLaplacian,
            RenormSymLaplacian => RenormSymAffinity,
            RenormSymAffinity => RenormSymLaplacian,
            RenormRwLaplacian => RenormRwAffinity,
            RenormRwAffinity => RenormRwLaplacian,
        })
    }

    /// Symmetric kind similar to `self` (same spectrum).
    pub fn symmetric_similar(self) -> OperatorKind {
        use OperatorKind::*;
        match self {
            RwNormLaplacian => SymNormLaplacian,
            RwAffinity => SymAffinity,
            RenormRwAffinity => RenormSymAffinity,
            RenormRwLaplacian => RenormSymLaplacian,
            k => k,
        }
    }

    /// A Laplacian kind, resolving an affinity kind to its complement.
    pub fn as_laplacian(self) -> OperatorKind {
        if self.is_laplacian() {
            self
        } else {
            self.complement().expect("affinity kinds have a complement")
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag_name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.flag_name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown operator kind `{s}`")))
    }
}

/// Square CSR matrix with column indices ascending within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    dim: usize,
    offsets: Vec<usize>,
    columns: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.columns[r.clone()], &self.values[r])
    }

    /// `self · x`, summing each row in ascending column order.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.dim {
            return Err(Error::dims(format!("{} rows", self.dim), x.rows()));
        }
        let f = x.cols();
        let mut out = Matrix::zeros(self.dim, f);
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for (o, xv) in out_row.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.dim + 1];
        for &j in &self.columns {
            counts[j + 1] += 1;
        }
        for i in 0..self.dim {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut columns = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows visited in order, so each transposed row stays sorted
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let slot = next[j];
                columns[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Csr {
            dim: self.dim,
            offsets,
            columns,
            values,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// A named graph operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    kind: OperatorKind,
    csr: Csr,
}

impl SparseOperator {
    /// Builds `kind` for `g`. Degree-normalized kinds without renormalization
    /// reject isolated nodes; every other kind accepts them.
    pub fn build(g: &Graph, kind: OperatorKind) -> Result<Self> {
        use OperatorKind::*;
        let n = g.node_count();
        let deg: Vec<f64> = g.degrees().into_iter().map(|d| d as f64).collect();
        let needs_positive_degree = !kind.is_renormalized() && kind != Combinatorial;
        if needs_positive_degree {
            if let Some(i) = deg.iter().position(|&d| d == 0.0) {
                return Err(Error::IsolatedNode(i));
            }
        }

        let off_diag = |i: usize, j: usize| -> f64 {
            let (di, dj) = (deg[i], deg[j]);
            match kind {
                Combinatorial => -1.0,
                SymNormLaplacian => -1.0 / (di * dj).sqrt(),
                RwNormLaplacian => -1.0 / di,
                SymAffinity => 1.0 / (di * dj).sqrt(),
                RwAffinity => 1.0 / di,
                RenormSymAffinity => 1.0 / ((di + 1.0) * (dj + 1.0)).sqrt(),
                RenormRwAffinity => 1.0 / (di + 1.0),
                RenormSymLaplacian => -1.0 / ((di + 1.0) * (dj + 1.0)).sqrt(),
                RenormRwLaplacian => -1.0 / (di + 1.0),
            }
        };
        let diag = |i: usize| -> Option<f64> {
            let d = deg[i];
            match kind {
                Combinatorial => Some(d),
                SymNormLaplacian | RwNormLaplacian => Some(1.0),
                SymAffinity | RwAffinity => None,
                RenormSymAffinity | RenormRwAffinity => Some(1.0 / (d + 1.0)),
                RenormSymLaplacian | RenormRwLaplacian => Some(1.0 - 1.0 / (d + 1.0)),
            }
        };

        let mut offsets = Vec::with_capacity(n + 1);
        let mut columns = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for i in 0..n {
            let mut diag_done = false;
            let dv = diag(i);
            for &j in g.neighbors_unchecked(i) {
                if !diag_done && j > i {
                    if let Some(v) = dv {
                        columns.push(i);
                        values.push(v);
                    }
                    diag_done = true;
                }
                columns.push(j);
                values.push(off_diag(i, j));
            }
            if !diag_done {
                if let Some(v) = dv {
                    columns.push(i);
                    values.push(v);
                }
            }
            offsets.push(columns.len());
        }
        Ok(Self {
            kind,
            csr: Csr {
                dim: n,
                offsets,
                columns,
                values,
            },
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.csr.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.kind.is_symmetric()
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.csr.apply(x)
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.csr.apply(&Matrix::column(x))?.into_vec())
    }

    pub fn to_dense(&self) -> Matrix {
        self.csr.to_dense()
    }
}

/// Node-level mean over the closed neighborhood: `Σ_{j ∈ N(i) ∪ {i}} x_j / (d_i + 1)`.
pub fn mean_aggregate(g: &Graph, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != g.node_count() {
        return Err(Error::dims(g.node_count(), x.len()));
    }
    Ok((0..g.node_count())
        .map(|i| {
            let nbrs = g.neighbors_unchecked(i);
            let total: f64 = x[i] + nbrs.iter().map(|&j| x[j]).sum::<f64>();
            total / (nbrs.len() as f64 + 1.0)
        })
        .collect())
}
