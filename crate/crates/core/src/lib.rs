//! Graph smoothness analytics and two-channel filterbank graph neural networks.
//!
//! * [`graph`], [`spectral`], [`eigen`]: graphs, Laplacian/affinity operators
//!   and a dense symmetric eigensolver.
//! * [`smoothness`]: Dirichlet energy, signal energy, S-values and homophily.
//! * [`autodiff`]: a reverse-mode tape over dense matrices.
//! * [`model`]: GCN, spectral and spatial filterbank layers, ablation variants.
//! * [`train`]: stratified splits, Adam, full-batch training, trial suites.
//! * [`data`]: dataset loaders, the contextual SBM generator, JSON reports.

pub mod autodiff;
pub mod data;
pub mod dense;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod model;
pub mod smoothness;
pub mod spectral;
pub mod train;

pub use dense::Matrix;
pub use error::{Error, Result};
pub use graph::{Graph, GraphDiagnostics};
pub use spectral::{OperatorKind, SparseOperator};
