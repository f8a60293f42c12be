//! Multi-scale graph neural networks built from resolvents of graph
//! Laplacians, with executable versions of their consistency and stability
//! guarantees.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod graph;
pub mod model;
pub mod multiscale;
pub mod report;
pub mod spectral;
pub mod stability;
pub mod suites;

pub use error::{Error, Result};
pub use graph::{load_graph, GraphDocument, WeightedGraph, WeightedNormContext};
pub use multiscale::{coarsen, decompose, Coarsening, ScaleDecomposition};
pub use report::{CheckReport, ScanPoint};
pub use spectral::ResolventFactorization;
