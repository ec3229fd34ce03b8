//! Convolutional neural networks on arbitrary weighted graphs.
//!
//! Convolution is performed as multiplication in the spectral domain of the
//! graph Laplacian: a signal is projected onto the Laplacian eigenbasis,
//! scaled by a learned per-eigenvalue multiplier, and projected back. Smooth
//! multipliers — obtained by cubic-spline interpolation of a small set of
//! tracked weights — yield spatially localized filters. Pooling coarsens the
//! graph by algebraic-multigrid vertex aggregation, with restriction and
//! prolongation matrices providing the forward and reconstruction maps.
//! Backpropagation through every operator is derived by hand and checked
//! against finite differences by the [`verify`] module.
//!
//! The crate is organized around the pipeline:
//!
//! * [`graph`] — weighted undirected graphs (regular and subsampled grids)
//!   and their unnormalized Laplacians;
//! * [`spectral`] — symmetric eigendecomposition and the graph Fourier
//!   transform;
//! * [`interp`] — spline interpolation of tracked filter weights;
//! * [`conv`] — spectral-multiplier convolution and its gradients;
//! * [`coarsen`] — AMG aggregation pooling and the polarity split;
//! * [`net`] — layer composition, training, checkpoints;
//! * [`verify`] — finite-difference gradient oracles and the
//!   proposed-vs-naive gradient comparison protocol;
//! * [`data`] — MNIST IDX ingestion and dataset subsampling.

#[cfg(feature = "blas")]
extern crate blas_src;

pub mod coarsen;
pub mod conv;
pub mod data;
pub mod error;
pub mod graph;
pub mod interp;
pub mod net;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
