//! Unsupervised object discovery with normalized cuts over patch tokens.
//!
//! The engine consumes precomputed transformer patch features (`.tkcf` files),
//! builds a fully connected cosine-similarity graph over the tokens, and takes
//! the second-smallest eigenvector of the generalized system `(D - E) y = λ D y`
//! as a per-token saliency score. Splitting that vector at its mean and keeping
//! the 4-connected component around the strongest token yields a bounding box
//! and a patch mask, which can be refined at pixel level with a bilateral solver.
//!
//! Pipeline:
//!
//! 1. [`features::read_feature_grid`] loads a [`FeatureGrid`].
//! 2. [`graph::build_graph`] thresholds cosine similarities into an [`AffinityGraph`].
//! 3. [`spectral::solve_second_eigenpair`] returns a [`CutSolution`].
//! 4. [`partition::discover`] turns the eigenvector into a [`DiscoveryResult`].
//! 5. [`refine::refine`] optionally sharpens the upsampled mask against image edges.
//!
//! [`metrics`] scores boxes and masks against ground truth.

pub mod cli;
pub mod error;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod partition;
pub mod refine;
pub mod spectral;

pub use crate::error::{Error, Result};
pub use crate::features::{FeatureGrid, GridIndex};
pub use crate::graph::{AffinityGraph, EdgeMode, GraphConfig};
pub use crate::metrics::PixelBox;
pub use crate::partition::{discover, ComponentRule, DiscoveryConfig, DiscoveryResult, Side};
pub use crate::refine::{RefineConfig, SaliencyMask};
pub use crate::spectral::{CutSolution, EigenMethod};
