//! GraphHull: an archetypal generative model for graphs.
//!
//! Nodes live inside a global convex hull spanned by `K` archetypes in
//! `D`-dimensional space; each archetype additionally anchors a local
//! prototype hull nested inside the global one, and every node is assigned to
//! exactly one prototype whose hull it expresses as a convex combination.
//! The crate provides:
//!
//! - the constrained parameterization (orthonormal archetype factors,
//!   anchor-dominant local hull weights, simplex-valued node loadings),
//! - the penalized likelihood objective with exact and subsampled edge terms
//!   and diversity (determinantal) priors, together with hand-derived
//!   gradients,
//! - MAP inference: spectral initialization, Adam ascent with a
//!   Gumbel-softmax assignment relaxation, and hardening of the final state,
//! - a forward sampler for the generative process,
//! - geometry diagnostics (hull disjointness certificates, an exact
//!   intersection oracle, effective hull volumes),
//! - evaluation utilities (link prediction AUC, community metrics,
//!   visualization-oriented projections).

pub mod diagnostics;
pub mod error;
pub mod generator;
pub mod evaluation;
pub mod graph;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod params;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
