//! Shared fixtures for the GraphHull benchmarks.

use graphhull::generator::{sample_draw, sample_state, GenerativeDraw};
use graphhull::graph::Graph;
use graphhull::params::{Hyperparams, ModelState};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Samples a reproducible benchmark instance: a graph together with the
/// state that generated it, using the default three-hull model. Draws from
/// the default prior are dense (a constant fraction of all pairs are edges).
pub fn fixture(n_nodes: usize, seed: u64) -> GenerativeDraw {
    let hp = Hyperparams::new(3, 3);
    sample_draw(&hp, n_nodes, seed).expect("benchmark fixture draw")
}

/// A sparse benchmark instance: a seeded random graph with the requested
/// average degree, paired with an independently sampled model state of the
/// same size. Sparse graphs are where edge subsampling pays off, since the
/// exact evaluation still visits every one of the N(N-1)/2 pairs.
pub fn sparse_fixture(n_nodes: usize, avg_degree: usize, seed: u64) -> (Graph, ModelState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target_edges = n_nodes * avg_degree / 2;
    let mut edges = Vec::with_capacity(target_edges);
    while edges.len() < target_edges {
        let i = (rng.random::<u64>() as usize) % n_nodes;
        let j = (rng.random::<u64>() as usize) % n_nodes;
        if i != j {
            edges.push((i, j));
        }
    }
    let graph = Graph::from_edges(n_nodes, &edges).expect("benchmark graph");
    let hp = Hyperparams::new(3, 3);
    let (state, _) = sample_state(&hp, n_nodes, seed).expect("benchmark state draw");
    (graph, state)
}
