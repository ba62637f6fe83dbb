//! Forward sampling of the generative process: random archetypes inside the
//! scale box, anchor-dominant local hulls with Beta/Dirichlet spreads,
//! community proportions, per-node loadings and assignments, and finally
//! independent Bernoulli edges. Everything is seed-deterministic; edge
//! sampling uses one counter-indexed stream per pair so the result does not
//! depend on thread count.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::householder_qr;
use crate::objective::edge_logit;
use crate::params::{logistic, node_embeddings, Hyperparams, ModelState};
use crate::rng::{derive_seed, sample_dirichlet};

/// One complete draw from the generative process.
#[derive(Debug, Clone)]
pub struct GenerativeDraw {
    pub state: ModelState,
    /// Community proportions the assignments were drawn from.
    pub pi: Vec<f64>,
    pub graph: Graph,
    pub seed: u64,
}

/// Samples a full model state plus the community proportions. Draw order is
/// fixed (archetype factors, scales, hull spreads, proportions, assignments,
/// loadings, biases, strength) so a seed pins the entire state.
pub fn sample_state(
    hp: &Hyperparams,
    n_nodes: usize,
    seed: u64,
) -> Result<(ModelState, Vec<f64>)> {
    hp.validate()?;
    if n_nodes == 0 {
        return Err(Error::BadHyperparams(
            "sampling requires at least one node".into(),
        ));
    }
    let k = hp.k;
    let d = hp.d;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "state", 0));

    // Archetypes: orthonormal factors from QR of Gaussian blocks, scales
    // uniform in the box.
    let gauss = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
    };
    let (u, _) = householder_qr(&gauss(&mut rng, k, k), "sampled u block")?;
    let (v, _) = householder_qr(&gauss(&mut rng, d, k), "sampled v block")?;
    let sigma =
        Array1::from_shape_fn(k, |_| rng.random_range(hp.sigma_min..hp.sigma_max));
    let mut ud = u;
    for (mut col, &s) in ud.columns_mut().into_iter().zip(sigma.iter()) {
        col.mapv_inplace(|x| x * s);
    }
    let a = ud.dot(&v.t());

    // Local hulls: spread fraction t ~ Beta(a, b) scaled by epsilon, spread
    // direction Dirichlet over the non-anchor coordinates.
    let beta = Beta::new(hp.beta_a, hp.beta_b).expect("validated Beta shapes");
    let q_alphas = vec![hp.alpha_q; k.saturating_sub(1)];
    let mut w_tilde = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for hull in 0..k {
        let mut w = Array2::<f64>::zeros((k, k));
        for r in 0..k.saturating_sub(1) {
            let spread = hp.epsilon * rng.sample(beta);
            let q_tilde = sample_dirichlet(&mut rng, &q_alphas);
            w[(r, hull)] = 1.0 - spread;
            let mut src = 0;
            for c in 0..k {
                if c == hull {
                    continue;
                }
                w[(r, c)] = spread * q_tilde[src];
                src += 1;
            }
        }
        w[(k - 1, hull)] = 1.0;
        b.push(w.dot(&a));
        w_tilde.push(w);
    }

    // Communities, assignments, loadings.
    let pi = sample_dirichlet(&mut rng, &vec![hp.alpha_pi; k]);
    let assignments: Vec<usize> = (0..n_nodes)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c;
                }
            }
            k - 1
        })
        .collect();
    let omega_alphas = vec![hp.alpha_omega; k];
    let mut omega = Array2::<f64>::zeros((n_nodes, k));
    for i in 0..n_nodes {
        let row = sample_dirichlet(&mut rng, &omega_alphas);
        for c in 0..k {
            omega[(i, c)] = row[c];
        }
    }

    // Degree biases and the interaction strength.
    let bias_dist = Normal::new(0.0, hp.tau_g).expect("validated tau_g");
    let g = Array1::from_shape_fn(n_nodes, |_| rng.sample(bias_dist));
    let strength_dist = Normal::new(0.0, hp.tau_s).expect("validated tau_s");
    let s = loop {
        let draw: f64 = rng.sample(strength_dist);
        if draw != 0.0 {
            break draw.abs();
        }
    };

    let mut m_soft = Array2::<f64>::zeros((n_nodes, k));
    for (i, &c) in assignments.iter().enumerate() {
        m_soft[(i, c)] = 1.0;
    }
    let z = node_embeddings(&m_soft, &omega, &b);
    let state = ModelState {
        a,
        w_tilde,
        b,
        m_soft,
        assignments,
        omega,
        z,
        g,
        s,
    };
    state.validate(hp)?;
    Ok((state, pi))
}

/// Samples a graph from a state: each unordered pair `(i, j)` is an
/// independent `Bernoulli(logistic(eta_ij))` coin. Each pair reads its own
/// counter-indexed RNG stream, so the draw is reproducible and
/// thread-count-independent.
pub fn sample_graph(state: &ModelState, seed: u64) -> Graph {
    use rayon::prelude::*;
    let n = state.z.nrows();
    let base = ChaCha8Rng::seed_from_u64(derive_seed(seed, "graph", 0));
    let rows: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in (i + 1)..n {
                // Linear index of (i, j) in the upper-triangle enumeration.
                let pair_idx = (i * n - i * (i + 1) / 2 + (j - i - 1)) as u64;
                let mut rng = base.clone();
                rng.set_stream(pair_idx);
                let eta = edge_logit(
                    state.z.row(i),
                    state.z.row(j),
                    state.g[i],
                    state.g[j],
                    state.s,
                );
                if rng.random::<f64>() < logistic(eta) {
                    out.push((i, j));
                }
            }
            out
        })
        .collect();
    let edges: Vec<(usize, usize)> = rows.into_iter().flatten().collect();
    Graph::from_edges(n, &edges).expect("in-range, loop-free sampled pairs")
}

/// One complete generative draw: state, proportions, and a graph sampled
/// from that state, all pinned by a single seed.
pub fn sample_draw(hp: &Hyperparams, n_nodes: usize, seed: u64) -> Result<GenerativeDraw> {
    let (state, pi) = sample_state(hp, n_nodes, seed)?;
    let graph = sample_graph(&state, derive_seed(seed, "edges", 0));
    Ok(GenerativeDraw {
        state,
        pi,
        graph,
        seed,
    })
}
