//! MAP inference: an analytic gradient of the full objective through every
//! reparameterization (orthonormal factors, boxed scales, simplex blocks,
//! the relaxed assignments, and the determinantal priors), driven by Adam
//! with annealed assignment temperature and per-epoch negative resampling.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{geometry_report, GeometryReport};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{cholesky, chol_logdet, qr_backward, spd_inverse_from_chol};
use crate::objective::{
    draw_edge_sample, edge_term_with_grad, EdgeSample, EdgeTermConfig, ObjectiveBreakdown,
    SubsampleConfig,
};
use crate::params::{
    forward, harden, logistic, node_embeddings, Hyperparams, ModelParams, ModelState,
};
use crate::rng::{derive_seed, gumbel_matrix};

/// How a single objective/gradient evaluation is configured.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub edge: EdgeTermConfig,
    /// Assignment relaxation temperature (must be positive).
    pub temperature: f64,
    /// Optional N x K Gumbel draw added to the assignment logits.
    pub gumbel_noise: Option<Array2<f64>>,
}

/// Curvature bound for the per-node loading gradients of the edge
/// log-likelihood: with embedding norms bounded by `kappa_star` and degrees
/// by `deg_max`, the loading-block Hessian has spectral norm at most
/// `(s kappa_star^2 deg_max + (s^2/2) kappa_star^4 deg_max) / 4`.
pub fn lipschitz_bound(s: f64, kappa_star: f64, deg_max: usize) -> f64 {
    let d = deg_max as f64;
    0.25 * (s * kappa_star.powi(2) * d + 0.5 * s * s * kappa_star.powi(4) * d)
}

/// Backward pass of a softmax row: `x_bar = p * (p_bar - <p_bar, p>)`.
fn softmax_backward(p: ArrayView1<f64>, p_bar: ArrayView1<f64>) -> Array1<f64> {
    let inner = p_bar.dot(&p);
    Array1::from_iter(p.iter().zip(p_bar.iter()).map(|(&pi, &bi)| pi * (bi - inner)))
}

fn row_softmax_backward(p: &Array2<f64>, p_bar: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(p.dim());
    for i in 0..p.nrows() {
        out.row_mut(i)
            .assign(&softmax_backward(p.row(i), p_bar.row(i)));
    }
    out
}

/// Value and vertex gradient of the determinantal diversity term
/// `logdet(L) - logdet(I + L)` with `L = kappa Psi Psi^T`, `Psi` the
/// row-normalized vertices. A singular `L` has value `-inf` and no usable
/// gradient, so it surfaces as a gradient error here.
fn dpp_value_and_grad(
    vertices: &Array2<f64>,
    kappa: f64,
    block: &'static str,
) -> Result<(f64, Array2<f64>)> {
    let (rows, cols) = vertices.dim();
    let mut psi = vertices.clone();
    let mut norms = vec![0.0f64; rows];
    for r in 0..rows {
        let norm = psi.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVertexRow { row: r });
        }
        norms[r] = norm;
        psi.row_mut(r).mapv_inplace(|v| v / norm);
    }
    let mut l = psi.dot(&psi.t());
    l.mapv_inplace(|v| kappa * v);
    let Some(chol_l) = cholesky(&l) else {
        return Err(Error::NonFiniteGradient { block });
    };
    let mut eye_plus = l;
    for i in 0..rows {
        eye_plus[(i, i)] += 1.0;
    }
    let chol_ipl = cholesky(&eye_plus).expect("I + L is positive definite");
    let value = chol_logdet(&chol_l) - chol_logdet(&chol_ipl);

    // d value / dL = L^{-1} - (I + L)^{-1}; chained through L = kappa Psi Psi^T.
    let mut diff = spd_inverse_from_chol(&chol_l);
    diff -= &spd_inverse_from_chol(&chol_ipl);
    let psi_bar = diff.dot(&psi) * (2.0 * kappa);
    // Row normalization backward: project out the radial component.
    let mut vert_bar = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        let pb = psi_bar.row(r);
        let p = psi.row(r);
        let inner = pb.dot(&p);
        for c in 0..cols {
            vert_bar[(r, c)] = (pb[c] - inner * p[c]) / norms[r];
        }
    }
    Ok((value, vert_bar))
}

/// All non-edges of `g`, each visited with weight one (the exact edge term).
fn exhaustive_sample(g: &Graph) -> EdgeSample {
    let present = g.edge_set();
    let mut negatives = Vec::new();
    for i in 0..g.n_nodes {
        for j in (i + 1)..g.n_nodes {
            if !present.contains(&(i, j)) {
                negatives.push((i, j));
            }
        }
    }
    let complete_graph = negatives.is_empty();
    EdgeSample {
        negatives,
        weight: 1.0,
        complete_graph,
    }
}

fn check_block_finite<'a>(
    block: &'static str,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { block })
    }
}

/// Objective value (by component) and its full analytic gradient, both
/// evaluated at `params` under the given relaxation settings. The gradient
/// is on the maximization scale: ascending it increases the objective.
pub fn gradient(
    g: &Graph,
    params: &ModelParams,
    hp: &Hyperparams,
    cfg: &EvalConfig,
) -> Result<(ObjectiveBreakdown, ModelParams)> {
    hp.validate()?;
    let n = g.n_nodes;
    let k = hp.k;
    if params.n_nodes() != n {
        return Err(Error::ShapeMismatch(format!(
            "parameters cover {} nodes but the graph has {}",
            params.n_nodes(),
            n
        )));
    }
    if let Some(noise) = &cfg.gumbel_noise {
        if noise.dim() != (n, k) {
            return Err(Error::ShapeMismatch(format!(
                "gumbel noise is {:?} but the logits are {:?}",
                noise.dim(),
                (n, k)
            )));
        }
    }
    let fwd = forward(params, hp, cfg.temperature, cfg.gumbel_noise.as_ref())?;
    let state = &fwd.state;
    let mut grad = params.zeros_like();

    // ---- Edge term and its direct inputs (z, biases, strength). ----
    let sample = match &cfg.edge {
        EdgeTermConfig::Exact => exhaustive_sample(g),
        EdgeTermConfig::Subsampled(sc) => draw_edge_sample(g, sc)?,
    };
    let et = edge_term_with_grad(g, &state.z, &state.g, state.s, &sample);

    for i in 0..n {
        grad.g[i] = et.g_bar[i] - state.g[i] / (hp.tau_g * hp.tau_g);
    }
    grad.s_raw = (et.s_bar - state.s / (hp.tau_s * hp.tau_s)) * state.s;

    // ---- z = v_bary A. ----
    let v_bary_bar = et.z_bar.dot(&state.a.t()); // N x K
    let mut a_bar = fwd.v_bary.t().dot(&et.z_bar); // K x D

    // ---- v_bary = sum_k M[:,k] * P_k, P_k = Omega W_k. ----
    let mut m_bar = Array2::<f64>::zeros((n, k));
    let mut omega_bar = Array2::<f64>::zeros((n, k));
    let mut w_bar: Vec<Array2<f64>> = Vec::with_capacity(k);
    for kk in 0..k {
        let p_k = &fwd.p[kk];
        let mut p_bar = v_bary_bar.clone();
        for i in 0..n {
            m_bar[(i, kk)] = v_bary_bar.row(i).dot(&p_k.row(i));
            let m = state.m_soft[(i, kk)];
            p_bar.row_mut(i).mapv_inplace(|x| x * m);
        }
        omega_bar = omega_bar + p_bar.dot(&state.w_tilde[kk].t());
        w_bar.push(state.omega.t().dot(&p_bar));
    }

    // Relaxed assignments: softmax backward, then the temperature scaling.
    grad.m_logits = row_softmax_backward(&state.m_soft, &m_bar);
    grad.m_logits.mapv_inplace(|x| x / cfg.temperature);

    // ---- Determinantal priors. ----
    let mut dpp_local = 0.0;
    let mut dpp_global = 0.0;
    if hp.kappa > 0.0 {
        for kk in 0..k {
            let (value, b_bar) = dpp_value_and_grad(&state.b[kk], hp.kappa, "dpp_local")?;
            dpp_local += value;
            w_bar[kk] = &w_bar[kk] + &b_bar.dot(&state.a.t());
            a_bar = a_bar + state.w_tilde[kk].t().dot(&b_bar);
        }
        let (value, g_bar) = dpp_value_and_grad(&state.a, hp.kappa, "dpp_global")?;
        dpp_global = value;
        a_bar += &g_bar;
    }

    // ---- Loadings: Dirichlet prior, then softmax backward. ----
    let mut dirichlet_omega = 0.0;
    if hp.alpha_omega != 1.0 {
        let coef = hp.alpha_omega - 1.0;
        for i in 0..n {
            for c in 0..k {
                let w = state.omega[(i, c)];
                dirichlet_omega += coef * w.ln();
                omega_bar[(i, c)] += coef / w;
            }
        }
    }
    grad.omega_raw = row_softmax_backward(&state.omega, &omega_bar);

    // ---- Hull rows: spread magnitudes and directions. ----
    let mut dirichlet_q = 0.0;
    let mut beta_t = 0.0;
    for kk in 0..k {
        for r in 0..k.saturating_sub(1) {
            let w_row_bar = w_bar[kk].row(r);
            let t_frac = fwd.t[(kk, r)]; // logistic(t_raw), the Beta variable
            let spread = hp.epsilon * t_frac;
            let q_row = fwd.q[kk].row(r); // K-1 softmax coordinates

            // Row = (1 - spread) e_k + spread * embed(q); anchor column kk.
            let mut spread_bar = -w_row_bar[kk];
            let mut q_bar = Array1::<f64>::zeros(k - 1);
            let mut src = 0;
            for c in 0..k {
                if c == kk {
                    continue;
                }
                spread_bar += w_row_bar[c] * q_row[src];
                q_bar[src] = spread * w_row_bar[c];
                src += 1;
            }
            if hp.alpha_q != 1.0 {
                let coef = hp.alpha_q - 1.0;
                for (j, &q) in q_row.iter().enumerate() {
                    dirichlet_q += coef * q.ln();
                    q_bar[j] += coef / q;
                }
            }
            grad.q_raw
                .slice_mut(ndarray::s![kk, r, ..])
                .assign(&softmax_backward(q_row, q_bar.view()));

            // Beta prior on the fraction plus the chain rule through
            // spread = epsilon * logistic(t_raw).
            let x = params.t_raw[(kk, r)];
            beta_t += (hp.beta_a - 1.0) * (-crate::objective::softplus(-x))
                + (hp.beta_b - 1.0) * (-crate::objective::softplus(x));
            grad.t_raw[(kk, r)] = spread_bar * hp.epsilon * t_frac * (1.0 - t_frac)
                + (hp.beta_a - 1.0) * (1.0 - t_frac)
                - (hp.beta_b - 1.0) * t_frac;
        }
    }

    // ---- Archetypes: A = U diag(sigma) V^T with orthonormal U, V. ----
    let av = a_bar.dot(&fwd.v); // K x K
    let atu = a_bar.t().dot(&fwd.u); // D x K
    let mut u_bar = av.clone();
    let mut v_bar = atu.clone();
    for c in 0..k {
        let sigma_bar = fwd.u.column(c).dot(&av.column(c));
        let lam = logistic(params.sigma_raw[c]);
        grad.sigma_raw[c] = sigma_bar * (hp.sigma_max - hp.sigma_min) * lam * (1.0 - lam);
        let s = fwd.sigma[c];
        u_bar.column_mut(c).mapv_inplace(|x| x * s);
        v_bar.column_mut(c).mapv_inplace(|x| x * s);
    }
    grad.u_raw = qr_backward(&fwd.u, &fwd.r_u, &u_bar);
    grad.v_raw = qr_backward(&fwd.v, &fwd.r_v, &v_bar);

    // ---- Assemble the breakdown from the same quantities. ----
    let gauss_g = -state.g.iter().map(|&v| v * v).sum::<f64>() / (2.0 * hp.tau_g * hp.tau_g);
    let halfnormal_s = -(state.s * state.s) / (2.0 * hp.tau_s * hp.tau_s);
    let mut breakdown = ObjectiveBreakdown {
        edge_loglik: et.value,
        dirichlet_omega,
        dirichlet_q,
        beta_t,
        dpp_local,
        dpp_global,
        gauss_g,
        halfnormal_s,
        total: 0.0,
    };
    breakdown.total = breakdown.sum_components();

    check_block_finite("u_raw", grad.u_raw.iter())?;
    check_block_finite("v_raw", grad.v_raw.iter())?;
    check_block_finite("sigma_raw", grad.sigma_raw.iter())?;
    check_block_finite("t_raw", grad.t_raw.iter())?;
    check_block_finite("q_raw", grad.q_raw.iter())?;
    check_block_finite("omega_raw", grad.omega_raw.iter())?;
    check_block_finite("m_logits", grad.m_logits.iter())?;
    check_block_finite("g", grad.g.iter())?;
    check_block_finite("s_raw", std::iter::once(&grad.s_raw))?;
    Ok((breakdown, grad))
}

/// Optimizer settings. `n_negative_samples = None` matches the per-epoch
/// negative budget to the edge count; `epochs = 0` echoes the initializer
/// through the final hardening step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub n_negative_samples: Option<usize>,
    pub use_gumbel_noise: bool,
    pub seed: u64,
    /// Relative plateau threshold for early stopping.
    pub tol: f64,
    /// Number of epochs over which the plateau is measured.
    pub tol_window: usize,
}

impl FitConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        FitConfig {
            learning_rate: 0.02,
            epochs,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            n_negative_samples: None,
            use_gumbel_noise: true,
            seed,
            tol: 1e-6,
            tol_window: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::BadHyperparams(format!("fit config: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam epsilon must be positive");
        }
        if self.n_negative_samples == Some(0) {
            return bad("negative sample budget must be positive");
        }
        if !(self.tol >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        if self.tol_window == 0 {
            return bad("tolerance window must be positive");
        }
        Ok(())
    }
}

/// Everything a fit produces: the trace, the hardened final state, raw
/// parameters, geometry diagnostics, and how the run ended.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// One objective value per completed epoch.
    pub objective_trace: Vec<f64>,
    pub final_state: ModelState,
    pub final_params: ModelParams,
    pub diagnostics: GeometryReport,
    pub seed: u64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    /// Why the optimizer stopped ahead of schedule, if it had to.
    pub aborted: Option<String>,
}

/// MAP fit by Adam ascent. Each epoch draws a fresh negative sample and (when
/// enabled) fresh Gumbel noise from seeds derived per epoch, and anneals the
/// assignment temperature geometrically from `hp.gs_temp_start` to
/// `hp.gs_temp_end`. A failed or non-finite step keeps the last finite
/// parameters and records the reason instead of failing the whole fit. The
/// final state is evaluated noise-free at the end temperature with hardened
/// assignments.
pub fn fit(g: &Graph, hp: &Hyperparams, init: &ModelParams, cfg: &FitConfig) -> Result<FitReport> {
    hp.validate()?;
    cfg.validate()?;
    let n = g.n_nodes;
    let k = hp.k;
    if init.n_nodes() != n {
        return Err(Error::ShapeMismatch(format!(
            "initializer covers {} nodes but the graph has {}",
            init.n_nodes(),
            n
        )));
    }
    let n_negatives = cfg
        .n_negative_samples
        .unwrap_or(g.edges.len())
        .max(1);

    let mut theta = init.clone();
    let mut last_good = init.clone();
    let n_par = theta.n_params();
    let mut adam_m = vec![0.0f64; n_par];
    let mut adam_v = vec![0.0f64; n_par];
    let mut trace: Vec<f64> = Vec::with_capacity(cfg.epochs);
    let mut aborted: Option<String> = None;
    let mut early_stopped = false;

    for epoch in 0..cfg.epochs {
        let frac = epoch as f64 / (cfg.epochs - 1).max(1) as f64;
        let temperature = hp.gs_temp_start * (hp.gs_temp_end / hp.gs_temp_start).powf(frac);
        let noise = cfg.use_gumbel_noise.then(|| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                "gumbel",
                epoch as u64,
            ));
            gumbel_matrix(&mut rng, (n, k))
        });
        let eval = EvalConfig {
            edge: EdgeTermConfig::Subsampled(SubsampleConfig {
                n_negative_samples: n_negatives,
                seed: derive_seed(cfg.seed, "subsample", epoch as u64),
            }),
            temperature,
            gumbel_noise: noise,
        };
        let (breakdown, grad) = match gradient(g, &theta, hp, &eval) {
            Ok(pair) => pair,
            Err(err) => {
                aborted = Some(format!("epoch {epoch}: {err}"));
                theta = last_good.clone();
                break;
            }
        };
        if !breakdown.total.is_finite() {
            aborted = Some(format!(
                "epoch {epoch}: objective became non-finite ({})",
                breakdown.total
            ));
            theta = last_good.clone();
            break;
        }
        last_good = theta.clone();
        trace.push(breakdown.total);

        // Adam ascent step on the flattened parameters.
        let mut flat = theta.to_flat();
        let grad_flat = grad.to_flat();
        let t = (epoch + 1) as f64;
        let bc1 = 1.0 - cfg.adam_beta1.powf(t);
        let bc2 = 1.0 - cfg.adam_beta2.powf(t);
        for i in 0..n_par {
            adam_m[i] = cfg.adam_beta1 * adam_m[i] + (1.0 - cfg.adam_beta1) * grad_flat[i];
            adam_v[i] =
                cfg.adam_beta2 * adam_v[i] + (1.0 - cfg.adam_beta2) * grad_flat[i] * grad_flat[i];
            let m_hat = adam_m[i] / bc1;
            let v_hat = adam_v[i] / bc2;
            flat[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        theta.set_from_flat(&flat);
        if theta.validate_finite().is_err() {
            aborted = Some(format!("epoch {epoch}: parameters became non-finite"));
            theta = last_good.clone();
            break;
        }

        // Plateau detection on the raw trace.
        if trace.len() > cfg.tol_window {
            let now = trace[trace.len() - 1];
            let then = trace[trace.len() - 1 - cfg.tol_window];
            if (now - then).abs() / now.abs().max(1.0) < cfg.tol {
                early_stopped = true;
                break;
            }
        }
    }

    // Final noise-free evaluation at the end temperature, then hardening.
    let fwd = forward(&theta, hp, hp.gs_temp_end, None)?;
    let assignments = harden(&fwd.state.m_soft);
    let mut hard = Array2::<f64>::zeros((n, k));
    for (i, &c) in assignments.iter().enumerate() {
        hard[(i, c)] = 1.0;
    }
    let z = node_embeddings(&hard, &fwd.state.omega, &fwd.state.b);
    let final_state = ModelState {
        a: fwd.state.a,
        w_tilde: fwd.state.w_tilde,
        b: fwd.state.b,
        m_soft: hard,
        assignments,
        omega: fwd.state.omega,
        z,
        g: fwd.state.g,
        s: fwd.state.s,
    };
    final_state.validate(hp)?;
    let diagnostics = geometry_report(&final_state, hp, Some(g.deg_max()))?;
    let epochs_run = trace.len();
    Ok(FitReport {
        objective_trace: trace,
        final_state,
        final_params: theta,
        diagnostics,
        seed: cfg.seed,
        epochs_run,
        early_stopped,
        aborted,
    })
}
