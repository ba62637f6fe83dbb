//! Constrained model quantities from unconstrained parameter blocks.
//!
//! The model places `K` archetypes in `D`-dimensional space (`K <= D`) as the
//! rows of `A = U diag(sigma) V^T`, where `U` and `V` carry orthonormal
//! columns obtained by thin QR of raw blocks and each `sigma_k` is squashed
//! into the box `(sigma_min, sigma_max)`. Every archetype `k` anchors a local
//! hull: a `K x K` row-stochastic matrix `W_tilde_k` whose last row is
//! exactly `e_k` and whose remaining rows put mass at least `1 - epsilon` on
//! coordinate `k`, so the hull vertices `B_k = W_tilde_k A` stay close to the
//! anchor `a_k`. Node `i` mixes hull projections through a row-stochastic
//! assignment matrix (relaxed by Gumbel-Softmax during training) and loadings
//! `omega_i` on the simplex: `z_i = sum_k M[i,k] (omega_i^T B_k)`.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::householder_qr;

/// Fixed model configuration and prior scales.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of local hulls (and archetypes).
    pub k: usize,
    /// Latent dimension; must satisfy `k <= d`.
    pub d: usize,
    /// Anchor mass bound in (0, 1); hulls are pairwise disjoint when
    /// `epsilon < 1/2`.
    pub epsilon: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Dirichlet concentration for node loadings.
    pub alpha_omega: f64,
    /// Dirichlet concentration for local-hull spread directions.
    pub alpha_q: f64,
    /// Beta shape parameters for the spread magnitudes.
    pub beta_a: f64,
    pub beta_b: f64,
    /// Prior scale of the degree biases.
    pub tau_g: f64,
    /// Prior scale of the interaction strength.
    pub tau_s: f64,
    /// Diversity (determinantal) prior weight; `0` disables the prior.
    pub kappa: f64,
    pub gs_temp_start: f64,
    pub gs_temp_end: f64,
    /// Dirichlet concentration of the generative mixing proportions.
    pub alpha_pi: f64,
}

impl Hyperparams {
    /// Defaults for a given hull count and dimension.
    pub fn new(k: usize, d: usize) -> Self {
        Hyperparams {
            k,
            d,
            epsilon: 0.45,
            sigma_min: 0.3,
            sigma_max: 1.5,
            alpha_omega: 1.0,
            alpha_q: 1.0,
            beta_a: 1.0,
            beta_b: 1.0,
            tau_g: 1.0,
            tau_s: 1.0,
            kappa: 1.0,
            gs_temp_start: 1.0,
            gs_temp_end: 0.1,
            alpha_pi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadHyperparams(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.k > self.d {
            return bad(format!("k = {} must not exceed d = {}", self.k, self.d));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon = {} outside (0, 1)", self.epsilon));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return bad(format!(
                "singular-value box [{}, {}] needs 0 < min < max",
                self.sigma_min, self.sigma_max
            ));
        }
        for (name, v) in [
            ("alpha_omega", self.alpha_omega),
            ("alpha_q", self.alpha_q),
            ("beta_a", self.beta_a),
            ("beta_b", self.beta_b),
            ("tau_g", self.tau_g),
            ("tau_s", self.tau_s),
            ("gs_temp_start", self.gs_temp_start),
            ("gs_temp_end", self.gs_temp_end),
            ("alpha_pi", self.alpha_pi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive and finite"));
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa = {} must be nonnegative", self.kappa));
        }
        Ok(())
    }

    /// True iff the hulls are certifiably pairwise disjoint by construction.
    pub fn identifiable_regime(&self) -> bool {
        self.epsilon < 0.5
    }
}

/// Unconstrained carriers for every model quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub u_raw: Array2<f64>,    // K x K
    pub v_raw: Array2<f64>,    // D x K
    pub sigma_raw: Array1<f64>, // K
    pub t_raw: Array2<f64>,    // K x (K-1): spread magnitude per non-anchor row
    pub q_raw: Array3<f64>,    // K x (K-1) x (K-1): spread direction per row
    pub omega_raw: Array2<f64>, // N x K
    pub m_logits: Array2<f64>, // N x K
    pub g: Array1<f64>,        // N
    pub s_raw: f64,
}

impl ModelParams {
    /// Neutral starting point: identity-like factor blocks, zero everything
    /// else (so sigma sits at the box midpoint and all simplices are uniform).
    pub fn neutral(n_nodes: usize, hp: &Hyperparams) -> Self {
        let (k, d) = (hp.k, hp.d);
        let mut v_raw = Array2::<f64>::zeros((d, k));
        for i in 0..k {
            v_raw[(i, i)] = 1.0;
        }
        ModelParams {
            u_raw: Array2::eye(k),
            v_raw,
            sigma_raw: Array1::zeros(k),
            t_raw: Array2::zeros((k, k - 1)),
            q_raw: Array3::zeros((k, k - 1, k - 1)),
            omega_raw: Array2::zeros((n_nodes, k)),
            m_logits: Array2::zeros((n_nodes, k)),
            g: Array1::zeros(n_nodes),
            s_raw: 0.0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.g.len()
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            u_raw: Array2::zeros(self.u_raw.dim()),
            v_raw: Array2::zeros(self.v_raw.dim()),
            sigma_raw: Array1::zeros(self.sigma_raw.len()),
            t_raw: Array2::zeros(self.t_raw.dim()),
            q_raw: Array3::zeros(self.q_raw.dim()),
            omega_raw: Array2::zeros(self.omega_raw.dim()),
            m_logits: Array2::zeros(self.m_logits.dim()),
            g: Array1::zeros(self.g.len()),
            s_raw: 0.0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.u_raw.len()
            + self.v_raw.len()
            + self.sigma_raw.len()
            + self.t_raw.len()
            + self.q_raw.len()
            + self.omega_raw.len()
            + self.m_logits.len()
            + self.g.len()
            + 1
    }

    /// Flattens all blocks into one vector in a fixed block order (row-major
    /// within each block); the optimizer works on this representation.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.u_raw.iter());
        out.extend(self.v_raw.iter());
        out.extend(self.sigma_raw.iter());
        out.extend(self.t_raw.iter());
        out.extend(self.q_raw.iter());
        out.extend(self.omega_raw.iter());
        out.extend(self.m_logits.iter());
        out.extend(self.g.iter());
        out.push(self.s_raw);
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); panics on length mismatch.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat vector length mismatch");
        let mut it = flat.iter().copied();
        for v in self.u_raw.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.v_raw.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.sigma_raw.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.t_raw.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.q_raw.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.omega_raw.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.m_logits.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.g.iter_mut() {
            *v = it.next().unwrap();
        }
        self.s_raw = it.next().unwrap();
    }

    pub fn validate_finite(&self) -> Result<()> {
        let finite = self.u_raw.iter().all(|v| v.is_finite())
            && self.v_raw.iter().all(|v| v.is_finite())
            && self.sigma_raw.iter().all(|v| v.is_finite())
            && self.t_raw.iter().all(|v| v.is_finite())
            && self.q_raw.iter().all(|v| v.is_finite())
            && self.omega_raw.iter().all(|v| v.is_finite())
            && self.m_logits.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.s_raw.is_finite();
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: "model parameters",
            })
        }
    }
}

/// All constrained quantities implied by a parameter vector.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub a: Array2<f64>,            // K x D
    pub w_tilde: Vec<Array2<f64>>, // K matrices, each K x K
    pub b: Vec<Array2<f64>>,       // K matrices, each K x D
    pub m_soft: Array2<f64>,       // N x K, row-stochastic
    pub assignments: Vec<usize>,   // N, argmax of m_soft
    pub omega: Array2<f64>,        // N x K, row-stochastic
    pub z: Array2<f64>,            // N x D
    pub g: Array1<f64>,            // N
    pub s: f64,
}

impl ModelState {
    /// Checks every structural invariant to tolerance 1e-9 (simplex rows,
    /// anchor rows and dominance, `B_k = W_tilde_k A`, finiteness, the
    /// assignment/argmax correspondence).
    pub fn validate(&self, hp: &Hyperparams) -> Result<()> {
        let tol = 1e-9;
        let (k, d) = (hp.k, hp.d);
        let n = self.m_soft.nrows();
        let fail = |msg: String| Err(Error::StateInvariant(msg));

        if self.a.dim() != (k, d) || self.w_tilde.len() != k || self.b.len() != k {
            return fail("archetype/hull shapes inconsistent with hyperparameters".into());
        }
        if self.omega.dim() != (n, k) || self.z.dim() != (n, d) || self.g.len() != n {
            return fail("node-block shapes inconsistent".into());
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return fail(format!("scale s = {} must be positive and finite", self.s));
        }
        for (name, arr) in [("A", &self.a), ("Z", &self.z)] {
            if arr.iter().any(|v| !v.is_finite()) {
                return fail(format!("{name} contains non-finite entries"));
            }
        }
        for (kk, w) in self.w_tilde.iter().enumerate() {
            if w.dim() != (k, k) {
                return fail(format!("W_tilde[{kk}] has wrong shape"));
            }
            for r in 0..k {
                let row = w.row(r);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > tol || row.iter().any(|&v| v < -tol) {
                    return fail(format!("W_tilde[{kk}] row {r} off the simplex"));
                }
                if r == k - 1 {
                    for c in 0..k {
                        let want = if c == kk { 1.0 } else { 0.0 };
                        if (row[c] - want).abs() > tol {
                            return fail(format!("W_tilde[{kk}] last row is not e_{kk}"));
                        }
                    }
                } else if row[kk] < 1.0 - hp.epsilon - tol {
                    return fail(format!(
                        "W_tilde[{kk}] row {r} anchor mass {} below 1 - epsilon",
                        row[kk]
                    ));
                }
            }
            let prod = w.dot(&self.a);
            let diff = (&prod - &self.b[kk]).iter().map(|v| v.abs()).fold(0.0, f64::max);
            if diff > tol {
                return fail(format!("B[{kk}] deviates from W_tilde[{kk}] A by {diff:e}"));
            }
        }
        for (name, mat) in [("M_soft", &self.m_soft), ("Omega", &self.omega)] {
            for i in 0..n {
                let row = mat.row(i);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > tol || row.iter().any(|&v| v < -tol || !v.is_finite()) {
                    return fail(format!("{name} row {i} off the simplex"));
                }
            }
        }
        if self.assignments.len() != n {
            return fail("assignment vector length mismatch".into());
        }
        let expect = harden(&self.m_soft);
        if expect != self.assignments {
            return fail("assignments do not match argmax of M_soft".into());
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Array1::<f64>::zeros(x.len());
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        let e = (v - max).exp();
        *o = e;
        total += e;
    }
    out.mapv_inplace(|v| v / total);
    out
}

/// Softmax applied to every row of a matrix.
pub fn row_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(x.dim());
    for (mut orow, xrow) in out.rows_mut().into_iter().zip(x.rows()) {
        orow.assign(&softmax(xrow));
    }
    out
}

/// Assembles the archetype matrix `A = U diag(sigma) V^T` (K x D) from raw
/// blocks: thin QR orthonormalizes `U_raw` and `V_raw`, and `sigma_raw` is
/// squashed into the open box `(sigma_min, sigma_max)`. The spectral norm of
/// `A` is therefore at most `sigma_max` and its smallest singular value at
/// least `sigma_min`.
pub fn build_archetypes(
    u_raw: &Array2<f64>,
    v_raw: &Array2<f64>,
    sigma_raw: &Array1<f64>,
    hp: &Hyperparams,
) -> Result<Array2<f64>> {
    let (u, _) = householder_qr(u_raw, "u_raw")?;
    let (v, _) = householder_qr(v_raw, "v_raw")?;
    let sigma = box_sigma(sigma_raw, hp);
    // A = U diag(sigma) V^T.
    let mut ud = u;
    for (mut col, &s) in ud.columns_mut().into_iter().zip(sigma.iter()) {
        col.mapv_inplace(|x| x * s);
    }
    Ok(ud.dot(&v.t()))
}

/// The boxed singular values `sigma_min + (sigma_max - sigma_min) * logistic(raw)`.
pub fn box_sigma(sigma_raw: &Array1<f64>, hp: &Hyperparams) -> Array1<f64> {
    sigma_raw.mapv(|r| hp.sigma_min + (hp.sigma_max - hp.sigma_min) * logistic(r))
}

/// Builds all local hulls. For hull `k`, non-anchor row `r` (rows `0..K-1`)
/// is `(1 - s) e_k + s q_tilde` with `s = epsilon * logistic(t_raw[k, r])`
/// and `q_tilde` a softmax over the K-1 non-anchor coordinates embedded with
/// a structural zero at coordinate `k`; the last row is exactly `e_k`.
/// Returns `(W_tilde, B)` with `B_k = W_tilde_k A`.
pub fn build_local_hulls(
    a: &Array2<f64>,
    t_raw: &Array2<f64>,
    q_raw: &Array3<f64>,
    hp: &Hyperparams,
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let k = hp.k;
    assert_eq!(a.nrows(), k, "archetype count");
    assert_eq!(t_raw.dim(), (k, k.saturating_sub(1)), "t_raw shape");
    assert_eq!(
        q_raw.dim(),
        (k, k.saturating_sub(1), k.saturating_sub(1)),
        "q_raw shape"
    );
    let mut w_tilde = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for hull in 0..k {
        let mut w = Array2::<f64>::zeros((k, k));
        for r in 0..k.saturating_sub(1) {
            let s = hp.epsilon * logistic(t_raw[(hull, r)]);
            let q_tilde = softmax(q_raw.slice(ndarray::s![hull, r, ..]));
            w[(r, hull)] = 1.0 - s;
            // Embed the K-1 softmax coordinates, skipping the anchor column.
            let mut src = 0;
            for c in 0..k {
                if c == hull {
                    continue;
                }
                w[(r, c)] = s * q_tilde[src];
                src += 1;
            }
        }
        w[(k - 1, hull)] = 1.0;
        b.push(w.dot(a));
        w_tilde.push(w);
    }
    (w_tilde, b)
}

/// One Gumbel-Softmax draw: `softmax((logits + noise) / temperature)`.
pub fn gumbel_softmax(
    logits: ArrayView1<f64>,
    temperature: f64,
    noise: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::BadTemperature(temperature));
    }
    let scaled = Array1::from_iter(
        logits
            .iter()
            .zip(noise.iter())
            .map(|(&l, &n)| (l + n) / temperature),
    );
    Ok(softmax(scaled.view()))
}

/// Node embeddings `z_i = sum_k M[i,k] (omega_i^T B_k)`.
pub fn node_embeddings(
    m_soft: &Array2<f64>,
    omega: &Array2<f64>,
    b: &[Array2<f64>],
) -> Array2<f64> {
    let n = m_soft.nrows();
    let d = b[0].ncols();
    let mut z = Array2::<f64>::zeros((n, d));
    for (kk, b_k) in b.iter().enumerate() {
        let proj = omega.dot(b_k); // N x D: omega_i^T B_k per row
        for i in 0..n {
            let m = m_soft[(i, kk)];
            if m == 0.0 {
                continue;
            }
            for dd in 0..d {
                z[(i, dd)] += m * proj[(i, dd)];
            }
        }
    }
    z
}

/// Hard assignments `c_i = argmax_k M_soft[i, k]`, ties to the smallest index.
pub fn harden(m_soft: &Array2<f64>) -> Vec<usize> {
    m_soft
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_val = row[0];
            for (idx, &v) in row.iter().enumerate().skip(1) {
                if v > best_val {
                    best = idx;
                    best_val = v;
                }
            }
            best
        })
        .collect()
}

/// Full forward pass with the intermediate quantities the gradient path needs.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub u: Array2<f64>,
    pub r_u: Array2<f64>,
    pub v: Array2<f64>,
    pub r_v: Array2<f64>,
    pub sigma: Array1<f64>,
    /// logistic(t_raw), K x (K-1).
    pub t: Array2<f64>,
    /// Per hull: softmax of q_raw rows, (K-1) x (K-1).
    pub q: Vec<Array2<f64>>,
    /// Per hull: Omega W_tilde_k, N x K (barycentric coordinates w.r.t. A).
    pub p: Vec<Array2<f64>>,
    /// sum_k M_soft[:, k] * p_k, N x K; Z = v_bary A.
    pub v_bary: Array2<f64>,
    pub state: ModelState,
}

/// Evaluates every constrained quantity from raw parameters. `noise`, when
/// given, is added to the assignment logits before the temperature-scaled
/// softmax (the Gumbel-Softmax relaxation); the caller owns the draw so the
/// pass stays deterministic. The returned state has been validated.
pub(crate) fn forward(
    params: &ModelParams,
    hp: &Hyperparams,
    temperature: f64,
    noise: Option<&Array2<f64>>,
) -> Result<Forward> {
    if !(temperature > 0.0) {
        return Err(Error::BadTemperature(temperature));
    }
    params.validate_finite()?;
    let n = params.n_nodes();
    let k = hp.k;

    let (u, r_u) = householder_qr(&params.u_raw, "u_raw")?;
    let (v, r_v) = householder_qr(&params.v_raw, "v_raw")?;
    let sigma = box_sigma(&params.sigma_raw, hp);
    let mut ud = u.clone();
    for (mut col, &s) in ud.columns_mut().into_iter().zip(sigma.iter()) {
        col.mapv_inplace(|x| x * s);
    }
    let a = ud.dot(&v.t());

    let (w_tilde, b) = build_local_hulls(&a, &params.t_raw, &params.q_raw, hp);
    let t = params.t_raw.mapv(logistic);
    let q: Vec<Array2<f64>> = (0..k)
        .map(|hull| {
            let mut m = Array2::<f64>::zeros((k.saturating_sub(1), k.saturating_sub(1)));
            for r in 0..k.saturating_sub(1) {
                m.row_mut(r)
                    .assign(&softmax(params.q_raw.slice(ndarray::s![hull, r, ..])));
            }
            m
        })
        .collect();

    let omega = row_softmax(&params.omega_raw);
    let m_soft = {
        let mut scaled = params.m_logits.clone();
        if let Some(g) = noise {
            assert_eq!(g.dim(), scaled.dim(), "gumbel noise shape");
            scaled += g;
        }
        scaled.mapv_inplace(|v| v / temperature);
        row_softmax(&scaled)
    };

    let p: Vec<Array2<f64>> = w_tilde.iter().map(|w| omega.dot(w)).collect();
    let mut v_bary = Array2::<f64>::zeros((n, k));
    for (kk, p_k) in p.iter().enumerate() {
        for i in 0..n {
            let m = m_soft[(i, kk)];
            for c in 0..k {
                v_bary[(i, c)] += m * p_k[(i, c)];
            }
        }
    }
    let z = v_bary.dot(&a);
    let assignments = harden(&m_soft);

    let state = ModelState {
        a,
        w_tilde,
        b,
        m_soft,
        assignments,
        omega,
        z,
        g: params.g.clone(),
        s: params.s_raw.exp(),
    };
    state.validate(hp)?;

    Ok(Forward {
        u,
        r_u,
        v,
        r_v,
        sigma,
        t,
        q,
        p,
        v_bary,
        state,
    })
}
