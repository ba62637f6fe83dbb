//! Geometry verification: disjointness certificates for local hulls, an
//! exact hull-intersection oracle, effective hull volumes, and singular
//! spectra.
//!
//! The certificate and oracle work entirely in barycentric coordinates (the
//! `W_tilde` matrices): because the archetypes are affinely independent
//! (`sigma_min > 0`), two hulls intersect geometrically if and only if their
//! barycentric coordinate polytopes intersect, which keeps both computations
//! exact and independent of the ambient dimension.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::params::{Hyperparams, ModelState};

/// Default threshold below which a singular value does not count toward the
/// effective rank/volume of a hull.
pub const RANK_TOL: f64 = 1e-6;

/// Per-hull spectral geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HullGeometry {
    /// Singular values of the (uncentered) vertex matrix, descending.
    pub singular_values: Vec<f64>,
    pub effective_log_volume: f64,
    pub effective_rank: usize,
}

/// Geometry diagnostics for a whole model state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Symmetric K x K matrix of pairwise disjointness margins (diagonal 0).
    pub pairwise_margin: Vec<Vec<f64>>,
    /// Smallest off-diagonal margin; absent when there is a single hull.
    pub min_margin: Option<f64>,
    pub per_hull: Vec<HullGeometry>,
    /// Curvature bound for the loading gradients; present when the caller
    /// supplied the maximum degree of the graph being modeled.
    pub lipschitz_bound: Option<f64>,
}

/// Pairwise disjointness margins from the barycentric matrices.
///
/// For hulls `k != l`, the directional margin through coordinate `k` is
/// `min_r (W_k)_{r,k} - max_r (W_l)_{r,k}`; when it is positive, every point
/// of hull `k` has a strictly larger k-th barycentric coordinate than any
/// point of hull `l`, so the hulls cannot share a point. The reported entry
/// is the better (larger) of the two directions, making the matrix symmetric.
/// A positive entry certifies disjointness; a non-positive one is merely
/// inconclusive. `epsilon` is the construction's anchor bound and is not used
/// by the computation (margins are read off the matrices themselves).
pub fn disjointness_certificate(
    w_tilde: &[Array2<f64>],
    _epsilon: f64,
) -> Result<Array2<f64>> {
    let k = w_tilde.len();
    for (hull, w) in w_tilde.iter().enumerate() {
        for r in 0..w.nrows() {
            let row = w.row(r);
            let violation = (row.sum() - 1.0)
                .abs()
                .max(-row.iter().copied().fold(f64::INFINITY, f64::min).min(0.0));
            if violation > 1e-8 {
                return Err(Error::OffSimplex {
                    row: hull * w.nrows() + r,
                    violation,
                });
            }
        }
    }
    let directional = |a: usize, b: usize| -> f64 {
        // Separation of coordinate `a`: hull a's minimum vs hull b's maximum.
        let min_a = (0..w_tilde[a].nrows())
            .map(|r| w_tilde[a][(r, a)])
            .fold(f64::INFINITY, f64::min);
        let max_b = (0..w_tilde[b].nrows())
            .map(|r| w_tilde[b][(r, a)])
            .fold(f64::NEG_INFINITY, f64::max);
        min_a - max_b
    };
    let mut margins = Array2::<f64>::zeros((k, k));
    for a in 0..k {
        for b in (a + 1)..k {
            let m = directional(a, b).max(directional(b, a));
            margins[(a, b)] = m;
            margins[(b, a)] = m;
        }
    }
    Ok(margins)
}

/// Decides whether two barycentric hulls intersect:
/// does there exist `lambda, mu` on the simplex with
/// `lambda^T W_k = mu^T W_l`? Solved exactly as a phase-1 linear feasibility
/// problem over `[lambda; mu]`.
pub fn hull_intersection_oracle(w_k: &Array2<f64>, w_l: &Array2<f64>) -> Result<bool> {
    let k = w_k.ncols();
    assert_eq!(w_k.nrows(), k, "square barycentric matrix");
    assert_eq!(w_l.dim(), (k, k), "matching hull dimensions");
    // Variables x = [lambda; mu] (2K). Equalities:
    //   W_k^T lambda - W_l^T mu = 0   (K rows)
    //   sum lambda = 1, sum mu = 1    (2 rows)
    let m = k + 2;
    let n = 2 * k;
    let mut a = Array2::<f64>::zeros((m, n));
    let mut b = Array1::<f64>::zeros(m);
    for c in 0..k {
        for r in 0..k {
            a[(c, r)] = w_k[(r, c)];
            a[(c, k + r)] = -w_l[(r, c)];
        }
    }
    for r in 0..k {
        a[(k, r)] = 1.0;
        a[(k + 1, k + r)] = 1.0;
    }
    b[k] = 1.0;
    b[k + 1] = 1.0;
    phase1_feasible(&a, &b)
}

/// Phase-1 simplex with Bland's rule: is `{x >= 0 : A x = b}` nonempty?
fn phase1_feasible(a: &Array2<f64>, b: &Array1<f64>) -> Result<bool> {
    let (m, n) = a.dim();
    let pivot_tol = 1e-11;
    let feas_tol = 1e-9;

    // Tableau [A | I | b] with b >= 0 after row flips; artificial basis.
    let mut t = Array2::<f64>::zeros((m, n + m + 1));
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = flip * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    // Reduced-cost row for minimizing the artificial sum: obj[j] = -sum_i t[i][j]
    // for structural columns, 0 on the artificial identity; rhs = -sum b.
    let mut obj = vec![0.0f64; n + m + 1];
    for j in 0..n {
        obj[j] = -(0..m).map(|i| t[(i, j)]).sum::<f64>();
    }
    obj[n + m] = -(0..m).map(|i| t[(i, n + m)]).sum::<f64>();

    for _iter in 0..50_000 {
        // Bland: entering column = smallest index with negative reduced cost.
        let entering = (0..n + m).find(|&j| obj[j] < -pivot_tol);
        let Some(col) = entering else {
            // Optimal: feasible iff all artificials are (numerically) zero.
            return Ok(-obj[n + m] <= feas_tol);
        };
        // Ratio test; ties broken by smallest basis variable (Bland).
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[(i, col)];
            if aij > pivot_tol {
                let ratio = t[(i, n + m)] / aij;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-15 || ((ratio - lr).abs() <= 1e-15 && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            // Unbounded phase-1 objective is impossible (it is bounded below
            // by zero); reaching here means numerical breakdown.
            return Err(Error::LpFailure(
                "no leaving row for a negative reduced cost".into(),
            ));
        };
        // Pivot on (row, col).
        let piv = t[(row, col)];
        for j in 0..n + m + 1 {
            t[(row, j)] /= piv;
        }
        for i in 0..m {
            if i != row {
                let f = t[(i, col)];
                if f != 0.0 {
                    for j in 0..n + m + 1 {
                        t[(i, j)] -= f * t[(row, j)];
                    }
                }
            }
        }
        let f = obj[col];
        if f != 0.0 {
            for j in 0..n + m + 1 {
                obj[j] -= f * t[(row, j)];
            }
        }
        basis[row] = col;
    }
    Err(Error::LpFailure("iteration cap exceeded".into()))
}

/// Effective log-volume of a hull: vertices are centered at their centroid,
/// and the value is the sum of `log sigma` over centered singular values
/// above `tol`, together with the number retained (the effective rank). A
/// fully collapsed hull reports rank 0 and log-volume 0 (empty sum).
pub fn effective_log_volume(b_k: &Array2<f64>, tol: f64) -> (f64, usize) {
    let (rows, cols) = b_k.dim();
    let mut centered = b_k.clone();
    for c in 0..cols {
        let mean = (0..rows).map(|r| b_k[(r, c)]).sum::<f64>() / rows as f64;
        for r in 0..rows {
            centered[(r, c)] -= mean;
        }
    }
    let sv = singular_values(&centered);
    let retained: Vec<f64> = sv.into_iter().filter(|&s| s > tol).collect();
    let log_volume = retained.iter().map(|s| s.ln()).sum();
    (log_volume, retained.len())
}

/// Singular values of the (uncentered) vertex matrix, descending.
pub fn singular_spectrum(b_k: &Array2<f64>) -> Vec<f64> {
    singular_values(b_k)
}

/// Assembles the full geometry report for a model state. `deg_max`, when
/// known, enables the curvature bound (it depends on the graph, not the
/// state).
pub fn geometry_report(
    state: &ModelState,
    hp: &Hyperparams,
    deg_max: Option<usize>,
) -> Result<GeometryReport> {
    let margins = disjointness_certificate(&state.w_tilde, hp.epsilon)?;
    let k = hp.k;
    let min_margin = if k >= 2 {
        let mut min = f64::INFINITY;
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    min = min.min(margins[(a, b)]);
                }
            }
        }
        Some(min)
    } else {
        None
    };
    let per_hull = state
        .b
        .iter()
        .map(|b_k| {
            let (effective_log_volume, effective_rank) = effective_log_volume(b_k, RANK_TOL);
            HullGeometry {
                singular_values: singular_spectrum(b_k),
                effective_log_volume,
                effective_rank,
            }
        })
        .collect();
    Ok(GeometryReport {
        pairwise_margin: margins.rows().into_iter().map(|r| r.to_vec()).collect(),
        min_margin,
        per_hull,
        lipschitz_bound: deg_max
            .map(|d| crate::inference::lipschitz_bound(state.s, hp.sigma_max, d)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::build_local_hulls;
    use ndarray::{arr2, Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_hulls(k: usize, epsilon: f64, seed: u64) -> Vec<Array2<f64>> {
        let mut hp = Hyperparams::new(k, k);
        hp.epsilon = epsilon;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::<f64>::eye(k);
        let t_raw = Array2::from_shape_fn((k, k - 1), |_| rng.random::<f64>() * 12.0 - 6.0);
        let q_raw = Array3::from_shape_fn((k, k - 1, k - 1), |_| rng.random::<f64>() * 6.0 - 3.0);
        let (w, _) = build_local_hulls(&a, &t_raw, &q_raw, &hp);
        w
    }

    #[test]
    fn certificate_meets_lemma_bound_at_small_epsilon() {
        for seed in 0..50u64 {
            let w = random_hulls(3, 0.45, seed);
            let m = disjointness_certificate(&w, 0.45).unwrap();
            for a in 0..3 {
                assert_eq!(m[(a, a)], 0.0, "empty diagonal");
                for b in 0..3 {
                    if a != b {
                        assert!((m[(a, b)] - m[(b, a)]).abs() < 1e-15, "symmetric");
                        assert!(
                            m[(a, b)] >= 1.0 - 2.0 * 0.45 - 1e-12,
                            "margin {} below 1 - 2 epsilon",
                            m[(a, b)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn certificate_fails_outside_the_identifiable_regime() {
        // epsilon = 0.6 with saturated spread rows: anchor mass drops to 0.4
        // and the opposing hull can reach 0.6 on the same coordinate.
        let mut hp = Hyperparams::new(2, 2);
        hp.epsilon = 0.6;
        let a = Array2::<f64>::eye(2);
        let t_raw = Array2::from_elem((2, 1), 30.0);
        let q_raw = Array3::zeros((2, 1, 1));
        let (w, _) = build_local_hulls(&a, &t_raw, &q_raw, &hp);
        let m = disjointness_certificate(&w, 0.6).unwrap();
        assert!(
            m[(0, 1)] <= 0.0,
            "margin {} should be non-positive for epsilon 0.6",
            m[(0, 1)]
        );
    }

    #[test]
    fn certificate_rejects_off_simplex_rows() {
        let w = vec![
            arr2(&[[0.7, 0.4], [0.0, 1.0]]), // first row sums to 1.1
            Array2::<f64>::eye(2),
        ];
        assert!(matches!(
            disjointness_certificate(&w, 0.45),
            Err(Error::OffSimplex { .. })
        ));
    }

    #[test]
    fn oracle_identical_hulls_intersect() {
        let w = random_hulls(3, 0.3, 4);
        assert!(hull_intersection_oracle(&w[0], &w[0]).unwrap());
    }

    #[test]
    fn oracle_overlapping_simplices_with_grid_witness() {
        // Hull 0 is the full simplex; hull 1 is shrunk toward the centroid.
        // Both contain the barycenter (0.5, 0.5).
        let w0 = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let w1 = arr2(&[[0.75, 0.25], [0.25, 0.75]]);
        assert!(hull_intersection_oracle(&w0, &w1).unwrap());

        // Independent grid search over both simplices exhibits a witness.
        let mut best = f64::INFINITY;
        let grid = 400;
        for i in 0..=grid {
            let lam = i as f64 / grid as f64;
            let p0 = [
                lam * w0[(0, 0)] + (1.0 - lam) * w0[(1, 0)],
                lam * w0[(0, 1)] + (1.0 - lam) * w0[(1, 1)],
            ];
            for j in 0..=grid {
                let mu = j as f64 / grid as f64;
                let p1 = [
                    mu * w1[(0, 0)] + (1.0 - mu) * w1[(1, 0)],
                    mu * w1[(0, 1)] + (1.0 - mu) * w1[(1, 1)],
                ];
                let d = (p0[0] - p1[0]).abs() + (p0[1] - p1[1]).abs();
                best = best.min(d);
            }
        }
        assert!(best < 1e-9, "grid witness distance {best}");
    }

    #[test]
    fn oracle_disjoint_at_anchor_dominant_epsilon() {
        for seed in 0..50u64 {
            let w = random_hulls(3, 0.45, 100 + seed);
            for a in 0..3 {
                for b in (a + 1)..3 {
                    assert!(
                        !hull_intersection_oracle(&w[a], &w[b]).unwrap(),
                        "seed {seed}: hulls {a}, {b} must be disjoint"
                    );
                }
            }
        }
    }

    /// Certificate / oracle agreement over 1000 random draws at epsilon 0.3:
    /// every margin is positive and every oracle call reports disjoint.
    #[test]
    fn certificate_and_oracle_agree_on_a_thousand_draws() {
        let mut checked = 0;
        for seed in 0..334u64 {
            let w = random_hulls(3, 0.3, 9000 + seed);
            let m = disjointness_certificate(&w, 0.3).unwrap();
            for a in 0..3 {
                for b in (a + 1)..3 {
                    assert!(m[(a, b)] > 0.0, "certificate positive at epsilon 0.3");
                    assert!(
                        !hull_intersection_oracle(&w[a], &w[b]).unwrap(),
                        "oracle agrees: disjoint"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 1000, "covered {checked} pairs");
    }

    #[test]
    fn log_volume_degenerate_and_hand_cases() {
        // All vertices identical: rank 0, empty-sum volume 0.
        let b = Array2::from_elem((3, 2), 0.7);
        let (v, r) = effective_log_volume(&b, RANK_TOL);
        assert_eq!(r, 0);
        assert_eq!(v, 0.0);

        // Vertices (1,0) and (0,1): centered singular values {1, 0}.
        let b = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let (v, r) = effective_log_volume(&b, RANK_TOL);
        assert_eq!(r, 1);
        assert!(v.abs() < 1e-12, "log 1 = 0");
    }

    /// Gram-spectrum oracle: log-volume recomputed from the eigenvalues of
    /// the centered Gram matrix.
    #[test]
    fn log_volume_matches_gram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = Array2::from_shape_fn((4, 6), |_| rng.random::<f64>() * 2.0 - 1.0);
        let (v, r) = effective_log_volume(&b, RANK_TOL);

        let mut centered = b.clone();
        for c in 0..6 {
            let mean = (0..4).map(|row| b[(row, c)]).sum::<f64>() / 4.0;
            for row in 0..4 {
                centered[(row, c)] -= mean;
            }
        }
        let gram = centered.dot(&centered.t());
        let (eigs, _) = crate::linalg::jacobi_eigh(&gram);
        let oracle: f64 = eigs
            .iter()
            .filter(|&&e| e.max(0.0).sqrt() > RANK_TOL)
            .map(|&e| 0.5 * e.ln())
            .sum();
        let oracle_rank = eigs.iter().filter(|&&e| e.max(0.0).sqrt() > RANK_TOL).count();
        assert_eq!(r, oracle_rank);
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
    }

    #[test]
    fn spectrum_closed_forms_and_oracle() {
        let b = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let sv = singular_spectrum(&b);
        assert!((sv[0] - 1.0).abs() < 1e-12 && (sv[1] - 1.0).abs() < 1e-12);

        // Rank-1 hull: all rows the same unit vector, K = 3.
        let b = arr2(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let sv = singular_spectrum(&b);
        assert!((sv[0] - 3.0f64.sqrt()).abs() < 1e-12);
        assert!(sv[1].abs() < 1e-9 && sv[2].abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let sv = singular_spectrum(&b);
        let (eigs, _) = crate::linalg::jacobi_eigh(&b.dot(&b.t()));
        for (s, e) in sv.iter().zip(eigs.iter()) {
            assert!((s - e.max(0.0).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn geometry_report_shapes_and_margins() {
        let hp = Hyperparams::new(3, 3);
        let params = crate::params::ModelParams::neutral(5, &hp);
        let fwd = crate::params::forward(&params, &hp, 1.0, None).unwrap();
        let report = geometry_report(&fwd.state, &hp, Some(4)).unwrap();
        assert_eq!(report.pairwise_margin.len(), 3);
        assert_eq!(report.per_hull.len(), 3);
        let min = report.min_margin.unwrap();
        assert!(min >= 1.0 - 2.0 * hp.epsilon - 1e-12);
        for row in &report.pairwise_margin {
            assert_eq!(row.len(), 3);
        }
        for hull in &report.per_hull {
            assert_eq!(hull.singular_values.len(), 3);
            assert!(hull.effective_rank <= 3);
        }
        assert!(report.lipschitz_bound.unwrap() > 0.0);
    }
}
