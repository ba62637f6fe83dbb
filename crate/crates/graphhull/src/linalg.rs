//! Small dense numerical kernels shared across the crate.
//!
//! Everything here targets the tiny matrices that dominate this model
//! (K x K, K x D with K <= D and desk-scale D), so the implementations favor
//! determinism and simplicity over asymptotics: Householder QR with a fixed
//! sign convention (plus its adjoint, needed by the gradient path), a cyclic
//! Jacobi eigensolver for symmetric matrices, and Cholesky with an explicit
//! rank-deficiency signal instead of jitter.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Thin QR factorization via Householder reflections.
///
/// Returns `(Q, R)` with `Q` m x n (orthonormal columns), `R` n x n upper
/// triangular and `diag(R) >= 0`, so the factorization is unique and the map
/// `X -> Q` is differentiable wherever `X` has full column rank. Requires
/// m >= n. `block` names the parameter block in rank-deficiency errors.
pub fn householder_qr(x: &Array2<f64>, block: &'static str) -> Result<(Array2<f64>, Array2<f64>)> {
    let (m, n) = x.dim();
    if m < n {
        return Err(Error::ShapeMismatch(format!(
            "thin QR needs rows >= cols, got {m} x {n}"
        )));
    }
    let fro = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rank_tol = 1e-13 * fro.max(1e-300) * (m as f64).sqrt();

    let mut work = x.clone();
    // Householder vectors, each stored full-length with leading zeros.
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(n);
    let mut taus: Vec<f64> = Vec::with_capacity(n);

    for j in 0..n {
        let mut v = Array1::<f64>::zeros(m);
        for i in j..m {
            v[i] = work[(i, j)];
        }
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm < rank_tol {
            return Err(Error::RankDeficient {
                block,
                pivot: norm,
                col: j,
            });
        }
        let alpha = if v[j] >= 0.0 { -norm } else { norm };
        v[j] -= alpha;
        let vtv = v.iter().map(|t| t * t).sum::<f64>();
        let tau = 2.0 / vtv;
        // Apply H = I - tau v v^T to the trailing columns.
        for c in j..n {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i] * work[(i, c)];
            }
            let scale = tau * dot;
            for i in j..m {
                work[(i, c)] -= scale * v[i];
            }
        }
        work[(j, j)] = alpha;
        for i in (j + 1)..m {
            work[(i, j)] = 0.0;
        }
        vs.push(v);
        taus.push(tau);
    }

    let mut r = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            r[(i, j)] = work[(i, j)];
        }
    }

    // Assemble thin Q by applying the reflectors to the first n identity columns.
    let mut q = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for j in (0..n).rev() {
        let v = &vs[j];
        let tau = taus[j];
        for c in 0..n {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i] * q[(i, c)];
            }
            let scale = tau * dot;
            for i in j..m {
                q[(i, c)] -= scale * v[i];
            }
        }
    }

    // Sign convention: flip so that diag(R) >= 0.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for c in j..n {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok((q, r))
}

/// Adjoint of the thin QR map `X -> Q` at `(Q, R)`.
///
/// Given the gradient `q_bar` of a scalar loss with respect to `Q`, returns
/// the gradient with respect to `X`. Uses the standard reverse-mode rule for
/// m >= n when the loss does not depend on `R`:
/// `X_bar = (Q_bar + Q copyltu(M)) R^{-T}` with `M = -Q_bar^T Q`, where
/// `copyltu` mirrors the lower triangle (diagonal kept) onto the upper one.
pub fn qr_backward(q: &Array2<f64>, r: &Array2<f64>, q_bar: &Array2<f64>) -> Array2<f64> {
    let (m, n) = q.dim();
    let minus_m = q_bar.t().dot(q); // n x n; M = -this
    let mut h = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let src = if i >= j { (i, j) } else { (j, i) };
            h[(i, j)] = -minus_m[src];
        }
    }
    let y = q_bar + &q.dot(&h); // m x n
    // Solve X_bar R^T = Y, i.e. R Z = Y^T with Z = X_bar^T (back substitution).
    let mut z = Array2::<f64>::zeros((n, m));
    for c in 0..m {
        for i in (0..n).rev() {
            let mut acc = y[(c, i)];
            for j in (i + 1)..n {
                acc -= r[(i, j)] * z[(j, c)];
            }
            z[(i, c)] = acc / r[(i, i)];
        }
    }
    z.t().to_owned()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns. Input symmetry is assumed, not checked.
pub fn jacobi_eigh(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    if n > 1 {
        let fro = m.iter().map(|t| t * t).sum::<f64>().sqrt().max(1e-300);
        let tol = 1e-15 * fro;
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[(p, q)] * m[(p, q)];
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for i in 0..n {
                        let mip = m[(i, p)];
                        let miq = m[(i, q)];
                        m[(i, p)] = c * mip - s * miq;
                        m[(i, q)] = s * mip + c * miq;
                    }
                    for i in 0..n {
                        let mpi = m[(p, i)];
                        let mqi = m[(q, i)];
                        m[(p, i)] = c * mpi - s * mqi;
                        m[(q, i)] = s * mpi + c * mqi;
                    }
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = c * vip - s * viq;
                        v[(i, q)] = s * vip + c * viq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs[(i, dst)] = v[(i, src)];
        }
    }
    (vals, vecs)
}

/// Singular values of an arbitrary matrix, descending, via the Gram route
/// (eigenvalues of the smaller of X X^T / X^T X, clamped at zero).
pub fn singular_values(x: &Array2<f64>) -> Vec<f64> {
    let (m, n) = x.dim();
    let gram = if m <= n {
        x.dot(&x.t())
    } else {
        x.t().dot(x)
    };
    let (vals, _) = jacobi_eigh(&gram);
    vals.into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Cholesky factorization of a symmetric matrix.
///
/// Returns the lower factor `L` with `A = L L^T`, or `None` when the matrix is
/// not (numerically) positive definite — the caller decides what rank
/// deficiency means. No jitter is ever added.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
    let tol = max_diag.max(1e-300) * (n as f64) * 1e-14;
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= tol {
                    return None;
                }
                l[(i, i)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Log-determinant of `A = L L^T` given its lower Cholesky factor.
pub fn chol_logdet(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
}

/// Inverse of a symmetric positive-definite matrix from its lower Cholesky
/// factor, via triangular solves against the identity.
pub fn spd_inverse_from_chol(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for col in 0..n {
        // Forward solve L y = e_col.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                acc -= l[(i, k)] * y[k];
            }
            y[i] = acc / l[(i, i)];
        }
        // Back solve L^T x = y.
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in (i + 1)..n {
                acc -= l[(k, i)] * inv[(k, col)];
            }
            inv[(i, col)] = acc / l[(i, i)];
        }
    }
    // Enforce exact symmetry against round-off.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    inv
}
