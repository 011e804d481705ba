//! Dense symmetric eigendecomposition and the leading-component routines
//! built on it.
//!
//! The eigensolver is Householder tridiagonalisation followed by the
//! implicit QL algorithm (the EISPACK `tred2`/`tql2` pair), generic over
//! [`Scalar`].

use crate::error::{NaitError, Result};
use crate::scalar::{dot, norm, Scalar};

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<S> {
    pub values: Vec<S>,
    /// `vectors[k]` pairs with `values[k]`.
    pub vectors: Vec<Vec<S>>,
}

const MAX_QL_SWEEPS: usize = 64;

impl<S: Scalar> SymmetricEigen<S> {
    /// Decompose the symmetric matrix given as rows. Only symmetry of the
    /// input is assumed, not checked.
    pub fn new(matrix: &[Vec<S>]) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Ok(SymmetricEigen {
                values: Vec::new(),
                vectors: Vec::new(),
            });
        }
        if matrix.iter().any(|row| row.len() != n) {
            return Err(NaitError::ShapeMismatch(
                "eigendecomposition requires a square matrix".into(),
            ));
        }
        let mut v: Vec<Vec<S>> = matrix.to_vec();
        let mut d = vec![S::zero(); n];
        let mut e = vec![S::zero(); n];
        tred2(&mut v, &mut d, &mut e);
        tql2(&mut v, &mut d, &mut e)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&k| d[k]).collect();
        let vectors = order
            .iter()
            .map(|&k| (0..n).map(|row| v[row][k]).collect())
            .collect();
        Ok(SymmetricEigen { values, vectors })
    }
}

fn tred2<S: Scalar>(v: &mut [Vec<S>], d: &mut [S], e: &mut [S]) {
    let n = d.len();
    let zero = S::zero();
    for j in 0..n {
        d[j] = v[n - 1][j];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = zero;
                v[j][i] = zero;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in (j + 1)..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let delta = f * e[k] + g * d[k];
                    v[k][j] -= delta;
                }
                d[j] = v[i - 1][j];
                v[i][j] = zero;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[n - 1][i] = v[i][i];
        v[i][i] = S::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    let delta = g * d[k];
                    v[k][j] -= delta;
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = zero;
    }
    v[n - 1][n - 1] = S::one();
    e[0] = zero;
}

fn tql2<S: Scalar>(v: &mut [Vec<S>], d: &mut [S], e: &mut [S]) -> Result<()> {
    let n = d.len();
    let zero = S::zero();
    let one = S::one();
    let two = one + one;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    let mut f = zero;
    let mut tst1 = zero;
    let eps = S::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(NaitError::NumericalFailure(format!(
                        "implicit QL did not converge for eigenvalue {l} after {MAX_QL_SWEEPS} sweeps"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        let hk = row[i + 1];
                        row[i + 1] = s * row[i] + c * hk;
                        row[i] = c * row[i] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
    Ok(())
}

/// Mean-center rows in place and return the column means.
pub(crate) fn center_rows<S: Scalar>(rows: &mut [Vec<S>]) -> Vec<S> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let mut mean = vec![S::zero(); dim];
    for row in rows.iter() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let inv_n = S::one() / S::from_usize(n).unwrap();
    mean.iter_mut().for_each(|m| *m *= inv_n);
    for row in rows.iter_mut() {
        for (x, &m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    mean
}

/// Sample covariance `Xᵀ X / (n - 1)` of already-centered rows.
pub(crate) fn covariance<S: Scalar>(centered: &[Vec<S>]) -> Vec<Vec<S>> {
    let n = centered.len();
    let dim = centered.first().map_or(0, Vec::len);
    let scale = S::one() / S::from_usize(n - 1).unwrap();
    let mut cov = vec![vec![S::zero(); dim]; dim];
    for row in centered {
        for a in 0..dim {
            let ra = row[a];
            if ra == S::zero() {
                continue;
            }
            let out = &mut cov[a];
            for b in a..dim {
                out[b] += ra * row[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let c = cov[a][b] * scale;
            cov[a][b] = c;
            cov[b][a] = c;
        }
    }
    cov
}

/// Scaled Gram matrix `X Xᵀ / (n - 1)` of already-centered rows.
pub(crate) fn gram<S: Scalar>(centered: &[Vec<S>]) -> Vec<Vec<S>> {
    let n = centered.len();
    let scale = S::one() / S::from_usize(n - 1).unwrap();
    let mut g = vec![vec![S::zero(); n]; n];
    for a in 0..n {
        for b in a..n {
            let v = dot(&centered[a], &centered[b]) * scale;
            g[a][b] = v;
            g[b][a] = v;
        }
    }
    g
}

/// Map a Gram-space eigenvector `u` to the feature-space axis `Xᵀ u`, normalised.
pub(crate) fn lift_gram_vector<S: Scalar>(centered: &[Vec<S>], u: &[S]) -> Option<Vec<S>> {
    let dim = centered.first().map_or(0, Vec::len);
    let mut v = vec![S::zero(); dim];
    for (row, &w) in centered.iter().zip(u) {
        for (vj, &x) in v.iter_mut().zip(row) {
            *vj += w * x;
        }
    }
    let nv = norm(&v);
    if nv == S::zero() || !nv.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    Some(v)
}

/// Outcome of [`power_iteration`].
#[derive(Debug, Clone)]
pub struct PowerResult<S> {
    pub vector: Vec<S>,
    pub eigenvalue: S,
    pub iterations: usize,
}

/// Leading eigenvector of the covariance of `centered` rows without forming
/// the covariance, starting from the all-ones vector.
///
/// Converges when successive iterates differ by less than `tol` in 2-norm.
pub fn power_iteration<S: Scalar>(
    centered: &[Vec<S>],
    tol: S,
    max_iter: usize,
) -> Result<PowerResult<S>> {
    let n = centered.len();
    let dim = centered.first().map_or(0, Vec::len);
    if n < 2 || dim == 0 {
        return Err(NaitError::degenerate(None, "power iteration needs n >= 2 rows"));
    }
    let scale = S::one() / S::from_usize(n - 1).unwrap();
    let start = S::one() / S::from_usize(dim).unwrap().sqrt();
    let mut v = vec![start; dim];
    let mut next = vec![S::zero(); dim];

    let apply = |v: &[S], out: &mut [S]| {
        out.iter_mut().for_each(|x| *x = S::zero());
        for row in centered {
            let proj = dot(row, v) * scale;
            for (o, &x) in out.iter_mut().zip(row) {
                *o += proj * x;
            }
        }
    };

    for it in 1..=max_iter {
        apply(&v, &mut next);
        let nn = norm(&next);
        if nn == S::zero() || !nn.is_finite() {
            return Err(NaitError::degenerate(
                None,
                "covariance annihilates the iterate (zero variance along the start vector)",
            ));
        }
        next.iter_mut().for_each(|x| *x /= nn);
        let diff = v
            .iter()
            .zip(&next)
            .fold(S::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt();
        std::mem::swap(&mut v, &mut next);
        if diff < tol {
            apply(&v, &mut next);
            let eigenvalue = dot(&v, &next);
            return Ok(PowerResult {
                vector: v,
                eigenvalue,
                iterations: it,
            });
        }
    }
    Err(NaitError::NumericalFailure(format!(
        "power iteration did not reach tolerance {tol:e} within {max_iter} iterations"
    )))
}
