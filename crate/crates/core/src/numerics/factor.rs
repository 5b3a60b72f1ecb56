use serde::{Deserialize, Serialize};

use super::mat::{dot, Mat};
use crate::error::{Error, Result};

/// Condition estimate above which `invert` refuses.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlsFit {
    /// `q x p` map `L` with `L x_i ≈ y_i`.
    pub coeffs: Mat,
    pub residual_norm: f64,
}

/// Householder QR with column pivoting, stored compactly.
struct PivotedQr {
    qr: Mat,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

fn pivoted_qr(a: &Mat) -> PivotedQr {
    let (n, p) = a.shape();
    let mut qr = a.clone();
    let kmax = n.min(p);
    let mut tau = vec![0.0; kmax];
    let mut perm: Vec<usize> = (0..p).collect();
    let mut colnorm: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| qr[(i, j)] * qr[(i, j)]).sum())
        .collect();

    for k in 0..kmax {
        // Bring the column with the largest remaining norm forward.
        let mut best = k;
        for j in (k + 1)..p {
            if colnorm[j] > colnorm[best] {
                best = j;
            }
        }
        if best != k {
            for i in 0..n {
                let t = qr[(i, k)];
                qr[(i, k)] = qr[(i, best)];
                qr[(i, best)] = t;
            }
            colnorm.swap(k, best);
            perm.swap(k, best);
        }

        let alpha: f64 = (k..n).map(|i| qr[(i, k)] * qr[(i, k)]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            tau[k] = 0.0;
            continue;
        }
        let beta = if qr[(k, k)] > 0.0 { -alpha } else { alpha };
        let v0 = qr[(k, k)] - beta;
        for i in (k + 1)..n {
            qr[(i, k)] /= v0;
        }
        tau[k] = (beta - qr[(k, k)]) / beta;
        qr[(k, k)] = beta;

        for j in (k + 1)..p {
            let mut s = qr[(k, j)];
            for i in (k + 1)..n {
                s += qr[(i, k)] * qr[(i, j)];
            }
            s *= tau[k];
            qr[(k, j)] -= s;
            for i in (k + 1)..n {
                let vik = qr[(i, k)];
                qr[(i, j)] -= s * vik;
            }
            // Recompute rather than downdate; p is small here.
            colnorm[j] = ((k + 1)..n).map(|i| qr[(i, j)] * qr[(i, j)]).sum();
        }
    }

    let rmax = if kmax > 0 { qr[(0, 0)].abs() } else { 0.0 };
    let thresh = (n.max(p) as f64) * f64::EPSILON * rmax;
    let rank = (0..kmax).filter(|&k| qr[(k, k)].abs() > thresh).count();
    PivotedQr {
        qr,
        tau,
        perm,
        rank,
    }
}

impl PivotedQr {
    /// Overwrites `b` (length n) with `Qᵀ b`.
    fn apply_qt(&self, b: &mut [f64]) {
        let n = self.qr.rows();
        for k in 0..self.tau.len() {
            if self.tau[k] == 0.0 {
                continue;
            }
            let mut s = b[k];
            for i in (k + 1)..n {
                s += self.qr[(i, k)] * b[i];
            }
            s *= self.tau[k];
            b[k] -= s;
            for i in (k + 1)..n {
                b[i] -= s * self.qr[(i, k)];
            }
        }
    }
}

/// Least-squares fit of `targets ≈ inputs · coeffsᵀ` via pivoted QR.
pub fn lls_solve(inputs: &Mat, targets: &Mat) -> Result<LlsFit> {
    let (n, p) = inputs.shape();
    if targets.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {n} rows, targets have {}",
            targets.rows()
        )));
    }
    if n < p {
        return Err(Error::RankDeficient { rank: n, needed: p });
    }
    let q = targets.cols();
    let f = pivoted_qr(inputs);
    if f.rank < p {
        return Err(Error::RankDeficient {
            rank: f.rank,
            needed: p,
        });
    }
    let mut coeffs = Mat::zeros(q, p);
    let mut b = vec![0.0; n];
    for t in 0..q {
        for i in 0..n {
            b[i] = targets[(i, t)];
        }
        f.apply_qt(&mut b);
        let mut z = vec![0.0; p];
        for k in (0..p).rev() {
            let mut s = b[k];
            for j in (k + 1)..p {
                s -= f.qr[(k, j)] * z[j];
            }
            z[k] = s / f.qr[(k, k)];
        }
        for k in 0..p {
            coeffs[(t, f.perm[k])] = z[k];
        }
    }
    let mut ss = 0.0;
    for i in 0..n {
        let x = inputs.row(i);
        for t in 0..q {
            let r = dot(coeffs.row(t), x) - targets[(i, t)];
            ss += r * r;
        }
    }
    Ok(LlsFit {
        coeffs,
        residual_norm: ss.sqrt(),
    })
}

/// Numerical rank using the same threshold as `lls_solve`.
pub fn rank(a: &Mat) -> usize {
    pivoted_qr(a).rank
}

/// Cholesky factor `L` (lower) with `a = L Lᵀ`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(
            "cholesky needs a square matrix".into(),
        ));
    }
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` in place.
pub fn cholesky_solve(l: &Mat, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        let row = l.row(i);
        for k in 0..i {
            s -= row[k] * b[k];
        }
        b[i] = s / row[i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Mat,
    piv: Vec<usize>,
}

impl Lu {
    pub fn new(a: &Mat) -> Result<Lu> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("LU needs a square matrix".into()));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let mut p = k;
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > lu[(p, k)].abs() {
                    p = i;
                }
            }
            if lu[(p, k)].abs() <= scale * f64::EPSILON * n as f64 {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                piv.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { lu, piv })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = (0..i).map(|k| row[k] * x[k]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = ((i + 1)..n).map(|k| row[k] * x[k]).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, Lᵀ w = z, x = Pᵀ w.
        let mut z = b.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|k| self.lu[(k, i)] * z[k]).sum();
            z[i] = (z[i] - s) / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| self.lu[(k, i)] * z[k]).sum();
            z[i] -= s;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.piv.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }
}

/// Singular values in descending order (one-sided Jacobi).
pub fn singular_values(a: &Mat) -> Vec<f64> {
    // Work on the taller orientation so columns are the short side.
    let mut w = if a.rows() >= a.cols() {
        a.clone()
    } else {
        a.transpose()
    };
    let (n, p) = w.shape();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..p {
            for j in (i + 1)..p {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..n {
                    let (x, y) = (w[(r, i)], w[(r, j)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 {
                    continue;
                }
                let c = gamma.abs() / (alpha * beta).sqrt();
                off = off.max(c);
                if c < 1e-15 {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..n {
                    let (x, y) = (w[(r, i)], w[(r, j)]);
                    w[(r, i)] = cs * x - sn * y;
                    w[(r, j)] = sn * x + cs * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|r| w[(r, j)] * w[(r, j)]).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Eigenvalues of a symmetric matrix, ascending (cyclic Jacobi).
pub fn symmetric_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(
            "eigenvalues need a square matrix".into(),
        ));
    }
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Ratio of extreme singular values; infinite when singular.
pub fn condition_number(a: &Mat) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Inverse of a square matrix; refuses when the condition estimate exceeds 1e12.
pub fn invert(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cannot invert {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let cond = condition_number(m);
    if !cond.is_finite() {
        return Err(Error::Singular);
    }
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let lu = Lu::new(m)?;
    let mut inv = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        let col = lu.solve(&e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

/// PSD test by Cholesky of `m + shift·I`, with `shift = tol·max(1, max|m|)`.
pub fn is_psd(m: &Mat, tol: f64) -> Result<bool> {
    let scale = m.max_abs().max(1.0);
    let asym = m.asymmetry();
    if asym > tol * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let shift = tol * scale;
    let mut s = m.clone();
    for i in 0..s.rows() {
        s[(i, i)] += shift;
    }
    // Symmetrize so the factorization sees exactly one triangle's values.
    for i in 0..s.rows() {
        for j in (i + 1)..s.cols() {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(cholesky(&s).is_ok())
}
