//! Problem builders for the two layer objectives.
//!
//! Full problems use the layout `[C flattened row-major, ξ(1), ..., ξ(n)]` (layer 2)
//! or `[A flattened row-major, φ(1), ..., φ(n)]` (layer 1). Both objectives
//! separate over output rows, so the learners solve the per-row problems
//! `[c_j, ξ_j(1..n)]`; the full builders exist for inspection and tests.

use super::{LpProblem, QpProblem, VarBlock};
use crate::error::{Error, Result};
use crate::numerics::Mat;

fn check_rows(xs: &Mat, other: &Mat, what: &str) -> Result<()> {
    if xs.rows() != other.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs but {} {what}",
            xs.rows(),
            other.rows()
        )));
    }
    if xs.rows() == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    Ok(())
}

fn check_col(j: usize, xs: &Mat) -> Result<()> {
    if j >= xs.cols() {
        return Err(Error::DimensionMismatch(format!(
            "row {j} out of range for d = {}",
            xs.cols()
        )));
    }
    Ok(())
}

/// QP over `u = (w, s)` with `s ≥ 0` and objective `(1/2n) Σ_i (s_i + feat_i·w − target_i)²`.
pub(crate) fn row_qp(feat: &Mat, target: &[f64], wname: &str, sname: &str) -> QpProblem {
    let (n, p) = feat.shape();
    let nv = p + n;
    let inv = 1.0 / n as f64;
    let mut h = Mat::zeros(nv, nv);
    let mut q = vec![0.0; nv];
    let mut c = 0.0;
    for i in 0..n {
        let f = feat.row(i);
        for a in 0..p {
            for b in 0..p {
                h[(a, b)] += inv * f[a] * f[b];
            }
            h[(a, p + i)] += inv * f[a];
            h[(p + i, a)] += inv * f[a];
            q[a] -= inv * target[i] * f[a];
        }
        h[(p + i, p + i)] += inv;
        q[p + i] -= inv * target[i];
        c += 0.5 * inv * target[i] * target[i];
    }
    QpProblem {
        hessian: h,
        linear: Mat::col_vec(q),
        constant: c,
        bounds: (p..nv).collect(),
        var_layout: vec![
            VarBlock {
                name: wname.into(),
                start: 0,
                len: p,
            },
            VarBlock {
                name: sname.into(),
                start: p,
                len: n,
            },
        ],
    }
}

/// Features and targets of layer-2 row `j` in the form `min (1/2n) Σ (s_i + f_i·w − t_i)²`.
pub fn layer2_row_hinge(xs: &Mat, ys: &Mat, j: usize) -> Result<(Mat, Vec<f64>)> {
    check_rows(xs, ys, "outputs")?;
    check_col(j, xs)?;
    Ok((
        ys.scale(-1.0),
        (0..xs.rows()).map(|i| -xs[(i, j)]).collect(),
    ))
}

/// Features and targets of layer-1 row `j`, as for [`layer2_row_hinge`].
pub fn layer1_row_hinge(xs: &Mat, hs: &Mat, j: usize) -> Result<(Mat, Vec<f64>)> {
    check_rows(xs, hs, "hidden samples")?;
    check_col(j, hs)?;
    Ok((xs.clone(), (0..xs.rows()).map(|i| hs[(i, j)]).collect()))
}

/// Row `j` of the layer-2 QP: variables `(c_j ∈ R^m, ξ_j(1..n) ≥ 0)`,
/// objective `(1/2n) Σ_i (ξ_j(i) + x_j(i) − c_j·y(i))²`.
pub fn layer2_row_qp(xs: &Mat, ys: &Mat, j: usize) -> Result<QpProblem> {
    let (feat, target) = layer2_row_hinge(xs, ys, j)?;
    Ok(row_qp(&feat, &target, "c_row", "xi"))
}

/// Row `j` of the layer-1 QP: variables `(a_j ∈ R^d, φ_j(1..n) ≥ 0)`,
/// objective `(1/2n) Σ_i (φ_j(i) + a_j·x(i) − h_j(i))²`.
pub fn layer1_row_qp(xs: &Mat, hs: &Mat, j: usize) -> Result<QpProblem> {
    let (feat, target) = layer1_row_hinge(xs, hs, j)?;
    Ok(row_qp(&feat, &target, "a_row", "phi"))
}

/// Assembles the full QP from per-row blocks; `width` is the matrix-row length.
fn full_qp(rows: Vec<QpProblem>, width: usize, n: usize, wname: &str, sname: &str) -> QpProblem {
    let d = rows.len();
    let nw = d * width;
    let nv = nw + n * d;
    let mut h = Mat::zeros(nv, nv);
    let mut q = vec![0.0; nv];
    let mut c = 0.0;
    // Map row-problem index -> full index.
    let map = |j: usize, k: usize| -> usize {
        if k < width {
            j * width + k
        } else {
            nw + (k - width) * d + j
        }
    };
    for (j, rp) in rows.iter().enumerate() {
        let m = rp.num_vars();
        for a in 0..m {
            for b in 0..m {
                let v = rp.hessian[(a, b)];
                if v != 0.0 {
                    h[(map(j, a), map(j, b))] += v;
                }
            }
            q[map(j, a)] += rp.linear[(a, 0)];
        }
        c += rp.constant;
    }
    QpProblem {
        hessian: h,
        linear: Mat::col_vec(q),
        constant: c,
        bounds: (nw..nv).collect(),
        var_layout: std::iter::once(VarBlock {
            name: wname.into(),
            start: 0,
            len: nw,
        })
        .chain((0..n).map(|i| VarBlock {
            name: format!("{sname}({i})"),
            start: nw + i * d,
            len: d,
        }))
        .collect(),
    }
}

/// Full layer-2 QP with `N = d·m + n·d` variables.
pub fn layer2_qp(xs: &Mat, ys: &Mat) -> Result<QpProblem> {
    check_rows(xs, ys, "outputs")?;
    let rows = (0..xs.cols())
        .map(|j| layer2_row_qp(xs, ys, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(full_qp(rows, ys.cols(), xs.rows(), "C", "xi"))
}

/// Full layer-1 QP with `N = d·d + n·d` variables.
pub fn layer1_qp(xs: &Mat, hs: &Mat) -> Result<QpProblem> {
    check_rows(xs, hs, "hidden samples")?;
    let rows = (0..hs.cols())
        .map(|j| layer1_row_qp(xs, hs, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(full_qp(rows, xs.cols(), xs.rows(), "A", "phi"))
}

/// Row `j` of the layer-2 LP: `c_j·y(i) ≥ x_j(i)`, zero objective.
pub fn layer2_row_lp(xs: &Mat, ys: &Mat, j: usize) -> Result<LpProblem> {
    check_rows(xs, ys, "outputs")?;
    check_col(j, xs)?;
    let rhs = (0..xs.rows()).map(|i| xs[(i, j)]).collect();
    LpProblem::new(vec![0.0; ys.cols()], ys.clone(), rhs, vec![])
}

/// Row `j` of the layer-1 LP: `h_j(i) − a_j·x(i) ≥ 0`, zero objective.
pub fn layer1_row_lp(xs: &Mat, hs: &Mat, j: usize) -> Result<LpProblem> {
    check_rows(xs, hs, "hidden samples")?;
    check_col(j, hs)?;
    let rhs = (0..xs.rows()).map(|i| -hs[(i, j)]).collect();
    LpProblem::new(vec![0.0; xs.cols()], xs.scale(-1.0), rhs, vec![])
}

/// Full layer-2 LP: `C y(i) − x(i) ≥ 0` for all samples, `N = d·m`.
pub fn layer2_lp(xs: &Mat, ys: &Mat) -> Result<LpProblem> {
    check_rows(xs, ys, "outputs")?;
    let (n, d, m) = (xs.rows(), xs.cols(), ys.cols());
    let mut lhs = Mat::zeros(n * d, d * m);
    let mut rhs = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            lhs.row_mut(i * d + j)[j * m..(j + 1) * m].copy_from_slice(ys.row(i));
            rhs[i * d + j] = xs[(i, j)];
        }
    }
    LpProblem::new(vec![0.0; d * m], lhs, rhs, vec![])
}

/// Full layer-1 LP: `h(i) − A x(i) ≥ 0` for all samples, `N = d·d`.
pub fn layer1_lp(xs: &Mat, hs: &Mat) -> Result<LpProblem> {
    check_rows(xs, hs, "hidden samples")?;
    let (n, d) = (xs.rows(), xs.cols());
    let mut lhs = Mat::zeros(n * d, d * d);
    let mut rhs = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            for (k, &v) in xs.row(i).iter().enumerate() {
                lhs[(i * d + j, j * d + k)] = -v;
            }
            rhs[i * d + j] = -hs[(i, j)];
        }
    }
    LpProblem::new(vec![0.0; d * d], lhs, rhs, vec![])
}

/// Slack LP: `min (1/n) Σ_i 1ᵀζ(i)` s.t. `C y(i) − x(i) ≥ −ζ(i)`, `ζ(i) ≥ 0`.
/// Layout: `C` flattened row-major (`d·m`), then `ζ(1), ..., ζ(n)` (`n·d`).
pub fn build_slack_lp(xs: &Mat, ys: &Mat, d: usize, m: usize) -> Result<LpProblem> {
    check_rows(xs, ys, "outputs")?;
    if xs.cols() != d || ys.cols() != m {
        return Err(Error::DimensionMismatch(format!(
            "samples are {}-dim in, {}-dim out; expected d = {d}, m = {m}",
            xs.cols(),
            ys.cols()
        )));
    }
    let n = xs.rows();
    let nc = d * m;
    let nv = nc + n * d;
    let mut lhs = Mat::zeros(n * d, nv);
    let mut rhs = vec![0.0; n * d];
    let mut obj = vec![0.0; nv];
    for i in 0..n {
        for j in 0..d {
            let r = i * d + j;
            lhs.row_mut(r)[j * m..(j + 1) * m].copy_from_slice(ys.row(i));
            lhs[(r, nc + i * d + j)] = 1.0;
            rhs[r] = xs[(i, j)];
            obj[nc + i * d + j] = 1.0 / n as f64;
        }
    }
    LpProblem::new(obj, lhs, rhs, (nc..nv).collect())
}

fn row_slack(feat: &Mat, rhs: Vec<f64>) -> Result<LpProblem> {
    let (n, p) = feat.shape();
    let mut lhs = Mat::zeros(n, p + n);
    for i in 0..n {
        lhs.row_mut(i)[..p].copy_from_slice(feat.row(i));
        lhs[(i, p + i)] = 1.0;
    }
    let mut obj = vec![0.0; p + n];
    obj[p..].iter_mut().for_each(|o| *o = 1.0 / n as f64);
    LpProblem::new(obj, lhs, rhs, (p..p + n).collect())
}

/// Row `j` of the layer-2 slack LP: `c_j·y(i) + ζ(i) ≥ x_j(i)`.
pub fn layer2_row_slack_lp(xs: &Mat, ys: &Mat, j: usize) -> Result<LpProblem> {
    check_rows(xs, ys, "outputs")?;
    check_col(j, xs)?;
    row_slack(ys, (0..xs.rows()).map(|i| xs[(i, j)]).collect())
}

/// Row `j` of the layer-1 slack LP: `h_j(i) − a_j·x(i) + ζ(i) ≥ 0`.
pub fn layer1_row_slack_lp(xs: &Mat, hs: &Mat, j: usize) -> Result<LpProblem> {
    check_rows(xs, hs, "hidden samples")?;
    check_col(j, hs)?;
    row_slack(
        &xs.scale(-1.0),
        (0..xs.rows()).map(|i| -hs[(i, j)]).collect(),
    )
}
