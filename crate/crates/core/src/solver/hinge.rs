//! Row QPs of the form `min (1/2n) Σ_i (s_i + f_i·w − t_i)²` over `(w, s ≥ 0)`.
//!
//! Minimizing out `s` gives `s_i = max(0, t_i − f_i·w)` and the reduced
//! objective `(1/2n) Σ_i max(0, f_i·w − t_i)²`, a convex piecewise quadratic in
//! `w` alone. Semismooth Newton on it terminates once the active set settles.

use serde::{Deserialize, Serialize};

use super::build::row_qp;
use super::{solve_qp, SolveReport, SolveStatus, SolverConfig};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, cholesky_solve, dot, norm_inf, Mat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpBackend {
    /// Newton on the reduced objective.
    #[default]
    Reduced,
    /// ADMM on the full `(w, s)` problem.
    Admm,
}

const NEWTON_ITERS: usize = 500;

fn reduced(feat: &Mat, target: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let n = feat.rows() as f64;
    let mut r = vec![0.0; feat.rows()];
    let mut f = 0.0;
    for (i, ri) in r.iter_mut().enumerate() {
        *ri = (dot(feat.row(i), w) - target[i]).max(0.0);
        f += *ri * *ri;
    }
    (f / (2.0 * n), r)
}

/// Semismooth Newton with Armijo backtracking on the reduced objective.
pub fn solve_row_qp_reduced(feat: &Mat, target: &[f64], cfg: &SolverConfig) -> Result<SolveReport> {
    let (n, p) = feat.shape();
    if target.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} feature rows, {} targets",
            target.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let inv = 1.0 / n as f64;
    let scale = 1.0 + feat.max_abs() * (1.0 + norm_inf(target));
    let gtol = 1e-13 * scale;
    let mut w = vec![0.0; p];
    let (mut f, mut r) = reduced(feat, target, &w);
    let mut iters = 0;
    let mut status = SolveStatus::IterationLimit;
    let mut g = vec![0.0; p];
    // Once stationary, keep stepping while residuals remain and the objective still drops: near-cancelling
    // active rows can make the gradient tiny long before a zero optimum is actually reached.
    let rtol = 1e-13 * scale;
    let mut stationary = false;
    while iters < NEWTON_ITERS {
        iters += 1;
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut h = Mat::zeros(p, p);
        for i in (0..n).filter(|&i| r[i] > 0.0) {
            let fi = feat.row(i);
            for a in 0..p {
                g[a] += inv * r[i] * fi[a];
                for b in 0..=a {
                    h[(a, b)] += inv * fi[a] * fi[b];
                }
            }
        }
        if norm_inf(&g) <= gtol {
            status = SolveStatus::Optimal;
            if stationary || r.iter().all(|&ri| ri <= rtol) {
                break;
            }
            stationary = true;
        }
        let trace: f64 = (0..p).map(|a| h[(a, a)]).sum();
        let reg = 1e-12 * (trace / p as f64).max(f64::MIN_POSITIVE);
        for a in 0..p {
            h[(a, a)] += reg;
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        let chol = cholesky(&h).map_err(|_| Error::SolverFailed {
            status: SolveStatus::NumericalTrouble,
            context: "reduced row QP: Newton system not positive definite".into(),
        })?;
        let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
        cholesky_solve(&chol, &mut step);
        let slope = dot(&g, &step);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
            let (fc, rc) = reduced(feat, target, &cand);
            if fc <= f + 1e-4 * alpha * slope {
                moved = if stationary {
                    fc < 0.5 * f
                } else {
                    fc < f || alpha == 1.0
                };
                w = cand;
                f = fc;
                r = rc;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            // No further decrease in floating point; accept when nearly stationary.
            if stationary || norm_inf(&g) <= cfg.stat_tol * scale {
                status = SolveStatus::Optimal;
            } else {
                status = SolveStatus::NumericalTrouble;
            }
            break;
        }
    }
    let mut point = w.clone();
    point.extend((0..n).map(|i| (target[i] - dot(feat.row(i), &w)).max(0.0)));
    let mut dual = vec![0.0; p];
    dual.extend(r.iter().map(|ri| inv * ri));
    Ok(SolveReport {
        point: Mat::col_vec(point),
        objective_value: f,
        max_infeasibility: 0.0,
        iterations: iters,
        status,
        dual: Some(Mat::col_vec(dual)),
        farkas: None,
        kkt_residual: norm_inf(&g),
        gap: 0.0,
        note: (status != SolveStatus::Optimal)
            .then(|| "reduced Newton did not reach stationarity".to_string()),
    })
}

/// Solves the row QP with the chosen backend. The point is laid out `[w, s]`.
pub fn solve_row_qp(
    feat: &Mat,
    target: &[f64],
    backend: QpBackend,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    match backend {
        QpBackend::Reduced => solve_row_qp_reduced(feat, target, cfg),
        QpBackend::Admm => solve_qp(&row_qp(feat, target, "w", "s"), cfg),
    }
}
