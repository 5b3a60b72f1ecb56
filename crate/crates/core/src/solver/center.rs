use super::simplex::solve_lp_simplex;
use super::{LpProblem, SolveReport, SolveStatus, SolverConfig};
use crate::error::Result;
use crate::numerics::{cholesky, cholesky_solve, dot, norm2, Mat};

/// Margin below which the feasible set is treated as having no interior.
const INTERIOR_TOL: f64 = 1e-9;

/// Analytic center of `{v : Gv ≥ r, v_k ≥ 0}`, ignoring the objective.
///
/// Starts from the point maximizing the smallest normalized slack. When that
/// margin is zero the set has no interior and the LP point is returned.
pub fn analytic_center(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    p.validate()?;
    let n = p.num_vars();

    // Rows of the barrier: constraints plus explicit nonnegativity.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..p.num_constraints() {
        rows.push((p.ineq_lhs.row(i).to_vec(), p.ineq_rhs[(i, 0)]));
    }
    for &k in &p.nonneg_vars {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        rows.push((e, 0.0));
    }
    let mut kept: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for (g, r) in rows {
        let norm = norm2(&g);
        if norm == 0.0 {
            if r > cfg.feas_tol {
                let mut rep = solve_lp_simplex(&p.with_zero_objective(), cfg)?;
                rep.note = Some("zero row with positive right-hand side".into());
                return Ok(rep);
            }
            continue;
        }
        kept.push((g, r, norm));
    }

    // max t  s.t.  g·v − ‖g‖ t ≥ r,  t ≤ 1, over (v, t) free.
    let m = kept.len();
    let mut lhs = Mat::zeros(m + 1, n + 1);
    let mut rhs = vec![0.0; m + 1];
    for (i, (g, r, norm)) in kept.iter().enumerate() {
        lhs.row_mut(i)[..n].copy_from_slice(g);
        lhs[(i, n)] = -norm;
        rhs[i] = *r;
    }
    lhs[(m, n)] = -1.0;
    rhs[m] = -1.0;
    let mut obj = vec![0.0; n + 1];
    obj[n] = -1.0;
    let cheb = LpProblem::new(obj, lhs, rhs, vec![])?;
    let crep = solve_lp_simplex(&cheb, cfg)?;
    let pivots = crep.iterations;
    match crep.status {
        SolveStatus::Optimal => {}
        SolveStatus::Unbounded => unreachable!("t is capped at 1"),
        _ => {
            // Infeasible (t < 0 would be needed) or solver trouble: report the plain LP result.
            let mut rep = solve_lp_simplex(&p.with_zero_objective(), cfg)?;
            rep.iterations += pivots;
            return Ok(rep);
        }
    }
    let t = crep.point[(n, 0)];
    let mut v: Vec<f64> = crep.point.data()[..n].to_vec();
    if t < -cfg.feas_tol {
        let mut rep = solve_lp_simplex(&p.with_zero_objective(), cfg)?;
        rep.iterations += pivots;
        return Ok(rep);
    }
    let rscale = kept.iter().fold(1.0f64, |acc, (_, r, _)| acc.max(r.abs()));
    if t <= INTERIOR_TOL * rscale {
        return Ok(report(
            p,
            v,
            pivots,
            Some("feasible set has no interior; returning max-margin point".into()),
        ));
    }

    // Damped Newton on −Σ log(g·v − r).
    let slack = |v: &[f64]| -> Vec<f64> { kept.iter().map(|(g, r, _)| dot(g, v) - r).collect() };
    let phi = |s: &[f64]| -> f64 { s.iter().map(|x| -x.ln()).sum() };
    let mut iters = 0;
    let mut s = slack(&v);
    let mut note = None;
    for _ in 0..200 {
        iters += 1;
        let mut grad = vec![0.0; n];
        let mut hess = Mat::zeros(n, n);
        for ((g, _, _), &si) in kept.iter().zip(&s) {
            let w = 1.0 / si;
            for a in 0..n {
                grad[a] -= g[a] * w;
                let ga = g[a] * w * w;
                if ga == 0.0 {
                    continue;
                }
                for b in 0..=a {
                    hess[(a, b)] += ga * g[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let chol = match cholesky(&hess) {
            Ok(c) => c,
            Err(_) => {
                note = Some("barrier Hessian is singular; set is unbounded".to_string());
                break;
            }
        };
        let mut step: Vec<f64> = grad.iter().map(|g| -g).collect();
        cholesky_solve(&chol, &mut step);
        let dec = -dot(&grad, &step);
        if dec / 2.0 <= 1e-14 {
            break;
        }
        let f0 = phi(&s);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = v.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
            let sc = slack(&cand);
            if sc.iter().all(|&x| x > 0.0) && phi(&sc) <= f0 - 0.25 * alpha * dec {
                v = cand;
                s = sc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if norm2(&v) > 1e12 {
            note = Some("iterates diverge; set is unbounded".to_string());
            break;
        }
    }
    let mut rep = report(p, v, pivots + iters, note.clone());
    if note.is_some() {
        rep.status = SolveStatus::Unbounded;
    }
    Ok(rep)
}

fn report(p: &LpProblem, v: Vec<f64>, iterations: usize, note: Option<String>) -> SolveReport {
    let infeas = p.max_violation(&v);
    SolveReport {
        objective_value: dot(p.objective.data(), &v),
        point: Mat::col_vec(v),
        max_infeasibility: infeas,
        iterations,
        status: SolveStatus::Optimal,
        dual: None,
        farkas: None,
        kkt_residual: 0.0,
        gap: 0.0,
        note,
    }
}
