use super::{QpProblem, SolveReport, SolveStatus, SolverConfig};
use crate::error::Result;
use crate::numerics::{cholesky, cholesky_solve, dot, norm_inf, Mat};

/// Sparse row view of the (scaled) Hessian for cheap products.
struct Csr {
    start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn new(m: &Mat, scale: f64) -> Csr {
        let mut start = vec![0];
        let (mut col, mut val) = (Vec::new(), Vec::new());
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    col.push(j);
                    val.push(v * scale);
                }
            }
            start.push(col.len());
        }
        Csr { start, col, val }
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.start[i]..self.start[i + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            *o = s;
        }
    }
}

/// Factorization of `H[idx, idx] + diag(add[idx])`.
///
/// When every index past `split` only couples to itself within the tail, the
/// tail is eliminated by a Schur complement onto the (small) head block.
enum Kkt {
    Schur {
        nh: usize,
        s_chol: Mat,
        m_ht: Mat,
        tail_diag: Vec<f64>,
    },
    Dense {
        chol: Mat,
    },
}

impl Kkt {
    fn new(
        h: &Mat,
        scale: f64,
        add: &[f64],
        idx: &[usize],
        split: usize,
        tail_diag: bool,
    ) -> Option<Kkt> {
        let head: Vec<usize> = idx.iter().copied().filter(|&i| i < split).collect();
        let tail: Vec<usize> = idx.iter().copied().filter(|&i| i >= split).collect();
        if tail_diag && !tail.is_empty() {
            let nh = head.len();
            let dt: Vec<f64> = tail.iter().map(|&t| h[(t, t)] * scale + add[t]).collect();
            if dt.iter().any(|&v| !(v > 0.0)) {
                return None;
            }
            let m_ht = Mat::from_fn(nh, tail.len(), |a, b| h[(head[a], tail[b])] * scale);
            let mut s = Mat::from_fn(nh, nh, |a, b| h[(head[a], head[b])] * scale);
            for a in 0..nh {
                s[(a, a)] += add[head[a]];
            }
            for a in 0..nh {
                for b in 0..=a {
                    let ra = m_ht.row(a);
                    let rb = m_ht.row(b);
                    let mut acc = 0.0;
                    for t in 0..dt.len() {
                        if ra[t] != 0.0 && rb[t] != 0.0 {
                            acc += ra[t] * rb[t] / dt[t];
                        }
                    }
                    s[(a, b)] -= acc;
                    if a != b {
                        s[(b, a)] -= acc;
                    }
                }
            }
            let s_chol = if nh > 0 {
                cholesky(&s).ok()?
            } else {
                Mat::zeros(0, 0)
            };
            Some(Kkt::Schur {
                nh,
                s_chol,
                m_ht,
                tail_diag: dt,
            })
        } else {
            let mut m = Mat::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])] * scale);
            for (a, &i) in idx.iter().enumerate() {
                m[(a, a)] += add[i];
            }
            Some(Kkt::Dense {
                chol: cholesky(&m).ok()?,
            })
        }
    }

    /// Solves in place; `rhs` is ordered like `idx` (head indices first).
    fn solve(&self, rhs: &mut [f64]) {
        match self {
            Kkt::Dense { chol } => cholesky_solve(chol, rhs),
            Kkt::Schur {
                nh,
                s_chol,
                m_ht,
                tail_diag,
            } => {
                let (rh, rt) = rhs.split_at_mut(*nh);
                let dinv_rt: Vec<f64> = rt.iter().zip(tail_diag).map(|(r, d)| r / d).collect();
                for a in 0..*nh {
                    rh[a] -= dot(m_ht.row(a), &dinv_rt);
                }
                if *nh > 0 {
                    cholesky_solve(s_chol, rh);
                }
                for (t, r) in rt.iter_mut().enumerate() {
                    let mut s = *r;
                    for a in 0..*nh {
                        s -= m_ht[(a, t)] * rh[a];
                    }
                    *r = s / tail_diag[t];
                }
            }
        }
    }
}

fn tail_is_diagonal(h: &Mat, split: usize) -> bool {
    let n = h.rows();
    (split..n).all(|i| (split..n).all(|j| i == j || h[(i, j)] == 0.0))
}

struct Polished {
    x: Vec<f64>,
    mu: Vec<f64>,
}

/// Solves `min ½ vᵀHv + qᵀv + c` with `v_B ≥ 0`.
pub fn solve_qp(p: &QpProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    p.validate()?;
    let n = p.num_vars();
    if n == 0 {
        return Ok(SolveReport {
            point: Mat::zeros(0, 1),
            objective_value: p.constant,
            max_infeasibility: 0.0,
            iterations: 0,
            status: SolveStatus::Optimal,
            dual: Some(Mat::zeros(0, 1)),
            farkas: None,
            kkt_residual: 0.0,
            gap: 0.0,
            note: None,
        });
    }
    let h = &p.hessian;
    let mut bounded = vec![false; n];
    p.bounds.iter().for_each(|&i| bounded[i] = true);

    // Cost scaling so the largest Hessian diagonal is 1; minimizers are unchanged.
    let maxdiag = (0..n).fold(0.0f64, |m, i| m.max(h[(i, i)].abs()));
    let scale = if maxdiag > 0.0 {
        1.0 / maxdiag
    } else {
        1.0 / norm_inf(p.linear.data()).max(1.0)
    };
    let q: Vec<f64> = p.linear.data().iter().map(|v| v * scale).collect();
    let csr = Csr::new(h, scale);
    let split = p.dense_head();
    let tail_diag = split < n && tail_is_diagonal(h, split);
    let all: Vec<usize> = (0..n).collect();

    let sigma = cfg.sigma;
    let alpha = cfg.alpha;
    let mut rho = cfg.rho;
    let add_for = |rho: f64| -> Vec<f64> {
        (0..n)
            .map(|i| sigma + if bounded[i] { rho } else { 0.0 })
            .collect()
    };
    let mut kkt = match Kkt::new(h, scale, &add_for(rho), &all, split, tail_diag) {
        Some(k) => k,
        None => {
            return Ok(SolveReport::failed(
                n,
                SolveStatus::NumericalTrouble,
                0,
                "KKT factorization failed",
            ))
        }
    };

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut px = vec![0.0; n];
    let mut iter = 0;
    let check_every = 10;
    let mut next_polish = 50usize;

    while iter < cfg.max_iter {
        iter += 1;
        for i in 0..n {
            xt[i] = sigma * x[i] - q[i] + if bounded[i] { rho * z[i] - y[i] } else { 0.0 };
        }
        kkt.solve(&mut xt);
        for i in 0..n {
            let xn = alpha * xt[i] + (1.0 - alpha) * x[i];
            if bounded[i] {
                let zr = alpha * xt[i] + (1.0 - alpha) * z[i];
                let zn = (zr + y[i] / rho).max(0.0);
                y[i] += rho * (zr - zn);
                z[i] = zn;
            }
            x[i] = xn;
        }

        if iter % check_every != 0 && iter != cfg.max_iter {
            continue;
        }
        csr.mul(&x, &mut px);
        let mut prim: f64 = 0.0;
        let mut dual: f64 = 0.0;
        for i in 0..n {
            let g = px[i] + q[i] + if bounded[i] { y[i] } else { 0.0 };
            dual = dual.max(g.abs());
            if bounded[i] {
                prim = prim.max((x[i] - z[i]).abs());
            }
        }
        let prim_scale = norm_inf(&x).max(norm_inf(&z)).max(1e-12);
        let dual_scale = norm_inf(&px).max(norm_inf(&q)).max(norm_inf(&y)).max(1e-12);

        if cfg.polish
            && iter >= next_polish
            && prim <= 1e-3 * (1.0 + prim_scale)
            && dual <= 1e-3 * (1.0 + dual_scale)
        {
            next_polish = iter + 100;
            if let Some(pol) = polish(p, &csr, scale, &q, &bounded, split, tail_diag, &z, &y, &x) {
                if let Some(rep) = finish(p, cfg, &pol.x, &pol.mu, iter, true) {
                    return Ok(rep);
                }
            }
        }

        let gap: f64 = (0..n)
            .filter(|&i| bounded[i])
            .map(|i| -y[i] * z[i])
            .sum::<f64>()
            .abs();
        if prim <= cfg.feas_tol
            && dual <= 1e-10 * (1.0 + dual_scale)
            && gap <= cfg.gap_tol * scale.max(1.0)
        {
            let mu: Vec<f64> = (0..n)
                .map(|i| if bounded[i] { -y[i] / scale } else { 0.0 })
                .collect();
            if let Some(rep) = finish(p, cfg, &x, &mu, iter, false) {
                return Ok(rep);
            }
        }

        // Adaptive step: balance relative primal and dual residuals.
        if iter % 100 == 0 {
            let ratio = ((prim / prim_scale) / (dual / dual_scale).max(1e-300)).sqrt();
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                if let Some(k) = Kkt::new(h, scale, &add_for(new_rho), &all, split, tail_diag) {
                    rho = new_rho;
                    kkt = k;
                }
            }
        }
    }

    // Out of iterations: report the last iterate honestly.
    let mu: Vec<f64> = (0..n)
        .map(|i| if bounded[i] { -y[i] / scale } else { 0.0 })
        .collect();
    let mut rep = build_report(p, &x, &mu, iter);
    rep.status = SolveStatus::IterationLimit;
    rep.note = Some(format!("ADMM hit {} iterations", cfg.max_iter));
    Ok(rep)
}

/// Active-set KKT solve seeded from the ADMM iterate.
#[allow(clippy::too_many_arguments)]
fn polish(
    p: &QpProblem,
    csr: &Csr,
    scale: f64,
    q: &[f64],
    bounded: &[bool],
    split: usize,
    tail_diag: bool,
    z: &[f64],
    y: &[f64],
    x0: &[f64],
) -> Option<Polished> {
    let n = bounded.len();
    let active: Vec<bool> = (0..n).map(|i| bounded[i] && z[i] < -y[i]).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let delta = 1e-7;
    let add = vec![delta; n];
    let kkt = Kkt::new(&p.hessian, scale, &add, &free, split, tail_diag)?;

    let mut x: Vec<f64> = (0..n)
        .map(|i| if active[i] { 0.0 } else { x0[i] })
        .collect();
    let mut px = vec![0.0; n];
    let mut r = vec![0.0; free.len()];
    // Iterative refinement on the regularized system converges to a solution of
    // the unregularized one even when H[free, free] is singular.
    for _ in 0..40 {
        csr.mul(&x, &mut px);
        let mut rn: f64 = 0.0;
        for (a, &i) in free.iter().enumerate() {
            r[a] = -q[i] - px[i];
            rn = rn.max(r[a].abs());
        }
        if rn <= 1e-14 * (1.0 + norm_inf(q)) {
            break;
        }
        kkt.solve(&mut r);
        for (a, &i) in free.iter().enumerate() {
            x[i] += r[a];
        }
    }
    csr.mul(&x, &mut px);
    let mu: Vec<f64> = (0..n)
        .map(|i| {
            if active[i] {
                (px[i] + q[i]) / scale
            } else {
                0.0
            }
        })
        .collect();
    Some(Polished { x, mu })
}

fn build_report(p: &QpProblem, x: &[f64], mu: &[f64], iterations: usize) -> SolveReport {
    let n = x.len();
    let hx = p.hessian.mul_vec(x).expect("shape");
    let mut stat: f64 = 0.0;
    for i in 0..n {
        stat = stat.max((hx[i] + p.linear[(i, 0)] - mu[i]).abs());
    }
    let infeas = p.bounds.iter().fold(0.0f64, |m, &i| m.max(-x[i]));
    let gap = p.bounds.iter().map(|&i| mu[i] * x[i]).sum::<f64>().abs();
    SolveReport {
        point: Mat::col_vec(x.to_vec()),
        objective_value: p.objective(x),
        max_infeasibility: infeas,
        iterations,
        status: SolveStatus::Optimal,
        dual: Some(Mat::col_vec(mu.to_vec())),
        farkas: None,
        kkt_residual: stat,
        gap,
        note: None,
    }
}

/// Accepts a candidate only if it passes the optimality checks.
fn finish(
    p: &QpProblem,
    cfg: &SolverConfig,
    x: &[f64],
    mu: &[f64],
    iterations: usize,
    polished: bool,
) -> Option<SolveReport> {
    let mut rep = build_report(p, x, mu, iterations);
    let dual_ok = p.bounds.iter().all(|&i| mu[i] >= -cfg.stat_tol);
    let ok = rep.max_infeasibility <= cfg.feas_tol
        && rep.kkt_residual <= cfg.stat_tol
        && rep.gap <= cfg.gap_tol
        && dual_ok
        && rep.objective_value.is_finite();
    if !ok {
        return None;
    }
    if polished {
        rep.note = Some("polished".into());
    }
    Some(rep)
}
