//! Bounded two-phase tableau simplex.
//!
//! `solve_lp` hands the simplex the dual of `min cᵀv, Gv ≥ r`:
//! `max rᵀλ, Gᵀλ = c, λ ≥ 0`, which has one row per primal variable. Layer
//! problems have few variables and many constraints, so this keeps the tableau
//! small. Nonnegative primal variables that appear in a single constraint (slack
//! columns) become upper bounds on that constraint's multiplier instead of rows.
//! The primal point is recovered from the simplex multipliers of the final basis,
//! and an unbounded dual ray is a Farkas certificate for the primal.

use super::{LpProblem, SolveReport, SolveStatus, SolverConfig, ZeroObjectivePoint};
use crate::error::Result;
use crate::numerics::{dot, Lu, Mat};

const PIV_TOL: f64 = 1e-9;

/// `min costᵀx` s.t. `A x = b`, `0 ≤ x ≤ upper`.
struct StdLp<'a> {
    a: &'a Mat,
    b: &'a [f64],
    cost: &'a [f64],
    upper: &'a [f64],
}

enum StdOutcome {
    Optimal {
        x: Vec<f64>,
        /// Basic column per row; `None` for a redundant row kept by its artificial.
        basis: Vec<Option<usize>>,
    },
    Infeasible,
    Unbounded {
        ray: Vec<f64>,
    },
    PivotLimit,
}

struct Tableau {
    rows: usize,
    /// Structural columns followed by one artificial per row.
    width: usize,
    nstruct: usize,
    t: Vec<f64>,
    xb: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    enterable: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn new(lp: &StdLp) -> Tableau {
        let (rows, nstruct) = lp.a.shape();
        let width = nstruct + rows;
        let mut t = vec![0.0; rows * width];
        let mut xb = vec![0.0; rows];
        for i in 0..rows {
            let s = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
            let row = &mut t[i * width..(i + 1) * width];
            for (j, &v) in lp.a.row(i).iter().enumerate() {
                row[j] = s * v;
            }
            row[nstruct + i] = 1.0;
            xb[i] = s * lp.b[i];
        }
        let mut upper = lp.upper.to_vec();
        upper.extend(std::iter::repeat(f64::INFINITY).take(rows));
        let mut is_basic = vec![false; width];
        for i in 0..rows {
            is_basic[nstruct + i] = true;
        }
        Tableau {
            rows,
            width,
            nstruct,
            t,
            xb,
            basis: (nstruct..width).collect(),
            is_basic,
            at_upper: vec![false; width],
            upper,
            cost: vec![0.0; width],
            d: vec![0.0; width],
            enterable: vec![true; width],
            pivots: 0,
        }
    }

    fn set_costs(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        for j in 0..self.width {
            let mut s = self.cost[j];
            for i in 0..self.rows {
                s -= self.cost[self.basis[i]] * self.t[i * self.width + j];
            }
            self.d[j] = s;
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn objective(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            s += self.cost[self.basis[i]] * self.xb[i];
        }
        for j in 0..self.width {
            if !self.is_basic[j] && self.at_upper[j] {
                s += self.cost[j] * self.upper[j];
            }
        }
        s
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let piv = self.t[r * w + e];
        {
            let row = &mut self.t[r * w..(r + 1) * w];
            row.iter_mut().for_each(|v| *v /= piv);
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + e];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for (v, &p) in row.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            row[e] = 0.0;
        }
        let f = self.d[e];
        if f != 0.0 {
            for (v, &p) in self.d.iter_mut().zip(&prow) {
                *v -= f * p;
            }
        }
        self.d[e] = 0.0;
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[e] = true;
        self.basis[r] = e;
        self.pivots += 1;
    }

    /// Runs the simplex loop on the current costs.
    fn iterate(&mut self, max_pivots: usize) -> IterEnd {
        let opt_tol = 1e-9 * self.cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let mut bland = false;
        let mut degenerate_run = 0usize;
        let start = self.pivots;
        loop {
            if self.pivots - start >= max_pivots {
                return IterEnd::Limit;
            }
            // Pricing.
            let mut enter = None;
            let mut best = 0.0;
            for j in 0..self.width {
                if self.is_basic[j] || !self.enterable[j] {
                    continue;
                }
                let score = if self.at_upper[j] {
                    self.d[j]
                } else {
                    -self.d[j]
                };
                if score > opt_tol {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if score > best {
                        best = score;
                        enter = Some(j);
                    }
                }
            }
            let Some(e) = enter else {
                return IterEnd::Optimal;
            };
            let dir = if self.at_upper[e] { -1.0 } else { 1.0 };

            // Ratio test over basic variables and the entering variable's own bound.
            let mut theta = self.upper[e];
            let mut leave: Option<(usize, bool)> = None;
            let w = self.width;
            for i in 0..self.rows {
                let a = self.t[i * w + e];
                if a.abs() <= PIV_TOL {
                    continue;
                }
                let rate = -dir * a;
                let bvar = self.basis[i];
                let (lim, to_upper) = if rate < 0.0 {
                    (self.xb[i].max(0.0) / -rate, false)
                } else {
                    let u = self.upper[bvar];
                    if u.is_infinite() {
                        continue;
                    }
                    ((u - self.xb[i]).max(0.0) / rate, true)
                };
                let better = match leave {
                    None => lim < theta - 1e-12,
                    Some((r, _)) => {
                        lim < theta - 1e-12
                            || (lim <= theta + 1e-12
                                && if bland {
                                    bvar < self.basis[r]
                                } else {
                                    a.abs() > self.t[r * w + e].abs()
                                })
                    }
                };
                if better {
                    theta = theta.min(lim);
                    leave = Some((i, to_upper));
                }
            }
            if theta.is_infinite() && leave.is_none() {
                let mut ray = vec![0.0; self.width];
                ray[e] = 1.0;
                for i in 0..self.rows {
                    ray[self.basis[i]] = -self.t[i * w + e];
                }
                return IterEnd::Unbounded(ray);
            }

            if theta <= 1e-14 {
                degenerate_run += 1;
                if degenerate_run > self.rows + 50 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }

            let delta = dir * theta;
            for i in 0..self.rows {
                let a = self.t[i * w + e];
                if a != 0.0 {
                    self.xb[i] -= delta * a;
                }
            }
            match leave {
                Some((r, to_upper)) => {
                    let entering_value = self.value_of(e) + delta;
                    let leaving = self.basis[r];
                    self.pivot(r, e);
                    self.xb[r] = entering_value;
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[e] = false;
                }
                _ => {
                    // Bound flip: the entering variable reaches its other bound first.
                    self.at_upper[e] = !self.at_upper[e];
                    self.pivots += 1;
                }
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.width).map(|j| self.value_of(j)).collect();
        for i in 0..self.rows {
            x[self.basis[i]] = self.xb[i];
        }
        x
    }
}

enum IterEnd {
    Optimal,
    Unbounded(Vec<f64>),
    Limit,
}

fn solve_std(lp: &StdLp, max_pivots: usize) -> (StdOutcome, usize) {
    let mut tab = Tableau::new(lp);
    let (rows, ns, w) = (tab.rows, tab.nstruct, tab.width);

    // Phase 1: minimize the artificial sum.
    let mut c1 = vec![0.0; w];
    c1[ns..].iter_mut().for_each(|c| *c = 1.0);
    tab.set_costs(c1);
    match tab.iterate(max_pivots) {
        IterEnd::Limit => return (StdOutcome::PivotLimit, tab.pivots),
        IterEnd::Unbounded(_) => return (StdOutcome::Infeasible, tab.pivots),
        IterEnd::Optimal => {}
    }
    let bscale = lp.b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if tab.objective() > 1e-9 * bscale {
        return (StdOutcome::Infeasible, tab.pivots);
    }

    // Drive remaining artificials out of the basis where possible.
    for r in 0..rows {
        if tab.basis[r] < ns {
            continue;
        }
        let mut best = None;
        let mut bestv = PIV_TOL;
        for j in 0..ns {
            let v = tab.t[r * w + j].abs();
            if !tab.is_basic[j] && v > bestv {
                bestv = v;
                best = Some(j);
            }
        }
        if let Some(j) = best {
            let val = tab.value_of(j);
            let art = tab.basis[r];
            tab.pivot(r, j);
            tab.xb[r] = val;
            tab.at_upper[art] = false;
        }
    }
    // Recompute basic values from scratch after the clean-up pivots.
    recompute_xb(&mut tab, lp);

    for j in ns..w {
        tab.upper[j] = 0.0;
        tab.enterable[j] = false;
    }
    let mut c2 = lp.cost.to_vec();
    c2.extend(std::iter::repeat(0.0).take(rows));
    tab.set_costs(c2);
    match tab.iterate(max_pivots) {
        IterEnd::Limit => (StdOutcome::PivotLimit, tab.pivots),
        IterEnd::Unbounded(ray) => (
            StdOutcome::Unbounded {
                ray: ray[..ns].to_vec(),
            },
            tab.pivots,
        ),
        IterEnd::Optimal => {
            let x = tab.values()[..ns].to_vec();
            let basis = tab
                .basis
                .iter()
                .map(|&j| if j < ns { Some(j) } else { None })
                .collect();
            (StdOutcome::Optimal { x, basis }, tab.pivots)
        }
    }
}

/// `x_B = B⁻¹ (b − N x_N)` evaluated through the tableau's `B⁻¹` columns.
fn recompute_xb(tab: &mut Tableau, lp: &StdLp) {
    let (rows, ns, w) = (tab.rows, tab.nstruct, tab.width);
    let mut rhs: Vec<f64> = (0..rows)
        .map(|i| if lp.b[i] < 0.0 { -lp.b[i] } else { lp.b[i] })
        .collect();
    for j in 0..ns {
        if !tab.is_basic[j] && tab.at_upper[j] {
            let u = tab.upper[j];
            for (i, r) in rhs.iter_mut().enumerate() {
                let s = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
                *r -= s * lp.a[(i, j)] * u;
            }
        }
    }
    // The artificial block of the tableau holds B⁻¹ for the sign-flipped system.
    for i in 0..rows {
        let binv_row = &tab.t[i * w + ns..(i + 1) * w];
        tab.xb[i] = dot(binv_row, &rhs);
    }
}

/// Solves the LP with the two-phase simplex on its dual.
pub fn solve_lp(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    p.validate()?;
    let all_zero = p.objective.data().iter().all(|&c| c == 0.0);
    if all_zero && cfg.zero_objective_point == ZeroObjectivePoint::AnalyticCenter {
        return super::center::analytic_center(p, cfg);
    }
    solve_lp_simplex(p, cfg)
}

pub(crate) fn solve_lp_simplex(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    let (m, n) = (p.num_constraints(), p.num_vars());
    let g = &p.ineq_lhs;
    let r = p.ineq_rhs.data();
    let c = p.objective.data();
    let mut is_nn = vec![false; n];
    p.nonneg_vars.iter().for_each(|&k| is_nn[k] = true);

    // Classify variables: a nonnegative variable with a single positive entry
    // and nonnegative cost folds into an upper bound on that row's multiplier.
    let mut singleton_row: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        if !is_nn[k] || c[k] < 0.0 {
            continue;
        }
        let mut hit = None;
        let mut count = 0;
        for i in 0..m {
            if g[(i, k)] != 0.0 {
                count += 1;
                hit = Some(i);
            }
        }
        if count == 1 {
            let i = hit.expect("count is 1");
            if g[(i, k)] > 0.0 {
                singleton_row[k] = Some(i);
            }
        }
    }
    let eq_vars: Vec<usize> = (0..n).filter(|&k| singleton_row[k].is_none()).collect();
    let extra_nn: Vec<usize> = eq_vars.iter().copied().filter(|&k| is_nn[k]).collect();
    let ncols = m + extra_nn.len();
    let mut upper = vec![f64::INFINITY; ncols];
    // Per row, the slack variable that absorbs violations (smallest cost ratio).
    let mut row_slack: Vec<Option<usize>> = vec![None; m];
    for k in 0..n {
        if let Some(i) = singleton_row[k] {
            let u = c[k] / g[(i, k)];
            if u < upper[i] {
                upper[i] = u;
                row_slack[i] = Some(k);
            }
        }
    }

    let neq = eq_vars.len();
    let mut a = Mat::zeros(neq, ncols);
    let mut b = vec![0.0; neq];
    for (row, &k) in eq_vars.iter().enumerate() {
        for i in 0..m {
            a[(row, i)] = g[(i, k)];
        }
        b[row] = c[k];
    }
    for (e, &k) in extra_nn.iter().enumerate() {
        let row = eq_vars
            .iter()
            .position(|&v| v == k)
            .expect("extra var is an eq var");
        a[(row, m + e)] = 1.0;
    }
    // Dual objective max rᵀλ becomes min −rᵀλ.
    let mut cost = vec![0.0; ncols];
    for i in 0..m {
        cost[i] = -r[i];
    }

    let std = StdLp {
        a: &a,
        b: &b,
        cost: &cost,
        upper: &upper,
    };
    let (outcome, pivots) = if neq == 0 {
        trivial_std(&cost, &upper)
    } else {
        solve_std(&std, cfg.max_pivots)
    };

    match outcome {
        StdOutcome::PivotLimit => Ok(SolveReport::failed(
            n,
            SolveStatus::IterationLimit,
            pivots,
            "simplex pivot limit",
        )),
        StdOutcome::Infeasible => {
            // Dual infeasible: the primal is unbounded or infeasible.
            if c.iter().all(|&v| v == 0.0) {
                return Ok(SolveReport::failed(
                    n,
                    SolveStatus::NumericalTrouble,
                    pivots,
                    "zero-cost dual infeasible",
                ));
            }
            let feas = solve_lp_simplex(&p.with_zero_objective(), cfg)?;
            if feas.status == SolveStatus::Optimal {
                let mut rep = SolveReport::failed(
                    n,
                    SolveStatus::Unbounded,
                    pivots + feas.iterations,
                    "objective unbounded below",
                );
                rep.point = feas.point;
                rep.max_infeasibility = feas.max_infeasibility;
                Ok(rep)
            } else {
                Ok(feas)
            }
        }
        StdOutcome::Unbounded { ray } => {
            let y: Vec<f64> = ray[..m].to_vec();
            let mut rep = SolveReport::failed(
                n,
                SolveStatus::Infeasible,
                pivots,
                "constraints are contradictory",
            );
            let scale = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let y: Vec<f64> = y.iter().map(|v| v / scale.max(f64::MIN_POSITIVE)).collect();
            rep.farkas = Some(Mat::col_vec(y));
            Ok(rep)
        }
        StdOutcome::Optimal { x: lam, basis } => {
            // Simplex multipliers π solve Bᵀπ = c_B; the primal point is −π.
            let mut bm = Mat::zeros(neq, neq);
            let mut cb = vec![0.0; neq];
            for (col, bj) in basis.iter().enumerate() {
                match bj {
                    Some(j) => {
                        for row in 0..neq {
                            bm[(row, col)] = a[(row, *j)];
                        }
                        cb[col] = cost[*j];
                    }
                    None => bm[(col, col)] = 1.0,
                }
            }
            let pi = match Lu::new(&bm) {
                Ok(lu) => lu.solve_transpose(&cb),
                Err(_) => {
                    return Ok(SolveReport::failed(
                        n,
                        SolveStatus::NumericalTrouble,
                        pivots,
                        "singular final basis",
                    ))
                }
            };
            let mut v = vec![0.0; n];
            for (row, &k) in eq_vars.iter().enumerate() {
                v[k] = -pi[row];
            }
            // Slack-like variables take exactly the violation of their row.
            for i in 0..m {
                if let Some(k) = row_slack[i] {
                    let mut s = r[i];
                    for j in 0..n {
                        if j != k {
                            s -= g[(i, j)] * v[j];
                        }
                    }
                    v[k] = (s / g[(i, k)]).max(0.0);
                }
            }
            let infeas = p.max_violation(&v);
            let scale = r.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
            let objective_value = dot(c, &v);
            let dual_value: f64 = (0..m).map(|i| r[i] * lam[i]).sum();
            let status = if infeas <= cfg.feas_tol * scale {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalTrouble
            };
            Ok(SolveReport {
                point: Mat::col_vec(v),
                objective_value,
                max_infeasibility: infeas,
                iterations: pivots,
                status,
                dual: Some(Mat::col_vec(lam[..m].to_vec())),
                farkas: None,
                kkt_residual: 0.0,
                gap: (objective_value - dual_value).abs(),
                note: if status == SolveStatus::Optimal {
                    None
                } else {
                    Some(format!(
                        "recovered point violates constraints by {infeas:.3e}"
                    ))
                },
            })
        }
    }
}

/// No equality rows: every multiplier is independent.
fn trivial_std(cost: &[f64], upper: &[f64]) -> (StdOutcome, usize) {
    let mut x = vec![0.0; cost.len()];
    for j in 0..cost.len() {
        if cost[j] < 0.0 {
            if upper[j].is_infinite() {
                let mut ray = vec![0.0; cost.len()];
                ray[j] = 1.0;
                return (StdOutcome::Unbounded { ray }, 0);
            }
            x[j] = upper[j];
        }
    }
    (StdOutcome::Optimal { x, basis: vec![] }, 0)
}
