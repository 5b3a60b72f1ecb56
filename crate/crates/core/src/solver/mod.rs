//! Dense convex program engines.
//!
//! * `solve_qp`: ADMM with over-relaxation and adaptive step, followed by an
//!   active-set KKT polish.
//! * `solve_lp`: two-phase bounded simplex run on the dual standard form. Dantzig
//!   pricing with lowest-index ties, switching to Bland's rule after a run of
//!   degenerate pivots. Infeasible problems come back with a Farkas ray.
//! * `solve_row_qp`: the per-row layer QPs, by default through Newton on the
//!   objective with the slack minimized out.
//! * `analytic_center`: barrier Newton from a Chebyshev-style interior point.

mod build;
mod center;
mod hinge;
mod qp;
mod simplex;

pub use build::{
    build_slack_lp, layer1_lp, layer1_qp, layer1_row_hinge, layer1_row_lp, layer1_row_qp,
    layer1_row_slack_lp, layer2_lp, layer2_qp, layer2_row_hinge, layer2_row_lp, layer2_row_qp,
    layer2_row_slack_lp,
};
pub use center::analytic_center;
pub use hinge::{solve_row_qp, solve_row_qp_reduced, QpBackend};
pub use qp::solve_qp;
pub use simplex::solve_lp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalTrouble,
}

/// Which point a zero-objective LP returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroObjectivePoint {
    /// Terminal simplex vertex.
    #[default]
    Vertex,
    /// Analytic center of the feasible set (vertex if it has no interior).
    AnalyticCenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub stat_tol: f64,
    /// ADMM iteration cap.
    pub max_iter: usize,
    /// Simplex pivot cap per phase.
    pub max_pivots: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub polish: bool,
    pub zero_objective_point: ZeroObjectivePoint,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            stat_tol: 1e-6,
            max_iter: 20_000,
            max_pivots: 200_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
            zero_objective_point: ZeroObjectivePoint::Vertex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// `min ½ vᵀ H v + linearᵀ v + constant` subject to `v_i ≥ 0` for `i` in `bounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub hessian: Mat,
    pub linear: Mat,
    pub constant: f64,
    pub bounds: Vec<usize>,
    /// Named variable blocks. When present, the first block is the dense
    /// matrix-variable block and the solver exploits a diagonal Hessian on the rest.
    pub var_layout: Vec<VarBlock>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.hessian.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hessian.rows();
        if !self.hessian.is_square() || self.linear.shape() != (n, 1) {
            return Err(Error::DimensionMismatch(format!(
                "hessian {}x{}, linear {}x{}",
                self.hessian.rows(),
                self.hessian.cols(),
                self.linear.rows(),
                self.linear.cols()
            )));
        }
        if let Some(&b) = self.bounds.iter().find(|&&b| b >= n) {
            return Err(Error::DimensionMismatch(format!("bound index {b} >= {n}")));
        }
        if !self.hessian.is_finite() || !self.linear.is_finite() {
            return Err(Error::InvalidParameter("non-finite QP data".into()));
        }
        let asym = self.hessian.asymmetry();
        if asym > 1e-8 * self.hessian.max_abs().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(())
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let hv = self.hessian.mul_vec(v).expect("validated shape");
        0.5 * dot(v, &hv) + dot(self.linear.data(), v) + self.constant
    }

    /// Index where the dense block ends; the whole problem if no layout is given.
    pub(crate) fn dense_head(&self) -> usize {
        match self.var_layout.first() {
            Some(b) if self.var_layout.len() > 1 && b.start == 0 => b.len,
            _ => self.num_vars(),
        }
    }
}

/// `min objectiveᵀ v` subject to `ineq_lhs · v ≥ ineq_rhs` and `v_i ≥ 0` for `i` in `nonneg_vars`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Mat,
    pub ineq_lhs: Mat,
    pub ineq_rhs: Mat,
    pub nonneg_vars: Vec<usize>,
}

impl LpProblem {
    pub fn new(
        objective: Vec<f64>,
        ineq_lhs: Mat,
        ineq_rhs: Vec<f64>,
        nonneg_vars: Vec<usize>,
    ) -> Result<LpProblem> {
        let p = LpProblem {
            objective: Mat::col_vec(objective),
            ineq_lhs,
            ineq_rhs: Mat::col_vec(ineq_rhs),
            nonneg_vars,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.ineq_lhs.cols()
    }

    pub fn num_constraints(&self) -> usize {
        self.ineq_lhs.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.ineq_lhs.shape();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "LP needs at least one constraint".into(),
            ));
        }
        if self.objective.shape() != (n, 1) || self.ineq_rhs.shape() != (m, 1) {
            return Err(Error::DimensionMismatch(format!(
                "lhs {m}x{n}, objective {}x{}, rhs {}x{}",
                self.objective.rows(),
                self.objective.cols(),
                self.ineq_rhs.rows(),
                self.ineq_rhs.cols()
            )));
        }
        if let Some(&k) = self.nonneg_vars.iter().find(|&&k| k >= n) {
            return Err(Error::DimensionMismatch(format!("nonneg index {k} >= {n}")));
        }
        if !self.ineq_lhs.is_finite() || !self.ineq_rhs.is_finite() || !self.objective.is_finite() {
            return Err(Error::InvalidParameter("non-finite LP data".into()));
        }
        Ok(())
    }

    /// Largest violation of the constraints at `v` (0 when feasible).
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.num_constraints() {
            let s = dot(self.ineq_lhs.row(i), v) - self.ineq_rhs[(i, 0)];
            worst = worst.max(-s);
        }
        for &k in &self.nonneg_vars {
            worst = worst.max(-v[k]);
        }
        worst
    }

    pub fn with_zero_objective(&self) -> LpProblem {
        LpProblem {
            objective: Mat::zeros(self.num_vars(), 1),
            ..self.clone()
        }
    }

    pub fn with_objective(&self, objective: Vec<f64>) -> LpProblem {
        LpProblem {
            objective: Mat::col_vec(objective),
            ..self.clone()
        }
    }

    /// Checks `y ≥ 0`, `yᵀG` zero on free and `≤ 0` on nonneg variables, `yᵀr > 0`.
    pub fn is_farkas_certificate(&self, y: &[f64], tol: f64) -> bool {
        if y.len() != self.num_constraints() || y.iter().any(|&v| v < -tol) {
            return false;
        }
        let scale = y
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let gy = self.ineq_lhs.tmul_vec(y).expect("shape");
        let mut nn = vec![false; self.num_vars()];
        self.nonneg_vars.iter().for_each(|&k| nn[k] = true);
        let ok_cols = gy.iter().zip(&nn).all(|(&g, &is_nn)| {
            if is_nn {
                g <= tol * scale
            } else {
                g.abs() <= tol * scale
            }
        });
        ok_cols && dot(y, self.ineq_rhs.data()) > tol * scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub point: Mat,
    pub objective_value: f64,
    pub max_infeasibility: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Bound multipliers (QP, one per variable) or constraint multipliers (LP).
    pub dual: Option<Mat>,
    /// Farkas ray over the LP constraints when infeasible.
    pub farkas: Option<Mat>,
    /// QP stationarity residual `‖Hv + q − μ‖∞`.
    pub kkt_residual: f64,
    /// Duality-gap estimate.
    pub gap: f64,
    pub note: Option<String>,
}

impl SolveReport {
    pub(crate) fn failed(
        n: usize,
        status: SolveStatus,
        iterations: usize,
        note: impl Into<String>,
    ) -> SolveReport {
        SolveReport {
            point: Mat::zeros(n, 1),
            objective_value: f64::NAN,
            max_infeasibility: f64::INFINITY,
            iterations,
            status,
            dual: None,
            farkas: None,
            kkt_residual: f64::NAN,
            gap: f64::NAN,
            note: Some(note.into()),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Turns a non-optimal report into `SolverFailed`.
    pub fn require_optimal(self, context: &str) -> Result<SolveReport> {
        if self.is_optimal() {
            Ok(self)
        } else {
            let note = self.note.as_deref().unwrap_or("");
            Err(Error::SolverFailed {
                status: self.status,
                context: format!("{context} {note}").trim().to_string(),
            })
        }
    }
}
