//! Layer-2 learning: recover `C ≈ B⁺` from the feasibility structure
//! `C y − x = (A x)^+ ≥ 0`, then `B̂` either as `Ĉ⁻¹` or, in general, by
//! estimating per-row scale factors and regressing `y` on the corrected
//! hidden-plus-skip signal.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SampleSet;
use crate::numerics::{condition_number, dot, invert, lls_solve, variance, Mat};
use crate::solver::{
    analytic_center, layer2_row_hinge, layer2_row_lp, layer2_row_slack_lp, solve_lp, solve_row_qp,
    LpProblem, QpBackend, SolveReport, SolveStatus, SolverConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerMethod {
    Qp,
    Lp,
    SlackLp,
}

/// Which member of a flat optimal set (the hard-feasible region when the
/// optimum is zero) the learners return.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSelection {
    /// Vertex maximizing the total estimated hidden activation.
    #[default]
    Extreme,
    /// Analytic center of the region.
    Central,
    /// Whatever point the solver terminates at.
    Vertex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer2Path {
    Unique,
    GeneralRescaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescaleConfig {
    /// Gate on the regression objective, relative to the row's sample variance.
    pub eps_tol: f64,
    pub min_neg_samples: usize,
}

impl Default for RescaleConfig {
    fn default() -> Self {
        RescaleConfig {
            eps_tol: 1e-6,
            min_neg_samples: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layer2Config {
    pub selection: PointSelection,
    /// Use `B̂ = Ĉ⁻¹` when `m == d`; falls back to the general path if `Ĉ` is singular.
    pub prefer_unique: bool,
    pub rescale: RescaleConfig,
    /// Objective value treated as an exact fit (realizable data).
    pub zero_tol: f64,
    pub qp_backend: QpBackend,
    pub solver: SolverConfig,
}

impl Default for Layer2Config {
    fn default() -> Self {
        Layer2Config {
            selection: PointSelection::Extreme,
            prefer_unique: false,
            rescale: RescaleConfig::default(),
            zero_tol: 1e-10,
            qp_backend: QpBackend::Reduced,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer2Estimate {
    /// Solver output `Ĉ`, `d x m`.
    pub c_hat: Mat,
    pub b_hat: Mat,
    /// Row `i` is `ξ̂(i)ᵀ`.
    pub xi_hat: Mat,
    /// `d x 1` scale factors.
    pub k_hat: Mat,
    pub used_path: Layer2Path,
    /// Sum of per-row optimal objectives (0 for the hard LP).
    pub solve_objective: f64,
    pub diagnostics: Vec<String>,
}

impl Layer2Estimate {
    /// `diag⁻¹(k) Ĉ`.
    pub fn c_corrected(&self) -> Mat {
        let mut c = self.c_hat.clone();
        for j in 0..c.rows() {
            let k = self.k_hat[(j, 0)];
            c.row_mut(j).iter_mut().for_each(|v| *v /= k);
        }
        c
    }

    /// Hidden estimates `diag⁻¹(k) Ĉ y(i) − x(i)`, one row per sample.
    pub fn hidden(&self, samples: &SampleSet) -> Mat {
        let c = self.c_corrected();
        Mat::from_fn(samples.n(), samples.d(), |i, j| {
            dot(c.row(j), samples.y(i)) - samples.x(i)[j]
        })
    }
}

/// One row of `Ĉ` with its ξ column and the row objective.
pub(crate) struct RowSolution {
    pub point: Vec<f64>,
    pub slack: Option<Vec<f64>>,
    pub objective: f64,
    pub note: Option<String>,
}

/// Picks a point of the hard-feasible region `{w : G w ≥ r}`.
///
/// `extreme_dir` is the direction to maximize for `Extreme`.
pub(crate) fn select_point(
    hard: &LpProblem,
    selection: PointSelection,
    extreme_dir: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Option<String>)> {
    let nv = hard.num_vars();
    let take = |rep: SolveReport| rep.point.data()[..nv].to_vec();
    match selection {
        PointSelection::Vertex => {
            let rep =
                solve_lp(&hard.with_zero_objective(), cfg)?.require_optimal("feasibility LP")?;
            Ok((take(rep), None))
        }
        PointSelection::Central => {
            let rep = analytic_center(hard, cfg)?;
            match rep.status {
                SolveStatus::Optimal => {
                    let note = rep.note.clone();
                    Ok((take(rep), note))
                }
                SolveStatus::Unbounded => {
                    let v = solve_lp(&hard.with_zero_objective(), cfg)?
                        .require_optimal("feasibility LP")?;
                    Ok((
                        take(v),
                        Some("feasible set unbounded; no analytic center, using vertex".into()),
                    ))
                }
                _ => Err(rep.require_optimal("analytic center").unwrap_err()),
            }
        }
        PointSelection::Extreme => {
            let obj: Vec<f64> = extreme_dir.iter().map(|v| -v).collect();
            let rep = solve_lp(&hard.with_objective(obj), cfg)?;
            match rep.status {
                SolveStatus::Optimal => Ok((take(rep), None)),
                SolveStatus::Unbounded => {
                    let v = solve_lp(&hard.with_zero_objective(), cfg)?
                        .require_optimal("feasibility LP")?;
                    Ok((
                        take(v),
                        Some("extreme direction unbounded; using vertex".into()),
                    ))
                }
                _ => Err(rep.require_optimal("selection LP").unwrap_err()),
            }
        }
    }
}

/// Solves row `j` of the layer-2 problem.
fn solve_row(
    samples: &SampleSet,
    method: LayerMethod,
    j: usize,
    cfg: &Layer2Config,
) -> Result<RowSolution> {
    let (xs, ys) = (&samples.xs, &samples.ys);
    let m = samples.m();
    let hard = layer2_row_lp(xs, ys, j)?;
    let total_y: Vec<f64> = (0..m)
        .map(|k| (0..samples.n()).map(|i| ys[(i, k)]).sum())
        .collect();
    let select = |note_prefix: Option<String>| -> Result<RowSolution> {
        let (point, note) = select_point(&hard, cfg.selection, &total_y, &cfg.solver)?;
        Ok(RowSolution {
            point,
            slack: None,
            objective: 0.0,
            note: note.or(note_prefix),
        })
    };
    match method {
        LayerMethod::Lp => select(None),
        LayerMethod::SlackLp => {
            let p = layer2_row_slack_lp(xs, ys, j)?;
            let rep = solve_lp(&p, &cfg.solver)?.require_optimal("slack LP")?;
            if rep.objective_value <= cfg.zero_tol {
                return select(None).map(|mut r| {
                    r.objective = rep.objective_value.max(0.0);
                    r
                });
            }
            Ok(RowSolution {
                point: rep.point.data()[..m].to_vec(),
                slack: None,
                objective: rep.objective_value,
                note: None,
            })
        }
        LayerMethod::Qp => {
            let (feat, target) = layer2_row_hinge(xs, ys, j)?;
            let rep = solve_row_qp(&feat, &target, cfg.qp_backend, &cfg.solver)?
                .require_optimal("layer-2 QP")?;
            if rep.objective_value <= cfg.zero_tol && cfg.selection != PointSelection::Vertex {
                match select(None) {
                    Ok(mut r) => {
                        r.objective = rep.objective_value.max(0.0);
                        return Ok(r);
                    }
                    Err(e) => {
                        // Zero objective yet no hard-feasible point: keep the QP minimizer.
                        warn!("row {j}: selection failed after zero QP objective: {e}");
                    }
                }
            }
            Ok(RowSolution {
                point: rep.point.data()[..m].to_vec(),
                slack: Some(rep.point.data()[m..].to_vec()),
                objective: rep.objective_value,
                note: None,
            })
        }
    }
}

/// Layer-2 estimate from input/output samples.
pub fn learn_layer2(
    samples: &SampleSet,
    method: LayerMethod,
    cfg: &Layer2Config,
) -> Result<Layer2Estimate> {
    let (n, d) = (samples.n(), samples.d());
    learn_layer2_inner(samples, method, cfg).map_err(|e| {
        if n < d {
            Error::Annotated {
                note: underdetermined(n, d),
                source: Box::new(e),
            }
        } else {
            e
        }
    })
}

fn underdetermined(n: usize, d: usize) -> String {
    format!("n = {n} < d = {d}: layer-2 estimate is badly underdetermined")
}

fn learn_layer2_inner(
    samples: &SampleSet,
    method: LayerMethod,
    cfg: &Layer2Config,
) -> Result<Layer2Estimate> {
    let (n, d, m) = (samples.n(), samples.d(), samples.m());
    if m < d {
        return Err(Error::InvalidParameter(format!(
            "need m >= d, got m = {m}, d = {d}"
        )));
    }
    let mut diagnostics = Vec::new();
    if n < d {
        let msg = underdetermined(n, d);
        warn!("{msg}");
        diagnostics.push(msg);
    }
    if method == LayerMethod::SlackLp && samples.noise_sigma == 0.0 {
        diagnostics.push("slack LP on noiseless samples; expect zero slack".into());
    }

    let mut c_hat = Mat::zeros(d, m);
    let mut xi_hat = Mat::zeros(n, d);
    let mut objective = 0.0;
    for j in 0..d {
        let row = solve_row(samples, method, j, cfg).map_err(|e| match e {
            Error::SolverFailed { status, context } => Error::SolverFailed {
                status,
                context: format!("layer-2 row {j}: {context}"),
            },
            other => other,
        })?;
        c_hat.row_mut(j).copy_from_slice(&row.point);
        for i in 0..n {
            xi_hat[(i, j)] = match &row.slack {
                Some(s) => s[i],
                None => dot(&row.point, samples.y(i)) - samples.x(i)[j],
            };
        }
        objective += row.objective;
        if let Some(note) = row.note {
            diagnostics.push(format!("layer-2 row {j}: {note}"));
        }
    }

    if cfg.prefer_unique && m == d {
        match invert(&c_hat) {
            Ok(b_hat) => {
                return Ok(Layer2Estimate {
                    c_hat,
                    b_hat,
                    xi_hat,
                    k_hat: Mat::col_vec(vec![1.0; d]),
                    used_path: Layer2Path::Unique,
                    solve_objective: objective,
                    diagnostics,
                })
            }
            Err(e) => diagnostics.push(format!("Ĉ not invertible ({e}); using the general path")),
        }
    }

    let k_hat = rescale_layer2(samples, &c_hat, &cfg.rescale)?;
    let b_hat = recover_b_general(samples, &c_hat, &k_hat).map_err(|e| match e {
        Error::RankDeficient { .. } => Error::SingularCHat(condition_number(&c_hat)),
        other => other,
    })?;
    let xi_hat = correct_xi(samples, &xi_hat, &k_hat);
    Ok(Layer2Estimate {
        c_hat,
        b_hat,
        xi_hat,
        k_hat,
        used_path: Layer2Path::GeneralRescaled,
        solve_objective: objective,
        diagnostics,
    })
}

/// Per-row scale factors from the regression of `[Ĉy]_j` on `x_j` over `x_j < 0`.
///
/// The factor is kept only when that regression is (nearly) exact; otherwise the
/// row is not a scale row and its factor is 1.
pub fn rescale_layer2(samples: &SampleSet, c_hat: &Mat, cfg: &RescaleConfig) -> Result<Mat> {
    let (n, d) = (samples.n(), samples.d());
    if c_hat.shape() != (d, samples.m()) {
        return Err(Error::DimensionMismatch(format!(
            "c_hat is {}x{}, expected {d}x{}",
            c_hat.rows(),
            c_hat.cols(),
            samples.m()
        )));
    }
    if !(cfg.eps_tol > 0.0) {
        return Err(Error::InvalidParameter("eps_tol must be positive".into()));
    }
    let mut k = vec![1.0; d];
    for j in 0..d {
        let u: Vec<f64> = (0..n).map(|i| dot(c_hat.row(j), samples.y(i))).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| samples.x(i)[j] < 0.0).collect();
        if neg.len() < cfg.min_neg_samples {
            warn!(
                "row {j}: only {} samples with x_j < 0; scale factor set to 1",
                neg.len()
            );
            continue;
        }
        let sxx: f64 = neg.iter().map(|&i| samples.x(i)[j].powi(2)).sum();
        let sxu: f64 = neg.iter().map(|&i| samples.x(i)[j] * u[i]).sum();
        let kj = sxu / sxx;
        let risk: f64 = neg
            .iter()
            .map(|&i| (u[i] - kj * samples.x(i)[j]).powi(2))
            .sum::<f64>()
            / (2.0 * neg.len() as f64);
        let var = variance(&u);
        let gate = cfg.eps_tol * if var > 0.0 { var } else { 1.0 };
        if risk > gate {
            continue;
        }
        if !(kj > 0.0) {
            warn!("row {j}: non-positive scale estimate {kj}; using 1");
            continue;
        }
        if kj > 1.0 + 1e-6 {
            warn!("row {j}: scale estimate {kj} above 1; clamped");
        }
        k[j] = kj.min(1.0);
    }
    Ok(Mat::col_vec(k))
}

/// `B̂` by regressing `y(i)` on `diag⁻¹(k) Ĉ y(i)`.
pub fn recover_b_general(samples: &SampleSet, c_hat: &Mat, k_hat: &Mat) -> Result<Mat> {
    let d = c_hat.rows();
    if k_hat.shape() != (d, 1) {
        return Err(Error::DimensionMismatch(format!(
            "k_hat is {}x{}",
            k_hat.rows(),
            k_hat.cols()
        )));
    }
    if k_hat.data().iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidParameter(
            "scale factors must be positive".into(),
        ));
    }
    let z = Mat::from_fn(samples.n(), d, |i, j| {
        dot(c_hat.row(j), samples.y(i)) / k_hat[(j, 0)]
    });
    Ok(lls_solve(&z, &samples.ys)?.coeffs)
}

/// `ξ̂(i) ← diag⁻¹(k)[ξ̂(i) + x(i)] − x(i)`.
pub fn correct_xi(samples: &SampleSet, xi_hat: &Mat, k_hat: &Mat) -> Mat {
    Mat::from_fn(xi_hat.rows(), xi_hat.cols(), |i, j| {
        (xi_hat[(i, j)] + samples.x(i)[j]) / k_hat[(j, 0)] - samples.x(i)[j]
    })
}
