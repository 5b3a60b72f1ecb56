//! Layer-1 learning: given hidden estimates `h(i) ≈ k ⊙ (A x(i))^+`, fit
//! `h − A x ≥ 0` row by row and undo the per-row scale.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer2::{select_point, LayerMethod, PointSelection};
use crate::numerics::{dot, quantile, Mat};
use crate::solver::{
    layer1_row_hinge, layer1_row_lp, layer1_row_slack_lp, solve_lp, solve_row_qp, QpBackend,
    SolverConfig,
};

/// Inputs paired with (estimated) hidden activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenSampleSet {
    /// `n x d`.
    pub xs: Mat,
    /// `n x d`.
    pub hs: Mat,
}

impl HiddenSampleSet {
    pub fn new(xs: Mat, hs: Mat) -> Result<Self> {
        if xs.shape() != hs.shape() {
            return Err(Error::DimensionMismatch(format!(
                "inputs {}x{} vs hidden {}x{}",
                xs.rows(),
                xs.cols(),
                hs.rows(),
                hs.cols()
            )));
        }
        Ok(HiddenSampleSet { xs, hs })
    }

    pub fn n(&self) -> usize {
        self.xs.rows()
    }

    pub fn d(&self) -> usize {
        self.xs.cols()
    }

    pub fn min_hidden(&self) -> f64 {
        self.hs.min_entry()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layer1Config {
    pub selection: PointSelection,
    /// A sample activates row `j` when `h_j > activation_rel · q(|h_j|)`,
    /// with `q` the `activation_quantile` of the row.
    pub activation_rel: f64,
    pub activation_quantile: f64,
    pub min_pos_samples: usize,
    /// Lower clamp for scale factors.
    pub k_min: f64,
    pub zero_tol: f64,
    pub qp_backend: QpBackend,
    pub solver: SolverConfig,
}

impl Default for Layer1Config {
    fn default() -> Self {
        Layer1Config {
            selection: PointSelection::Extreme,
            activation_rel: 1e-8,
            activation_quantile: 0.9,
            min_pos_samples: 10,
            k_min: 1e-4,
            zero_tol: 1e-10,
            qp_backend: QpBackend::Reduced,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Too few activated samples to estimate a scale; raw row kept.
    Degenerate {
        activated: usize,
    },
    /// Scale estimate fell outside `(k_min, 1]` and was clamped.
    Clamped {
        raw_k: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowScale {
    pub k: f64,
    pub raw_k: f64,
    /// Root of the summed squared regression residual.
    pub residual: f64,
    pub activated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer1Estimate {
    pub a_hat: Mat,
    /// `d x 1`.
    pub k_hat: Mat,
    /// Solver rows before scale correction.
    pub raw_a: Mat,
    pub row_status: Vec<RowStatus>,
    pub solve_objective: f64,
    pub diagnostics: Vec<String>,
}

/// Activation threshold for one hidden coordinate.
pub fn activation_threshold(h_col: &[f64], cfg: &Layer1Config) -> f64 {
    let abs: Vec<f64> = h_col.iter().map(|v| v.abs()).collect();
    cfg.activation_rel * quantile(&abs, cfg.activation_quantile)
}

fn column(m: &Mat, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|i| m[(i, j)]).collect()
}

/// Scale of row `j`: slope of `raw·x(i)` on `h_j(i)` over activated samples,
/// clamped to `[k_min, 1]`.
pub fn estimate_row_scale(
    samples: &HiddenSampleSet,
    raw_row: &[f64],
    j: usize,
    cfg: &Layer1Config,
) -> Result<RowScale> {
    if raw_row.len() != samples.d() {
        return Err(Error::DimensionMismatch(format!(
            "row has length {}, d = {}",
            raw_row.len(),
            samples.d()
        )));
    }
    let h = column(&samples.hs, j);
    let thr = activation_threshold(&h, cfg);
    let act: Vec<usize> = (0..samples.n()).filter(|&i| h[i] > thr).collect();
    if act.len() < cfg.min_pos_samples {
        return Err(Error::DegenerateRow {
            row: j,
            activated: act.len(),
        });
    }
    let u: Vec<f64> = act
        .iter()
        .map(|&i| dot(raw_row, samples.xs.row(i)))
        .collect();
    let hh: Vec<f64> = act.iter().map(|&i| h[i]).collect();
    let raw_k = dot(&u, &hh) / dot(&hh, &hh);
    let residual = u
        .iter()
        .zip(&hh)
        .map(|(a, b)| (a - raw_k * b).powi(2))
        .sum::<f64>()
        .sqrt();
    let k = raw_k.clamp(cfg.k_min, 1.0);
    if raw_k < cfg.k_min || raw_k > 1.0 + 1e-6 {
        warn!("row {j}: scale estimate {raw_k} clamped to {k}");
    }
    Ok(RowScale {
        k,
        raw_k,
        residual,
        activated: act.len(),
    })
}

fn solve_row(
    samples: &HiddenSampleSet,
    method: LayerMethod,
    j: usize,
    cfg: &Layer1Config,
) -> Result<(Vec<f64>, f64, Option<String>)> {
    let (xs, hs) = (&samples.xs, &samples.hs);
    let d = samples.d();
    let hard = layer1_row_lp(xs, hs, j)?;
    let h = column(hs, j);
    let thr = activation_threshold(&h, cfg);
    // Extreme direction: total activation a·Σ x(i) over activated samples.
    let mut dir = vec![0.0; d];
    for i in (0..samples.n()).filter(|&i| h[i] > thr) {
        dir.iter_mut().zip(xs.row(i)).for_each(|(a, b)| *a += b);
    }
    let select = || select_point(&hard, cfg.selection, &dir, &cfg.solver);
    match method {
        LayerMethod::Lp => {
            let (p, note) = select()?;
            Ok((p, 0.0, note))
        }
        LayerMethod::SlackLp => {
            let rep = solve_lp(&layer1_row_slack_lp(xs, hs, j)?, &cfg.solver)?
                .require_optimal("slack LP")?;
            if rep.objective_value <= cfg.zero_tol {
                let (p, note) = select()?;
                return Ok((p, rep.objective_value.max(0.0), note));
            }
            Ok((rep.point.data()[..d].to_vec(), rep.objective_value, None))
        }
        LayerMethod::Qp => {
            let (feat, target) = layer1_row_hinge(xs, hs, j)?;
            let rep = solve_row_qp(&feat, &target, cfg.qp_backend, &cfg.solver)?
                .require_optimal("layer-1 QP")?;
            if rep.objective_value <= cfg.zero_tol && cfg.selection != PointSelection::Vertex {
                match select() {
                    Ok((p, note)) => return Ok((p, rep.objective_value.max(0.0), note)),
                    Err(e) => warn!("row {j}: selection failed after zero QP objective: {e}"),
                }
            }
            Ok((rep.point.data()[..d].to_vec(), rep.objective_value, None))
        }
    }
}

/// Layer-1 estimate from inputs and hidden estimates.
pub fn learn_layer1(
    samples: &HiddenSampleSet,
    method: LayerMethod,
    cfg: &Layer1Config,
) -> Result<Layer1Estimate> {
    let d = samples.d();
    let mut diagnostics = Vec::new();
    if samples.min_hidden() < -1e-6 {
        diagnostics.push(format!(
            "hidden estimates go negative (min {:.3e})",
            samples.min_hidden()
        ));
    }
    let mut raw_a = Mat::zeros(d, d);
    let mut objective = 0.0;
    for j in 0..d {
        let (row, obj, note) = solve_row(samples, method, j, cfg).map_err(|e| match e {
            Error::SolverFailed { status, context } => Error::SolverFailed {
                status,
                context: format!("layer-1 row {j}: {context}"),
            },
            other => other,
        })?;
        raw_a.row_mut(j).copy_from_slice(&row);
        objective += obj;
        if let Some(note) = note {
            diagnostics.push(format!("layer-1 row {j}: {note}"));
        }
    }

    let mut a_hat = raw_a.clone();
    let mut k = vec![1.0; d];
    let mut row_status = Vec::with_capacity(d);
    for j in 0..d {
        match estimate_row_scale(samples, raw_a.row(j), j, cfg) {
            Ok(s) => {
                k[j] = s.k;
                a_hat.row_mut(j).iter_mut().for_each(|v| *v /= s.k);
                row_status.push(if s.raw_k < cfg.k_min || s.raw_k > 1.0 + 1e-6 {
                    RowStatus::Clamped { raw_k: s.raw_k }
                } else {
                    RowStatus::Ok
                });
            }
            Err(Error::DegenerateRow { activated, .. }) => {
                diagnostics.push(format!(
                    "layer-1 row {j}: only {activated} activated samples; row left unscaled"
                ));
                row_status.push(RowStatus::Degenerate { activated });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Layer1Estimate {
        a_hat,
        k_hat: Mat::col_vec(k),
        raw_a,
        row_status,
        solve_objective: objective,
        diagnostics,
    })
}
