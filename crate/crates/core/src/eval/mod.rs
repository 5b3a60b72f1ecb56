//! Metrics, the two-phase pipeline, and multi-trial studies.

mod experiments;
mod grid;

pub use experiments::Experiment;
pub use grid::{
    aggregate, run_grid, write_records_csv, CellKey, CellSummary, GridOutput, RunOptions, Stat,
    TrialGrid, TrialRecord, TrialStatus,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer1::{learn_layer1, HiddenSampleSet, Layer1Config, Layer1Estimate};
use crate::layer2::{learn_layer2, Layer2Config, Layer2Estimate, LayerMethod, PointSelection};
use crate::model::{ResidualUnit, SampleSet};
use crate::numerics::{norm2, Mat};

/// Learners the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Qp,
    Lp,
    SlackLp,
    Sgd,
    VanillaLr,
}

impl Method {
    pub fn layer_method(self) -> Option<LayerMethod> {
        match self {
            Method::Qp => Some(LayerMethod::Qp),
            Method::Lp => Some(LayerMethod::Lp),
            Method::SlackLp => Some(LayerMethod::SlackLp),
            Method::Sgd | Method::VanillaLr => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Qp => "qp",
            Method::Lp => "lp",
            Method::SlackLp => "slack-lp",
            Method::Sgd => "sgd",
            Method::VanillaLr => "vanilla-lr",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Ok(match s {
            "qp" => Method::Qp,
            "lp" => Method::Lp,
            "slack-lp" => Method::SlackLp,
            "sgd" => Method::Sgd,
            "vanilla-lr" => Method::VanillaLr,
            other => return Err(Error::Parse(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub layer1_rel: f64,
    pub layer2_rel: f64,
    pub output_rel: f64,
    pub n: usize,
    pub d: usize,
    pub seed: Option<u64>,
    pub method: String,
}

impl ErrorReport {
    /// Attaches the training-set size, seed and method label.
    pub fn labeled(mut self, n: usize, seed: Option<u64>, method: &str) -> ErrorReport {
        self.n = n;
        self.seed = seed;
        self.method = method.to_string();
        self
    }
}

fn rel_fro(est: &Mat, truth: &Mat) -> Result<f64> {
    let diff = est.sub(truth)?;
    Ok(diff.frobenius_norm() / truth.frobenius_norm())
}

/// Relative Frobenius weight errors and the mean per-sample relative output
/// error on `test`. `n`, `seed` and `method` are left for the caller to label.
pub fn relative_errors(
    est_a: &Mat,
    est_b: &Mat,
    unit: &ResidualUnit,
    test: &SampleSet,
) -> Result<ErrorReport> {
    if test.n() == 0 {
        return Err(Error::InvalidParameter("empty test set".into()));
    }
    if test.d() != unit.d() || test.m() != unit.m() {
        return Err(Error::DimensionMismatch(
            "test set shape differs from the unit".into(),
        ));
    }
    let layer1_rel = rel_fro(est_a, &unit.a)?;
    let layer2_rel = rel_fro(est_b, &unit.b)?;
    let est = ResidualUnit {
        a: est_a.clone(),
        b: est_b.clone(),
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..test.n() {
        let y = test.y(i);
        let ny = norm2(y);
        if ny == 0.0 {
            continue;
        }
        let yh = est.output(test.x(i));
        let diff: Vec<f64> = yh.iter().zip(y).map(|(a, b)| a - b).collect();
        total += norm2(&diff) / ny;
        count += 1;
    }
    Ok(ErrorReport {
        layer1_rel,
        layer2_rel,
        output_rel: if count > 0 { total / count as f64 } else { 0.0 },
        n: 0,
        d: unit.d(),
        seed: test.seed,
        method: String::new(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub layer2: Layer2Config,
    pub layer1: Layer1Config,
}

impl PipelineConfig {
    /// Same point selection for both layers.
    pub fn with_selection(selection: PointSelection) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.layer2.selection = selection;
        cfg.layer1.selection = selection;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub layer1: Layer1Estimate,
    pub layer2: Layer2Estimate,
    pub diagnostics: Vec<String>,
}

/// Layer 2 first, then layer 1 on the hidden estimates `diag⁻¹(k̂) Ĉ y − x`.
pub fn full_pipeline(
    samples: &SampleSet,
    method: LayerMethod,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let layer2 = learn_layer2(samples, method, &cfg.layer2).map_err(|e| e.in_stage("layer2"))?;
    let hidden = HiddenSampleSet::new(samples.xs.clone(), layer2.hidden(samples))?;
    let layer1 = learn_layer1(&hidden, method, &cfg.layer1).map_err(|e| e.in_stage("layer1"))?;
    let diagnostics = layer2
        .diagnostics
        .iter()
        .chain(&layer1.diagnostics)
        .cloned()
        .collect();
    Ok(PipelineResult {
        layer1,
        layer2,
        diagnostics,
    })
}
