use serde::{Deserialize, Serialize};

use super::{Method, PipelineConfig, TrialGrid};
use crate::layer2::PointSelection;
use crate::model::InputDistribution;

/// Preset studies. Each preset is a plain [`TrialGrid`]; every field can be
/// overridden before running.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Output error over a (d, n) grid, ours vs SGD.
    Heatmap,
    /// Many teachers at d = 16, n = 512, ours vs SGD.
    WeightRobustness,
    /// One teacher at d = 10, n = 512 under growing label noise.
    NoiseRobustness,
    /// Vanilla LR success rates under standard Gaussian inputs.
    VanillaLrRates,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Heatmap => "heatmap",
            Experiment::WeightRobustness => "weight_robustness",
            Experiment::NoiseRobustness => "noise_robustness",
            Experiment::VanillaLrRates => "vanilla_lr_rates",
        }
    }

    pub fn default_grid(self) -> TrialGrid {
        let pipeline = PipelineConfig::with_selection(PointSelection::Central);
        match self {
            Experiment::Heatmap => TrialGrid {
                dims: vec![4, 8, 12, 16],
                sample_sizes: vec![64, 128, 256, 512],
                methods: vec![Method::Lp, Method::Sgd],
                teachers_per_cell: 8,
                pipeline,
                ..TrialGrid::default()
            },
            Experiment::WeightRobustness => TrialGrid {
                dims: vec![16],
                sample_sizes: vec![512],
                methods: vec![Method::Lp, Method::Sgd],
                teachers_per_cell: 128,
                pipeline,
                ..TrialGrid::default()
            },
            Experiment::NoiseRobustness => TrialGrid {
                dims: vec![10],
                sample_sizes: vec![512],
                noise_sigmas: vec![0.0, 0.05, 0.1, 0.2],
                methods: vec![Method::Qp, Method::SlackLp, Method::Sgd],
                trials_per_cell: 8,
                pipeline,
                ..TrialGrid::default()
            },
            Experiment::VanillaLrRates => TrialGrid {
                dims: vec![4, 6],
                sample_sizes: vec![100, 500, 1000],
                methods: vec![Method::VanillaLr],
                trials_per_cell: 200,
                test_set_size: 200,
                input: InputDistribution::gaussian(1, 0.0, 1.0).kind,
                ..TrialGrid::default()
            },
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Experiment> {
        Ok(match s {
            "heatmap" => Experiment::Heatmap,
            "weight_robustness" => Experiment::WeightRobustness,
            "noise_robustness" => Experiment::NoiseRobustness,
            "vanilla_lr_rates" => Experiment::VanillaLrRates,
            other => return Err(crate::Error::Parse(format!("unknown experiment {other:?}"))),
        })
    }
}
