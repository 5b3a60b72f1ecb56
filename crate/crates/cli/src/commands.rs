use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use resunit::baselines::{sgd_train, vanilla_lr, SgdConfig, SgdResult};
use resunit::eval::{
    full_pipeline, relative_errors, run_grid, write_records_csv, ErrorReport, Experiment, Method,
    PipelineConfig, RunOptions, TrialGrid,
};
use resunit::layer1::Layer1Estimate;
use resunit::layer2::Layer2Estimate;
use resunit::model::{
    derive_seed, generate_unit, read_csv, sample, GaussianParams, InputDistribution, InputKind,
    NetworkGenSpec, ResidualUnit,
};
use resunit::numerics::Mat;

use crate::error::{CliError, CliResult};

/// Reads a JSON config file; a missing file is an io error, bad JSON a config error.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file so readers never see a half-written artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("artifacts serialize");
    s.push(b'\n');
    s
}

// ---------------------------------------------------------------- generate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub d: usize,
    /// Defaults to `d`.
    pub m: Option<usize>,
    pub n: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub input: InputKind,
    pub layer1_dist: GaussianParams,
    pub layer2_dist: GaussianParams,
    pub require_non_scale_transform: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let spec = NetworkGenSpec::standard(4, 4, 0);
        GenerateConfig {
            d: 4,
            m: None,
            n: 200,
            seed: 0,
            noise_sigma: 0.0,
            input: InputDistribution::mixture(1).kind,
            layer1_dist: spec.layer1_dist,
            layer2_dist: spec.layer2_dist,
            require_non_scale_transform: true,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TeacherFile {
    pub config: GenerateConfig,
    pub teacher_seed: u64,
    pub data_seed: u64,
    pub unit: ResidualUnit,
}

pub fn teacher_seed(seed: u64) -> u64 {
    derive_seed(seed, "teacher")
}

pub fn data_seed(seed: u64) -> u64 {
    derive_seed(seed, "data")
}

pub fn generate(mut cfg: GenerateConfig, out: &Path) -> CliResult<()> {
    let m = *cfg.m.get_or_insert(cfg.d);
    let spec = NetworkGenSpec {
        d: cfg.d,
        m,
        layer1_dist: cfg.layer1_dist,
        layer2_dist: cfg.layer2_dist,
        seed: teacher_seed(cfg.seed),
        require_non_scale_transform: cfg.require_non_scale_transform,
    };
    let unit = generate_unit(&spec).map_err(CliError::from_lib)?;
    let dist = InputDistribution {
        kind: cfg.input.clone(),
        dim: cfg.d,
    };
    let samples = sample(&unit, &dist, cfg.n, cfg.noise_sigma, data_seed(cfg.seed))
        .map_err(CliError::from_lib)?;
    let file = TeacherFile {
        teacher_seed: spec.seed,
        data_seed: data_seed(cfg.seed),
        config: cfg,
        unit,
    };
    write_atomic(&out.join("teacher.json"), &to_json(&file))?;
    write_atomic(&out.join("samples.csv"), samples.to_csv_string().as_bytes())?;
    println!(
        "{}",
        serde_json::json!({
            "teacher": out.join("teacher.json"),
            "samples": out.join("samples.csv"),
            "d": samples.d(),
            "m": samples.m(),
            "n": samples.n(),
            "noise_sigma": samples.noise_sigma,
        })
    );
    Ok(())
}

// ------------------------------------------------------------------- learn

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub data: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub method: Method,
    /// Seeds the evaluation test set; SGD uses `sgd.seed`.
    pub seed: u64,
    pub test_set_size: usize,
    pub pipeline: PipelineConfig,
    pub sgd: SgdConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            data: None,
            teacher: None,
            method: Method::Lp,
            seed: 0,
            test_set_size: 1000,
            pipeline: PipelineConfig::default(),
            sgd: SgdConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EstimateFile {
    pub config: LearnConfig,
    pub method: Method,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub a_hat: Mat,
    pub b_hat: Mat,
    /// Total optimal objective of the layer programs (slack for `slack-lp`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer2: Option<Layer2Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer1: Option<Layer1Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged: Option<bool>,
    pub diagnostics: Vec<String>,
}

pub fn learn(cfg: LearnConfig, out: &Path) -> CliResult<()> {
    let data = cfg.data.clone().ok_or_else(|| {
        CliError::Config("no dataset given (--data or \"data\" in the config file)".into())
    })?;
    let samples = read_csv(&data).map_err(|e| CliError::io(&data, e))?;
    let teacher: Option<TeacherFile> = match &cfg.teacher {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::io(p, e))?)
        }
        None => None,
    };
    if let Some(t) = &teacher {
        if t.unit.d() != samples.d() || t.unit.m() != samples.m() {
            return Err(CliError::Config(format!(
                "teacher is d = {}, m = {} but the dataset is d = {}, m = {}",
                t.unit.d(),
                t.unit.m(),
                samples.d(),
                samples.m()
            )));
        }
    }

    let mut sgd_run: Option<SgdResult> = None;
    let est = match cfg.method.layer_method() {
        Some(lm) => {
            let res = full_pipeline(&samples, lm, &cfg.pipeline).map_err(CliError::from_lib)?;
            for d in &res.diagnostics {
                warn!("{d}");
            }
            EstimateFile {
                config: cfg.clone(),
                method: cfg.method,
                d: samples.d(),
                m: samples.m(),
                n: samples.n(),
                a_hat: res.layer1.a_hat.clone(),
                b_hat: res.layer2.b_hat.clone(),
                slack_objective: Some(res.layer2.solve_objective + res.layer1.solve_objective),
                diagnostics: res.diagnostics.clone(),
                layer2: Some(res.layer2),
                layer1: Some(res.layer1),
                diverged: None,
            }
        }
        None if cfg.method == Method::Sgd => {
            let r = sgd_train(&samples, &cfg.sgd, teacher.as_ref().map(|t| &t.unit))
                .map_err(CliError::from_lib)?;
            let mut diagnostics = Vec::new();
            if r.diverged {
                diagnostics.push("SGD diverged; training stopped early".to_string());
                warn!("SGD diverged");
            }
            let est = EstimateFile {
                config: cfg.clone(),
                method: cfg.method,
                d: samples.d(),
                m: samples.m(),
                n: samples.n(),
                a_hat: r.a_hat.clone(),
                b_hat: r.b_hat.clone(),
                slack_objective: None,
                layer2: None,
                layer1: None,
                diverged: Some(r.diverged),
                diagnostics,
            };
            sgd_run = Some(r);
            est
        }
        None => {
            let r = vanilla_lr(&samples);
            let (Some(a_hat), Some(b_hat)) = (r.a_hat, r.b_hat) else {
                return Err(CliError::Eval(format!(
                    "vanilla LR failed: {} all-negative and {} all-positive samples usable",
                    r.n_neg_used, r.n_pos_used
                )));
            };
            EstimateFile {
                config: cfg.clone(),
                method: cfg.method,
                d: samples.d(),
                m: samples.m(),
                n: samples.n(),
                a_hat,
                b_hat,
                slack_objective: None,
                layer2: None,
                layer1: None,
                diverged: None,
                diagnostics: vec![format!(
                    "used {} negative and {} positive samples",
                    r.n_neg_used, r.n_pos_used
                )],
            }
        }
    };

    let report = match &teacher {
        Some(t) => {
            let dist = InputDistribution {
                kind: t.config.input.clone(),
                dim: samples.d(),
            };
            let test = sample(
                &t.unit,
                &dist,
                cfg.test_set_size,
                0.0,
                derive_seed(cfg.seed, "test"),
            )
            .map_err(|e| CliError::Eval(e.to_string()))?;
            let r = relative_errors(&est.a_hat, &est.b_hat, &t.unit, &test)
                .map_err(|e| CliError::Eval(e.to_string()))?;
            Some(r.labeled(samples.n(), samples.seed, cfg.method.label()))
        }
        None => None,
    };

    write_atomic(&out.join("estimate.json"), &to_json(&est))?;
    if let Some(r) = &sgd_run {
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf)
            .map_err(|e| CliError::io(out.join("loss_trace.csv"), e))?;
        write_atomic(&out.join("loss_trace.csv"), &buf)?;
    }
    if let Some(r) = &report {
        write_atomic(&out.join("report.json"), &to_json(r))?;
    }
    print_learn_summary(&est, report.as_ref());
    Ok(())
}

fn print_learn_summary(est: &EstimateFile, report: Option<&ErrorReport>) {
    let mut v = serde_json::json!({
        "method": est.method,
        "n": est.n,
        "slack_objective": est.slack_objective,
    });
    if let Some(r) = report {
        v["layer1_rel"] = r.layer1_rel.into();
        v["layer2_rel"] = r.layer2_rel.into();
        v["output_rel"] = r.output_rel.into();
    }
    println!("{v}");
}

// -------------------------------------------------------------- experiment

pub fn experiment(
    name: Experiment,
    grid: TrialGrid,
    out: &Path,
    opts: RunOptions,
) -> CliResult<()> {
    grid.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    info!("{}: {} cells", name.name(), grid.cells().len());
    let res = run_grid(&grid, &opts).map_err(|e| match e.root() {
        resunit::Error::Io(_) => CliError::io(opts.cache_dir.clone().unwrap_or_default(), e),
        _ => CliError::Eval(e.to_string()),
    })?;
    let mut csv = Vec::new();
    write_records_csv(&res.records, &mut csv).map_err(|e| CliError::Eval(e.to_string()))?;
    write_atomic(&out.join(format!("{}.csv", name.name())), &csv)?;
    write_atomic(&out.join(format!("{}.json", name.name())), &to_json(&res))?;
    for c in &res.summary {
        let fmt = |s: &Option<resunit::eval::Stat>| {
            s.as_ref()
                .map_or("-".to_string(), |s| format!("{:.4}", s.mean))
        };
        println!(
            "d={} m={} n={} sigma={} {:<10} trials={} ok={} success={:.3} layer1={} layer2={} output={}",
            c.d,
            c.m,
            c.n,
            c.sigma,
            c.method.label(),
            c.trials,
            c.ok,
            c.success_rate,
            fmt(&c.layer1),
            fmt(&c.layer2),
            fmt(&c.output)
        );
    }
    if res.cached_cells > 0 {
        info!(
            "{} of {} cells loaded from cache",
            res.cached_cells,
            res.summary.len()
        );
    }
    Ok(())
}
