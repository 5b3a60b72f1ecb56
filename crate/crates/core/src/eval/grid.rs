use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{full_pipeline, relative_errors, ErrorReport, Method, PipelineConfig};
use crate::baselines::{sgd_train, vanilla_lr, SgdConfig};
use crate::error::{Error, Result};
use crate::model::{
    derive_seed, generate_unit, sample, InputDistribution, InputKind, NetworkGenSpec,
};
use crate::numerics::{mean, median, std_dev};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialGrid {
    pub dims: Vec<usize>,
    /// `m = d + extra_outputs`.
    pub extra_outputs: usize,
    pub sample_sizes: Vec<usize>,
    pub noise_sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    pub teachers_per_cell: usize,
    /// Independent training sets per teacher.
    pub trials_per_cell: usize,
    pub test_set_size: usize,
    pub base_seed: u64,
    pub input: InputKind,
    pub pipeline: PipelineConfig,
    pub sgd: SgdConfig,
}

impl Default for TrialGrid {
    fn default() -> Self {
        TrialGrid {
            dims: vec![4],
            extra_outputs: 0,
            sample_sizes: vec![512],
            noise_sigmas: vec![0.0],
            methods: vec![Method::Lp],
            teachers_per_cell: 1,
            trials_per_cell: 1,
            test_set_size: 1000,
            base_seed: 0,
            input: InputDistribution::mixture(1).kind,
            pipeline: PipelineConfig::default(),
            sgd: SgdConfig::default(),
        }
    }
}

impl TrialGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("grid: {what}")));
        if self.dims.is_empty()
            || self.sample_sizes.is_empty()
            || self.noise_sigmas.is_empty()
            || self.methods.is_empty()
        {
            return bad("dims, sample_sizes, noise_sigmas and methods must be non-empty");
        }
        if self.dims.contains(&0) || self.sample_sizes.contains(&0) {
            return bad("dimensions and sample sizes must be positive");
        }
        if self
            .noise_sigmas
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return bad("noise sigmas must be finite and nonnegative");
        }
        if self.teachers_per_cell == 0 || self.trials_per_cell == 0 || self.test_set_size == 0 {
            return bad("teachers, trials and test size must be positive");
        }
        InputDistribution {
            kind: self.input.clone(),
            dim: 1,
        }
        .validate()
    }

    /// Cells in (d, n, σ, method) order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &d in &self.dims {
            for &n in &self.sample_sizes {
                for &sigma in &self.noise_sigmas {
                    for &method in &self.methods {
                        out.push(CellKey {
                            d,
                            n,
                            sigma,
                            method,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn teacher_seed(&self, d: usize, teacher: usize) -> u64 {
        derive_seed(self.base_seed, &format!("teacher/d={d}/t={teacher}"))
    }

    /// Method is excluded so all methods see the same training sets.
    pub fn data_seed(&self, cell: &CellKey, teacher: usize, trial: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &format!(
                "data/d={}/n={}/sigma={}/t={teacher}/r={trial}",
                cell.d, cell.n, cell.sigma
            ),
        )
    }

    pub fn test_seed(&self, d: usize, teacher: usize, trial: usize) -> u64 {
        derive_seed(self.base_seed, &format!("test/d={d}/t={teacher}/r={trial}"))
    }

    pub fn method_seed(&self, cell: &CellKey, teacher: usize, trial: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &format!(
                "method/d={}/n={}/sigma={}/m={}/t={teacher}/r={trial}",
                cell.d,
                cell.n,
                cell.sigma,
                cell.method.label()
            ),
        )
    }

    /// Content hash of everything that determines a cell's records.
    pub fn cell_hash(&self, cell: &CellKey) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            cell: &'a CellKey,
            extra_outputs: usize,
            teachers: usize,
            trials: usize,
            test_set_size: usize,
            base_seed: u64,
            input: &'a InputKind,
            pipeline: Option<&'a PipelineConfig>,
            sgd: Option<&'a SgdConfig>,
        }
        let id = Identity {
            cell,
            extra_outputs: self.extra_outputs,
            teachers: self.teachers_per_cell,
            trials: self.trials_per_cell,
            test_set_size: self.test_set_size,
            base_seed: self.base_seed,
            input: &self.input,
            pipeline: cell.method.layer_method().map(|_| &self.pipeline),
            sgd: (cell.method == Method::Sgd).then_some(&self.sgd),
        };
        let json = serde_json::to_vec(&id).expect("identity serializes");
        let digest = Sha256::digest(&json);
        digest[..12].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    /// Vanilla LR hit a rank-deficient system.
    Unsuccessful,
    Diverged,
    Error,
}

/// One row of the long-format table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
    pub method: Method,
    pub teacher: usize,
    pub trial: usize,
    pub teacher_seed: u64,
    pub data_seed: u64,
    pub test_seed: u64,
    pub status: TrialStatus,
    pub layer1_rel: Option<f64>,
    pub layer2_rel: Option<f64>,
    pub output_rel: Option<f64>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Stat {
    fn of(v: &[f64]) -> Option<Stat> {
        if v.is_empty() {
            return None;
        }
        Some(Stat {
            mean: mean(v),
            std: if v.len() > 1 { std_dev(v) } else { 0.0 },
            median: median(v),
        })
    }
}

/// Aggregated row per (d, n, σ, method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
    pub method: Method,
    pub trials: usize,
    pub ok: usize,
    pub unsuccessful: usize,
    pub diverged: usize,
    pub errors: usize,
    pub success_rate: f64,
    /// Over trials with status `ok`.
    pub layer1: Option<Stat>,
    pub layer2: Option<Stat>,
    pub output: Option<Stat>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Completed cells are stored here and skipped on rerun.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutput {
    pub config: TrialGrid,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<CellSummary>,
    /// Cells loaded from the cache instead of recomputed.
    pub cached_cells: usize,
}

fn run_trial(grid: &TrialGrid, cell: &CellKey, teacher: usize, trial: usize) -> TrialRecord {
    let m = cell.d + grid.extra_outputs;
    let teacher_seed = grid.teacher_seed(cell.d, teacher);
    let data_seed = grid.data_seed(cell, teacher, trial);
    let mut rec = TrialRecord {
        d: cell.d,
        m,
        n: cell.n,
        sigma: cell.sigma,
        method: cell.method,
        teacher,
        trial,
        teacher_seed,
        data_seed,
        test_seed: grid.test_seed(cell.d, teacher, trial),
        status: TrialStatus::Ok,
        layer1_rel: None,
        layer2_rel: None,
        output_rel: None,
        message: None,
    };
    let started = Instant::now();
    let outcome = evaluate(grid, cell, m, teacher_seed, data_seed, teacher, trial);
    debug!(
        "d={} n={} sigma={} {} t={teacher} r={trial}: {:.2}s",
        cell.d,
        cell.n,
        cell.sigma,
        cell.method.label(),
        started.elapsed().as_secs_f64()
    );
    match outcome {
        Ok((status, report, message)) => {
            rec.status = status;
            rec.message = message;
            if let Some(r) = report {
                rec.layer1_rel = Some(r.layer1_rel);
                rec.layer2_rel = Some(r.layer2_rel);
                rec.output_rel = Some(r.output_rel);
            }
        }
        Err(e) => {
            rec.status = TrialStatus::Error;
            rec.message = Some(e.to_string());
        }
    }
    rec
}

type Outcome = (TrialStatus, Option<ErrorReport>, Option<String>);

fn evaluate(
    grid: &TrialGrid,
    cell: &CellKey,
    m: usize,
    teacher_seed: u64,
    data_seed: u64,
    teacher: usize,
    trial: usize,
) -> Result<Outcome> {
    let unit = generate_unit(&NetworkGenSpec::standard(cell.d, m, teacher_seed))?;
    let dist = InputDistribution {
        kind: grid.input.clone(),
        dim: cell.d,
    };
    let train = sample(&unit, &dist, cell.n, cell.sigma, data_seed)?;
    let test = sample(
        &unit,
        &dist,
        grid.test_set_size,
        0.0,
        grid.test_seed(cell.d, teacher, trial),
    )?;
    let label = |r: ErrorReport| r.labeled(cell.n, Some(data_seed), cell.method.label());
    match cell.method {
        Method::Qp | Method::Lp | Method::SlackLp => {
            let lm = cell.method.layer_method().expect("layer method");
            let res = full_pipeline(&train, lm, &grid.pipeline)?;
            let rep = relative_errors(&res.layer1.a_hat, &res.layer2.b_hat, &unit, &test)?;
            let note = (!res.diagnostics.is_empty()).then(|| res.diagnostics.join("; "));
            Ok((TrialStatus::Ok, Some(label(rep)), note))
        }
        Method::Sgd => {
            let cfg = SgdConfig {
                seed: grid.method_seed(cell, teacher, trial),
                ..grid.sgd.clone()
            };
            let res = sgd_train(&train, &cfg, Some(&unit))?;
            let rep = relative_errors(&res.a_hat, &res.b_hat, &unit, &test)?;
            let status = if res.diverged {
                TrialStatus::Diverged
            } else {
                TrialStatus::Ok
            };
            Ok((status, Some(label(rep)), None))
        }
        Method::VanillaLr => {
            let res = vanilla_lr(&train);
            match (res.success, res.a_hat, res.b_hat) {
                (true, Some(a), Some(b)) => {
                    let rep = relative_errors(&a, &b, &unit, &test)?;
                    Ok((TrialStatus::Ok, Some(label(rep)), None))
                }
                _ => Ok((
                    TrialStatus::Unsuccessful,
                    None,
                    Some(format!(
                        "{} negative / {} positive samples",
                        res.n_neg_used, res.n_pos_used
                    )),
                )),
            }
        }
    }
}

fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("cell-{hash}.json"))
}

fn load_cached(dir: &Path, hash: &str) -> Option<Vec<TrialRecord>> {
    let text = fs::read_to_string(cache_path(dir, hash)).ok()?;
    serde_json::from_str(&text).ok()
}

fn run_cell(grid: &TrialGrid, cell: &CellKey) -> Vec<TrialRecord> {
    let tasks: Vec<(usize, usize)> = (0..grid.teachers_per_cell)
        .flat_map(|t| (0..grid.trials_per_cell).map(move |r| (t, r)))
        .collect();
    tasks
        .par_iter()
        .map(|&(t, r)| run_trial(grid, cell, t, r))
        .collect()
}

/// Runs every cell, reusing cached cells, and aggregates.
pub fn run_grid(grid: &TrialGrid, opts: &RunOptions) -> Result<GridOutput> {
    grid.validate()?;
    if let Some(dir) = &opts.cache_dir {
        fs::create_dir_all(dir)?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let mut records = Vec::new();
    let mut cached_cells = 0;
    for cell in grid.cells() {
        let hash = grid.cell_hash(&cell);
        if let Some(dir) = &opts.cache_dir {
            if let Some(recs) = load_cached(dir, &hash) {
                cached_cells += 1;
                records.extend(recs);
                continue;
            }
        }
        let started = Instant::now();
        let recs = pool.install(|| run_cell(grid, &cell));
        info!(
            "cell d={} n={} sigma={} {}: {} trials in {:.1}s",
            cell.d,
            cell.n,
            cell.sigma,
            cell.method.label(),
            recs.len(),
            started.elapsed().as_secs_f64()
        );
        if let Some(dir) = &opts.cache_dir {
            let tmp = cache_path(dir, &format!("{hash}.tmp"));
            fs::write(&tmp, serde_json::to_vec(&recs)?)?;
            fs::rename(&tmp, cache_path(dir, &hash))?;
        }
        records.extend(recs);
    }
    let summary = aggregate(&records);
    Ok(GridOutput {
        config: grid.clone(),
        records,
        summary,
        cached_cells,
    })
}

/// Per-cell statistics, in order of first appearance.
pub fn aggregate(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut order: Vec<(usize, usize, u64, Method)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize, u64, Method), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.d, r.n, r.sigma.to_bits(), r.method);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let count = |s: TrialStatus| rs.iter().filter(|r| r.status == s).count();
            let ok: Vec<&&TrialRecord> =
                rs.iter().filter(|r| r.status == TrialStatus::Ok).collect();
            let col = |f: fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            CellSummary {
                d: rs[0].d,
                m: rs[0].m,
                n: rs[0].n,
                sigma: rs[0].sigma,
                method: rs[0].method,
                trials: rs.len(),
                ok: ok.len(),
                unsuccessful: count(TrialStatus::Unsuccessful),
                diverged: count(TrialStatus::Diverged),
                errors: count(TrialStatus::Error),
                success_rate: ok.len() as f64 / rs.len() as f64,
                layer1: Stat::of(&col(|r| r.layer1_rel)),
                layer2: Stat::of(&col(|r| r.layer2_rel)),
                output: Stat::of(&col(|r| r.output_rel)),
            }
        })
        .collect()
}

/// Long-format CSV, one row per trial.
pub fn write_records_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
