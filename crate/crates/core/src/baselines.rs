//! Reference learners: vanilla linear regression on sign-filtered inputs and
//! mini-batch SGD on the squared output loss.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rng_from_seed, ResidualUnit, SampleSet};
use crate::numerics::{lls_solve, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaLrResult {
    pub a_hat: Option<Mat>,
    pub b_hat: Option<Mat>,
    pub n_neg_used: usize,
    pub n_pos_used: usize,
    pub success: bool,
}

fn filtered(samples: &SampleSet, range: std::ops::Range<usize>, negative: bool) -> Vec<usize> {
    range
        .filter(|&i| {
            samples
                .x(i)
                .iter()
                .all(|&v| if negative { v < 0.0 } else { v > 0.0 })
        })
        .collect()
}

/// Learns `B` from all-negative inputs in the first half and `B(A + I)` from
/// all-positive inputs in the second half.
pub fn vanilla_lr(samples: &SampleSet) -> VanillaLrResult {
    let n = samples.n();
    let d = samples.d();
    let half = n / 2;
    let neg = filtered(samples, 0..half, true);
    let pos = filtered(samples, half..n, false);
    let mut out = VanillaLrResult {
        a_hat: None,
        b_hat: None,
        n_neg_used: neg.len(),
        n_pos_used: pos.len(),
        success: false,
    };
    let fit = |idx: &[usize]| -> Option<Mat> {
        if idx.len() < d {
            return None;
        }
        let s = samples.select(idx);
        lls_solve(&s.xs, &s.ys).ok().map(|f| f.coeffs)
    };
    let (Some(b_hat), Some(d_hat)) = (fit(&neg), fit(&pos)) else {
        return out;
    };
    // B̂ Ã = D̂ as a least-squares system over the m output rows.
    let Ok(sol) = lls_solve(&b_hat, &d_hat) else {
        return out;
    };
    let mut a_hat = sol.coeffs.transpose();
    for j in 0..d {
        a_hat[(j, j)] -= 1.0;
    }
    out.a_hat = Some(a_hat);
    out.b_hat = Some(b_hat);
    out.success = true;
    out
}

/// `d · 2^(d+1)`, the lower bound on the expected sample count for vanilla LR
/// under symmetric coordinate signs.
pub fn expected_sample_bound(d: u32) -> f64 {
    d as f64 * 2f64.powi(d as i32 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SgdInit {
    /// i.i.d. `N(0, std²)` entries, `A` clamped nonnegative.
    GaussianSmall { std: f64 },
    /// Teacher weights plus `N(0, scale²)` noise.
    TeacherPerturbed { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub eta0: f64,
    pub gamma: f64,
    pub seed: u64,
    pub init: SgdInit,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            batch_size: 32,
            epochs: 256,
            eta0: 1e-3,
            gamma: 1e-5,
            seed: 0,
            init: SgdInit::GaussianSmall { std: 0.1 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdResult {
    pub a_hat: Mat,
    pub b_hat: Mat,
    /// Entry 0 is the loss at initialization.
    pub loss_trace: Vec<EpochLoss>,
    pub diverged: bool,
}

impl SgdResult {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "mean_loss", "eta"])?;
        for e in &self.loss_trace {
            wr.write_record([
                e.epoch.to_string(),
                e.mean_loss.to_string(),
                e.eta.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Mean of `½‖B[(Ax)^+ + x] − y‖²` over `idx` and its gradients in `A`, `B`.
/// The ReLU subgradient at 0 is 0.
pub fn sgd_gradient(a: &Mat, b: &Mat, samples: &SampleSet, idx: &[usize]) -> (f64, Mat, Mat) {
    let (d, m) = (a.rows(), b.rows());
    let mut ga = Mat::zeros(d, d);
    let mut gb = Mat::zeros(m, d);
    let mut loss = 0.0;
    let mut z = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut r = vec![0.0; m];
    let mut du = vec![0.0; d];
    for &i in idx {
        let x = samples.x(i);
        for j in 0..d {
            z[j] = a.row(j).iter().zip(x).map(|(p, q)| p * q).sum();
            u[j] = z[j].max(0.0) + x[j];
        }
        let y = samples.y(i);
        for k in 0..m {
            r[k] = b.row(k).iter().zip(&u).map(|(p, q)| p * q).sum::<f64>() - y[k];
            loss += 0.5 * r[k] * r[k];
            for (g, uj) in gb.row_mut(k).iter_mut().zip(&u) {
                *g += r[k] * uj;
            }
        }
        for j in 0..d {
            du[j] = if z[j] > 0.0 {
                (0..m).map(|k| b[(k, j)] * r[k]).sum()
            } else {
                0.0
            };
            if du[j] != 0.0 {
                for (g, xk) in ga.row_mut(j).iter_mut().zip(x) {
                    *g += du[j] * xk;
                }
            }
        }
    }
    let s = 1.0 / idx.len().max(1) as f64;
    (loss * s, ga.scale(s), gb.scale(s))
}

fn full_loss(a: &Mat, b: &Mat, samples: &SampleSet, all: &[usize]) -> f64 {
    sgd_gradient(a, b, samples, all).0
}

/// Mini-batch SGD from the configured initialization. `teacher` is required
/// for `TeacherPerturbed`.
pub fn sgd_train(
    samples: &SampleSet,
    cfg: &SgdConfig,
    teacher: Option<&ResidualUnit>,
) -> Result<SgdResult> {
    let (n, d, m) = (samples.n(), samples.d(), samples.m());
    if cfg.batch_size == 0 || n < cfg.batch_size {
        return Err(Error::InvalidParameter(format!(
            "need n >= batch_size >= 1, got n = {n}, batch_size = {}",
            cfg.batch_size
        )));
    }
    if !(cfg.eta0 > 0.0) || !(cfg.gamma >= 0.0) {
        return Err(Error::InvalidParameter(
            "eta0 must be positive and gamma nonnegative".into(),
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let (mut a, mut b) = match &cfg.init {
        SgdInit::GaussianSmall { std } => {
            let a = Mat::from_fn(d, d, |_, _| {
                (std * rng.sample::<f64, _>(StandardNormal)).max(0.0)
            });
            let b = Mat::from_fn(m, d, |_, _| std * rng.sample::<f64, _>(StandardNormal));
            (a, b)
        }
        SgdInit::TeacherPerturbed { scale } => {
            let t = teacher.ok_or_else(|| {
                Error::InvalidParameter("teacher-perturbed init needs a teacher".into())
            })?;
            if t.d() != d || t.m() != m {
                return Err(Error::DimensionMismatch(
                    "teacher shape differs from samples".into(),
                ));
            }
            let a = Mat::from_fn(d, d, |i, j| {
                t.a[(i, j)] + scale * rng.sample::<f64, _>(StandardNormal)
            });
            let b = Mat::from_fn(m, d, |i, j| {
                t.b[(i, j)] + scale * rng.sample::<f64, _>(StandardNormal)
            });
            (a, b)
        }
    };
    let all: Vec<usize> = (0..n).collect();
    let initial = full_loss(&a, &b, samples, &all);
    let mut trace = vec![EpochLoss {
        epoch: 0,
        mean_loss: initial,
        eta: cfg.eta0,
    }];
    let mut order = all.clone();
    let mut diverged = false;
    for epoch in 1..=cfg.epochs {
        let eta = cfg.eta0 / (1.0 + cfg.gamma * epoch as f64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, ga, gb) = sgd_gradient(&a, &b, samples, batch);
            a.data_mut()
                .iter_mut()
                .zip(ga.data())
                .for_each(|(p, g)| *p -= eta * g);
            b.data_mut()
                .iter_mut()
                .zip(gb.data())
                .for_each(|(p, g)| *p -= eta * g);
        }
        let loss = full_loss(&a, &b, samples, &all);
        trace.push(EpochLoss {
            epoch,
            mean_loss: loss,
            eta,
        });
        if !loss.is_finite() || loss > 1e6 * initial.max(f64::MIN_POSITIVE) {
            diverged = true;
            break;
        }
    }
    Ok(SgdResult {
        a_hat: a,
        b_hat: b,
        loss_trace: trace,
        diverged,
    })
}
