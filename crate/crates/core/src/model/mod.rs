//! Residual units `y = B[(Ax)^+ + x]`, input distributions and sampling.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based
//! stream cipher generator, seeded with `seed_from_u64`. Normal draws use
//! `rand_distr::Normal` and uniform draws `rand_distr::Uniform`.

mod io;

pub use io::{read_csv, DatasetHeader};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{relu, singular_values, Mat};

/// Smallest allowed ratio of extreme singular values for generated weights.
pub const RANK_RATIO: f64 = 1e-8;
pub const GENERATION_RETRIES: usize = 100;

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Stable 64-bit seed derived from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualUnit {
    /// Layer-1 weights, `d x d`.
    pub a: Mat,
    /// Layer-2 weights, `m x d`.
    pub b: Mat,
}

impl ResidualUnit {
    /// Builds a unit and checks the teacher invariants.
    pub fn new(a: Mat, b: Mat) -> Result<ResidualUnit> {
        let u = ResidualUnit { a, b };
        u.validate()?;
        Ok(u)
    }

    pub fn d(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.a.rows();
        if !self.a.is_square() || self.b.cols() != d {
            return Err(Error::DimensionMismatch(format!(
                "a is {}x{}, b is {}x{}",
                self.a.rows(),
                self.a.cols(),
                self.b.rows(),
                self.b.cols()
            )));
        }
        Ok(())
    }

    /// Shapes, nonnegative finite `a`, full-rank `a` and `b`, `m >= d`.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter("non-finite weights".into()));
        }
        if self.a.min_entry() < 0.0 {
            return Err(Error::InvalidParameter(
                "layer-1 weights must be nonnegative".into(),
            ));
        }
        if self.m() < self.d() {
            return Err(Error::InvalidParameter(format!(
                "m = {} must be at least d = {}",
                self.m(),
                self.d()
            )));
        }
        if !full_rank(&self.a) || !full_rank(&self.b) {
            return Err(Error::InvalidParameter("weights are not full rank".into()));
        }
        Ok(())
    }

    /// `(a x)^+`
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.a.rows())
            .map(|j| relu(crate::numerics::dot(self.a.row(j), x)))
            .collect()
    }

    /// `b((a x)^+ + x)` on a slice; panics on a length mismatch.
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d(), "input length");
        let w: Vec<f64> = self.hidden(x).iter().zip(x).map(|(h, xi)| h + xi).collect();
        (0..self.b.rows())
            .map(|i| crate::numerics::dot(self.b.row(i), &w))
            .collect()
    }

    /// Rows of `a` whose off-diagonal entries are all zero.
    pub fn scale_transform_rows(&self) -> Vec<usize> {
        (0..self.a.rows())
            .filter(|&j| is_scale_row(&self.a, j))
            .collect()
    }
}

/// Row `j` is a scale transformation when every off-diagonal entry is zero.
pub fn is_scale_row(a: &Mat, j: usize) -> bool {
    a.row(j)
        .iter()
        .enumerate()
        .all(|(k, &v)| k == j || v == 0.0)
}

fn full_rank(m: &Mat) -> bool {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) => hi > 0.0 && lo > RANK_RATIO * hi,
        _ => false,
    }
}

/// `b((a x)^+ + x)` for a `d x 1` column.
pub fn forward(unit: &ResidualUnit, x: &Mat) -> Result<Mat> {
    unit.check_shapes()?;
    if x.shape() != (unit.d(), 1) {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{}, expected {}x1",
            x.rows(),
            x.cols(),
            unit.d()
        )));
    }
    Ok(Mat::col_vec(unit.output(x.data())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    GaussianIid {
        mean: f64,
        std: f64,
    },
    FoldedGaussianIid {
        mean: f64,
        std: f64,
    },
    /// Each coordinate is `N(g_mean, g_std²)` or `U(u_lo, u_hi)` with probability 1/2.
    GaussUniformMixture {
        g_mean: f64,
        g_std: f64,
        u_lo: f64,
        u_hi: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    pub kind: InputKind,
    pub dim: usize,
}

impl InputDistribution {
    /// Equal mixture of `N(-0.1, 1)` and `U(-0.9, 1.1)` per coordinate.
    pub fn mixture(dim: usize) -> InputDistribution {
        InputDistribution {
            kind: InputKind::GaussUniformMixture {
                g_mean: -0.1,
                g_std: 1.0,
                u_lo: -0.9,
                u_hi: 1.1,
            },
            dim,
        }
    }

    pub fn gaussian(dim: usize, mean: f64, std: f64) -> InputDistribution {
        InputDistribution {
            kind: InputKind::GaussianIid { mean, std },
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            InputKind::GaussianIid { mean, std } | InputKind::FoldedGaussianIid { mean, std } => {
                mean.is_finite() && std.is_finite() && std >= 0.0
            }
            InputKind::GaussUniformMixture {
                g_mean,
                g_std,
                u_lo,
                u_hi,
            } => g_mean.is_finite() && g_std.is_finite() && g_std >= 0.0 && u_lo < u_hi,
        };
        if !ok || self.dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "bad input distribution {self:?}"
            )));
        }
        Ok(())
    }

    /// Fills `out` with one draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            InputKind::GaussianIid { mean, std } => {
                let n = Normal::new(mean, std).expect("validated std");
                out.iter_mut().for_each(|v| *v = n.sample(rng));
            }
            InputKind::FoldedGaussianIid { mean, std } => {
                let n = Normal::new(mean, std).expect("validated std");
                out.iter_mut().for_each(|v| *v = n.sample(rng).abs());
            }
            InputKind::GaussUniformMixture {
                g_mean,
                g_std,
                u_lo,
                u_hi,
            } => {
                let n = Normal::new(g_mean, g_std).expect("validated std");
                let u = Uniform::new(u_lo, u_hi);
                for v in out.iter_mut() {
                    *v = if rng.gen_bool(0.5) {
                        n.sample(rng)
                    } else {
                        u.sample(rng)
                    };
                }
            }
        }
    }
}

/// Paired samples stored as matrices: row `i` of `xs` is `x(i)ᵀ`, row `i` of `ys` is `y(i)ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub xs: Mat,
    pub ys: Mat,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(xs: Mat, ys: Mat, noise_sigma: f64, seed: Option<u64>) -> Result<SampleSet> {
        if xs.rows() != ys.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs but {} outputs",
                xs.rows(),
                ys.rows()
            )));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be >= 0".into()));
        }
        Ok(SampleSet {
            xs,
            ys,
            noise_sigma,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.xs.rows()
    }

    pub fn d(&self) -> usize {
        self.xs.cols()
    }

    pub fn m(&self) -> usize {
        self.ys.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.xs.row(i)
    }

    pub fn y(&self, i: usize) -> &[f64] {
        self.ys.row(i)
    }

    /// The first `k` samples.
    pub fn prefix(&self, k: usize) -> SampleSet {
        let idx: Vec<usize> = (0..k.min(self.n())).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> SampleSet {
        SampleSet {
            xs: self.xs.select_rows(idx),
            ys: self.ys.select_rows(idx),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

/// Draws `n` samples from `unit`, adding `N(0, noise_sigma²)` label noise.
pub fn sample(
    unit: &ResidualUnit,
    dist: &InputDistribution,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SampleSet> {
    unit.check_shapes()?;
    dist.validate()?;
    if dist.dim != unit.d() {
        return Err(Error::DimensionMismatch(format!(
            "distribution dim {} vs unit d {}",
            dist.dim,
            unit.d()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidParameter(
            "noise_sigma must be finite and >= 0".into(),
        ));
    }
    let (d, m) = (unit.d(), unit.m());
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("checked sigma");
    let mut xs = Mat::zeros(n, d);
    let mut ys = Mat::zeros(n, m);
    for i in 0..n {
        dist.draw(&mut rng, xs.row_mut(i));
        let y = unit.output(xs.row(i));
        let yrow = ys.row_mut(i);
        yrow.copy_from_slice(&y);
        if noise_sigma > 0.0 {
            yrow.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    SampleSet::new(xs, ys, noise_sigma, Some(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkGenSpec {
    pub d: usize,
    pub m: usize,
    /// Entries of `a` are `|N(mean, std²)|`.
    pub layer1_dist: GaussianParams,
    /// Entries of `b` are `N(mean, std²)`.
    pub layer2_dist: GaussianParams,
    pub seed: u64,
    pub require_non_scale_transform: bool,
}

impl NetworkGenSpec {
    /// Folded standard Gaussian `a`, standard Gaussian `b`.
    pub fn standard(d: usize, m: usize, seed: u64) -> NetworkGenSpec {
        NetworkGenSpec {
            d,
            m,
            layer1_dist: GaussianParams {
                mean: 0.0,
                std: 1.0,
            },
            layer2_dist: GaussianParams {
                mean: 0.0,
                std: 1.0,
            },
            seed,
            require_non_scale_transform: true,
        }
    }
}

/// Draws a unit, resampling until the rank and scale-transformation requirements hold.
pub fn generate_unit(spec: &NetworkGenSpec) -> Result<ResidualUnit> {
    if spec.d == 0 || spec.m < spec.d {
        return Err(Error::InvalidParameter(format!(
            "need d >= 1 and m >= d, got d = {}, m = {}",
            spec.d, spec.m
        )));
    }
    if spec.require_non_scale_transform && spec.d == 1 {
        return Err(Error::InvalidParameter(
            "every d = 1 unit is a scale transformation".into(),
        ));
    }
    let l1 = Normal::new(spec.layer1_dist.mean, spec.layer1_dist.std)
        .map_err(|e| Error::InvalidParameter(format!("layer-1 distribution: {e}")))?;
    let l2 = Normal::new(spec.layer2_dist.mean, spec.layer2_dist.std)
        .map_err(|e| Error::InvalidParameter(format!("layer-2 distribution: {e}")))?;
    let mut rng = rng_from_seed(spec.seed);
    for _ in 0..GENERATION_RETRIES {
        let a = Mat::from_fn(spec.d, spec.d, |_, _| l1.sample(&mut rng).abs());
        let b = Mat::from_fn(spec.m, spec.d, |_, _| l2.sample(&mut rng));
        let unit = ResidualUnit { a, b };
        if !full_rank(&unit.a) || !full_rank(&unit.b) {
            continue;
        }
        if spec.require_non_scale_transform && !unit.scale_transform_rows().is_empty() {
            continue;
        }
        return Ok(unit);
    }
    Err(Error::GenerationFailed(GENERATION_RETRIES))
}
