//! Seeded data-generating processes.
//!
//! Every generator is a pure function of its parameters and seed. Each source
//! of randomness (coefficients, features, privileged column, noise) gets its
//! own child stream of the seed, and each row consumes a fixed number of
//! draws, so the first `n` rows are identical whatever total size is
//! requested. Experiments take their train and test sets from one draw:
//! training rows first, test rows after.

mod dataset;

use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::net::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

pub use dataset::{one_hot, DatasetMeta, Standardizer, Task, TripleDataset};

const ALPHA_STREAM: u64 = 0;
const X_STREAM: u64 = 1;
const Z_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const V_STREAM: u64 = 4;
const SUBSET_STREAM: u64 = 5;
const LABEL_STREAM: u64 = 6;

/// Number of grid points used to measure bias against [`noise_free_target`].
pub const BIAS_GRID_SIZE: usize = 1024;

/// The clean regression target `sin(2 pi x)`.
pub fn noise_free_target(x: f64) -> f64 {
    (TAU * x).sin()
}

/// Midpoint grid `(i + 1/2) / size` on `[0, 1]`.
pub fn bias_grid(size: usize) -> Vec<f64> {
    (0..size).map(|i| (i as f64 + 0.5) / size as f64).collect()
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.normal())
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

/// Label rule of the clean-labels process: `1{z + noise > 0}`.
pub fn experiment1_label(distance: f64, noise: f64) -> f64 {
    if distance + noise > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Clean labels as privileged information.
///
/// `x ~ N(0, I_d)`, `z = <alpha, x>`, `y = 1{z + eps > 0}` with
/// `eps ~ N(0, 1)` and `alpha ~ N(0, I_d)` drawn once per dataset.
pub fn gen_experiment1(n: usize, d: usize, seed: u64) -> Result<TripleDataset> {
    require(n >= 1 && d >= 1, || format!("need n >= 1 and d >= 1, got n={n}, d={d}"))?;
    let root = Rng::new(seed);
    let mut alpha_rng = root.split(ALPHA_STREAM);
    let alpha: Array1<f64> = (0..d).map(|_| alpha_rng.normal()).collect();
    let x = normal_matrix(&mut root.split(X_STREAM), n, d);
    let mut noise = root.split(NOISE_STREAM);
    let z = x.dot(&alpha);
    let y: Array1<f64> = z.iter().map(|&zi| experiment1_label(zi, noise.normal())).collect();
    let meta = DatasetMeta::new("experiment1", seed)
        .with("d", d)
        .with("alpha", alpha.to_vec());
    TripleDataset::new(
        x,
        z.insert_axis(ndarray::Axis(1)),
        y.insert_axis(ndarray::Axis(1)),
        Task::Binary,
        meta,
    )
}

/// Label rule of the relevant-features process: `1{<alpha, z> > 0}`.
pub fn experiment3_label(z: &[f64], alpha: &[f64]) -> f64 {
    let s: f64 = z.iter().zip(alpha).map(|(a, b)| a * b).sum();
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Relevant features as privileged information.
///
/// `x ~ N(0, I_d)`, `z = x_J` for a random `j`-subset `J` shared by all rows,
/// `y = 1{<alpha, z> > 0}`. `J` (0-based, in draw order) and `alpha` are
/// recorded in the metadata.
pub fn gen_experiment3(n: usize, d: usize, j: usize, seed: u64) -> Result<TripleDataset> {
    require(n >= 1 && d >= 1, || format!("need n >= 1 and d >= 1, got n={n}, d={d}"))?;
    require((1..=d).contains(&j), || format!("subset size must lie in 1..={d}, got {j}"))?;
    let root = Rng::new(seed);
    let mut alpha_rng = root.split(ALPHA_STREAM);
    let alpha: Vec<f64> = (0..j).map(|_| alpha_rng.normal()).collect();
    let subset = root.split(SUBSET_STREAM).sample_indices(d, j);
    let x = normal_matrix(&mut root.split(X_STREAM), n, d);
    let z = x.select(ndarray::Axis(1), &subset);
    let y = Array2::from_shape_fn((n, 1), |(i, _)| {
        experiment3_label(&z.row(i).to_vec(), &alpha)
    });
    let meta = DatasetMeta::new("experiment3", seed)
        .with("d", d)
        .with("j", j)
        .with("alpha", alpha)
        .with("subset", subset);
    TripleDataset::new(x, z, y, Task::Binary, meta)
}

/// Noisy-annotator regression.
///
/// `x ~ U[0, 1]`, `z ~ Ber(p_corrupt)`, `v ~ U(-1, 1)`,
/// `eps ~ N(0, noise_std^2)`, `y = (1 - z) sin(2 pi x) + z v + eps`.
pub fn gen_tram_regression(n: usize, p_corrupt: f64, noise_std: f64, seed: u64) -> Result<TripleDataset> {
    require(n >= 1, || "need n >= 1".into())?;
    require((0.0..=1.0).contains(&p_corrupt), || format!("p_corrupt must lie in [0, 1], got {p_corrupt}"))?;
    require(noise_std >= 0.0 && noise_std.is_finite(), || format!("noise_std must be >= 0, got {noise_std}"))?;
    let root = Rng::new(seed);
    let (mut xr, mut zr, mut vr, mut er) = (
        root.split(X_STREAM),
        root.split(Z_STREAM),
        root.split(V_STREAM),
        root.split(NOISE_STREAM),
    );
    let mut x = Matrix::zeros((n, 1));
    let mut z = Matrix::zeros((n, 1));
    let mut y = Matrix::zeros((n, 1));
    for i in 0..n {
        let xi = xr.uniform();
        let zi = if zr.bernoulli(p_corrupt) { 1.0 } else { 0.0 };
        let vi = vr.uniform_range(-1.0, 1.0);
        let eps = noise_std * er.normal();
        x[[i, 0]] = xi;
        z[[i, 0]] = zi;
        y[[i, 0]] = (1.0 - zi) * noise_free_target(xi) + zi * vi + eps;
    }
    let meta = DatasetMeta::new("tram_regression", seed)
        .with("p_corrupt", p_corrupt)
        .with("noise_std", noise_std);
    TripleDataset::new(x, z, y, Task::Regression, meta)
}

/// The same process with no corrupted rows, `y = sin(2 pi x) + eps`.
pub fn gen_uncorrupted_regression(n: usize, noise_std: f64, seed: u64) -> Result<TripleDataset> {
    let d = gen_tram_regression(n, 0.0, noise_std, seed)?;
    let meta = DatasetMeta::new("uncorrupted_regression", seed).with("noise_std", noise_std);
    TripleDataset::new(d.x().to_owned(), d.z().to_owned(), d.y().to_owned(), Task::Regression, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// `v = 1`
    Deterministic,
    /// `v ~ Ber(0.7)`
    Bernoulli,
    /// `v ~ U[-1, 1]`
    Uniform,
    /// `v = cos(2 pi x)`
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRegime {
    pub kind: RegimeKind,
    #[serde(default = "default_p_corrupt")]
    pub p_corrupt: f64,
}

fn default_p_corrupt() -> f64 {
    0.3
}

impl CorruptionRegime {
    pub fn new(kind: RegimeKind) -> Self {
        Self {
            kind,
            p_corrupt: default_p_corrupt(),
        }
    }

    fn draw_v(&self, x: f64, rng: &mut Rng) -> f64 {
        // one draw per row in every regime keeps streams aligned
        let u = rng.uniform();
        match self.kind {
            RegimeKind::Deterministic => 1.0,
            RegimeKind::Bernoulli => {
                if u < 0.7 {
                    1.0
                } else {
                    0.0
                }
            }
            RegimeKind::Uniform => -1.0 + 2.0 * u,
            RegimeKind::Cosine => (TAU * x).cos(),
        }
    }
}

/// Label score `(1 - z) sin(2 pi x) + z v`.
pub fn classification_score(x: f64, z: f64, v: f64) -> f64 {
    (1.0 - z) * noise_free_target(x) + z * v
}

/// Binary version of the noisy-annotator process:
/// `y ~ Ber(clamp(score, 0, 1))`.
pub fn gen_tram_classification(n: usize, regime: CorruptionRegime, seed: u64) -> Result<TripleDataset> {
    require(n >= 1, || "need n >= 1".into())?;
    require((0.0..=1.0).contains(&regime.p_corrupt), || {
        format!("p_corrupt must lie in [0, 1], got {}", regime.p_corrupt)
    })?;
    let root = Rng::new(seed);
    let (mut xr, mut zr, mut vr, mut yr) = (
        root.split(X_STREAM),
        root.split(Z_STREAM),
        root.split(V_STREAM),
        root.split(LABEL_STREAM),
    );
    let mut x = Matrix::zeros((n, 1));
    let mut z = Matrix::zeros((n, 1));
    let mut y = Matrix::zeros((n, 1));
    for i in 0..n {
        let xi = xr.uniform();
        let zi = if zr.bernoulli(regime.p_corrupt) { 1.0 } else { 0.0 };
        let vi = regime.draw_v(xi, &mut vr);
        let score = classification_score(xi, zi, vi).clamp(0.0, 1.0);
        x[[i, 0]] = xi;
        z[[i, 0]] = zi;
        y[[i, 0]] = if yr.bernoulli(score) { 1.0 } else { 0.0 };
    }
    let meta = DatasetMeta::new("tram_classification", seed)
        .with("regime", serde_json::to_value(regime.kind)?)
        .with("p_corrupt", regime.p_corrupt);
    TripleDataset::new(x, z, y, Task::Binary, meta)
}

/// Linear model with independent Gaussian regular and privileged features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPIConfig {
    pub d_x: usize,
    pub d_z: usize,
    pub n: usize,
    pub sigma: f64,
    pub w_star: Vec<f64>,
    pub v_star: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl LinearPIConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.d_x >= 1, || "d_x must be >= 1".into())?;
        require(self.w_star.len() == self.d_x, || {
            format!("w_star has {} entries for d_x = {}", self.w_star.len(), self.d_x)
        })?;
        require(self.v_star.len() == self.d_z, || {
            format!("v_star has {} entries for d_z = {}", self.v_star.len(), self.d_z)
        })?;
        require(self.sigma >= 0.0 && self.sigma.is_finite(), || "sigma must be >= 0".into())?;
        require(self.n > self.d_x + self.d_z + 1, || {
            format!("need n > d_x + d_z + 1, got n={}, d_x={}, d_z={}", self.n, self.d_x, self.d_z)
        })
    }

    pub fn v_norm_sq(&self) -> f64 {
        self.v_star.iter().map(|v| v * v).sum()
    }
}

/// `y = x^T w* + z^T v* + eps`, `x ~ N(0, I)`, `z ~ N(0, I)`, `eps ~ N(0, sigma^2)`.
pub fn gen_linear_pi(cfg: &LinearPIConfig) -> Result<TripleDataset> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let x = normal_matrix(&mut root.split(X_STREAM), cfg.n, cfg.d_x);
    let z = normal_matrix(&mut root.split(Z_STREAM), cfg.n, cfg.d_z);
    let mut noise = root.split(NOISE_STREAM);
    let w = Array1::from(cfg.w_star.clone());
    let v = Array1::from(cfg.v_star.clone());
    let mut y = x.dot(&w);
    if cfg.d_z > 0 {
        y += &z.dot(&v);
    }
    for yi in y.iter_mut() {
        *yi += cfg.sigma * noise.normal();
    }
    let meta = DatasetMeta::new("linear_pi", cfg.seed)
        .with("sigma", cfg.sigma)
        .with("w_star", cfg.w_star.clone())
        .with("v_star", cfg.v_star.clone());
    TripleDataset::new(x, z, y.insert_axis(ndarray::Axis(1)), Task::Regression, meta)
}

/// Serializable choice of generator, used by experiment configs and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Experiment1 {
        #[serde(default = "default_d")]
        d: usize,
    },
    Experiment3 {
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_j")]
        j: usize,
    },
    TramRegression {
        #[serde(default = "default_p_corrupt")]
        p_corrupt: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    TramClassification {
        regime: RegimeKind,
        #[serde(default = "default_p_corrupt")]
        p_corrupt: f64,
    },
    LinearPi {
        d_x: usize,
        d_z: usize,
        sigma: f64,
        w_star: Vec<f64>,
        v_star: Vec<f64>,
    },
}

fn default_d() -> usize {
    50
}
fn default_j() -> usize {
    3
}
fn default_noise_std() -> f64 {
    0.1
}

impl GeneratorSpec {
    pub fn generate(&self, n: usize, seed: u64) -> Result<TripleDataset> {
        match self {
            GeneratorSpec::Experiment1 { d } => gen_experiment1(n, *d, seed),
            GeneratorSpec::Experiment3 { d, j } => gen_experiment3(n, *d, *j, seed),
            GeneratorSpec::TramRegression { p_corrupt, noise_std } => {
                gen_tram_regression(n, *p_corrupt, *noise_std, seed)
            }
            GeneratorSpec::TramClassification { regime, p_corrupt } => gen_tram_classification(
                n,
                CorruptionRegime {
                    kind: *regime,
                    p_corrupt: *p_corrupt,
                },
                seed,
            ),
            GeneratorSpec::LinearPi {
                d_x,
                d_z,
                sigma,
                w_star,
                v_star,
            } => gen_linear_pi(&LinearPIConfig {
                d_x: *d_x,
                d_z: *d_z,
                n,
                sigma: *sigma,
                w_star: w_star.clone(),
                v_star: v_star.clone(),
                seed,
            }),
        }
    }

    /// The uncorrupted counterpart of a noisy-annotator generator, if any.
    pub fn uncorrupted(&self) -> Option<GeneratorSpec> {
        match self {
            GeneratorSpec::TramRegression { noise_std, .. } => Some(GeneratorSpec::TramRegression {
                p_corrupt: 0.0,
                noise_std: *noise_std,
            }),
            GeneratorSpec::TramClassification { regime, .. } => Some(GeneratorSpec::TramClassification {
                regime: *regime,
                p_corrupt: 0.0,
            }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::Experiment1 { .. } => "experiment1",
            GeneratorSpec::Experiment3 { .. } => "experiment3",
            GeneratorSpec::TramRegression { .. } => "tram_regression",
            GeneratorSpec::TramClassification { .. } => "tram_classification",
            GeneratorSpec::LinearPi { .. } => "linear_pi",
        }
    }
}
