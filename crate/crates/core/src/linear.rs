//! Regular versus distilled linear least squares when privileged features
//! enter the label linearly.
//!
//! With `y = X w* + Z v* + eps`, the plain estimator `X^+ y` and the
//! distilled estimator `X^+ [X Z] theta`, with `theta = [X Z]^+ y`, have
//! closed-form expected squared errors under Gaussian designs. This module
//! provides both estimators, the closed forms and a Monte-Carlo check.

use ndarray::{concatenate, Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::net::{least_squares, least_squares_with_rank, matrix_rank};
use crate::rng::derive_seed;
use crate::synthgen::{gen_linear_pi, LinearPIConfig};
use crate::{Error, Result};

/// Minimum-norm least squares `X^+ y`.
pub fn ols_fit(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.nrows() <= x.ncols() {
        return Err(Error::InvalidConfig(format!(
            "need more rows than columns, got {} x {}",
            x.nrows(),
            x.ncols()
        )));
    }
    least_squares(x, y)
}

/// Distilled estimator: fit on `[X | Z]`, then regress the fitted values on
/// `X` alone.
pub fn distill_fit(x: ArrayView2<f64>, z: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    if z.ncols() == 0 {
        return ols_fit(x, y);
    }
    let (n, d_x, d_z) = (x.nrows(), x.ncols(), z.ncols());
    if n <= d_x + d_z {
        return Err(Error::InvalidConfig(format!(
            "need n > d_x + d_z, got n={n}, d_x={d_x}, d_z={d_z}"
        )));
    }
    let rank_x = matrix_rank(x)?;
    if rank_x < d_x {
        return Err(Error::RankDeficient {
            block: "x",
            rank: rank_x,
            cols: d_x,
        });
    }
    let rank_z = matrix_rank(z)?;
    if rank_z < d_z {
        return Err(Error::RankDeficient {
            block: "z",
            rank: rank_z,
            cols: d_z,
        });
    }
    let xz = concatenate(Axis(1), &[x.view(), z.view()]).map_err(|e| Error::Shape(e.to_string()))?;
    let theta = least_squares_with_rank(xz.view(), y)?.coefficients;
    let fitted = xz.dot(&theta);
    least_squares(x, fitted.view())
}

/// `(risk_reg, risk_pri)` for Gaussian designs:
/// `d_x (sigma^2 + |v*|^2) / (n - d_x - 1)` and
/// `d_x |v*|^2 / (n - d_x - 1) + d_x sigma^2 / (n - d_x - d_z - 1)`.
pub fn closed_form_risks(cfg: &LinearPIConfig) -> Result<(f64, f64)> {
    let (n, d_x, d_z) = (cfg.n as f64, cfg.d_x as f64, cfg.d_z as f64);
    let den_reg = n - d_x - 1.0;
    let den_pri = n - d_x - d_z - 1.0;
    if den_reg <= 0.0 || den_pri <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "need n > d_x + d_z + 1, got n={}, d_x={}, d_z={}",
            cfg.n, cfg.d_x, cfg.d_z
        )));
    }
    let s2 = cfg.sigma * cfg.sigma;
    let v2 = cfg.v_norm_sq();
    Ok((d_x * (s2 + v2) / den_reg, d_x * v2 / den_reg + d_x * s2 / den_pri))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRiskReport {
    pub config: LinearPIConfig,
    pub trials: usize,
    pub failed_trials: usize,
    pub closed_form_reg: f64,
    pub closed_form_pri: f64,
    pub empirical_reg: f64,
    pub empirical_reg_se: f64,
    pub empirical_pri: f64,
    pub empirical_pri_se: f64,
}

impl LinearRiskReport {
    pub fn reg_relative_error(&self) -> f64 {
        (self.empirical_reg - self.closed_form_reg).abs() / self.closed_form_reg
    }

    pub fn pri_relative_error(&self) -> f64 {
        (self.empirical_pri - self.closed_form_pri).abs() / self.closed_form_pri
    }

    pub fn combined_se(&self) -> f64 {
        self.empirical_reg_se.hypot(self.empirical_pri_se)
    }

    /// Both empirical risks within `tol` (relative) of their closed forms.
    pub fn passes(&self, tol: f64) -> bool {
        self.reg_relative_error() <= tol && self.pri_relative_error() <= tol
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn squared_error(w: &Array1<f64>, w_star: &[f64]) -> f64 {
    w.iter().zip(w_star).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Draws `trials` datasets (trial `t` uses seed `derive_seed(cfg.seed, [t])`)
/// and averages `|w_hat - w*|^2` for both estimators. Trials run on the
/// current rayon pool; results do not depend on the thread count.
pub fn monte_carlo_risks(cfg: &LinearPIConfig, trials: usize) -> Result<LinearRiskReport> {
    cfg.validate()?;
    if trials < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 trials, got {trials}")));
    }
    let (closed_form_reg, closed_form_pri) = closed_form_risks(cfg)?;
    let outcomes: Vec<Option<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Option<(f64, f64)>> {
            let trial_cfg = LinearPIConfig {
                seed: derive_seed(cfg.seed, &[t as u64]),
                ..cfg.clone()
            };
            let data = gen_linear_pi(&trial_cfg)?;
            let y = data.y().column(0).to_owned();
            let reg = ols_fit(data.x(), y.view());
            let pri = distill_fit(data.x(), data.z(), y.view());
            match (reg, pri) {
                (Ok(r), Ok(p)) => Ok(Some((squared_error(&r, &cfg.w_star), squared_error(&p, &cfg.w_star)))),
                (Err(Error::RankDeficient { .. }), _) | (_, Err(Error::RankDeficient { .. })) => Ok(None),
                (Err(e), _) | (_, Err(e)) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let failed_trials = outcomes.iter().filter(|o| o.is_none()).count();
    if failed_trials * 100 > trials {
        return Err(Error::TooManyFailures {
            what: "linear risk trials",
            failed: failed_trials,
            total: trials,
        });
    }
    let (reg, pri): (Vec<f64>, Vec<f64>) = outcomes.into_iter().flatten().unzip();
    let (empirical_reg, empirical_reg_se) = mean_se(&reg);
    let (empirical_pri, empirical_pri_se) = mean_se(&pri);
    Ok(LinearRiskReport {
        config: cfg.clone(),
        trials,
        failed_trials,
        closed_form_reg,
        closed_form_pri,
        empirical_reg,
        empirical_reg_se,
        empirical_pri,
        empirical_pri_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Matrix;
    use crate::rng::Rng;
    use ndarray::Array2;

    fn cfg(d_x: usize, d_z: usize, n: usize, sigma: f64, v: f64) -> LinearPIConfig {
        LinearPIConfig {
            d_x,
            d_z,
            n,
            sigma,
            w_star: (0..d_x).map(|i| 1.0 - 0.1 * i as f64).collect(),
            v_star: (0..d_z).map(|i| if i == 0 { v } else { 0.0 }).collect(),
            seed: 17,
        }
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = Rng::new(seed);
        Array2::from_shape_fn((rows, cols), |_| r.normal())
    }

    #[test]
    fn ols_matches_normal_equations() {
        let x = gaussian(200, 10, 1);
        let y = gaussian(200, 1, 2).column(0).to_owned();
        let w = ols_fit(x.view(), y.view()).unwrap();
        let xtx = nalgebra::DMatrix::from_row_iterator(10, 10, x.t().dot(&x).iter().copied());
        let xty = nalgebra::DVector::from_iterator(10, x.t().dot(&y).iter().copied());
        let oracle = xtx.lu().solve(&xty).unwrap();
        for i in 0..10 {
            assert!((w[i] - oracle[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn ols_zero_target_and_shape_error() {
        let x = gaussian(30, 4, 3);
        let w = ols_fit(x.view(), Array1::zeros(30).view()).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        assert!(ols_fit(gaussian(4, 4, 0).view(), Array1::zeros(4).view()).is_err());
    }

    #[test]
    fn distill_without_privileged_block_is_ols() {
        let x = gaussian(50, 3, 4);
        let y = gaussian(50, 1, 5).column(0).to_owned();
        let z = Matrix::zeros((50, 0));
        assert_eq!(
            distill_fit(x.view(), z.view(), y.view()).unwrap(),
            ols_fit(x.view(), y.view()).unwrap()
        );
    }

    #[test]
    fn distill_with_z_in_span_of_x() {
        let x = gaussian(80, 4, 6);
        let m = gaussian(4, 2, 7);
        let z = x.dot(&m);
        let y = gaussian(80, 1, 8).column(0).to_owned();
        let a = distill_fit(x.view(), z.view(), y.view()).unwrap();
        let b = ols_fit(x.view(), y.view()).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn distill_names_rank_deficient_block() {
        let mut x = gaussian(40, 3, 9);
        let z = gaussian(40, 2, 10);
        let y = gaussian(40, 1, 11).column(0).to_owned();
        let c0 = x.column(0).to_owned();
        x.column_mut(2).assign(&c0);
        assert!(matches!(
            distill_fit(x.view(), z.view(), y.view()),
            Err(Error::RankDeficient { block: "x", .. })
        ));
        let x = gaussian(40, 3, 9);
        let mut z = gaussian(40, 2, 10);
        z.column_mut(1).fill(0.0);
        assert!(matches!(
            distill_fit(x.view(), z.view(), y.view()),
            Err(Error::RankDeficient { block: "z", .. })
        ));
    }

    #[test]
    fn closed_form_examples() {
        let mut c = cfg(10, 10, 61, 1.0, 1.0);
        let (reg, pri) = closed_form_risks(&c).unwrap();
        assert!((reg - 0.4).abs() < 1e-15);
        assert!((pri - 0.45).abs() < 1e-15);
        c.sigma = 0.0;
        let (reg, pri) = closed_form_risks(&c).unwrap();
        assert_eq!(reg, pri);
        c.n = 21;
        assert!(closed_form_risks(&c).is_err());
    }

    #[test]
    fn closed_form_gap_identity() {
        let c = cfg(6, 3, 40, 0.7, 1.3);
        let (reg, pri) = closed_form_risks(&c).unwrap();
        let gap = 6.0 * 0.49 * (1.0 / 30.0 - 1.0 / 33.0);
        assert!((pri - reg - gap).abs() < 1e-12);
    }

    #[test]
    fn noiseless_trials_recover_exactly() {
        let r = monte_carlo_risks(&cfg(5, 3, 30, 0.0, 0.0), 100).unwrap();
        assert!(r.empirical_reg <= 1e-12 && r.empirical_pri <= 1e-12);
        assert_eq!(r.failed_trials, 0);
    }

    #[test]
    fn too_few_trials_rejected() {
        assert!(monte_carlo_risks(&cfg(2, 1, 10, 1.0, 1.0), 99).is_err());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v.into_iter()), 1.0);
    }
}
