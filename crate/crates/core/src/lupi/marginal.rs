use ndarray::{concatenate, ArrayView2, Axis};

use crate::net::{Matrix, MlpModel};
use crate::rng::Rng;
use crate::{Error, Result};

/// A model of `(x, z)` evaluated in batches.
pub trait Teacher: Sync {
    fn d_x(&self) -> usize;
    fn d_z(&self) -> usize;
    fn output_width(&self) -> usize;
    fn evaluate(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Matrix>;
}

/// A network taking `[x | z]`.
impl Teacher for MlpModel {
    fn d_x(&self) -> usize {
        0
    }

    fn d_z(&self) -> usize {
        self.input_width()
    }

    fn output_width(&self) -> usize {
        MlpModel::output_width(self)
    }

    fn evaluate(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Matrix> {
        let xz = concatenate(Axis(1), &[x.view(), z.view()]).map_err(|e| Error::Shape(e.to_string()))?;
        self.predict(xz.view())
    }
}

/// A teacher given as a row function `f(x, z) -> outputs`.
pub struct FnTeacher<F> {
    pub d_x: usize,
    pub d_z: usize,
    pub outputs: usize,
    pub f: F,
}

impl<F> Teacher for FnTeacher<F>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Sync,
{
    fn d_x(&self) -> usize {
        self.d_x
    }

    fn d_z(&self) -> usize {
        self.d_z
    }

    fn output_width(&self) -> usize {
        self.outputs
    }

    fn evaluate(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Matrix> {
        let mut out = Matrix::zeros((x.nrows(), self.outputs));
        for i in 0..x.nrows() {
            let v = (self.f)(&x.row(i).to_vec(), &z.row(i).to_vec());
            if v.len() != self.outputs {
                return Err(Error::Shape(format!("teacher returned {} values", v.len())));
            }
            out.row_mut(i).assign(&ndarray::Array1::from(v));
        }
        Ok(out)
    }
}

/// Draws `z ~ p(z | x)`.
pub trait ZSampler: Sync {
    fn d_z(&self) -> usize;
    fn sample(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]);
}

pub struct PointMassSampler(pub Vec<f64>);

impl ZSampler for PointMassSampler {
    fn d_z(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, _x: &[f64], _rng: &mut Rng, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// `z ~ N(0, I_d)` independent of `x`.
pub struct NormalSampler(pub usize);

impl ZSampler for NormalSampler {
    fn d_z(&self) -> usize {
        self.0
    }

    fn sample(&self, _x: &[f64], rng: &mut Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = rng.normal());
    }
}

/// Scalar `z ~ Ber(p)` independent of `x`.
pub struct BernoulliSampler(pub f64);

impl ZSampler for BernoulliSampler {
    fn d_z(&self) -> usize {
        1
    }

    fn sample(&self, _x: &[f64], rng: &mut Rng, out: &mut [f64]) {
        out[0] = if rng.bernoulli(self.0) { 1.0 } else { 0.0 };
    }
}

/// Monte-Carlo estimate of `E_z[g_t(x, z)]` with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub mean: Matrix,
    pub std_error: Matrix,
    pub samples: usize,
}

const CHUNK: usize = 4096;

/// Averages the teacher over `m` draws of `z` per row of `x`. Row `i` uses
/// stream `Rng::new(seed).split(i)`.
pub fn marginalize_mc(
    teacher: &dyn Teacher,
    x: ArrayView2<f64>,
    sampler: &dyn ZSampler,
    m: usize,
    seed: u64,
) -> Result<Marginal> {
    if m == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    if sampler.d_z() != teacher.d_z() {
        return Err(Error::Shape(format!(
            "sampler draws {} privileged values, teacher expects {}",
            sampler.d_z(),
            teacher.d_z()
        )));
    }
    if x.ncols() != teacher.d_x() {
        return Err(Error::Shape(format!(
            "teacher expects {} regular features, got {}",
            teacher.d_x(),
            x.ncols()
        )));
    }
    let c = teacher.output_width();
    let d_z = sampler.d_z();
    let root = Rng::new(seed);
    let mut mean = Matrix::zeros((x.nrows(), c));
    let mut se = Matrix::zeros((x.nrows(), c));
    for i in 0..x.nrows() {
        let xi = x.row(i).to_vec();
        let mut rng = root.split(i as u64);
        // Welford accumulation over chunks
        let mut mu = vec![0.0; c];
        let mut m2 = vec![0.0; c];
        let mut seen = 0usize;
        while seen < m {
            let k = CHUNK.min(m - seen);
            let xs = Matrix::from_shape_fn((k, xi.len()), |(_, j)| xi[j]);
            let mut zs = Matrix::zeros((k, d_z));
            for mut row in zs.rows_mut() {
                sampler.sample(&xi, &mut rng, row.as_slice_mut().expect("contiguous"));
            }
            let out = teacher.evaluate(xs.view(), zs.view())?;
            for row in out.rows() {
                seen += 1;
                for j in 0..c {
                    let d = row[j] - mu[j];
                    mu[j] += d / seen as f64;
                    m2[j] += d * (row[j] - mu[j]);
                }
            }
        }
        for j in 0..c {
            mean[[i, j]] = mu[j];
            se[[i, j]] = if m > 1 {
                (m2[j] / (m - 1) as f64 / m as f64).sqrt()
            } else {
                0.0
            };
        }
    }
    Ok(Marginal {
        mean,
        std_error: se,
        samples: m,
    })
}
