//! Minimal deterministic dense-network core.
//!
//! A [`MlpModel`] is a stack of affine layers with a hidden activation between
//! them and an output activation at the end. Parameters live in one flat
//! `Vec<f64>` laid out layer by layer as `weights (out x in, row-major)` then
//! `bias (out)`, which keeps the optimizer, checkpointing and finite-difference
//! checks trivial.
//!
//! Batches are `ndarray` matrices with one sample per row.

mod checkpoint;
mod gradcheck;
mod loss;
mod lstsq;
mod optim;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

pub use checkpoint::{checkpoint_id, load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, gradient_check_objective};
pub use loss::{check_loss_output, LossKind};
pub use lstsq::{least_squares, least_squares_with_rank, matrix_rank, LstsqSolution, RANK_TOLERANCE};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    train, train_objective, BatchSize, EpochRecord, EvalHook, EvalPoint, Objective, RunHistory,
    Supervised, TrainConfig,
};

pub(crate) use train::{check_finite, take_rows, Batches};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Gelu,
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            // exact (erf-based) GELU
            Activation::Gelu => 0.5 * v * (1.0 + libm::erf(v * INV_SQRT_2)),
        }
    }

    /// Derivative with respect to the pre-activation value.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(pre * INV_SQRT_2));
                cdf + pre * INV_SQRT_2PI * (-0.5 * pre * pre).exp()
            }
        }
    }
}

/// Activation applied after the last layer.
///
/// `tanh`/`relu`/`gelu` are only meant for networks used as feature
/// extractors, whose output feeds another network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softmax,
    Tanh,
    Relu,
    Gelu,
}

impl OutputActivation {
    pub(crate) fn elementwise(self) -> Option<Activation> {
        match self {
            OutputActivation::Tanh => Some(Activation::Tanh),
            OutputActivation::Relu => Some(Activation::Relu),
            OutputActivation::Gelu => Some(Activation::Gelu),
            _ => None,
        }
    }

    /// Applies the activation to a batch of logits in place.
    pub fn apply_in_place(self, logits: &mut Matrix) {
        match self {
            OutputActivation::Identity => {}
            OutputActivation::Sigmoid => logits.mapv_inplace(sigmoid),
            OutputActivation::Softmax => {
                for mut row in logits.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("standard layout"), 1.0);
                }
            }
            other => {
                let act = other.elementwise().expect("elementwise activation");
                logits.mapv_inplace(|v| act.apply(v));
            }
        }
    }

    /// Maps `dL/d(output)` to `dL/d(logits)`.
    fn backward(self, pre: &Matrix, out: &Matrix, grad_out: &Matrix) -> Matrix {
        match self {
            OutputActivation::Identity => grad_out.clone(),
            OutputActivation::Sigmoid => {
                let mut g = grad_out.clone();
                g.zip_mut_with(out, |g, &p| *g *= p * (1.0 - p));
                g
            }
            OutputActivation::Softmax => {
                let mut g = grad_out.clone();
                for (mut grow, prow) in g.rows_mut().into_iter().zip(out.rows()) {
                    let dot: f64 = grow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                    grow.zip_mut_with(&prow, |gv, &p| *gv = p * (*gv - dot));
                }
                g
            }
            other => {
                let act = other.elementwise().expect("elementwise activation");
                let mut g = grad_out.clone();
                g.zip_mut_with(pre, |g, &z| *g *= act.derivative(z));
                g
            }
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Temperature softmax over `q / t`, computed with max-subtraction.
pub fn softmax(q: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidConfig(format!("softmax temperature must be positive, got {t}")));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    if q.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    let mut out = q.to_vec();
    softmax_in_place(&mut out, t);
    Ok(out)
}

/// Unchecked variant shared by the output layer and soft-label generation.
pub(crate) fn softmax_in_place(q: &mut [f64], t: f64) {
    for v in q.iter_mut() {
        *v /= t;
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in q.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in q.iter_mut() {
        *v /= sum;
    }
}

/// Architecture of a dense network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    /// Adds the first hidden layer's output to the last hidden layer's output.
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, hidden: Activation, output: OutputActivation) -> Self {
        Self {
            layer_widths,
            hidden_activation: hidden,
            output_activation: output,
            residual: false,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least input and output widths, got {w:?}"
            )));
        }
        if w.contains(&0) {
            return Err(Error::InvalidConfig(format!("layer widths must be >= 1, got {w:?}")));
        }
        if self.residual {
            // the skip needs two distinct hidden layers of equal width
            if w.len() < 4 {
                return Err(Error::InvalidConfig(
                    "residual connection needs at least two hidden layers".into(),
                ));
            }
            if w[1] != w[w.len() - 2] {
                return Err(Error::InvalidConfig(format!(
                    "residual connection needs equal first and last hidden widths, got {} and {}",
                    w[1],
                    w[w.len() - 2]
                )));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_widths[..=l]
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }
}

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("non-empty tape")
    }

    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("non-empty tape")
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases; layer `l` draws from
    /// `Rng::new(init_seed).split(l)`.
    pub fn init(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let root = Rng::new(spec.init_seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for (l, pair) in spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = root.split(l as u64);
            params.extend((0..fan_in * fan_out).map(|_| rng.uniform_range(-limit, limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// Weight matrix (`out x in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
        let off = self.spec.layer_offset(l);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "model expects {} input columns, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass retaining intermediates. Input width is not checked.
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Tape {
        let layers = self.spec.num_layers();
        let act = self.spec.hidden_activation;
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Matrix> = Vec::with_capacity(layers);
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = if l == 0 { x.dot(&w.t()) } else { post[l - 1].dot(&w.t()) };
            if !z.is_standard_layout() {
                z = z.as_standard_layout().into_owned();
            }
            z += &b;
            let mut a = z.clone();
            if l + 1 == layers {
                self.spec.output_activation.apply_in_place(&mut a);
            } else {
                a.mapv_inplace(|v| act.apply(v));
                if self.spec.residual && l + 2 == layers {
                    a += &post[0];
                }
            }
            pre.push(z);
            post.push(a);
        }
        Tape {
            inputs: x.to_owned(),
            pre,
            post,
        }
    }

    /// Backpropagates `grad_out = dL/d(output)` through the network.
    pub fn backward(&self, tape: &Tape, grad_out: &Matrix, want_input_grad: bool) -> Gradients {
        let layers = self.spec.num_layers();
        let act = self.spec.hidden_activation;
        let mut grads = vec![0.0; self.params.len()];
        let mut g = self
            .spec
            .output_activation
            .backward(&tape.pre[layers - 1], &tape.post[layers - 1], grad_out);
        let mut skip: Option<Matrix> = None;
        let mut input_grad = None;
        for l in (0..layers).rev() {
            let (w, _) = self.layer(l);
            let a_in = if l == 0 { &tape.inputs } else { &tape.post[l - 1] };
            let (fan_in, fan_out) = (w.ncols(), w.nrows());
            let off = self.spec.layer_offset(l);
            let gw = g.t().dot(a_in);
            // logical (row-major) order whatever the memory layout
            for (dst, v) in grads[off..off + fan_in * fan_out].iter_mut().zip(gw.iter()) {
                *dst = *v;
            }
            let gb = g.sum_axis(Axis(0));
            for (dst, v) in grads[off + fan_in * fan_out..].iter_mut().zip(gb.iter()) {
                *dst = *v;
            }
            if l == 0 && !want_input_grad {
                break;
            }
            let mut da = g.dot(&w);
            if self.spec.residual {
                if l + 1 == layers {
                    skip = Some(da.clone());
                } else if l == 1 {
                    da += skip.as_ref().expect("skip gradient recorded at the last layer");
                }
            }
            if l == 0 {
                input_grad = Some(da);
                break;
            }
            da.zip_mut_with(&tape.pre[l - 1], |d, &z| *d *= act.derivative(z));
            g = da;
        }
        Gradients {
            params: grads,
            inputs: input_grad,
        }
    }

    /// Pre-activation outputs of the last layer.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Matrix> {
        self.check_input(&x)?;
        Ok(self.forward_tape(x).pre.pop().expect("non-empty tape"))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix> {
        self.check_input(&x)?;
        Ok(self.forward_tape(x).post.pop().expect("non-empty tape"))
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<Array1<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict(view)?.row(0).to_owned())
    }
}

/// Anything that maps a batch of inputs to a batch of outputs.
pub trait Predictor: Sync {
    fn input_width(&self) -> usize;
    fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix>;
}

impl Predictor for MlpModel {
    fn input_width(&self) -> usize {
        MlpModel::input_width(self)
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix> {
        MlpModel::predict(self, x)
    }
}
