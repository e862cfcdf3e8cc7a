use ndarray::{Array2, ArrayView2, Zip};

use super::loss::{PROB_CEIL, PROB_FLOOR};
use super::train::check_finite;
use super::{sigmoid, softmax_in_place, Activation, LossKind, Matrix, MlpModel, Objective, OutputActivation};
use crate::{Error, Result};

/// Compares the analytic parameter gradient with central differences
/// `(f(p + h) - f(p - h)) / 2h`, coordinate by coordinate, and returns the
/// largest relative error `|g - fd| / max(|g|, 1e-8)`.
///
/// The numerator `f(p + h) - f(p - h)` is propagated through the network
/// as a difference (see [`loss_difference`]) instead of subtracting two
/// rounded losses, so tiny gradient entries are not swamped by rounding.
pub fn gradient_check(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    loss: LossKind,
    h: f64,
) -> Result<f64> {
    check_args(model, inputs, targets.nrows(), h)?;
    if targets.dim() != (inputs.nrows(), model.output_width()) {
        return Err(Error::Shape("gradient check targets do not match the model".into()));
    }
    let output = model.spec().output_activation;
    let tape = model.forward_tape(inputs);
    let mut grad = Matrix::zeros(tape.output().raw_dim());
    loss.accumulate(output, tape.output().view(), targets, 1.0, Some(&mut grad));
    let analytic = model.backward(&tape, &grad, false).params;
    if !check_finite(&analytic) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let (mut plus, mut minus) = (model.clone(), model.clone());
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let orig = model.params()[i];
        let (hi, lo) = (orig + h, orig - h);
        plus.params_mut()[i] = hi;
        minus.params_mut()[i] = lo;
        let fd = loss_difference(&plus, &minus, inputs, targets, loss) / (hi - lo);
        plus.params_mut()[i] = orig;
        minus.params_mut()[i] = orig;
        if !fd.is_finite() {
            return Err(Error::NonFinite(format!("finite difference for parameter {i}")));
        }
        worst = worst.max((g - fd).abs() / g.abs().max(1e-8));
    }
    Ok(worst)
}

/// Central-difference check for an arbitrary objective. Losses are
/// differenced row by row before summing.
pub fn gradient_check_objective(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    objective: &dyn Objective,
    h: f64,
) -> Result<f64> {
    check_args(model, inputs, objective.rows(), h)?;
    let n = inputs.nrows();
    let row_losses = |m: &MlpModel| -> Vec<f64> {
        let out = m.forward_tape(inputs).output().clone();
        let mut scratch = Matrix::zeros((1, out.ncols()));
        (0..n)
            .map(|r| objective.loss_grad(Some(&[r]), out.slice(ndarray::s![r..r + 1, ..]), &mut scratch))
            .collect()
    };

    let tape = model.forward_tape(inputs);
    let mut grad = Matrix::zeros(tape.output().raw_dim());
    objective.loss_grad(None, tape.output().view(), &mut grad);
    let analytic = model.backward(&tape, &grad, false).params;
    if !check_finite(&analytic) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let orig = probe.params()[i];
        let (hi, lo) = (orig + h, orig - h);
        probe.params_mut()[i] = hi;
        let up = row_losses(&probe);
        probe.params_mut()[i] = lo;
        let down = row_losses(&probe);
        probe.params_mut()[i] = orig;
        let diff: f64 = up.iter().zip(&down).map(|(u, d)| u - d).sum::<f64>() / n as f64;
        let fd = diff / (hi - lo);
        if !fd.is_finite() {
            return Err(Error::NonFinite(format!("finite difference for parameter {i}")));
        }
        worst = worst.max((g - fd).abs() / g.abs().max(1e-8));
    }
    Ok(worst)
}

fn check_args(model: &MlpModel, inputs: ArrayView2<f64>, rows: usize, h: f64) -> Result<()> {
    if inputs.nrows() == 0 {
        return Err(Error::Shape("gradient check needs a non-empty batch".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {h}")));
    }
    if inputs.ncols() != model.input_width() || rows != inputs.nrows() {
        return Err(Error::Shape("gradient check batch does not match the model".into()));
    }
    Ok(())
}

/// Values of the `plus` pass, the `minus` pass, and `plus - minus`
/// computed directly.
struct Pair {
    hi: Matrix,
    lo: Matrix,
    diff: Matrix,
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// `Phi(a) - Phi(a - d)` by Gauss-Legendre quadrature of the normal density.
fn normal_cdf_difference(a: f64, d: f64) -> f64 {
    let mid = a - 0.5 * d;
    let mut s = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        let t = mid + 0.5 * d * x;
        s += w * (-0.5 * t * t).exp();
    }
    0.5 * d * s * 0.398_942_280_401_432_7
}

/// `act(a) - act(b)` given `d = a - b` computed without cancellation.
fn activation_difference(act: Activation, a: f64, b: f64, d: f64) -> f64 {
    match act {
        Activation::Tanh => d.tanh() * (1.0 - a.tanh() * b.tanh()),
        Activation::Relu => match (a > 0.0, b > 0.0) {
            (true, true) => d,
            (false, false) => 0.0,
            _ => a.max(0.0) - b.max(0.0),
        },
        Activation::Gelu => {
            let cdf_a = 0.5 * (1.0 + libm::erf(a * std::f64::consts::FRAC_1_SQRT_2));
            d * cdf_a + b * normal_cdf_difference(a, d)
        }
    }
}

fn sigmoid_difference(a: f64, b: f64, d: f64) -> f64 {
    sigmoid(a) * sigmoid(-b) * -(-d).exp_m1()
}

fn hidden_pair(act: Activation, z: Pair) -> Pair {
    let mut diff = z.diff;
    Zip::from(&mut diff)
        .and(&z.hi)
        .and(&z.lo)
        .for_each(|d, &a, &b| *d = activation_difference(act, a, b, *d));
    Pair {
        hi: z.hi.mapv(|v| act.apply(v)),
        lo: z.lo.mapv(|v| act.apply(v)),
        diff,
    }
}

fn output_pair(output: OutputActivation, z: Pair) -> Pair {
    match output {
        OutputActivation::Identity => z,
        OutputActivation::Sigmoid => {
            let mut diff = z.diff;
            Zip::from(&mut diff)
                .and(&z.hi)
                .and(&z.lo)
                .for_each(|d, &a, &b| *d = sigmoid_difference(a, b, *d));
            Pair {
                hi: z.hi.mapv(sigmoid),
                lo: z.lo.mapv(sigmoid),
                diff,
            }
        }
        OutputActivation::Softmax => {
            let mut hi = z.hi;
            let mut lo = z.lo;
            let mut diff = z.diff;
            for ((mut h, mut l), mut d) in hi.rows_mut().into_iter().zip(lo.rows_mut()).zip(diff.rows_mut()) {
                softmax_in_place(h.as_slice_mut().expect("standard layout"), 1.0);
                softmax_in_place(l.as_slice_mut().expect("standard layout"), 1.0);
                // p(a) = p(b) * exp(d_k - log sum_j p_j(b) exp(d_j))
                let log_ratio = l.iter().zip(d.iter()).map(|(p, dk)| p * dk.exp_m1()).sum::<f64>().ln_1p();
                d.zip_mut_with(&l, |dk, &p| *dk = p * (*dk - log_ratio).exp_m1());
            }
            Pair { hi, lo, diff }
        }
        other => hidden_pair(other.elementwise().expect("elementwise activation"), z),
    }
}

fn linear_pair(input: &Pair, plus: &MlpModel, minus: &MlpModel, l: usize) -> Pair {
    let (w_hi, b_hi) = plus.layer(l);
    let (w_lo, b_lo) = minus.layer(l);
    let affine = |x: &Matrix, w: ArrayView2<f64>, b: ndarray::ArrayView1<f64>| -> Matrix {
        let mut z = x.dot(&w.t()).as_standard_layout().into_owned();
        z += &b;
        z
    };
    let dw = &w_hi - &w_lo;
    let mut diff = input.diff.dot(&w_hi.t()).as_standard_layout().into_owned();
    diff += &input.lo.dot(&dw.t());
    diff += &(&b_hi - &b_lo);
    Pair {
        hi: affine(&input.hi, w_hi, b_hi),
        lo: affine(&input.lo, w_lo, b_lo),
        diff,
    }
}

/// `loss(plus) - loss(minus)` for two models that differ in their
/// parameters, with every intermediate difference carried explicitly.
pub(crate) fn loss_difference(
    plus: &MlpModel,
    minus: &MlpModel,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    loss: LossKind,
) -> f64 {
    let spec = plus.spec();
    let layers = spec.num_layers();
    let x = inputs.to_owned();
    let mut cur = Pair {
        diff: Array2::zeros(x.raw_dim()),
        hi: x.clone(),
        lo: x,
    };
    let mut first: Option<Pair> = None;
    for l in 0..layers {
        let z = linear_pair(&cur, plus, minus, l);
        if l + 1 == layers {
            cur = output_pair(spec.output_activation, z);
        } else {
            let mut a = hidden_pair(spec.hidden_activation, z);
            if spec.residual && l + 2 == layers {
                let f = first.as_ref().expect("residual needs a first hidden layer");
                a.hi += &f.hi;
                a.lo += &f.lo;
                a.diff += &f.diff;
            }
            if l == 0 {
                first = Some(Pair {
                    hi: a.hi.clone(),
                    lo: a.lo.clone(),
                    diff: a.diff.clone(),
                });
            }
            cur = a;
        }
    }
    output_loss_difference(spec.output_activation, loss, &cur, targets)
}

fn output_loss_difference(output: OutputActivation, loss: LossKind, out: &Pair, targets: ArrayView2<f64>) -> f64 {
    let (rows, cols) = out.hi.dim();
    let inside = |p: f64| (PROB_FLOOR..=PROB_CEIL).contains(&p);
    let clamp = |p: f64| p.clamp(PROB_FLOOR, PROB_CEIL);
    let mut total = 0.0;
    match loss {
        LossKind::Mse => {
            Zip::from(&out.hi).and(&out.lo).and(&out.diff).and(targets).for_each(|&a, &b, &d, &t| {
                total += d * (a + b - 2.0 * t);
            });
            total / (rows * cols) as f64
        }
        LossKind::CrossEntropy => {
            let binary = output == OutputActivation::Sigmoid;
            Zip::from(&out.hi).and(&out.lo).and(&out.diff).and(targets).for_each(|&a, &b, &d, &t| {
                if inside(a) && inside(b) {
                    total -= t * (d / b).ln_1p();
                    if binary {
                        total -= (1.0 - t) * (-d / (1.0 - b)).ln_1p();
                    }
                } else {
                    total -= t * (clamp(a).ln() - clamp(b).ln());
                    if binary {
                        total -= (1.0 - t) * ((1.0 - clamp(a)).ln() - (1.0 - clamp(b)).ln());
                    }
                }
            });
            if binary {
                total / (rows * cols) as f64
            } else {
                total / rows as f64
            }
        }
    }
}
