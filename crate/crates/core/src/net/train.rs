use std::borrow::Cow;

use ndarray::{ArrayView2, Axis, CowArray, Ix2};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::{check_loss_output, LossKind, Matrix, MlpModel, Optimizer, OptimizerKind, OutputActivation, Predictor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Mini-batch size: the whole training set, or a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Fixed(usize),
}

impl BatchSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            BatchSize::Full => n,
            BatchSize::Fixed(b) => b.min(n),
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(de::Error::custom("batch size must be positive")),
            Raw::Num(n) => Ok(BatchSize::Fixed(n)),
            Raw::Str(s) if s.eq_ignore_ascii_case("full") => Ok(BatchSize::Full),
            Raw::Str(s) => Err(de::Error::custom(format!("bad batch size `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == BatchSize::Fixed(0) {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_metric: Option<f64>,
}

/// Per-epoch training record, one entry per epoch starting at 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalPoint {
    pub test_loss: Option<f64>,
    pub test_metric: Option<f64>,
}

/// Called after every epoch with the epoch index and the current predictor.
/// Returning `None` records no test values for that epoch.
pub type EvalHook<'a> = dyn Fn(usize, &dyn Predictor) -> Result<Option<EvalPoint>> + Sync + 'a;

/// A training objective evaluated on the network's (post-activation) outputs.
pub trait Objective: Sync {
    fn rows(&self) -> usize;

    fn output_width(&self) -> usize;

    /// Mean loss over `rows` (all rows when `None`); `dL/d(outputs)` is
    /// accumulated into `grad`.
    fn loss_grad(&self, rows: Option<&[usize]>, outputs: ArrayView2<f64>, grad: &mut Matrix) -> f64;
}

/// Plain supervised objective: `loss(targets, outputs)`.
pub struct Supervised<'a> {
    pub targets: ArrayView2<'a, f64>,
    pub loss: LossKind,
    pub output: OutputActivation,
}

impl Objective for Supervised<'_> {
    fn rows(&self) -> usize {
        self.targets.nrows()
    }

    fn output_width(&self) -> usize {
        self.targets.ncols()
    }

    fn loss_grad(&self, rows: Option<&[usize]>, outputs: ArrayView2<f64>, grad: &mut Matrix) -> f64 {
        let t = take_rows(self.targets, rows);
        self.loss.accumulate(self.output, outputs, t.view(), 1.0, Some(grad))
    }
}

pub(crate) fn take_rows<'a>(m: ArrayView2<'a, f64>, rows: Option<&[usize]>) -> CowArray<'a, f64, Ix2> {
    match rows {
        None => CowArray::from(m),
        Some(r) => CowArray::from(m.select(Axis(0), r)),
    }
}

/// Mini-batch iteration order shared by every training loop.
///
/// Full-batch training keeps the natural order; otherwise the running order
/// is reshuffled in place at the start of every epoch.
pub(crate) struct Batches {
    order: Vec<usize>,
    batch: usize,
    rng: Rng,
}

impl Batches {
    pub(crate) fn new(n: usize, size: BatchSize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            batch: size.resolve(n).max(1),
            rng: Rng::new(seed),
        }
    }

    pub(crate) fn is_full(&self) -> bool {
        self.batch >= self.order.len()
    }

    pub(crate) fn next_epoch(&mut self) -> Vec<Option<Cow<'_, [usize]>>> {
        if self.is_full() {
            return vec![None];
        }
        self.rng.shuffle(&mut self.order);
        self.order
            .chunks(self.batch)
            .map(|c| Some(Cow::Borrowed(c)))
            .collect()
    }
}

pub(crate) fn check_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Trains `model` on `objective` and returns the updated model plus history.
pub fn train_objective(
    mut model: MlpModel,
    inputs: ArrayView2<f64>,
    objective: &dyn Objective,
    cfg: &TrainConfig,
    hook: Option<&EvalHook<'_>>,
) -> Result<(MlpModel, RunHistory)> {
    cfg.validate()?;
    check_loss_output(cfg.loss, model.spec().output_activation)?;
    if inputs.ncols() != model.input_width() {
        return Err(Error::Shape(format!(
            "model expects {} input columns, data has {}",
            model.input_width(),
            inputs.ncols()
        )));
    }
    if objective.rows() != inputs.nrows() {
        return Err(Error::Shape(format!(
            "{} input rows but {} target rows",
            inputs.nrows(),
            objective.rows()
        )));
    }
    if objective.output_width() != model.output_width() {
        return Err(Error::Shape(format!(
            "model has {} outputs, targets have {} columns",
            model.output_width(),
            objective.output_width()
        )));
    }
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Shape("empty training set".into()));
    }

    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay, model.params().len());
    let mut batches = Batches::new(n, cfg.batch_size, cfg.shuffle_seed);
    let mut history = RunHistory::default();
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for (b, rows) in batches.next_epoch().into_iter().enumerate() {
            let rows = rows.as_deref();
            let x = take_rows(inputs, rows);
            let tape = model.forward_tape(x.view());
            let mut grad = Matrix::zeros(tape.output().raw_dim());
            let loss = objective.loss_grad(rows, tape.output().view(), &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            let grads = model.backward(&tape, &grad, false);
            if !check_finite(&grads.params) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            opt.step(model.params_mut(), &grads.params);
            total += loss * x.nrows() as f64;
        }
        let eval = match hook {
            Some(h) => h(epoch, &model)?,
            None => None,
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss: total / n as f64,
            test_loss: eval.and_then(|e| e.test_loss),
            test_metric: eval.and_then(|e| e.test_metric),
        });
    }
    Ok((model, history))
}

/// Supervised training of `model` on `(inputs, targets)` with `cfg.loss`.
pub fn train(
    model: MlpModel,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    cfg: &TrainConfig,
    hook: Option<&EvalHook<'_>>,
) -> Result<(MlpModel, RunHistory)> {
    let objective = Supervised {
        targets,
        loss: cfg.loss,
        output: model.spec().output_activation,
    };
    train_objective(model, inputs, &objective, cfg, hook)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, MlpSpec};
    use ndarray::Array2;

    fn line_data() -> (Matrix, Matrix) {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 19.0);
        let y = x.mapv(|v| 2.0 * v);
        (x, y)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            loss: LossKind::Mse,
            optimizer: OptimizerKind::Sgd { learning_rate: 0.1 },
            weight_decay: 0.0,
            epochs,
            batch_size: BatchSize::Full,
            shuffle_seed: 0,
        }
    }

    #[test]
    fn linear_fit_matches_ols_slope() {
        let (x, y) = line_data();
        // closed-form OLS slope with intercept on the same data
        let n = x.nrows() as f64;
        let mx = x.sum() / n;
        let my = y.sum() / n;
        let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let ols = sxy / sxx;

        let spec = MlpSpec::new(vec![1, 1], Activation::Tanh, OutputActivation::Identity).with_seed(3);
        let model = MlpModel::init(spec).unwrap();
        let (model, hist) = train(model, x.view(), y.view(), &cfg(200), None).unwrap();
        assert_eq!(hist.len(), 200);
        assert!((model.params()[0] - ols).abs() < 1e-2, "slope {}", model.params()[0]);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (x, y) = line_data();
        let spec = MlpSpec::new(vec![1, 1], Activation::Tanh, OutputActivation::Identity);
        let model = MlpModel::init(spec).unwrap();
        let err = train(model, x.view(), y.view(), &cfg(0), None).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (x, y) = line_data();
        let spec = MlpSpec::new(vec![2, 1], Activation::Tanh, OutputActivation::Identity);
        let model = MlpModel::init(spec).unwrap();
        assert!(matches!(
            train(model, x.view(), y.view(), &cfg(1), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let (x, y) = line_data();
        let spec = MlpSpec::new(vec![1, 1], Activation::Tanh, OutputActivation::Identity);
        let model = MlpModel::init(spec).unwrap();
        let mut c = cfg(50);
        c.optimizer = OptimizerKind::Sgd { learning_rate: 1e200 };
        c.batch_size = BatchSize::Fixed(5);
        match train(model, x.view(), y.view(), &c, None) {
            Err(Error::Diverged { epoch, batch }) => assert!(epoch >= 1 && batch < 4),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_minibatch_runs() {
        let (x, y) = line_data();
        let spec = MlpSpec::new(vec![1, 4, 1], Activation::Tanh, OutputActivation::Identity).with_seed(9);
        let mut c = cfg(30);
        c.batch_size = BatchSize::Fixed(3);
        c.shuffle_seed = 11;
        c.optimizer = OptimizerKind::adam(0.01);
        let a = train(MlpModel::init(spec.clone()).unwrap(), x.view(), y.view(), &c, None).unwrap();
        let b = train(MlpModel::init(spec).unwrap(), x.view(), y.view(), &c, None).unwrap();
        assert_eq!(a.0.params(), b.0.params());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn batch_size_serde() {
        assert_eq!(serde_json::to_string(&BatchSize::Full).unwrap(), "\"full\"");
        assert_eq!(serde_json::from_str::<BatchSize>("32").unwrap(), BatchSize::Fixed(32));
        assert_eq!(serde_json::from_str::<BatchSize>("\"FULL\"").unwrap(), BatchSize::Full);
        assert!(serde_json::from_str::<BatchSize>("0").is_err());
    }
}
