use serde::{Deserialize, Serialize};

use super::MetricKind;
use crate::lupi::{DistillConfig, TeacherInput, TramSpecs};
use crate::net::{
    gradient_check, softmax, Activation, BatchSize, LossKind, Matrix, MlpModel, MlpSpec, OptimizerKind,
    OutputActivation, TrainConfig,
};
use crate::rng::{derive_seed, Rng};
use crate::synthgen::Task;
use crate::{Error, Result};

pub const PRESET_NAMES: &[&str] = &[
    "exp1",
    "exp3",
    "mnist",
    "tram-synthetic",
    "tram-classification",
    "real-world",
];

/// Architecture and training bindings shared by every method of an
/// experiment. Input and output widths are filled in from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output: OutputActivation,
    #[serde(default)]
    pub residual: bool,
    /// Extra hidden layers of the TRAM PI head.
    #[serde(default)]
    pub pi_head_hidden: Vec<usize>,
    /// Hidden layers owned by the TRAM extractor; the rest go to both heads.
    /// `None` shares the whole hidden stack.
    #[serde(default)]
    pub tram_shared_layers: Option<usize>,
    pub teacher_input: TeacherInput,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub metric: MetricKind,
    /// z-score x and z with statistics from the training rows.
    pub standardize: bool,
}

fn hidden_as_output(a: Activation) -> OutputActivation {
    match a {
        Activation::Tanh => OutputActivation::Tanh,
        Activation::Relu => OutputActivation::Relu,
        Activation::Gelu => OutputActivation::Gelu,
    }
}

impl Preset {
    /// Output width for a task: one unit per class under softmax, one unit
    /// otherwise.
    pub fn output_width(&self, task: Task) -> Result<usize> {
        match (self.output, task) {
            (OutputActivation::Softmax, Task::Binary) => Ok(2),
            (OutputActivation::Softmax, Task::Multiclass { classes }) => Ok(classes),
            (OutputActivation::Softmax, Task::Regression) => Err(Error::InvalidConfig(format!(
                "preset `{}` is a classifier but the data is a regression task",
                self.name
            ))),
            (_, Task::Multiclass { .. }) => Err(Error::InvalidConfig(format!(
                "preset `{}` has a single output and cannot fit a multiclass task",
                self.name
            ))),
            _ => Ok(1),
        }
    }

    pub fn mlp(&self, d_in: usize, d_out: usize, seed: u64) -> MlpSpec {
        let mut widths = vec![d_in];
        widths.extend(&self.hidden);
        widths.push(d_out);
        MlpSpec::new(widths, self.activation, self.output)
            .with_residual(self.residual)
            .with_seed(seed)
    }

    /// Extractor = the first `tram_shared_layers` hidden layers. The no-PI
    /// head carries the remaining hidden layers and the output layer, so the
    /// test-time path has the student's shape. The PI head sees
    /// `[phi(x) | z]` and adds `pi_head_hidden` before its output layer.
    pub fn tram(&self, d_x: usize, d_z: usize, d_out: usize, seed: u64) -> Result<TramSpecs> {
        let k = self.tram_shared_layers.unwrap_or(self.hidden.len());
        if k == 0 || k > self.hidden.len() {
            return Err(Error::InvalidConfig(format!(
                "preset `{}` has {} hidden layer(s), cannot share {k} with TRAM",
                self.name,
                self.hidden.len()
            )));
        }
        let (shared, rest) = self.hidden.split_at(k);
        let rep = shared[k - 1];
        let mut ext = vec![d_x];
        ext.extend(shared);
        let mut pi = vec![rep + d_z];
        pi.extend(rest);
        pi.extend(&self.pi_head_hidden);
        pi.push(d_out);
        let mut nopi = vec![rep];
        nopi.extend(rest);
        nopi.push(d_out);
        Ok(TramSpecs {
            extractor: MlpSpec::new(ext, self.activation, hidden_as_output(self.activation)).with_seed(seed),
            pi_head: MlpSpec::new(pi, self.activation, self.output).with_seed(seed ^ 0x5049),
            nopi_head: MlpSpec::new(nopi, self.activation, self.output).with_seed(seed ^ 0x4e4f),
        })
    }

    /// Representative `(d_x, d_z, d_out)` for gradient checks.
    pub fn probe_dims(&self) -> (usize, usize, usize) {
        match self.name.as_str() {
            "exp1" => (50, 1, 2),
            "exp3" => (50, 3, 2),
            "mnist" => (49, 784, 10),
            "real-world" => (12, 4, 2),
            _ => (1, 1, 1),
        }
    }

    /// Losses the output layer supports.
    pub fn losses(&self) -> Vec<LossKind> {
        match self.output {
            OutputActivation::Softmax | OutputActivation::Sigmoid => vec![LossKind::Mse, LossKind::CrossEntropy],
            _ => vec![LossKind::Mse],
        }
    }
}

/// One finite-difference comparison from [`gradient_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub preset: String,
    /// `student`, `teacher` or a TRAM part.
    pub network: String,
    pub loss: LossKind,
    pub batch: usize,
    pub max_relative_error: f64,
}

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_ROWS: usize = 6;

fn random_targets(rng: &mut Rng, output: OutputActivation, rows: usize, cols: usize) -> Matrix {
    match output {
        OutputActivation::Softmax => {
            let mut m = Matrix::zeros((rows, cols));
            for mut row in m.rows_mut() {
                let logits: Vec<f64> = (0..cols).map(|_| 2.0 * rng.normal()).collect();
                let p = softmax(&logits, 1.0).expect("finite logits");
                row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
            }
            m
        }
        OutputActivation::Sigmoid => Matrix::from_shape_fn((rows, cols), |_| rng.uniform()),
        _ => Matrix::from_shape_fn((rows, cols), |_| rng.normal()),
    }
}

/// Gradient checks of every network a preset builds (student, teacher and,
/// for presets with hidden layers, the TRAM heads) under every supported
/// loss, each on `batches` random batches with fresh weights.
pub fn gradient_suite(p: &Preset, batches: usize, seed: u64) -> Result<Vec<GradcheckRow>> {
    let (dx, dz, c) = p.probe_dims();
    let mut nets = vec![("student", p.mlp(dx, c, 0)), ("teacher", p.mlp(dx + dz, c, 0))];
    if !p.hidden.is_empty() {
        let t = p.tram(dx, dz, c, 0)?;
        nets.push(("tram_pi_head", t.pi_head));
        nets.push(("tram_nopi_head", t.nopi_head));
    }
    let mut rows = Vec::new();
    for (name, spec) in nets {
        for loss in p.losses() {
            for b in 0..batches {
                let s = derive_seed(seed, &[name.len() as u64, loss as u64, b as u64]);
                let model = MlpModel::init(spec.clone().with_seed(s))?;
                let mut rng = Rng::new(s).split(1);
                let x = Matrix::from_shape_fn((GRADCHECK_ROWS, spec.input_width()), |_| rng.normal());
                let y = random_targets(&mut rng, spec.output_activation, GRADCHECK_ROWS, spec.output_width());
                rows.push(GradcheckRow {
                    preset: p.name.clone(),
                    network: name.into(),
                    loss,
                    batch: b,
                    max_relative_error: gradient_check(&model, x.view(), y.view(), loss, GRADCHECK_STEP)?,
                });
            }
        }
    }
    Ok(rows)
}

fn cfg(loss: LossKind, optimizer: OptimizerKind, epochs: usize, batch_size: BatchSize) -> TrainConfig {
    TrainConfig {
        loss,
        optimizer,
        weight_decay: 0.0,
        epochs,
        batch_size,
        shuffle_seed: 0,
    }
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Result<Preset> {
    let linear_pi = |name: &str| Preset {
        name: name.into(),
        hidden: vec![],
        activation: Activation::Tanh,
        output: OutputActivation::Softmax,
        residual: false,
        pi_head_hidden: vec![],
        tram_shared_layers: None,
        teacher_input: TeacherInput::ZOnly,
        train: cfg(LossKind::Mse, OptimizerKind::rmsprop(0.01), 120, BatchSize::Full),
        distill: DistillConfig::new(1.0, 1.0),
        metric: MetricKind::Accuracy,
        standardize: true,
    };
    let tram_like = |name: &str, output: OutputActivation, loss: LossKind, metric: MetricKind| Preset {
        name: name.into(),
        hidden: vec![64, 64],
        activation: Activation::Tanh,
        output,
        residual: false,
        pi_head_hidden: vec![64],
        tram_shared_layers: Some(1),
        teacher_input: TeacherInput::ConcatXz,
        train: cfg(loss, OptimizerKind::adam(1e-3), 200, BatchSize::Fixed(32)),
        distill: DistillConfig::new(1.0, 1.0),
        metric,
        standardize: false,
    };
    Ok(match name {
        "exp1" | "exp3" => linear_pi(name),
        "mnist" => Preset {
            name: name.into(),
            hidden: vec![20, 20],
            activation: Activation::Relu,
            output: OutputActivation::Softmax,
            residual: false,
            pi_head_hidden: vec![],
            tram_shared_layers: None,
            teacher_input: TeacherInput::ZOnly,
            train: cfg(LossKind::Mse, OptimizerKind::rmsprop(1e-3), 50, BatchSize::Fixed(32)),
            distill: DistillConfig::new(10.0, 1.0),
            metric: MetricKind::Accuracy,
            standardize: false,
        },
        "tram-synthetic" => tram_like(name, OutputActivation::Identity, LossKind::Mse, MetricKind::MseToNoiseFree),
        "tram-classification" => {
            tram_like(name, OutputActivation::Sigmoid, LossKind::Mse, MetricKind::RocAuc)
        }
        "real-world" => Preset {
            name: name.into(),
            hidden: vec![64, 64],
            activation: Activation::Gelu,
            output: OutputActivation::Softmax,
            residual: true,
            pi_head_hidden: vec![],
            tram_shared_layers: None,
            teacher_input: TeacherInput::ConcatXz,
            train: TrainConfig {
                weight_decay: 0.1,
                ..cfg(
                    LossKind::CrossEntropy,
                    OptimizerKind::adam(1e-3),
                    50,
                    BatchSize::Fixed(32),
                )
            },
            distill: DistillConfig::new(1.0, 1.0),
            metric: MetricKind::NormalizedRocAuc,
            standardize: true,
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset `{other}`; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}
