use std::fs;
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::check_width;
use crate::net::{
    checkpoint_id, sigmoid, softmax_in_place, take_rows, train, train_objective, EvalHook, LossKind, Matrix,
    MlpModel, MlpSpec, Objective, OutputActivation, RunHistory, TrainConfig,
};
use crate::synthgen::TripleDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// `softmax(logits / T)`
    #[default]
    LogitTemperature,
    /// `softmax(logits) / T`; kept to reproduce a known broken variant.
    PosthocDivide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    #[serde(default = "one")]
    pub temperature: f64,
    /// Weight of the soft-label term, `lambda` in `(1 - lambda) l(y, p) + lambda l(s, p)`.
    #[serde(default = "one")]
    pub imitation: f64,
    #[serde(default)]
    pub scaling_mode: ScalingMode,
}

fn one() -> f64 {
    1.0
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            imitation: 1.0,
            scaling_mode: ScalingMode::LogitTemperature,
        }
    }
}

impl DistillConfig {
    pub fn new(temperature: f64, imitation: f64) -> Self {
        Self {
            temperature,
            imitation,
            scaling_mode: ScalingMode::LogitTemperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.imitation) {
            return Err(Error::InvalidConfig(format!(
                "imitation weight must lie in [0, 1], got {}",
                self.imitation
            )));
        }
        Ok(())
    }
}

/// What the teacher sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherInput {
    #[default]
    ConcatXz,
    ZOnly,
}

impl TeacherInput {
    pub fn inputs(self, data: &TripleDataset) -> Matrix {
        match self {
            TeacherInput::ConcatXz => data.xz(),
            TeacherInput::ZOnly => data.z().to_owned(),
        }
    }

    pub fn width(self, data: &TripleDataset) -> usize {
        match self {
            TeacherInput::ConcatXz => data.d_x() + data.d_z(),
            TeacherInput::ZOnly => data.d_z(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelProvenance {
    /// `"teacher"` or `"constant"`.
    pub source: String,
    #[serde(default)]
    pub teacher_id: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub scaling_mode: Option<ScalingMode>,
}

/// Row-aligned soft targets for a student.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSet {
    values: Matrix,
    provenance: SoftLabelProvenance,
}

impl SoftLabelSet {
    pub fn new(values: Matrix, provenance: SoftLabelProvenance) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("soft labels".into()));
        }
        Ok(Self { values, provenance })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn provenance(&self) -> &SoftLabelProvenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    /// Every row is a probability vector within `tol`.
    pub fn on_simplex(&self, tol: f64) -> bool {
        self.values
            .rows()
            .into_iter()
            .all(|r| r.iter().all(|&v| v >= 0.0) && (r.sum() - 1.0).abs() <= tol)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            provenance: self.provenance.clone(),
        }
    }

    /// CSV with header `s_0..s_{c-1}` plus a JSON provenance sidecar.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.width()).map(|i| format!("s_{i}")))?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = path.with_extension("json");
        fs::write(&side, serde_json::to_string_pretty(&self.provenance)?).map_err(|e| Error::io(side, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let side = path.with_extension("json");
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let provenance: SoftLabelProvenance = serde_json::from_str(&text)?;
        let mut r = csv::Reader::from_path(path)?;
        let width = r.headers()?.len();
        let mut cells = Vec::new();
        for (line, rec) in r.records().enumerate() {
            for (col, field) in rec?.iter().enumerate() {
                cells.push(field.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                    column: format!("s_{col}"),
                    value: field.to_string(),
                    line: line + 2,
                })?);
            }
        }
        let n = cells.len().checked_div(width).unwrap_or(0);
        let values = Matrix::from_shape_vec((n, width), cells).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(values, provenance)
    }
}

/// Trains the teacher on the privileged view selected by `input`.
pub fn train_teacher(
    data: &TripleDataset,
    input: TeacherInput,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    hook: Option<&EvalHook<'_>>,
) -> Result<(MlpModel, RunHistory)> {
    let inputs = input.inputs(data);
    check_width(spec, inputs.view())?;
    let targets = data.targets(spec.output_width())?;
    train(MlpModel::init(spec.clone())?, inputs.view(), targets.view(), cfg, hook)
}

/// Soft labels for the rows of `data`.
pub fn soft_labels(
    teacher: &MlpModel,
    data: &TripleDataset,
    input: TeacherInput,
    dcfg: &DistillConfig,
) -> Result<SoftLabelSet> {
    soft_labels_from_inputs(teacher, input.inputs(data).view(), dcfg)
}

/// Soft labels from teacher logits. Softmax teachers give
/// `softmax(q / T)` or `softmax(q) / T`, sigmoid teachers the per-unit
/// analogue, and identity (regression) teachers `q` or `q / T`.
pub fn soft_labels_from_inputs(
    teacher: &MlpModel,
    inputs: ArrayView2<f64>,
    dcfg: &DistillConfig,
) -> Result<SoftLabelSet> {
    dcfg.validate()?;
    let mut q = teacher.logits(inputs)?;
    let t = dcfg.temperature;
    let posthoc = dcfg.scaling_mode == ScalingMode::PosthocDivide;
    match teacher.spec().output_activation {
        OutputActivation::Softmax => {
            for mut row in q.rows_mut() {
                let r = row.as_slice_mut().expect("owned rows are contiguous");
                if posthoc {
                    softmax_in_place(r, 1.0);
                    r.iter_mut().for_each(|v| *v /= t);
                } else {
                    softmax_in_place(r, t);
                }
            }
        }
        OutputActivation::Sigmoid => {
            if posthoc {
                q.mapv_inplace(|v| sigmoid(v) / t);
            } else {
                q.mapv_inplace(|v| sigmoid(v / t));
            }
        }
        _ => {
            if posthoc {
                q.mapv_inplace(|v| v / t);
            }
        }
    }
    SoftLabelSet::new(
        q,
        SoftLabelProvenance {
            source: "teacher".into(),
            teacher_id: Some(checkpoint_id(teacher)),
            temperature: Some(t),
            scaling_mode: Some(dcfg.scaling_mode),
        },
    )
}

/// `n` copies of `value`; no simplex requirement.
pub fn constant_teacher(n: usize, value: &[f64]) -> Result<SoftLabelSet> {
    let values = Matrix::from_shape_fn((n, value.len()), |(_, j)| value[j]);
    SoftLabelSet::new(
        values,
        SoftLabelProvenance {
            source: "constant".into(),
            teacher_id: None,
            temperature: None,
            scaling_mode: None,
        },
    )
}

struct Distill<'a> {
    targets: ArrayView2<'a, f64>,
    soft: ArrayView2<'a, f64>,
    imitation: f64,
    loss: LossKind,
    output: OutputActivation,
}

impl Objective for Distill<'_> {
    fn rows(&self) -> usize {
        self.targets.nrows()
    }

    fn output_width(&self) -> usize {
        self.targets.ncols()
    }

    fn loss_grad(&self, rows: Option<&[usize]>, outputs: ArrayView2<f64>, grad: &mut Matrix) -> f64 {
        let mut total = 0.0;
        // vanishing terms are skipped so lambda = 0 reproduces plain training
        if self.imitation < 1.0 {
            let y = take_rows(self.targets, rows);
            total += self
                .loss
                .accumulate(self.output, outputs, y.view(), 1.0 - self.imitation, Some(grad));
        }
        if self.imitation > 0.0 {
            let s = take_rows(self.soft, rows);
            total += self.loss.accumulate(self.output, outputs, s.view(), self.imitation, Some(grad));
        }
        total
    }
}

/// Trains a student on the regular features against a mix of hard and soft
/// targets.
pub fn train_student(
    data: &TripleDataset,
    soft: &SoftLabelSet,
    dcfg: &DistillConfig,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    hook: Option<&EvalHook<'_>>,
) -> Result<(MlpModel, RunHistory)> {
    dcfg.validate()?;
    check_width(spec, data.x())?;
    if soft.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} soft labels for {} rows",
            soft.len(),
            data.len()
        )));
    }
    if soft.width() != spec.output_width() {
        return Err(Error::Shape(format!(
            "soft labels have {} columns, student has {} outputs",
            soft.width(),
            spec.output_width()
        )));
    }
    let targets = data.targets(spec.output_width())?;
    let objective = Distill {
        targets: targets.view(),
        soft: soft.values(),
        imitation: dcfg.imitation,
        loss: cfg.loss,
        output: spec.output_activation,
    };
    train_objective(MlpModel::init(spec.clone())?, data.x(), &objective, cfg, hook)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, BatchSize, OptimizerKind};
    use crate::synthgen::gen_experiment1;
    use ndarray::array;

    fn linear_softmax(d_in: usize, seed: u64) -> MlpSpec {
        MlpSpec::new(vec![d_in, 2], Activation::Tanh, OutputActivation::Softmax).with_seed(seed)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            loss: LossKind::Mse,
            optimizer: OptimizerKind::rmsprop(0.01),
            weight_decay: 0.0,
            epochs,
            batch_size: BatchSize::Fixed(32),
            shuffle_seed: 5,
        }
    }

    #[test]
    fn unit_temperature_reproduces_teacher_probabilities() {
        let data = gen_experiment1(50, 4, 1).unwrap();
        let teacher = MlpModel::init(linear_softmax(1, 3)).unwrap();
        let soft = soft_labels(&teacher, &data, TeacherInput::ZOnly, &DistillConfig::default()).unwrap();
        assert_eq!(soft.values(), teacher.predict(data.z()).unwrap());
        assert!(soft.on_simplex(1e-10));
    }

    #[test]
    fn huge_temperature_is_flat() {
        let data = gen_experiment1(50, 4, 1).unwrap();
        let teacher = MlpModel::init(linear_softmax(1, 3)).unwrap();
        let soft = soft_labels(&teacher, &data, TeacherInput::ZOnly, &DistillConfig::new(1e9, 1.0)).unwrap();
        assert!(soft.values().iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn posthoc_divide_sums_to_inverse_temperature() {
        let data = gen_experiment1(20, 4, 1).unwrap();
        let teacher = MlpModel::init(linear_softmax(1, 3)).unwrap();
        let dcfg = DistillConfig {
            temperature: 10.0,
            imitation: 1.0,
            scaling_mode: ScalingMode::PosthocDivide,
        };
        let soft = soft_labels(&teacher, &data, TeacherInput::ZOnly, &dcfg).unwrap();
        for r in soft.values().rows() {
            assert!((r.sum() - 0.1).abs() < 1e-12);
        }
        assert!(!soft.on_simplex(1e-6));
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(DistillConfig::new(0.0, 1.0).validate().is_err());
        assert!(DistillConfig::new(-1.0, 1.0).validate().is_err());
        assert!(DistillConfig::new(1.0, 1.5).validate().is_err());
    }

    #[test]
    fn zero_imitation_matches_plain_training() {
        let data = gen_experiment1(64, 5, 2).unwrap();
        let spec = linear_softmax(5, 9);
        let soft = constant_teacher(64, &[0.3, 0.7]).unwrap();
        let (student, hs) = train_student(&data, &soft, &DistillConfig::new(1.0, 0.0), &spec, &cfg(5), None).unwrap();
        let (plain, hp) = super::super::train_nopi(&data, &spec, &cfg(5), None).unwrap();
        assert_eq!(student, plain);
        assert_eq!(hs, hp);
    }

    #[test]
    fn misaligned_soft_labels_rejected() {
        let data = gen_experiment1(10, 3, 2).unwrap();
        let soft = constant_teacher(9, &[0.5, 0.5]).unwrap();
        let err = train_student(&data, &soft, &DistillConfig::default(), &linear_softmax(3, 0), &cfg(1), None);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn constant_teacher_shapes() {
        assert!(constant_teacher(0, &[0.5, 0.5]).unwrap().is_empty());
        let c = constant_teacher(3, &[0.0, 0.0]).unwrap();
        assert_eq!(c.values(), array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn teacher_width_checked() {
        let data = gen_experiment1(10, 3, 2).unwrap();
        assert!(train_teacher(&data, TeacherInput::ConcatXz, &linear_softmax(1, 0), &cfg(1), None).is_err());
        assert!(train_teacher(&data, TeacherInput::ZOnly, &linear_softmax(1, 0), &cfg(1), None).is_ok());
    }

    #[test]
    fn soft_label_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("soft.csv");
        let s = SoftLabelSet::new(
            array![[0.25, 0.75], [1.0 / 3.0, 2.0 / 3.0]],
            SoftLabelProvenance {
                source: "teacher".into(),
                teacher_id: Some("abc".into()),
                temperature: Some(2.0),
                scaling_mode: Some(ScalingMode::LogitTemperature),
            },
        )
        .unwrap();
        s.save_csv(&p).unwrap();
        assert_eq!(SoftLabelSet::load_csv(&p).unwrap(), s);
    }
}
