//! Knowledge transfer from privileged features: generalized distillation,
//! TRAM, and the Monte-Carlo marginalization oracle.

mod distill;
mod marginal;
mod tram;

use ndarray::ArrayView2;

use crate::net::{train, EvalHook, MlpModel, MlpSpec, RunHistory, TrainConfig};
use crate::synthgen::TripleDataset;
use crate::{Error, Result};

pub use distill::{
    constant_teacher, soft_labels, soft_labels_from_inputs, train_student, train_teacher, DistillConfig,
    ScalingMode, SoftLabelProvenance, SoftLabelSet, TeacherInput,
};
pub use marginal::{
    marginalize_mc, BernoulliSampler, FnTeacher, Marginal, NormalSampler, PointMassSampler, Teacher,
    ZSampler,
};
pub use tram::{
    pi_predict, tram_gradients, tram_predict, train_tram, PiMode, TrainMode, TramGradients, TramModel,
    TramSpecs,
};

/// Baseline trained on the regular features only.
pub fn train_nopi(
    data: &TripleDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    hook: Option<&EvalHook<'_>>,
) -> Result<(MlpModel, RunHistory)> {
    check_width(spec, data.x())?;
    let model = MlpModel::init(spec.clone())?;
    let targets = data.targets(spec.output_width())?;
    train(model, data.x(), targets.view(), cfg, hook)
}

pub(crate) fn check_width(spec: &MlpSpec, inputs: ArrayView2<f64>) -> Result<()> {
    if spec.input_width() != inputs.ncols() {
        return Err(Error::Shape(format!(
            "network expects {} inputs, data provides {}",
            spec.input_width(),
            inputs.ncols()
        )));
    }
    Ok(())
}
