use ndarray::{concatenate, s, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::net::{
    check_finite, check_loss_output, take_rows, train, Batches, EpochRecord, EvalHook, LossKind, Matrix, MlpModel, MlpSpec, Optimizer,
    Predictor, RunHistory, TrainConfig,
};
use crate::synthgen::TripleDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TramSpecs {
    pub extractor: MlpSpec,
    pub pi_head: MlpSpec,
    pub nopi_head: MlpSpec,
}

impl TramSpecs {
    pub fn validate(&self, d_x: usize, d_z: usize) -> Result<()> {
        self.extractor.validate()?;
        self.pi_head.validate()?;
        self.nopi_head.validate()?;
        let rep = self.extractor.output_width();
        if self.extractor.input_width() != d_x {
            return Err(Error::Shape(format!(
                "extractor expects {} inputs, data has {d_x}",
                self.extractor.input_width()
            )));
        }
        if self.nopi_head.input_width() != rep {
            return Err(Error::Shape(format!(
                "no-PI head expects {} inputs, extractor emits {rep}",
                self.nopi_head.input_width()
            )));
        }
        if self.pi_head.input_width() != rep + d_z {
            return Err(Error::Shape(format!(
                "PI head expects {} inputs, representation plus privileged block is {}",
                self.pi_head.input_width(),
                rep + d_z
            )));
        }
        if self.pi_head.output_width() != self.nopi_head.output_width() {
            return Err(Error::Shape("PI and no-PI heads must have the same output width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiMode {
    #[default]
    Real,
    /// The privileged block is replaced by zeros everywhere.
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Both heads every step; the no-PI head loss does not reach the extractor.
    #[default]
    JointStopgrad,
    /// Extractor and PI head first, then the no-PI head on frozen features.
    Sequential,
}

/// Shared extractor with a PI head and a no-PI head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TramModel {
    pub extractor: MlpModel,
    pub pi_head: MlpModel,
    pub nopi_head: MlpModel,
    pub pi_mode: PiMode,
    pub train_mode: TrainMode,
}

impl TramModel {
    pub fn init(specs: &TramSpecs, pi_mode: PiMode, train_mode: TrainMode) -> Result<Self> {
        Ok(Self {
            extractor: MlpModel::init(specs.extractor.clone())?,
            pi_head: MlpModel::init(specs.pi_head.clone())?,
            nopi_head: MlpModel::init(specs.nopi_head.clone())?,
            pi_mode,
            train_mode,
        })
    }

    pub fn d_x(&self) -> usize {
        self.extractor.input_width()
    }

    pub fn d_z(&self) -> usize {
        self.pi_head.input_width() - self.extractor.output_width()
    }

    fn privileged(&self, z: ArrayView2<f64>) -> Matrix {
        match self.pi_mode {
            PiMode::Real => z.to_owned(),
            PiMode::Zeros => Matrix::zeros(z.raw_dim()),
        }
    }
}

impl Predictor for TramModel {
    fn input_width(&self) -> usize {
        self.d_x()
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix> {
        tram_predict(self, x)
    }
}

/// Test-time prediction `g_s(phi(x))`.
pub fn tram_predict(model: &TramModel, x: ArrayView2<f64>) -> Result<Matrix> {
    let h = model.extractor.predict(x)?;
    model.nopi_head.predict(h.view())
}

/// PI-head prediction `g_t(phi(x), z)`, honoring the model's PI mode.
pub fn pi_predict(model: &TramModel, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Matrix> {
    if z.nrows() != x.nrows() || z.ncols() != model.d_z() {
        return Err(Error::Shape(format!(
            "expected {} x {} privileged block, got {} x {}",
            x.nrows(),
            model.d_z(),
            z.nrows(),
            z.ncols()
        )));
    }
    let h = model.extractor.predict(x)?;
    let hz = concatenate(Axis(1), &[h.view(), model.privileged(z).view()]).expect("equal rows");
    model.pi_head.predict(hz.view())
}

/// Parameter gradients of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct TramGradients {
    pub extractor: Vec<f64>,
    pub pi_head: Vec<f64>,
    pub nopi_head: Vec<f64>,
    pub pi_loss: f64,
    pub nopi_loss: f64,
}

/// Gradients of `l(y, g_t(phi(x), z)) + l(y, g_s(sg(phi(x))))`.
/// With `include_nopi = false` the second term is dropped and its gradients
/// are zero.
pub fn tram_gradients(
    model: &TramModel,
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    y: ArrayView2<f64>,
    loss: LossKind,
    include_nopi: bool,
) -> TramGradients {
    let phi = model.extractor.forward_tape(x);
    let h = phi.output();
    let rep = h.ncols();
    let hz = concatenate(Axis(1), &[h.view(), model.privileged(z).view()]).expect("equal rows");
    let pi_tape = model.pi_head.forward_tape(hz.view());
    let mut g = Matrix::zeros(pi_tape.output().raw_dim());
    let pi_loss = loss.accumulate(
        model.pi_head.spec().output_activation,
        pi_tape.output().view(),
        y,
        1.0,
        Some(&mut g),
    );
    let pi = model.pi_head.backward(&pi_tape, &g, true);
    let dh = pi
        .inputs
        .expect("input gradient requested")
        .slice(s![.., ..rep])
        .to_owned();
    let extractor = model.extractor.backward(&phi, &dh, false).params;

    let (nopi_head, nopi_loss) = if include_nopi {
        let tape = model.nopi_head.forward_tape(h.view());
        let mut g = Matrix::zeros(tape.output().raw_dim());
        let l = loss.accumulate(
            model.nopi_head.spec().output_activation,
            tape.output().view(),
            y,
            1.0,
            Some(&mut g),
        );
        // stop-gradient: the input gradient is never formed
        (model.nopi_head.backward(&tape, &g, false).params, l)
    } else {
        (vec![0.0; model.nopi_head.params().len()], 0.0)
    };
    TramGradients {
        extractor,
        pi_head: pi.params,
        nopi_head,
        pi_loss,
        nopi_loss,
    }
}

struct Composed<'a> {
    extractor: &'a MlpModel,
    head: &'a dyn Predictor,
}

impl Predictor for Composed<'_> {
    fn input_width(&self) -> usize {
        self.extractor.input_width()
    }

    fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix> {
        let h = self.extractor.predict(x)?;
        self.head.predict(h.view())
    }
}

/// Trains a TRAM model. The history tracks the no-PI head: per epoch in
/// joint mode, and over the second phase in sequential mode (each phase runs
/// `cfg.epochs` epochs).
pub fn train_tram(
    data: &TripleDataset,
    specs: &TramSpecs,
    cfg: &TrainConfig,
    pi_mode: PiMode,
    train_mode: TrainMode,
    hook: Option<&EvalHook<'_>>,
) -> Result<(TramModel, RunHistory)> {
    cfg.validate()?;
    specs.validate(data.d_x(), data.d_z())?;
    check_loss_output(cfg.loss, specs.pi_head.output_activation)?;
    check_loss_output(cfg.loss, specs.nopi_head.output_activation)?;
    if data.is_empty() {
        return Err(Error::Shape("empty training set".into()));
    }
    let targets = data.targets(specs.nopi_head.output_width())?;
    let mut model = TramModel::init(specs, pi_mode, train_mode)?;
    let joint = train_mode == TrainMode::JointStopgrad;

    let mut opt_phi = Optimizer::new(cfg.optimizer, cfg.weight_decay, model.extractor.params().len());
    let mut opt_t = Optimizer::new(cfg.optimizer, cfg.weight_decay, model.pi_head.params().len());
    let mut opt_s = Optimizer::new(cfg.optimizer, cfg.weight_decay, model.nopi_head.params().len());
    let mut batches = Batches::new(data.len(), cfg.batch_size, cfg.shuffle_seed);
    let mut history = RunHistory::default();
    let n = data.len() as f64;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for (b, rows) in batches.next_epoch().into_iter().enumerate() {
            let rows = rows.as_deref();
            let x = take_rows(data.x(), rows);
            let z = take_rows(data.z(), rows);
            let y = take_rows(targets.view(), rows);
            let g = tram_gradients(&model, x.view(), z.view(), y.view(), cfg.loss, joint);
            let loss = g.pi_loss + g.nopi_loss;
            if !loss.is_finite()
                || !check_finite(&g.extractor)
                || !check_finite(&g.pi_head)
                || !check_finite(&g.nopi_head)
            {
                return Err(Error::Diverged { epoch, batch: b });
            }
            opt_phi.step(model.extractor.params_mut(), &g.extractor);
            opt_t.step(model.pi_head.params_mut(), &g.pi_head);
            if joint {
                opt_s.step(model.nopi_head.params_mut(), &g.nopi_head);
            }
            total += loss * x.nrows() as f64;
        }
        if joint {
            let eval = match hook {
                Some(h) => h(epoch, &model)?,
                None => None,
            };
            history.records.push(EpochRecord {
                epoch,
                train_loss: total / n,
                test_loss: eval.and_then(|e| e.test_loss),
                test_metric: eval.and_then(|e| e.test_metric),
            });
        }
    }
    if joint {
        return Ok((model, history));
    }

    let features = model.extractor.predict(data.x())?;
    let extractor = model.extractor.clone();
    let wrapped = |epoch: usize, head: &dyn Predictor| match hook {
        Some(h) => h(
            epoch,
            &Composed {
                extractor: &extractor,
                head,
            },
        ),
        None => Ok(None),
    };
    let (head, history) = train(
        model.nopi_head.clone(),
        features.view(),
        targets.view(),
        cfg,
        hook.map(|_| &wrapped as &EvalHook<'_>),
    )?;
    model.nopi_head = head;
    Ok((model, history))
}
