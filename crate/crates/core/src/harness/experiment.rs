use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::csvload::{load_csv_partitioned, train_test_split, CsvDataset, PartitionSpec};
use super::metrics::{metric_eval, mse_to_noise_free, MetricKind};
use super::mnist::{load_mnist_dir, Mnist};
use super::presets::{preset, Preset};
use crate::lupi::{
    soft_labels, train_nopi, train_student, train_teacher, train_tram, PiMode, ScalingMode, TeacherInput,
    TrainMode, TramModel,
};
use crate::net::{BatchSize, EvalHook, EvalPoint, Matrix, MlpModel, Predictor, RunHistory};
use crate::rng::{derive_seed, Rng};
use crate::synthgen::{GeneratorSpec, Standardizer, TripleDataset, BIAS_GRID_SIZE};
use crate::{Error, Result};

/// Environment variable capping the worker threads of a sweep.
pub const THREADS_ENV: &str = "LUPILAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nopi,
    Teacher,
    GenDistill,
    Tram,
    TramZeros,
    /// No-PI model trained on the same process without corrupted rows.
    Uncorrupted,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Nopi,
        Method::Teacher,
        Method::GenDistill,
        Method::Tram,
        Method::TramZeros,
        Method::Uncorrupted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nopi => "nopi",
            Method::Teacher => "teacher",
            Method::GenDistill => "gen_distill",
            Method::Tram => "tram",
            Method::TramZeros => "tram_zeros",
            Method::Uncorrupted => "uncorrupted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

fn default_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Generator(GeneratorSpec),
    Csv {
        path: PathBuf,
        partition: PartitionSpec,
        #[serde(default = "default_fraction")]
        train_fraction: f64,
    },
    /// Directory with the four standard IDX files.
    Mnist { dir: PathBuf },
}

/// Per-experiment changes to a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<BatchSize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imitation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_mode: Option<ScalingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_input: Option<TeacherInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mode: Option<TrainMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_test_size() -> usize {
    10_000
}

/// A sweep over seeds, sample sizes and methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSource,
    pub preset: String,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Training-set sizes. Generators need at least one; for files an
    /// empty list means the whole training split.
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    /// Epochs at which test metrics are recorded; empty means the last.
    #[serde(default)]
    pub epoch_checkpoints: Vec<usize>,
    /// Test rows drawn from a generator (or taken from the MNIST test set).
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Parses `key = value` lines into nested JSON. Dotted keys nest; values
/// are read as JSON when they parse and as strings otherwise.
fn flat_to_json(text: &str) -> Result<Value> {
    let mut root = Map::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", no + 1)))?;
        let value = value.trim();
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: `{part}` is not a table", no + 1)))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), parsed);
    }
    Ok(Value::Object(root))
}

/// Parses a JSON document, or flat `key = value` text with dotted keys.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    if text.trim_start().starts_with('{') {
        Ok(serde_json::from_str(text)?)
    } else {
        Ok(serde_json::from_value(flat_to_json(text)?)?)
    }
}

impl ExperimentConfig {
    /// JSON, or flat `key = value` text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = parse_config(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// The preset with overrides applied.
    pub fn resolved_preset(&self) -> Result<Preset> {
        let mut p = preset(&self.preset)?;
        let o = &self.overrides;
        if let Some(e) = o.epochs {
            p.train.epochs = e;
        }
        if let Some(lr) = o.learning_rate {
            p.train.optimizer = p.train.optimizer.with_learning_rate(lr);
        }
        if let Some(b) = o.batch_size {
            p.train.batch_size = b;
        }
        if let Some(w) = o.weight_decay {
            p.train.weight_decay = w;
        }
        if let Some(t) = o.temperature {
            p.distill.temperature = t;
        }
        if let Some(l) = o.imitation {
            p.distill.imitation = l;
        }
        if let Some(s) = o.scaling_mode {
            p.distill.scaling_mode = s;
        }
        if let Some(t) = o.teacher_input {
            p.teacher_input = t;
        }
        if let Some(s) = o.standardize {
            p.standardize = s;
        }
        if let Some(m) = o.metric {
            p.metric = m;
        }
        p.train.validate()?;
        p.train.optimizer.validate()?;
        p.distill.validate()?;
        Ok(p)
    }

    pub fn train_mode(&self) -> TrainMode {
        self.overrides.train_mode.unwrap_or_default()
    }

    pub fn checkpoints(&self, epochs: usize) -> BTreeSet<usize> {
        if self.epoch_checkpoints.is_empty() {
            BTreeSet::from([epochs])
        } else {
            self.epoch_checkpoints.iter().copied().collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.methods.is_empty() {
            return bad("method list is empty".into());
        }
        let p = self.resolved_preset()?;
        if let Some(&e) = self.epoch_checkpoints.iter().find(|&&e| e == 0 || e > p.train.epochs) {
            return bad(format!("checkpoint epoch {e} outside 1..={}", p.train.epochs));
        }
        match &self.data {
            DataSource::Generator(g) => {
                if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
                    return bad("generator experiments need positive sample sizes".into());
                }
                if self.test_size == 0 {
                    return bad("test size must be positive".into());
                }
                if self.methods.contains(&Method::Uncorrupted) && g.uncorrupted().is_none() {
                    return bad(format!("generator `{}` has no uncorrupted counterpart", g.name()));
                }
            }
            DataSource::Csv {
                partition,
                train_fraction,
                ..
            } => {
                partition.validate()?;
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return bad(format!("train fraction must lie in (0, 1), got {train_fraction}"));
                }
                if self.methods.contains(&Method::Uncorrupted) {
                    return bad("the uncorrupted baseline needs a generator".into());
                }
            }
            DataSource::Mnist { .. } => {
                if self.methods.contains(&Method::Uncorrupted) {
                    return bad("the uncorrupted baseline needs a generator".into());
                }
            }
        }
        let tram = self.methods.iter().any(|m| matches!(m, Method::Tram | Method::TramZeros));
        if tram && p.hidden.is_empty() {
            return bad(format!("preset `{}` has no hidden layer for TRAM", p.name));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// One recorded test metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub sample_size: usize,
    pub seed: u64,
    pub epoch: usize,
    pub metric_kind: MetricKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub sample_size: usize,
    pub seed: u64,
    pub reason: String,
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub sample_size: usize,
    pub epoch: usize,
    pub metric_kind: MetricKind,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub cells: usize,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

/// Mean and sample (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates rows per (method, size, epoch, metric) in order of first
/// appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(Method, usize, usize, MetricKind)> = Vec::new();
    for r in rows {
        let k = (r.method, r.sample_size, r.epoch, r.metric_kind);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, sample_size, epoch, metric_kind)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| {
                    r.method == method && r.sample_size == sample_size && r.epoch == epoch && r.metric_kind == metric_kind
                })
                .map(|r| r.value)
                .collect();
            let (mean, std) = mean_std(&vals);
            CellSummary {
                method,
                sample_size,
                epoch,
                metric_kind,
                mean,
                std,
                count: vals.len(),
            }
        })
        .collect()
}

impl ResultsBundle {
    pub fn summary(&self) -> Vec<CellSummary> {
        summarize(&self.rows)
    }

    /// Summary at `epoch`, or at the last recorded epoch when `None`.
    pub fn cell(&self, method: Method, sample_size: usize, epoch: Option<usize>) -> Option<CellSummary> {
        let s = self.summary();
        let last = s
            .iter()
            .filter(|c| c.method == method && c.sample_size == sample_size)
            .map(|c| c.epoch)
            .max()?;
        let e = epoch.unwrap_or(last);
        s.into_iter()
            .find(|c| c.method == method && c.sample_size == sample_size && c.epoch == e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultFormat {
    Csv,
    Json,
}

impl ResultFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ResultFormat::Json,
            _ => ResultFormat::Csv,
        }
    }
}

pub const RESULTS_HEADER: [&str; 6] = ["method", "sample_size", "seed", "epoch", "metric_kind", "value"];

/// Writes the long-format CSV or the full JSON bundle.
pub fn emit_results(bundle: &ResultsBundle, path: &Path, format: ResultFormat) -> Result<()> {
    match format {
        ResultFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(RESULTS_HEADER)?;
            for r in &bundle.rows {
                w.write_record([
                    r.method.name().to_string(),
                    r.sample_size.to_string(),
                    r.seed.to_string(),
                    r.epoch.to_string(),
                    r.metric_kind.name().to_string(),
                    r.value.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        ResultFormat::Json => {
            let text = serde_json::to_string_pretty(bundle)?;
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
    }
}

pub fn parse_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| Error::NonNumeric {
                column: RESULTS_HEADER[k].into(),
                value: field(k).into(),
                line: i + 2,
            })
        };
        rows.push(ResultRow {
            method: Method::parse(field(0))?,
            sample_size: num(1)? as usize,
            seed: field(2).parse().map_err(|_| Error::NonNumeric {
                column: "seed".into(),
                value: field(2).into(),
                line: i + 2,
            })?,
            epoch: num(3)? as usize,
            metric_kind: MetricKind::parse(field(4))?,
            value: num(5)?,
        });
    }
    Ok(rows)
}

pub fn load_results_json(path: &Path) -> Result<ResultsBundle> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Data loaded once per sweep.
enum Loaded {
    Generator(GeneratorSpec),
    Csv(CsvDataset, f64),
    Mnist(Box<(Mnist, Mnist)>),
}

const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const STUDENT_STREAM: u64 = 3;
const TEACHER_STREAM: u64 = 4;
const SHUFFLE_STREAM: u64 = 5;
const TRAM_STREAM: u64 = 6;

struct Split {
    train: TripleDataset,
    test: TripleDataset,
}

fn standardized(split: Split, on: bool) -> Result<Split> {
    if !on {
        return Ok(split);
    }
    let s = Standardizer::fit(&split.train);
    Ok(Split {
        train: s.apply(&split.train)?,
        test: s.apply(&split.test)?,
    })
}

fn take_head(data: &TripleDataset, n: usize) -> Result<TripleDataset> {
    if n == 0 {
        return Ok(data.clone());
    }
    if n > data.len() {
        return Err(Error::InvalidConfig(format!(
            "sample size {n} exceeds the {} available training rows",
            data.len()
        )));
    }
    Ok(data.split_at(n).0)
}

impl Loaded {
    fn split(&self, gen: Option<&GeneratorSpec>, seed: u64, n: usize, test_size: usize) -> Result<Split> {
        match self {
            Loaded::Generator(g) => {
                let g = gen.unwrap_or(g);
                let all = g.generate(n + test_size, derive_seed(seed, &[DATA_STREAM, n as u64]))?;
                let (train, test) = all.split_at(n);
                Ok(Split { train, test })
            }
            Loaded::Csv(ds, fraction) => {
                let (train, test) = train_test_split(ds, *fraction, derive_seed(seed, &[SPLIT_STREAM]))?;
                Ok(Split {
                    train: take_head(&train, n)?,
                    test,
                })
            }
            Loaded::Mnist(sets) => {
                let (train, test) = &**sets;
                let mut order: Vec<usize> = (0..train.len()).collect();
                Rng::new(derive_seed(seed, &[SPLIT_STREAM])).shuffle(&mut order);
                let n = if n == 0 { train.len() } else { n };
                if n > train.len() {
                    return Err(Error::InvalidConfig(format!("sample size {n} exceeds {} images", train.len())));
                }
                let t: Vec<usize> = (0..test_size.min(test.len())).collect();
                Ok(Split {
                    train: train.to_dataset(&order[..n])?,
                    test: test.to_dataset(&t)?,
                })
            }
        }
    }
}

/// Evaluates a predictor on a fixed test view at checkpoint epochs.
struct Evaluator<'a> {
    metric: MetricKind,
    inputs: ArrayView2<'a, f64>,
    targets: Matrix,
    checkpoints: &'a BTreeSet<usize>,
}

impl<'a> Evaluator<'a> {
    fn score(&self, model: &dyn Predictor) -> Result<f64> {
        match self.metric {
            MetricKind::MseToNoiseFree => mse_to_noise_free(model, BIAS_GRID_SIZE),
            kind => {
                let pred = model.predict(self.inputs)?;
                metric_eval(kind, pred.view(), self.targets.view())
            }
        }
    }

    fn hook<'s>(&'s self) -> Box<EvalHook<'s>> {
        Box::new(move |epoch, model: &dyn Predictor| {
            if !self.checkpoints.contains(&epoch) {
                return Ok(None);
            }
            Ok(Some(EvalPoint {
                test_loss: None,
                test_metric: Some(self.score(model)?),
            }))
        })
    }
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    preset: &'a Preset,
    loaded: &'a Loaded,
    checkpoints: BTreeSet<usize>,
}

impl Cell<'_> {
    fn rows(&self, method: Method, n: usize, seed: u64, history: &RunHistory) -> Vec<ResultRow> {
        history
            .records
            .iter()
            .filter_map(|r| {
                r.test_metric.map(|value| ResultRow {
                    method,
                    sample_size: n,
                    seed,
                    epoch: r.epoch,
                    metric_kind: self.preset.metric,
                    value,
                })
            })
            .collect()
    }

    /// Runs every method for one `(seed, size)` pair on shared data.
    fn run(&self, seed: u64, n: usize) -> Vec<(Method, Result<Vec<ResultRow>>)> {
        let methods = &self.cfg.methods;
        let split = self
            .loaded
            .split(None, seed, n, self.cfg.test_size)
            .and_then(|s| standardized(s, self.preset.standardize));
        let split = match split {
            Ok(s) => s,
            Err(e) => {
                let msg = e.to_string();
                return methods
                    .iter()
                    .map(|&m| (m, Err(Error::InvalidConfig(format!("data: {msg}")))))
                    .collect();
            }
        };
        let mut teacher = None;
        methods
            .iter()
            .map(|&m| {
                let res = self.method(m, seed, n, &split, &mut teacher);
                (m, res)
            })
            .collect()
    }

    fn method(
        &self,
        method: Method,
        seed: u64,
        n: usize,
        split: &Split,
        teacher_cache: &mut Option<MlpModel>,
    ) -> Result<Vec<ResultRow>> {
        let fit = Fit {
            preset: self.preset,
            seed,
            size_key: n,
            train_mode: self.cfg.train_mode(),
            checkpoints: &self.checkpoints,
        };
        let history = match method {
            Method::Uncorrupted => {
                let g = match self.loaded {
                    Loaded::Generator(g) => g.uncorrupted(),
                    _ => None,
                }
                .ok_or_else(|| Error::InvalidConfig("uncorrupted baseline needs a noisy-annotator generator".into()))?;
                let clean = standardized(self.loaded.split(Some(&g), seed, n, self.cfg.test_size)?, self.preset.standardize)?;
                fit.run(Method::Nopi, &clean.train, &clean.test, &mut None)?.history
            }
            m => fit.run(m, &split.train, &split.test, teacher_cache)?.history,
        };
        Ok(self.rows(method, n, seed, &history))
    }
}

/// A model produced by [`train_method`].
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Mlp(MlpModel),
    Tram(TramModel),
}

impl TrainedModel {
    /// The deployable No-PI predictor (the teacher for `teacher`).
    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            TrainedModel::Mlp(m) => m,
            TrainedModel::Tram(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub history: RunHistory,
    pub model: TrainedModel,
}

struct Fit<'a> {
    preset: &'a Preset,
    seed: u64,
    size_key: usize,
    train_mode: TrainMode,
    checkpoints: &'a BTreeSet<usize>,
}

impl Fit<'_> {
    fn seed_for(&self, stream: u64) -> u64 {
        derive_seed(self.seed, &[stream, self.size_key as u64])
    }

    fn run(
        &self,
        method: Method,
        train: &TripleDataset,
        test: &TripleDataset,
        teacher_cache: &mut Option<MlpModel>,
    ) -> Result<MethodOutcome> {
        let p = self.preset;
        let out = p.output_width(train.task())?;
        let mut cfg = p.train.clone();
        cfg.shuffle_seed = self.seed_for(SHUFFLE_STREAM);
        let student_seed = self.seed_for(STUDENT_STREAM);
        let targets = test.targets(out)?;
        let evaluator = |inputs| Evaluator {
            metric: p.metric,
            inputs,
            targets: targets.clone(),
            checkpoints: self.checkpoints,
        };
        let (history, model) = match method {
            Method::Nopi => {
                let ev = evaluator(test.x());
                let hook = ev.hook();
                let (m, h) = train_nopi(train, &p.mlp(train.d_x(), out, student_seed), &cfg, Some(&*hook))?;
                (h, TrainedModel::Mlp(m))
            }
            Method::Teacher | Method::GenDistill => {
                let teacher_test = p.teacher_input.inputs(test);
                let spec = p.mlp(p.teacher_input.width(train), out, self.seed_for(TEACHER_STREAM));
                if teacher_cache.is_none() || method == Method::Teacher {
                    let ev = evaluator(teacher_test.view());
                    let hook = ev.hook();
                    let (model, hist) = train_teacher(train, p.teacher_input, &spec, &cfg, Some(&*hook))?;
                    *teacher_cache = Some(model.clone());
                    if method == Method::Teacher {
                        return Ok(MethodOutcome {
                            history: hist,
                            model: TrainedModel::Mlp(model),
                        });
                    }
                }
                let teacher = teacher_cache.as_ref().expect("teacher trained above");
                let soft = soft_labels(teacher, train, p.teacher_input, &p.distill)?;
                let ev = evaluator(test.x());
                let hook = ev.hook();
                let spec = p.mlp(train.d_x(), out, student_seed);
                let (m, h) = train_student(train, &soft, &p.distill, &spec, &cfg, Some(&*hook))?;
                (h, TrainedModel::Mlp(m))
            }
            Method::Tram | Method::TramZeros => {
                let specs = p.tram(train.d_x(), train.d_z(), out, self.seed_for(TRAM_STREAM))?;
                let mode = if method == Method::Tram { PiMode::Real } else { PiMode::Zeros };
                let ev = evaluator(test.x());
                let hook = ev.hook();
                let (m, h) = train_tram(train, &specs, &cfg, mode, self.train_mode, Some(&*hook))?;
                (h, TrainedModel::Tram(m))
            }
            Method::Uncorrupted => {
                return Err(Error::InvalidConfig(
                    "the uncorrupted baseline is generated inside an experiment sweep".into(),
                ))
            }
        };
        Ok(MethodOutcome { history, model })
    }
}

/// Trains one method on fixed train/test data, recording the preset's
/// metric at `checkpoints`. Seeds derive from `(seed, train.len())`.
pub fn train_method(
    preset: &Preset,
    method: Method,
    train: &TripleDataset,
    test: &TripleDataset,
    seed: u64,
    train_mode: TrainMode,
    checkpoints: &BTreeSet<usize>,
) -> Result<MethodOutcome> {
    Fit {
        preset,
        seed,
        size_key: train.len(),
        train_mode,
        checkpoints,
    }
    .run(method, train, test, &mut None)
}

/// Worker threads from `LUPILAB_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Runs every `(seed, size, method)` cell. Failed cells are logged and
/// listed in the bundle; more than 10% failures fails the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    cfg.validate()?;
    let preset = cfg.resolved_preset()?;
    let loaded = match &cfg.data {
        DataSource::Generator(g) => Loaded::Generator(g.clone()),
        DataSource::Csv {
            path,
            partition,
            train_fraction,
        } => Loaded::Csv(load_csv_partitioned(path, partition)?, *train_fraction),
        DataSource::Mnist { dir } => Loaded::Mnist(Box::new(load_mnist_dir(dir)?)),
    };
    let sizes = if cfg.sample_sizes.is_empty() {
        vec![0]
    } else {
        cfg.sample_sizes.clone()
    };
    let groups: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| sizes.iter().map(move |&n| (s, n)))
        .collect();
    let cell = Cell {
        cfg,
        preset: &preset,
        loaded: &loaded,
        checkpoints: cfg.checkpoints(preset.train.epochs),
    };
    let work = || -> Vec<Vec<(Method, Result<Vec<ResultRow>>)>> {
        groups.par_iter().map(|&(s, n)| cell.run(s, n)).collect()
    };
    let outcomes = match thread_cap() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(seed, n), group) in groups.iter().zip(outcomes) {
        for (method, res) in group {
            match res {
                Ok(r) => rows.extend(r),
                Err(e) => {
                    warn!("cell {} n={n} seed={seed} failed: {e}", method.name());
                    failures.push(CellFailure {
                        method,
                        sample_size: n,
                        seed,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    let cells = groups.len() * cfg.methods.len();
    if failures.len() * 10 > cells {
        return Err(Error::TooManyFailures {
            what: "experiment cells",
            failed: failures.len(),
            total: cells,
        });
    }
    Ok(ResultsBundle {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        cells,
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            data: DataSource::Generator(GeneratorSpec::Experiment1 { d: 5 }),
            preset: "exp1".into(),
            methods: vec![Method::Nopi, Method::Teacher, Method::GenDistill],
            seeds: vec![1, 2],
            sample_sizes: vec![40],
            epoch_checkpoints: vec![],
            test_size: 200,
            overrides: Overrides {
                epochs: Some(3),
                ..Default::default()
            },
            output: None,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.epoch_checkpoints = vec![4];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.methods = vec![Method::Tram];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.preset = "missing".into();
        assert!(c.validate().is_err());
        tiny().validate().unwrap();
    }

    #[test]
    fn flat_text_config() {
        let text = "
            # comment
            name = flat
            preset = exp1
            data.kind = generator
            data.generator = experiment1
            data.d = 5
            methods = [\"nopi\"]
            seeds = [3]
            sample_sizes = [30]
            test_size = 50
            overrides.epochs = 2
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.name, "flat");
        assert_eq!(c.data, DataSource::Generator(GeneratorSpec::Experiment1 { d: 5 }));
        assert_eq!(c.overrides.epochs, Some(2));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), c);
    }

    #[test]
    fn one_cell_bundle_is_reproducible() {
        let mut c = tiny();
        c.seeds = vec![7];
        c.methods = vec![Method::Nopi];
        c.overrides.epochs = Some(1);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a, b);
        assert_eq!(a.cells, 1);
    }

    #[test]
    fn gen_distill_with_zero_imitation_equals_nopi() {
        let mut c = tiny();
        c.overrides.imitation = Some(0.0);
        let b = run_experiment(&c).unwrap();
        for seed in [1, 2] {
            let get = |m| b.rows.iter().find(|r| r.method == m && r.seed == seed).unwrap().value;
            assert_eq!(get(Method::Nopi), get(Method::GenDistill));
        }
    }

    #[test]
    fn checkpoints_recorded() {
        let mut c = tiny();
        c.methods = vec![Method::Nopi];
        c.epoch_checkpoints = vec![1, 3];
        let b = run_experiment(&c).unwrap();
        let epochs: Vec<usize> = b.rows.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 3, 1, 3]);
    }

    #[test]
    fn emit_and_parse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = run_experiment(&tiny()).unwrap();
        let csv = dir.path().join("r.csv");
        emit_results(&b, &csv, ResultFormat::Csv).unwrap();
        assert_eq!(parse_results_csv(&csv).unwrap(), b.rows);
        let json = dir.path().join("r.json");
        emit_results(&b, &json, ResultFormat::Json).unwrap();
        assert_eq!(load_results_json(&json).unwrap(), b);
        let empty = ResultsBundle { rows: vec![], ..b };
        emit_results(&empty, &csv, ResultFormat::Csv).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), "method,sample_size,seed,epoch,metric_kind,value\n");
    }

    #[test]
    fn summary_matches_manual_aggregation() {
        let b = run_experiment(&tiny()).unwrap();
        for s in b.summary() {
            let vals: Vec<f64> = b
                .rows
                .iter()
                .filter(|r| r.method == s.method && r.sample_size == s.sample_size && r.epoch == s.epoch)
                .map(|r| r.value)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0)).sqrt();
            assert!((s.mean - m).abs() < 1e-15 && (s.std - sd).abs() < 1e-15);
        }
    }

    #[test]
    fn failures_are_flagged() {
        let mut c = tiny();
        // the clean-function metric needs one input column
        c.overrides.metric = Some(MetricKind::MseToNoiseFree);
        c.overrides.epochs = Some(1);
        let err = run_experiment(&c);
        assert!(matches!(err, Err(Error::TooManyFailures { .. })), "{err:?}");
    }
}
