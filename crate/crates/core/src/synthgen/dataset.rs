use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::net::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Regression,
    Binary,
    Multiclass { classes: usize },
}

/// Provenance: generator (or source file), seed and generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl DatasetMeta {
    pub fn new(generator: impl Into<String>, seed: u64) -> Self {
        Self {
            generator: generator.into(),
            seed,
            params: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }
}

/// Aligned regular features `x`, privileged features `z` and targets `y`.
///
/// `y` is `n x 1` for regression and binary tasks and one-hot `n x c` for
/// multiclass tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleDataset {
    x: Matrix,
    z: Matrix,
    y: Matrix,
    task: Task,
    meta: DatasetMeta,
}

impl TripleDataset {
    pub fn new(x: Matrix, z: Matrix, y: Matrix, task: Task, meta: DatasetMeta) -> Result<Self> {
        let n = x.nrows();
        if z.nrows() != n || y.nrows() != n {
            return Err(Error::Shape(format!(
                "row counts differ: x {}, z {}, y {}",
                n,
                z.nrows(),
                y.nrows()
            )));
        }
        for (name, m) in [("x", &x), ("z", &z), ("y", &y)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("dataset column block {name}")));
            }
        }
        match task {
            Task::Regression => {
                if y.ncols() != 1 {
                    return Err(Error::Shape("regression targets must be one column".into()));
                }
            }
            Task::Binary => {
                if y.ncols() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidConfig("binary targets must be a single 0/1 column".into()));
                }
            }
            Task::Multiclass { classes } => {
                if y.ncols() != classes || classes < 2 {
                    return Err(Error::Shape(format!("expected {classes} one-hot columns, got {}", y.ncols())));
                }
                let one_hot = y.rows().into_iter().all(|r| {
                    r.iter().all(|&v| v == 0.0 || v == 1.0) && r.sum() == 1.0
                });
                if !one_hot {
                    return Err(Error::InvalidConfig("multiclass targets must be one-hot rows".into()));
                }
            }
        }
        Ok(Self { x, z, y, task, meta })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_z(&self) -> usize {
        self.z.ncols()
    }

    /// `[x | z]`, the privileged-space input.
    pub fn xz(&self) -> Matrix {
        concatenate(Axis(1), &[self.x.view(), self.z.view()]).expect("equal row counts")
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            z: self.z.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            task: self.task,
            meta: self.meta.clone(),
        }
    }

    /// First `n` rows and the remainder.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Same rows with a replacement privileged block.
    pub fn with_z(&self, z: Matrix) -> Result<Self> {
        Self::new(self.x.clone(), z, self.y.clone(), self.task, self.meta.clone())
    }

    pub fn with_x(&self, x: Matrix) -> Result<Self> {
        Self::new(x, self.z.clone(), self.y.clone(), self.task, self.meta.clone())
    }

    pub fn classes(&self) -> usize {
        match self.task {
            Task::Regression => 0,
            Task::Binary => 2,
            Task::Multiclass { classes } => classes,
        }
    }

    /// Class index per row; regression rows map to 0.
    pub fn labels(&self) -> Vec<usize> {
        match self.task {
            Task::Regression => vec![0; self.len()],
            Task::Binary => self.y.column(0).iter().map(|&v| v as usize).collect(),
            Task::Multiclass { .. } => self
                .y
                .rows()
                .into_iter()
                .map(|r| r.iter().position(|&v| v == 1.0).unwrap_or(0))
                .collect(),
        }
    }

    /// Targets encoded for a model with `width` outputs: binary labels
    /// become one-hot when the model has two outputs.
    pub fn targets(&self, width: usize) -> Result<Matrix> {
        match (self.task, width) {
            (Task::Regression, 1) | (Task::Binary, 1) => Ok(self.y.clone()),
            (Task::Binary, 2) => Ok(one_hot(&self.labels(), 2)),
            (Task::Multiclass { classes }, w) if w == classes => Ok(self.y.clone()),
            (task, w) => Err(Error::Shape(format!("{task:?} targets cannot feed a model with {w} outputs"))),
        }
    }

    /// Sidecar path used next to a CSV dump.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes `x_0..,z_0..,y` CSV plus a JSON sidecar with task and meta.
    /// Multiclass targets are written as class indices.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.d_x()).map(|i| format!("x_{i}")).collect();
        header.extend((0..self.d_z()).map(|i| format!("z_{i}")));
        header.push("y".into());
        w.write_record(&header)?;
        let labels = self.labels();
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.extend(self.z.row(i).iter().map(|v| v.to_string()));
            rec.push(match self.task {
                Task::Multiclass { .. } => labels[i].to_string(),
                _ => self.y[[i, 0]].to_string(),
            });
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = Sidecar {
            task: self.task,
            d_x: self.d_x(),
            d_z: self.d_z(),
            meta: self.meta.clone(),
        };
        let side_path = Self::sidecar_path(path);
        fs::write(&side_path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(side_path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let side_path = Self::sidecar_path(path);
        let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut r = csv::Reader::from_path(path)?;
        let width = side.d_x + side.d_z + 1;
        let mut cells = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::Shape(format!("line {}: expected {width} fields", line + 2)));
            }
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::NonNumeric {
                    column: col.to_string(),
                    value: field.to_string(),
                    line: line + 2,
                })?;
                cells.push(v);
            }
        }
        let n = cells.len() / width;
        let all = Array2::from_shape_vec((n, width), cells).map_err(|e| Error::Shape(e.to_string()))?;
        let x = all.slice(ndarray::s![.., ..side.d_x]).to_owned();
        let z = all.slice(ndarray::s![.., side.d_x..side.d_x + side.d_z]).to_owned();
        let raw_y = all.column(width - 1).to_owned();
        let y = match side.task {
            Task::Multiclass { classes } => {
                let idx: Vec<usize> = raw_y.iter().map(|&v| v as usize).collect();
                if idx.iter().any(|&i| i >= classes) {
                    return Err(Error::InvalidConfig("class index out of range".into()));
                }
                one_hot(&idx, classes)
            }
            _ => raw_y.insert_axis(Axis(1)),
        };
        Self::new(x, z, y, side.task, side.meta)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    task: Task,
    d_x: usize,
    d_z: usize,
    meta: DatasetMeta,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

/// Per-column z-score parameters for the `x` and `z` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_std: Vec<f64>,
}

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows().max(1) as f64;
    m.columns()
        .into_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            // constant columns are left unscaled
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            (mean, sd)
        })
        .unzip()
}

impl Standardizer {
    /// Fits on the given (training) rows.
    pub fn fit(data: &TripleDataset) -> Self {
        let (x_mean, x_std) = column_stats(&data.x);
        let (z_mean, z_std) = column_stats(&data.z);
        Self {
            x_mean,
            x_std,
            z_mean,
            z_std,
        }
    }

    pub fn apply(&self, data: &TripleDataset) -> Result<TripleDataset> {
        let scale = |m: &Matrix, mean: &[f64], sd: &[f64]| {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean[j]) / sd[j];
                }
            }
            out
        };
        if data.d_x() != self.x_mean.len() || data.d_z() != self.z_mean.len() {
            return Err(Error::Shape("standardizer fitted on different columns".into()));
        }
        TripleDataset::new(
            scale(&data.x, &self.x_mean, &self.x_std),
            scale(&data.z, &self.z_mean, &self.z_std),
            data.y.clone(),
            data.task,
            data.meta.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> TripleDataset {
        TripleDataset::new(
            array![[1.0], [2.0], [3.0]],
            array![[0.5], [0.25], [0.0]],
            array![[1.0], [0.0], [1.0]],
            Task::Binary,
            DatasetMeta::new("fixture", 0),
        )
        .unwrap()
    }

    #[test]
    fn invariants_enforced() {
        let bad = TripleDataset::new(
            array![[1.0], [2.0]],
            array![[1.0]],
            array![[1.0], [0.0]],
            Task::Binary,
            DatasetMeta::new("t", 0),
        );
        assert!(bad.is_err());
        let bad = TripleDataset::new(
            array![[1.0]],
            array![[1.0]],
            array![[0.5]],
            Task::Binary,
            DatasetMeta::new("t", 0),
        );
        assert!(bad.is_err());
        let bad = TripleDataset::new(
            array![[1.0]],
            array![[1.0]],
            array![[1.0, 1.0]],
            Task::Multiclass { classes: 2 },
            DatasetMeta::new("t", 0),
        );
        assert!(bad.is_err());
        let bad = TripleDataset::new(
            array![[f64::NAN]],
            array![[1.0]],
            array![[1.0]],
            Task::Regression,
            DatasetMeta::new("t", 0),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn target_encoding() {
        let d = tiny();
        assert_eq!(d.targets(2).unwrap(), array![[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(d.targets(1).unwrap(), d.y().to_owned());
        assert!(d.targets(3).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = TripleDataset::new(
            array![[0.1, -3.5e-7], [1.0 / 3.0, 2.0]],
            array![[7.0], [-0.0]],
            array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            Task::Multiclass { classes: 3 },
            DatasetMeta::new("fixture", 4).with("note", "x"),
        )
        .unwrap();
        d.save_csv(&path).unwrap();
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("x_0,x_1,z_0,y\n"));
        assert_eq!(TripleDataset::load_csv(&path).unwrap(), d);
    }

    #[test]
    fn standardizer_uses_fit_rows() {
        let d = tiny();
        let s = Standardizer::fit(&d);
        let out = s.apply(&d).unwrap();
        assert!(out.x().sum().abs() < 1e-12);
        let var: f64 = out.x().iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
    }
}
