use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::Matrix;
use crate::rng::Rng;
use crate::synthgen::{one_hot, DatasetMeta, Task, TripleDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetEncoding {
    /// 0/1 labels.
    #[default]
    Binary,
    /// Class indices `0..classes`, stored one-hot.
    OneHot { classes: usize },
    Regression,
}

/// Assigns every CSV column to exactly one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub x: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
    pub y: String,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default)]
    pub target: TargetEncoding,
    /// Orders the train/test split when present.
    #[serde(default)]
    pub time_column: Option<String>,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::InvalidConfig("at least one x column is required".into()));
        }
        let mut seen = HashSet::new();
        let all = self
            .x
            .iter()
            .chain(&self.z)
            .chain(std::iter::once(&self.y))
            .chain(&self.drop)
            .chain(self.time_column.iter());
        for c in all {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidConfig(format!("column `{c}` is assigned more than once")));
            }
        }
        if let TargetEncoding::OneHot { classes } = self.target {
            if classes < 2 {
                return Err(Error::InvalidConfig("one-hot targets need at least 2 classes".into()));
            }
        }
        Ok(())
    }
}

/// A partitioned CSV plus load bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub data: TripleDataset,
    pub dropped_rows: usize,
    pub time: Option<Vec<f64>>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "NaN" | "nan" | "?" | "null")
}

/// Loads a CSV with a header row, dropping (and counting) rows with a
/// missing value in any used column.
pub fn load_csv_partitioned(path: &Path, spec: &PartitionSpec) -> Result<CsvDataset> {
    spec.validate()?;
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index = |name: &String| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))
    };
    let xi: Vec<usize> = spec.x.iter().map(index).collect::<Result<_>>()?;
    let zi: Vec<usize> = spec.z.iter().map(index).collect::<Result<_>>()?;
    let yi = index(&spec.y)?;
    let ti = spec.time_column.as_ref().map(index).transpose()?;
    for d in &spec.drop {
        index(d)?;
    }
    let assigned: HashSet<&str> = spec
        .x
        .iter()
        .chain(&spec.z)
        .chain(std::iter::once(&spec.y))
        .chain(&spec.drop)
        .chain(spec.time_column.iter())
        .map(String::as_str)
        .collect();
    if let Some(free) = header.iter().find(|h| !assigned.contains(h.as_str())) {
        return Err(Error::InvalidConfig(format!("column `{free}` is not assigned to x, z, y or drop")));
    }

    let used: Vec<usize> = xi.iter().chain(&zi).copied().chain([yi]).chain(ti).collect();
    let (mut xs, mut zs, mut ys, mut ts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        if used.iter().any(|&c| is_missing(rec.get(c).unwrap_or("").trim())) {
            dropped += 1;
            continue;
        }
        let num = |c: usize| -> Result<f64> {
            let cell = rec.get(c).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonNumeric {
                    column: header[c].clone(),
                    value: cell.to_string(),
                    line,
                }),
            }
        };
        for &c in &xi {
            xs.push(num(c)?);
        }
        for &c in &zi {
            zs.push(num(c)?);
        }
        ys.push(num(yi)?);
        if let Some(t) = ti {
            ts.push(num(t)?);
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::NoRows(path.display().to_string()));
    }
    let x = Matrix::from_shape_vec((n, xi.len()), xs).map_err(|e| Error::Shape(e.to_string()))?;
    let z = Matrix::from_shape_vec((n, zi.len()), zs).map_err(|e| Error::Shape(e.to_string()))?;
    let (y, task) = match spec.target {
        TargetEncoding::Regression => (Matrix::from_shape_vec((n, 1), ys).expect("n x 1"), Task::Regression),
        TargetEncoding::Binary => {
            if let Some(bad) = ys.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidConfig(format!("binary target `{}` has value {bad}", spec.y)));
            }
            (Matrix::from_shape_vec((n, 1), ys).expect("n x 1"), Task::Binary)
        }
        TargetEncoding::OneHot { classes } => {
            let mut idx = Vec::with_capacity(n);
            for &v in &ys {
                if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                    return Err(Error::InvalidConfig(format!("class index {v} outside 0..{classes}")));
                }
                idx.push(v as usize);
            }
            (one_hot(&idx, classes), Task::Multiclass { classes })
        }
    };
    let meta = DatasetMeta::new("csv", 0)
        .with("path", path.display().to_string())
        .with("dropped_rows", dropped);
    Ok(CsvDataset {
        data: TripleDataset::new(x, z, y, task, meta)?,
        dropped_rows: dropped,
        time: ti.map(|_| ts),
    })
}

/// Train/test split: earliest rows train when a time column exists,
/// otherwise a seeded random permutation.
pub fn train_test_split(ds: &CsvDataset, train_fraction: f64, seed: u64) -> Result<(TripleDataset, TripleDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.data.len();
    let mut order: Vec<usize> = (0..n).collect();
    match &ds.time {
        Some(t) => order.sort_by(|&a, &b| t[a].total_cmp(&t[b])),
        None => Rng::new(seed).shuffle(&mut order),
    }
    let cut = (train_fraction * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::InvalidConfig(format!("a {train_fraction} split of {n} rows leaves an empty side")));
    }
    Ok((ds.data.select(&order[..cut]), ds.data.select(&order[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn spec() -> PartitionSpec {
        PartitionSpec {
            x: vec!["a".into()],
            z: vec!["b".into()],
            y: "c".into(),
            drop: vec![],
            target: TargetEncoding::Binary,
            time_column: None,
        }
    }

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.csv");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_row_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b,c\n1,2,0\n3,4,1\n5,6,1\n");
        let ds = load_csv_partitioned(&p, &spec()).unwrap();
        assert_eq!(ds.data.x().dim(), (3, 1));
        assert_eq!(ds.data.z().dim(), (3, 1));
        assert_eq!(ds.data.y().dim(), (3, 1));
        assert_eq!(ds.dropped_rows, 0);
        assert_eq!(ds.data.z()[[2, 0]], 6.0);
    }

    #[test]
    fn overlapping_roles_rejected() {
        let mut s = spec();
        s.z = vec!["a".into()];
        assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn missing_cell_drops_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b,c\n1,,0\n3,4,1\n5,6,1\n");
        let ds = load_csv_partitioned(&p, &spec()).unwrap();
        assert_eq!(ds.data.len(), 2);
        assert_eq!(ds.dropped_rows, 1);
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b,c\n1,x,0\n");
        assert!(matches!(load_csv_partitioned(&p, &spec()), Err(Error::NonNumeric { .. })));
        let p = write(&dir, "a,q,c\n1,2,0\n");
        assert!(matches!(load_csv_partitioned(&p, &spec()), Err(Error::UnknownColumn(_))));
        let p = write(&dir, "a,b,c\n1,,0\n");
        assert!(matches!(load_csv_partitioned(&p, &spec()), Err(Error::NoRows(_))));
    }

    #[test]
    fn time_column_orders_split() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b,c,t\n1,0,0,4\n2,0,1,1\n3,0,0,3\n4,0,1,2\n");
        let mut s = spec();
        s.time_column = Some("t".into());
        let ds = load_csv_partitioned(&p, &s).unwrap();
        let (train, test) = train_test_split(&ds, 0.5, 99).unwrap();
        assert_eq!(train.x().column(0).to_vec(), vec![2.0, 4.0]);
        assert_eq!(test.x().column(0).to_vec(), vec![3.0, 1.0]);
    }

    #[test]
    fn random_split_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = std::iter::once("a,b,c\n".to_string())
            .chain((0..20).map(|i| format!("{i},{i},{}\n", i % 2)))
            .collect();
        let p = write(&dir, &body);
        let ds = load_csv_partitioned(&p, &spec()).unwrap();
        let (a, _) = train_test_split(&ds, 0.7, 5).unwrap();
        let (b, _) = train_test_split(&ds, 0.7, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 14);
        assert!(train_test_split(&ds, 1.0, 5).is_err());
    }
}
