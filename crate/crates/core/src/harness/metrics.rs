use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::net::Predictor;
use crate::synthgen::{bias_grid, noise_free_target, BIAS_GRID_SIZE};
use crate::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    RocAuc,
    /// `2 * roc_auc - 1`
    NormalizedRocAuc,
    CrossEntropy,
    /// Mean squared distance to the clean regression function.
    MseToNoiseFree,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::RocAuc => "roc_auc",
            MetricKind::NormalizedRocAuc => "normalized_roc_auc",
            MetricKind::CrossEntropy => "cross_entropy",
            MetricKind::MseToNoiseFree => "mse_to_noise_free",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Metric(format!("unknown metric '{s}'")))
    }

    /// Whether larger values are better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::CrossEntropy | MetricKind::MseToNoiseFree)
    }
}

/// Positive-class score and label per row. One column means the score
/// is `P(y = 1)`; with several columns the last one is the positive class.
fn binary_view(scores: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<bool>)> {
    let c = scores.ncols();
    if c == 0 || c > 2 {
        return Err(Error::Metric(format!("ROC AUC needs 1 or 2 score columns, got {c}")));
    }
    Ok((
        scores.column(c - 1).to_vec(),
        targets.column(targets.ncols() - 1).iter().map(|&t| t > 0.5).collect(),
    ))
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Evaluates `kind` on `n x c` scores against targets of the same shape
/// (`MseToNoiseFree` treats the targets as the clean values).
pub fn metric_eval(kind: MetricKind, scores: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    if scores.dim() != targets.dim() {
        return Err(Error::Metric(format!(
            "scores are {:?}, targets are {:?}",
            scores.dim(),
            targets.dim()
        )));
    }
    if scores.nrows() == 0 {
        return Err(Error::Metric("no rows to score".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric scores".into()));
    }
    let n = scores.nrows() as f64;
    match kind {
        MetricKind::Accuracy => {
            let hits = if scores.ncols() == 1 {
                scores
                    .iter()
                    .zip(targets.iter())
                    .filter(|(&s, &t)| (s > 0.5) == (t > 0.5))
                    .count()
            } else {
                scores
                    .rows()
                    .into_iter()
                    .zip(targets.rows())
                    .filter(|(s, t)| argmax(*s) == argmax(*t))
                    .count()
            };
            Ok(hits as f64 / n)
        }
        MetricKind::RocAuc => {
            let (s, l) = binary_view(scores, targets)?;
            roc_auc(&s, &l)
        }
        MetricKind::NormalizedRocAuc => {
            let (s, l) = binary_view(scores, targets)?;
            Ok(normalized_roc_auc(roc_auc(&s, &l)?))
        }
        MetricKind::CrossEntropy => {
            let mut total = 0.0;
            if scores.ncols() == 1 {
                for (&p, &t) in scores.iter().zip(targets.iter()) {
                    let q = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
                }
            } else {
                for (&p, &t) in scores.iter().zip(targets.iter()) {
                    total -= t * p.clamp(PROB_FLOOR, 1.0).ln();
                }
            }
            Ok(total / n)
        }
        MetricKind::MseToNoiseFree => {
            Ok(scores.iter().zip(targets.iter()).map(|(s, t)| (s - t).powi(2)).sum::<f64>() / scores.len() as f64)
        }
    }
}

/// Mann-Whitney AUC with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC AUC needs both classes present".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("ROC AUC scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks doubled to stay integral: tie block [i, j) gets rank sum i + j + 1
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + j + 1) as u128;
        for &k in &order[i..j] {
            if labels[k] {
                pos_rank2 += mid2;
            }
        }
        i = j;
    }
    let (p, q) = (pos as u128, neg as u128);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

pub fn normalized_roc_auc(auc: f64) -> f64 {
    2.0 * auc - 1.0
}

/// Mean of `(model(x) - sin(2 pi x))^2` over a midpoint grid on `[0, 1]`.
pub fn mse_to_noise_free(model: &dyn Predictor, grid_size: usize) -> Result<f64> {
    if model.input_width() != 1 {
        return Err(Error::Shape(format!(
            "model takes {} inputs, the clean function takes 1",
            model.input_width()
        )));
    }
    if grid_size == 0 {
        return Err(Error::InvalidConfig("grid size must be positive".into()));
    }
    let grid = bias_grid(grid_size);
    let x = Array2::from_shape_vec((grid_size, 1), grid.clone()).expect("grid shape");
    let pred = model.predict(x.view())?;
    if pred.ncols() != 1 {
        return Err(Error::Shape("model must produce one output".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.column(0).iter().zip(&grid) {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("prediction at x = {g}")));
        }
        total += (p - noise_free_target(*g)).powi(2);
    }
    Ok(total / grid_size as f64)
}

/// [`mse_to_noise_free`] on the default grid.
pub fn bias_to_noise_free(model: &dyn Predictor) -> Result<f64> {
    mse_to_noise_free(model, BIAS_GRID_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Matrix;
    use ndarray::array;

    struct Scaled(f64);

    impl Predictor for Scaled {
        fn input_width(&self) -> usize {
            1
        }
        fn predict(&self, x: ArrayView2<f64>) -> Result<Matrix> {
            Ok(x.mapv(|v| self.0 * noise_free_target(v)))
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        let auc = roc_auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(normalized_roc_auc(auc), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn metric_eval_dispatch() {
        let s = array![[0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        let t = array![[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        assert!((metric_eval(MetricKind::Accuracy, s.view(), t.view()).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let t2 = array![[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(metric_eval(MetricKind::RocAuc, s.view(), t2.view()).unwrap(), 1.0);
        assert_eq!(metric_eval(MetricKind::NormalizedRocAuc, s.view(), t2.view()).unwrap(), 1.0);
        let ce = metric_eval(MetricKind::CrossEntropy, s.view(), t2.view()).unwrap();
        let want = -(0.8f64.ln() + 0.6f64.ln() + 0.7f64.ln()) / 3.0;
        assert!((ce - want).abs() < 1e-15);
        let single = array![[0.7], [0.2]];
        let lab = array![[1.0], [1.0]];
        assert_eq!(metric_eval(MetricKind::Accuracy, single.view(), lab.view()).unwrap(), 0.5);
        assert!(metric_eval(MetricKind::RocAuc, single.view(), lab.view()).is_err());
        assert!(metric_eval(MetricKind::Accuracy, single.view(), t.view()).is_err());
    }

    #[test]
    fn noise_free_bias_examples() {
        assert!(mse_to_noise_free(&Scaled(1.0), 1024).unwrap() <= 1e-15);
        assert!((mse_to_noise_free(&Scaled(0.7), 1024).unwrap() - 0.045).abs() <= 1e-4);
        assert!((mse_to_noise_free(&Scaled(0.0), 1024).unwrap() - 0.5).abs() <= 1e-4);
        assert!(mse_to_noise_free(&Scaled(f64::NAN), 8).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        for k in [
            MetricKind::Accuracy,
            MetricKind::RocAuc,
            MetricKind::NormalizedRocAuc,
            MetricKind::CrossEntropy,
            MetricKind::MseToNoiseFree,
        ] {
            assert_eq!(MetricKind::parse(k.name()).unwrap(), k);
        }
        assert!(MetricKind::parse("f1").is_err());
    }
}
