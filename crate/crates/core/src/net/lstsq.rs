use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: Array1<f64>,
    pub rank: usize,
}

fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn check(a: &ArrayView2<f64>, b: Option<&ArrayView1<f64>>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Shape(format!("least squares needs a non-empty matrix, got {:?}", a.dim())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares design matrix".into()));
    }
    if let Some(b) = b {
        if b.len() != a.nrows() {
            return Err(Error::Shape(format!(
                "right-hand side has {} entries for {} rows",
                b.len(),
                a.nrows()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("least-squares right-hand side".into()));
        }
    }
    Ok(())
}

/// Minimum-norm least-squares solution of `a x ~ b` together with the
/// numerical rank of `a`, via a singular value decomposition.
pub fn least_squares_with_rank(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<LstsqSolution> {
    check(&a, Some(&b))?;
    let svd = to_nalgebra(a).svd(true, true);
    let max = svd.singular_values.max();
    let cutoff = RANK_TOLERANCE * max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let rhs = DVector::from_iterator(b.len(), b.iter().copied());
    let x = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Error::InvalidConfig(format!("least-squares solve failed: {e}")))?;
    Ok(LstsqSolution {
        coefficients: Array1::from_iter(x.iter().copied()),
        rank,
    })
}

pub fn least_squares(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(least_squares_with_rank(a, b)?.coefficients)
}

pub fn matrix_rank(a: ArrayView2<f64>) -> Result<usize> {
    check(&a, None)?;
    let sv = to_nalgebra(a).singular_values();
    let cutoff = RANK_TOLERANCE * sv.max();
    Ok(sv.iter().filter(|&&s| s > cutoff).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use ndarray::{array, Array2};

    #[test]
    fn identity_system() {
        let a = Array2::eye(3);
        let x = least_squares(a.view(), array![1.0, 2.0, 3.0].view()).unwrap();
        for (got, want) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_of_two_points() {
        let x = least_squares(array![[1.0], [1.0]].view(), array![0.0, 2.0].view()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn recovers_known_coefficients() {
        let mut r = Rng::new(17);
        let a = Array2::from_shape_fn((20, 5), |_| r.normal());
        let w = array![1.0, -2.0, 0.5, 3.0, -0.25];
        let b = a.dot(&w);
        let x = least_squares(a.view(), b.view()).unwrap();
        for (got, want) in x.iter().zip(w.iter()) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn minimum_norm_on_duplicate_columns() {
        // x1 + x2 = 2 on identical columns: min-norm splits evenly
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let s = least_squares_with_rank(a.view(), array![2.0, 2.0].view()).unwrap();
        assert_eq!(s.rank, 1);
        assert!((s.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((s.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let a = array![[1.0, f64::NAN]];
        assert!(least_squares(a.view(), array![1.0].view()).is_err());
        let a = array![[1.0]];
        assert!(least_squares(a.view(), array![f64::INFINITY].view()).is_err());
    }
}
