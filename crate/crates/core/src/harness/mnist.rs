//! IDX reader and the 28x28 to 7x7 downscaler.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::net::Matrix;
use crate::synthgen::{one_hot, DatasetMeta, Task, TripleDataset};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const SMALL_SIDE: usize = 7;
const POOL: usize = SIDE / SMALL_SIDE;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Images scaled to `[0, 1]` (one flattened row each) and one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mnist {
    pub images: Matrix,
    pub labels: Matrix,
    pub rows: usize,
    pub cols: usize,
}

impl Mnist {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Student sees the 7x7 downscale, the teacher the full image.
    pub fn to_dataset(&self, rows: &[usize]) -> Result<TripleDataset> {
        let z = self.images.select(ndarray::Axis(0), rows);
        let x = downscale_batch(z.view())?;
        let y = self.labels.select(ndarray::Axis(0), rows);
        TripleDataset::new(
            x,
            z,
            y,
            Task::Multiclass { classes: 10 },
            DatasetMeta::new("mnist", 0).with("rows", rows.len()),
        )
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(path: &Path, bytes: &[u8], magic: u32, header_len: usize) -> Result<()> {
    if bytes.len() < header_len {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: header_len,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    Ok(())
}

/// Reads an IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    header(path, &bytes, IMAGE_MAGIC, 16)?;
    let (n, r, c) = (
        be_u32(&bytes, 4) as usize,
        be_u32(&bytes, 8) as usize,
        be_u32(&bytes, 12) as usize,
    );
    let expected = 16 + n * r * c;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((n, r, c, bytes[16..expected].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    header(path, &bytes, LABEL_MAGIC, 8)?;
    let n = be_u32(&bytes, 4) as usize;
    if bytes.len() < 8 + n {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: 8 + n,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..8 + n].to_vec())
}

pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Mnist> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::InvalidConfig(format!("label {bad} outside 0..=9")));
    }
    let images = Array2::from_shape_vec((n, rows * cols), pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    Ok(Mnist {
        images,
        labels: one_hot(&idx, 10),
        rows,
        cols,
    })
}

/// `(train, test)` from the four standard file names under `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Mnist, Mnist)> {
    let p = |name: &str| -> PathBuf { dir.join(name) };
    Ok((
        load_mnist(&p(TRAIN_IMAGES), &p(TRAIN_LABELS))?,
        load_mnist(&p(TEST_IMAGES), &p(TEST_LABELS))?,
    ))
}

/// Whether all four standard files are present under `dir`.
pub fn mnist_available(dir: &Path) -> bool {
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .iter()
        .all(|f| dir.join(f).is_file())
}

/// 4x4 block average.
pub fn downscale_28_to_7(image: ArrayView2<f64>) -> Result<Matrix> {
    if image.dim() != (SIDE, SIDE) {
        return Err(Error::Shape(format!("expected a 28x28 image, got {:?}", image.dim())));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image pixels".into()));
    }
    Ok(Array2::from_shape_fn((SMALL_SIDE, SMALL_SIDE), |(i, j)| {
        let block = image.slice(ndarray::s![i * POOL..(i + 1) * POOL, j * POOL..(j + 1) * POOL]);
        block.sum() / (POOL * POOL) as f64
    }))
}

/// Row-wise downscale of flattened 784-pixel images to 49 values.
pub fn downscale_batch(images: ArrayView2<f64>) -> Result<Matrix> {
    if images.ncols() != SIDE * SIDE {
        return Err(Error::Shape(format!("expected 784 pixels per row, got {}", images.ncols())));
    }
    let mut out = Matrix::zeros((images.nrows(), SMALL_SIDE * SMALL_SIDE));
    for (i, row) in images.rows().into_iter().enumerate() {
        let img = row.to_shape((SIDE, SIDE)).map_err(|e| Error::Shape(e.to_string()))?;
        let small = downscale_28_to_7(img.view())?;
        out.row_mut(i).assign(&ndarray::Array1::from_iter(small.iter().copied()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn idx_images(n: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, 28, 28] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn one_image_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..784).map(|i| (i % 256) as u8).collect();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_images(1, &pixels)).unwrap();
        fs::write(&lp, idx_labels(&[7])).unwrap();
        let m = load_mnist(&ip, &lp).unwrap();
        assert_eq!((m.len(), m.rows, m.cols), (1, 28, 28));
        for (k, &p) in pixels.iter().enumerate() {
            assert_eq!(m.images[[0, k]], p as f64 / 255.0);
        }
        assert_eq!(m.labels[[0, 7]], 1.0);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_images(1, &[0; 784])).unwrap();
        // label file carrying the image magic
        let mut bad = idx_labels(&[1]);
        bad[..4].copy_from_slice(&IMAGE_MAGIC.to_be_bytes());
        fs::write(&lp, &bad).unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::IdxMagic { .. })));
        fs::write(&lp, idx_labels(&[1, 2])).unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::IdxCountMismatch { .. })));
        fs::write(&ip, idx_images(2, &[0; 784])).unwrap();
        assert!(matches!(load_mnist(&ip, &lp), Err(Error::IdxTruncated { .. })));
    }

    #[test]
    fn downscale_examples() {
        let ones = Matrix::ones((28, 28));
        assert_eq!(downscale_28_to_7(ones.view()).unwrap(), Matrix::ones((7, 7)));
        let mut spike = Matrix::zeros((28, 28));
        spike[[13, 22]] = 16.0;
        let s = downscale_28_to_7(spike.view()).unwrap();
        assert_eq!(s[[3, 5]], 1.0);
        assert_eq!(s.sum(), 1.0);
        assert!(downscale_28_to_7(Matrix::zeros((27, 28)).view()).is_err());
    }

    #[test]
    fn downscale_preserves_mean_and_is_linear() {
        let mut r = Rng::new(3);
        let a = Matrix::from_shape_fn((28, 28), |_| r.uniform());
        let b = Matrix::from_shape_fn((28, 28), |_| r.normal());
        let da = downscale_28_to_7(a.view()).unwrap();
        assert!((da.mean().unwrap() - a.mean().unwrap()).abs() < 1e-12);
        let mix = &a * 2.5 - &b * 0.75;
        let lhs = downscale_28_to_7(mix.view()).unwrap();
        let rhs = &da * 2.5 - &downscale_28_to_7(b.view()).unwrap() * 0.75;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() < 1e-12);
        }
    }
}
