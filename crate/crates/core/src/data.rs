//! Labelled Gaussian-mixture datasets standing in for an image corpus.

use serde::{Deserialize, Serialize};

use crate::error::{DireError, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(points: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(DireError::dim(format!(
                "{} points but {} labels",
                points.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DireError::param(format!("label {bad} is not below the class count {num_classes}")));
        }
        if split == Split::Train {
            let counts = class_counts(&labels, num_classes);
            if let Some(c) = counts.iter().position(|&n| n == 0) {
                return Err(DireError::param(format!("class {c} has no training points")));
            }
        }
        Ok(Self {
            points,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Row indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        if l < num_classes {
            counts[l] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            per_class: 500,
            spread: 0.3,
        }
    }
}

/// Random orthogonal matrix from Gram–Schmidt on a Gaussian draw.
fn random_rotation(rng: &mut Rng, d: usize) -> Matrix {
    loop {
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for _ in 0..d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            for u in &q {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            let n = dot(&v, &v).sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= n);
            q.push(v);
        }
        if ok {
            return Matrix::from_rows(&q).expect("square");
        }
    }
}

/// Unit-norm class centres: `±e_i` for the first `2d` classes, random unit
/// directions beyond that, all rotated by a seeded orthogonal matrix.
pub fn class_means(classes: usize, dim: usize, rng: &mut Rng) -> Matrix {
    let mut frame = Matrix::zeros(classes, dim);
    for c in 0..classes {
        if c < 2 * dim {
            frame.set(c, c % dim, if c < dim { 1.0 } else { -1.0 });
        } else {
            let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
            let n = dot(&v, &v).sqrt().max(1e-12);
            for (j, x) in v.iter().enumerate() {
                frame.set(c, j, x / n);
            }
        }
    }
    let rot = random_rotation(rng, dim);
    frame.matmul(&rot).expect("conforming")
}

/// Draws `per_class` points around each class centre and splits them 80/20
/// into train and test, per class.
pub fn gen_mixture(spec: &MixtureSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.classes < 2 {
        return Err(DireError::param(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.dim < 2 {
        return Err(DireError::param(format!("need dimension >= 2, got {}", spec.dim)));
    }
    if spec.per_class < 10 {
        return Err(DireError::param(format!("need at least 10 points per class, got {}", spec.per_class)));
    }
    if !(spec.spread >= 0.0) || !spec.spread.is_finite() {
        return Err(DireError::param(format!("spread must be finite and >= 0, got {}", spec.spread)));
    }
    let root = Rng::new(seed);
    let means = class_means(spec.classes, spec.dim, &mut root.split(0));
    let n_train = spec.per_class * 4 / 5;

    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    for c in 0..spec.classes {
        let mut rng = root.split(1 + c as u64);
        let mut pts: Vec<Vec<f64>> = (0..spec.per_class)
            .map(|_| {
                means
                    .row(c)
                    .iter()
                    .map(|&m| m + spec.spread * rng.standard_normal())
                    .collect()
            })
            .collect();
        rng.shuffle(&mut pts);
        for (i, p) in pts.into_iter().enumerate() {
            if i < n_train {
                train_rows.push(p);
                train_labels.push(c);
            } else {
                test_rows.push(p);
                test_labels.push(c);
            }
        }
    }
    let train = LabeledDataset::new(Matrix::from_rows(&train_rows)?, train_labels, spec.classes, Split::Train)?;
    let test = LabeledDataset::new(Matrix::from_rows(&test_rows)?, test_labels, spec.classes, Split::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, dim: usize, spread: f64) -> MixtureSpec {
        MixtureSpec {
            classes,
            dim,
            per_class: 20,
            spread,
        }
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let (train, test) = gen_mixture(&spec(3, 4, 0.0), 1).unwrap();
        let means = class_means(3, 4, &mut Rng::new(1).split(0));
        for ds in [&train, &test] {
            for (i, &l) in ds.labels.iter().enumerate() {
                assert_eq!(ds.points.row(i), means.row(l));
            }
        }
    }

    #[test]
    fn two_class_means_are_sqrt2_apart() {
        let means = class_means(2, 2, &mut Rng::new(5));
        let d: f64 = means.row(0).iter().zip(means.row(1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((d - 2f64.sqrt()).abs() < 1e-12, "{d}");
        for n in means.row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = gen_mixture(&spec(4, 3, 0.2), 9).unwrap();
        assert_eq!(train.len(), 4 * 16);
        assert_eq!(test.len(), 4 * 4);
        assert_eq!(class_counts(&train.labels, 4), vec![16; 4]);
        let (train2, test2) = gen_mixture(&spec(4, 3, 0.2), 9).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn many_classes_use_random_directions() {
        let means = class_means(7, 3, &mut Rng::new(2));
        assert_eq!(means.rows(), 7);
        for n in means.row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(gen_mixture(&spec(1, 4, 0.1), 0).is_err());
        assert!(gen_mixture(&spec(3, 1, 0.1), 0).is_err());
        assert!(gen_mixture(&spec(3, 4, -0.1), 0).is_err());
        let few = MixtureSpec {
            per_class: 5,
            ..spec(3, 4, 0.1)
        };
        assert!(gen_mixture(&few, 0).is_err());
    }

    #[test]
    fn labels_validated() {
        assert!(LabeledDataset::new(Matrix::zeros(2, 2), vec![0, 2], 2, Split::Test).is_err());
        assert!(LabeledDataset::new(Matrix::zeros(2, 2), vec![0, 0], 2, Split::Train).is_err());
        assert!(LabeledDataset::new(Matrix::zeros(2, 2), vec![0, 0], 2, Split::Test).is_ok());
    }
}
