use crate::error::{DireError, Result};
use crate::matrix::Matrix;

/// Embeddings partitioned by class label.
///
/// Classes are kept in ascending label order. `rows[c]` remembers which row of
/// the source matrix each embedding came from, so per-class gradients can be
/// scattered back with [`EmbeddingSet::scatter`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    labels: Vec<usize>,
    classes: Vec<Matrix>,
    rows: Vec<Vec<usize>>,
    source_rows: usize,
}

impl EmbeddingSet {
    pub fn from_labeled(points: &Matrix, labels: &[usize]) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(DireError::dim(format!(
                "{} embeddings but {} labels",
                points.rows(),
                labels.len()
            )));
        }
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut rows = vec![Vec::new(); distinct.len()];
        for (i, l) in labels.iter().enumerate() {
            let c = distinct.binary_search(l).unwrap();
            rows[c].push(i);
        }
        let classes = rows.iter().map(|idx| points.select_rows(idx)).collect();
        Ok(Self {
            labels: distinct,
            classes,
            rows,
            source_rows: points.rows(),
        })
    }

    /// One matrix per class, labelled `0..classes.len()`.
    pub fn from_classes(classes: Vec<Matrix>) -> Result<Self> {
        let cols = classes.first().map_or(0, Matrix::cols);
        if classes.iter().any(|m| m.cols() != cols) {
            return Err(DireError::dim("class matrices have different widths"));
        }
        let mut rows = Vec::with_capacity(classes.len());
        let mut next = 0;
        for m in &classes {
            rows.push((next..next + m.rows()).collect());
            next += m.rows();
        }
        Ok(Self {
            labels: (0..classes.len()).collect(),
            classes,
            rows,
            source_rows: next,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, idx: usize) -> &Matrix {
        &self.classes[idx]
    }

    pub fn class_by_label(&self, label: usize) -> Option<&Matrix> {
        self.labels.binary_search(&label).ok().map(|i| &self.classes[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Matrix)> {
        self.labels.iter().copied().zip(&self.classes)
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, Matrix::cols)
    }

    pub fn len(&self) -> usize {
        self.source_rows
    }

    pub fn is_empty(&self) -> bool {
        self.source_rows == 0
    }

    /// All embeddings in their original row order.
    pub fn pooled(&self) -> Matrix {
        let mut out = Matrix::zeros(self.source_rows, self.dim());
        self.scatter_into(&self.classes, &mut out);
        out
    }

    /// Places per-class matrices (same shapes as this set's classes) back at their source rows.
    pub fn scatter(&self, per_class: &[Matrix]) -> Result<Matrix> {
        if per_class.len() != self.classes.len()
            || per_class.iter().zip(&self.classes).any(|(g, c)| g.shape() != c.shape())
        {
            return Err(DireError::dim("per-class blocks do not match the embedding partition"));
        }
        let mut out = Matrix::zeros(self.source_rows, self.dim());
        self.scatter_into(per_class, &mut out);
        Ok(out)
    }

    fn scatter_into(&self, per_class: &[Matrix], out: &mut Matrix) {
        for (block, idx) in per_class.iter().zip(&self.rows) {
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(i).copy_from_slice(block.row(r));
            }
        }
    }

    /// Keeps at most `cap` rows per class, chosen by `pick(class_index, class_size)`.
    /// The result is a fresh class-major set; source row positions are not kept.
    pub fn subsample(&self, cap: usize, mut pick: impl FnMut(usize, usize) -> Vec<usize>) -> Self {
        let classes = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, m)| {
                if m.rows() <= cap {
                    m.clone()
                } else {
                    m.select_rows(&pick(c, m.rows()))
                }
            })
            .collect();
        let mut out = Self::from_classes(classes).expect("widths unchanged");
        out.labels = self.labels.clone();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_and_pool_round_trip() {
        let pts = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [6.0, 7.0]]).unwrap();
        let set = EmbeddingSet::from_labeled(&pts, &[3, 1, 3, 1]).unwrap();
        assert_eq!(set.labels(), &[1, 3]);
        assert_eq!(set.class(0).as_slice(), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(set.pooled(), pts);
        assert_eq!(set.class_by_label(3).unwrap().rows(), 2);
        assert!(set.class_by_label(2).is_none());
    }

    #[test]
    fn label_count_mismatch() {
        let pts = Matrix::zeros(3, 2);
        assert!(EmbeddingSet::from_labeled(&pts, &[0, 1]).is_err());
    }
}
