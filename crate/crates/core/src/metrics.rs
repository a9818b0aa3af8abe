//! Diversity metrics for a synthetic set evaluated in an embedding space:
//! coverage of the real data, Vendi score, and intra-class cosine similarity.

use serde::{Deserialize, Serialize};

use crate::eigen::sym_eigenvalues;
use crate::embedding::EmbeddingSet;
use crate::error::{DireError, Result};
use crate::matrix::{row_l2_normalize, Matrix};
use crate::pairwise::{knn_distances, pairwise_cosine_matrix, pairwise_euclidean_matrix, COSINE_EPS};

pub const DEFAULT_K: usize = 5;

/// Fraction of real points whose closed `k`-NN ball (radius taken within the
/// real set) contains at least one synthetic point.
pub fn coverage(real: &Matrix, syn: &Matrix, k: usize) -> Result<f64> {
    if real.cols() != syn.cols() {
        return Err(DireError::dim(format!(
            "coverage: real embeddings have {} columns, synthetic have {}",
            real.cols(),
            syn.cols()
        )));
    }
    if syn.rows() == 0 {
        return Err(DireError::param("coverage needs at least one synthetic point"));
    }
    if real.rows() < k + 1 || k == 0 {
        return Err(DireError::param(format!(
            "coverage with k={k} needs k >= 1 and at least {} real points, got {}",
            k + 1,
            real.rows()
        )));
    }
    let radii = knn_distances(real, k)?;
    const BLOCK: usize = 512;
    let mut covered = 0usize;
    for i0 in (0..real.rows()).step_by(BLOCK) {
        let idx: Vec<usize> = (i0..real.rows().min(i0 + BLOCK)).collect();
        let d = pairwise_euclidean_matrix(&real.select_rows(&idx), syn)?;
        for (r, &i) in idx.iter().enumerate() {
            if d.row(r).iter().any(|&v| v <= radii[i]) {
                covered += 1;
            }
        }
    }
    Ok(covered as f64 / real.rows() as f64)
}

/// Shannon entropy (natural log) of a probability vector, with `0·ln 0 = 0`.
fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Converts raw eigenvalues of `K/n` into a distribution: clamp at zero, renormalize.
pub fn eigen_distribution(values: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    clamped.iter().map(|v| v / total).collect()
}

/// Vendi score with the cosine kernel on unit-normalized embeddings:
/// `exp(H(λ))` where `λ` are the eigenvalues of `K / n`.
pub fn vendi_score(emb: &Matrix) -> Result<f64> {
    let n = emb.rows();
    if n == 0 {
        return Err(DireError::param("vendi score of an empty set"));
    }
    let unit = row_l2_normalize(emb, COSINE_EPS);
    let k = pairwise_cosine_matrix(&unit, &unit)?.scale(1.0 / n as f64);
    let lambda = eigen_distribution(&sym_eigenvalues(&k)?);
    if lambda.is_empty() {
        // all-zero embeddings: a single degenerate mode
        return Ok(1.0);
    }
    Ok(entropy(&lambda).exp())
}

/// Mean off-diagonal cosine similarity of each class, and their unweighted mean.
pub fn intra_class_cosine(set: &EmbeddingSet) -> Result<(Vec<f64>, f64)> {
    let mut per_class = Vec::with_capacity(set.num_classes());
    for (label, m) in set.iter() {
        let k = m.rows();
        if k < 2 {
            return Err(DireError::param(format!(
                "class {label} has {k} embedding(s); intra-class similarity needs at least 2"
            )));
        }
        let c = pairwise_cosine_matrix(m, m)?;
        let total: f64 = c.as_slice().iter().sum();
        let diag: f64 = (0..k).map(|i| c.get(i, i)).sum();
        per_class.push((total - diag) / (k * (k - 1)) as f64);
    }
    if per_class.is_empty() {
        return Err(DireError::param("intra-class similarity of an empty set"));
    }
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

/// Whether coverage and Vendi score use all embeddings at once or are
/// averaged over classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    #[default]
    Pooled,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coverage: f64,
    pub vendi: f64,
    pub mean_intra_class_cosine: f64,
    pub per_class_cosine: Vec<f64>,
    pub k_used: usize,
    pub n_real: usize,
    pub n_syn: usize,
    pub scope: MetricScope,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,ipc,coverage,similarity,vendi,k";

    pub fn csv_row(&self, method: &str, ipc: usize) -> String {
        format!(
            "{method},{ipc},{:.6},{:.6},{:.6},{}",
            self.coverage, self.mean_intra_class_cosine, self.vendi, self.k_used
        )
    }
}

pub fn metrics_report(real: &EmbeddingSet, syn: &EmbeddingSet, k: usize, scope: MetricScope) -> Result<MetricsReport> {
    if real.labels() != syn.labels() {
        return Err(DireError::param(format!(
            "real classes {:?} and synthetic classes {:?} differ",
            real.labels(),
            syn.labels()
        )));
    }
    let (per_class_cosine, mean_cos) = intra_class_cosine(syn)?;
    let (coverage_v, vendi_v) = match scope {
        MetricScope::Pooled => (coverage(&real.pooled(), &syn.pooled(), k)?, vendi_score(&syn.pooled())?),
        MetricScope::PerClass => {
            let c = syn.num_classes() as f64;
            let mut cov = 0.0;
            let mut ven = 0.0;
            for i in 0..syn.num_classes() {
                cov += coverage(real.class(i), syn.class(i), k)?;
                ven += vendi_score(syn.class(i))?;
            }
            (cov / c, ven / c)
        }
    };
    Ok(MetricsReport {
        coverage: coverage_v,
        vendi: vendi_v,
        mean_intra_class_cosine: mean_cos,
        per_class_cosine,
        k_used: k,
        n_real: real.len(),
        n_syn: syn.len(),
        scope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_normal, Rng};

    fn random(seed: u64, r: usize, c: usize) -> Matrix {
        rng_normal(&mut Rng::new(seed), r, c, 0.0, 1.0).unwrap()
    }

    #[test]
    fn coverage_of_self_is_one() {
        let x = random(1, 20, 3);
        assert_eq!(coverage(&x, &x, 5).unwrap(), 1.0);
    }

    #[test]
    fn far_synthetic_point_covers_nothing() {
        let real = random(2, 10, 3).scale(0.5);
        let syn = Matrix::from_rows(&[[1e6, 0.0, 0.0]]).unwrap();
        assert_eq!(coverage(&real, &syn, 3).unwrap(), 0.0);
    }

    #[test]
    fn coverage_errors() {
        let real = random(3, 5, 2);
        assert!(matches!(coverage(&real, &random(4, 2, 3), 2), Err(DireError::Dimension(_))));
        assert!(matches!(coverage(&real, &random(4, 2, 2), 5), Err(DireError::Parameter(_))));
        assert!(matches!(coverage(&real, &random(4, 2, 2), 0), Err(DireError::Parameter(_))));
    }

    #[test]
    fn vendi_extremes() {
        let same = Matrix::from_rows(&vec![vec![0.3, -1.2, 2.0]; 6]).unwrap();
        assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-9);
        let ortho = Matrix::identity(5).scale(3.0);
        assert!((vendi_score(&ortho).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn vendi_of_zero_embeddings() {
        assert_eq!(vendi_score(&Matrix::zeros(4, 3)).unwrap(), 1.0);
    }

    #[test]
    fn intra_class_values() {
        let dup = Matrix::from_rows(&[[1.0, 2.0, 0.5], [1.0, 2.0, 0.5]]).unwrap();
        let eye = Matrix::identity(3);
        let set = EmbeddingSet::from_classes(vec![dup, eye]).unwrap();
        let (per, mean) = intra_class_cosine(&set).unwrap();
        assert!((per[0] - 1.0).abs() < 1e-15);
        assert!(per[1].abs() < 1e-12);
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singleton_class_is_named() {
        let set = EmbeddingSet::from_labeled(&random(1, 3, 2), &[0, 0, 7]).unwrap();
        let err = intra_class_cosine(&set).unwrap_err().to_string();
        assert!(err.contains("class 7"), "{err}");
    }

    #[test]
    fn report_on_identical_sets() {
        let pts = random(9, 30, 4);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let set = EmbeddingSet::from_labeled(&pts, &labels).unwrap();
        let rep = metrics_report(&set, &set, 5, MetricScope::Pooled).unwrap();
        assert_eq!(rep.coverage, 1.0);
        assert!((rep.vendi - vendi_score(&pts).unwrap()).abs() < 1e-12);
        assert!(rep.vendi >= 1.0 && rep.vendi <= 30.0);
        let per = metrics_report(&set, &set, 3, MetricScope::PerClass).unwrap();
        assert_eq!(per.coverage, 1.0);
    }

    #[test]
    fn report_rejects_mismatched_classes() {
        let a = EmbeddingSet::from_labeled(&random(1, 4, 2), &[0, 0, 1, 1]).unwrap();
        let b = EmbeddingSet::from_labeled(&random(2, 4, 2), &[0, 0, 2, 2]).unwrap();
        assert!(metrics_report(&a, &b, 1, MetricScope::Pooled).is_err());
    }
}
