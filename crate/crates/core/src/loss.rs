//! The diversity regularizer: cosine diversity (CD) among synthetic
//! embeddings, cosine distribution matching (CDM) and Euclidean distribution
//! matching (EDM) against real embeddings, each with an analytic gradient
//! with respect to the synthetic embeddings.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{DireError, Result};
use crate::matrix::{dot, Matrix};
use crate::pairwise::{Reduction, COSINE_EPS};

/// Denominator floor for the EDM gradient at coincident pairs.
pub const EDM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DireWeights {
    pub r_c: f64,
    pub r_e: f64,
    pub reduction: Reduction,
    pub include_diagonal_cd: bool,
}

/// Defaults are the winner of the `dire sweep` grid on the desk benchmark
/// (see `reports/sweep.csv`).
impl Default for DireWeights {
    fn default() -> Self {
        Self {
            r_c: 2.0,
            r_e: 0.5,
            reduction: Reduction::Mean,
            include_diagonal_cd: true,
        }
    }
}

impl DireWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("rc", self.r_c), ("re", self.r_e)] {
            if !v.is_finite() || v < 0.0 {
                return Err(DireError::config(key, format!("weight must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which regularizer components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentMask {
    pub cd: bool,
    pub cdm: bool,
    pub edm: bool,
}

impl ComponentMask {
    pub const ALL: ComponentMask = ComponentMask { cd: true, cdm: true, edm: true };
    pub const NONE: ComponentMask = ComponentMask { cd: false, cdm: false, edm: false };

    pub fn is_empty(&self) -> bool {
        !(self.cd || self.cdm || self.edm)
    }

    /// The seven non-empty subsets of {CD, CDM, EDM}, singletons first.
    pub fn nonempty_subsets() -> Vec<ComponentMask> {
        let m = |cd, cdm, edm| ComponentMask { cd, cdm, edm };
        vec![
            m(true, false, false),
            m(false, true, false),
            m(false, false, true),
            m(true, true, false),
            m(true, false, true),
            m(false, true, true),
            m(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.cd {
            parts.push("cd");
        }
        if self.cdm {
            parts.push("cdm");
        }
        if self.edm {
            parts.push("edm");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl std::str::FromStr for ComponentMask {
    type Err = DireError;

    /// Parses `cd,cdm,edm` style lists; `none` or an empty string disables all.
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = ComponentMask::NONE;
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "cd" => mask.cd = true,
                "cdm" => mask.cdm = true,
                "edm" => mask.edm = true,
                "none" => {}
                other => {
                    return Err(DireError::param(format!(
                        "unknown component `{other}` (expected cd, cdm, edm)"
                    )))
                }
            }
        }
        Ok(mask)
    }
}

/// Loss terms for one class; `grad` is `∂ l_syn / ∂ E_syn` for that class.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub cd: f64,
    pub cdm: f64,
    pub edm: f64,
    pub l_syn: f64,
    pub grad: Matrix,
}

#[derive(Debug, Clone)]
pub struct DireLoss {
    pub per_class: Vec<LossBreakdown>,
    pub cd: f64,
    pub cdm: f64,
    pub edm: f64,
    pub total: f64,
    /// Gradient for every synthetic embedding, in the source row order.
    pub grad: Matrix,
}

fn check_dims(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(DireError::dim(format!(
            "{what}: synthetic embeddings have {} columns, real have {}",
            a.cols(),
            b.cols()
        )));
    }
    Ok(())
}

/// Adds `coef · ∂cos(a, b)/∂a` to `out`, returning `cos(a, b)`.
#[inline]
fn accumulate_cosine_grad(a: &[f64], na: f64, b: &[f64], nb: f64, coef: f64, out: &mut [f64]) -> f64 {
    let ab = dot(a, b);
    let nn = na * nb;
    if nn >= COSINE_EPS {
        let cos = ab / nn;
        let ca = coef * cos / (na * na);
        let cb = coef / nn;
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o += cb * y - ca * x;
        }
        cos
    } else {
        let cb = coef / COSINE_EPS;
        for (o, &y) in out.iter_mut().zip(b) {
            *o += cb * y;
        }
        ab / COSINE_EPS
    }
}

/// Cosine diversity: `S_cos(E, E)` under the configured reduction.
pub fn cd_loss(syn: &Matrix, w: &DireWeights) -> (f64, Matrix) {
    let k = syn.rows();
    let norms = syn.row_norms();
    let pairs = if w.include_diagonal_cd { k * k } else { k * k.saturating_sub(1) };
    let f = w.reduction.factor(pairs);
    let mut grad = Matrix::zeros(k, syn.cols());
    let mut sum = 0.0;
    for i in 0..k {
        // the diagonal term cos(x, x) is constant
        if w.include_diagonal_cd {
            let ni = norms[i];
            sum += if ni * ni >= COSINE_EPS {
                dot(syn.row(i), syn.row(i)) / (ni * ni)
            } else {
                dot(syn.row(i), syn.row(i)) / COSINE_EPS
            };
        }
        for j in 0..k {
            if i == j {
                continue;
            }
            // each off-diagonal pair appears as (i, j) and (j, i)
            let c = accumulate_cosine_grad(syn.row(i), norms[i], syn.row(j), norms[j], 2.0 * f, grad.row_mut(i));
            sum += c;
        }
    }
    (w.reduction.apply(sum, pairs), grad)
}

/// Cosine distribution matching: `1 − S_cos(E_syn, E_real)`; real embeddings are constants.
pub fn cdm_loss(syn: &Matrix, real: &Matrix, w: &DireWeights) -> Result<(f64, Matrix)> {
    check_dims(syn, real, "cdm")?;
    if real.rows() == 0 {
        return Err(DireError::param("cdm needs at least one real embedding"));
    }
    let pairs = syn.rows() * real.rows();
    let f = w.reduction.factor(pairs);
    let ns = syn.row_norms();
    let nr = real.row_norms();
    let mut grad = Matrix::zeros(syn.rows(), syn.cols());
    let mut sum = 0.0;
    for i in 0..syn.rows() {
        let mut g = vec![0.0; syn.cols()];
        for j in 0..real.rows() {
            sum += accumulate_cosine_grad(syn.row(i), ns[i], real.row(j), nr[j], -f, &mut g);
        }
        grad.row_mut(i).copy_from_slice(&g);
    }
    Ok((1.0 - w.reduction.apply(sum, pairs), grad))
}

/// Euclidean distribution matching: `D_euc(E_syn, E_real)` under the configured reduction.
pub fn edm_loss(syn: &Matrix, real: &Matrix, w: &DireWeights) -> Result<(f64, Matrix)> {
    check_dims(syn, real, "edm")?;
    let pairs = syn.rows() * real.rows();
    let f = w.reduction.factor(pairs);
    let d = syn.cols();
    let mut grad = Matrix::zeros(syn.rows(), d);
    let mut sum = 0.0;
    let mut diff = vec![0.0; d];
    for i in 0..syn.rows() {
        let x = syn.row(i);
        let g = grad.row_mut(i);
        for j in 0..real.rows() {
            let y = real.row(j);
            for ((t, &a), &b) in diff.iter_mut().zip(x).zip(y) {
                *t = a - b;
            }
            let dist = dot(&diff, &diff).sqrt();
            sum += dist;
            let c = f / dist.max(EDM_EPS);
            for (o, &t) in g.iter_mut().zip(&diff) {
                *o += c * t;
            }
        }
    }
    Ok((w.reduction.apply(sum, pairs), grad))
}

/// Combined per-class loss `r_c·(cd + cdm) + r_e·edm`, restricted to `mask`.
pub fn class_loss(syn: &Matrix, real: &Matrix, w: &DireWeights, mask: ComponentMask) -> Result<LossBreakdown> {
    check_dims(syn, real, "dire")?;
    let mut grad = Matrix::zeros(syn.rows(), syn.cols());
    let (mut cd, mut cdm, mut edm) = (0.0, 0.0, 0.0);
    if mask.cd {
        let (v, g) = cd_loss(syn, w);
        cd = v;
        grad.axpy(w.r_c, &g)?;
    }
    if mask.cdm {
        let (v, g) = cdm_loss(syn, real, w)?;
        cdm = v;
        grad.axpy(w.r_c, &g)?;
    }
    if mask.edm {
        let (v, g) = edm_loss(syn, real, w)?;
        edm = v;
        grad.axpy(w.r_e, &g)?;
    }
    Ok(LossBreakdown {
        cd,
        cdm,
        edm,
        l_syn: w.r_c * (cd + cdm) + w.r_e * edm,
        grad,
    })
}

/// Sums [`class_loss`] over every synthetic class, in ascending label order.
pub fn dire_loss(syn: &EmbeddingSet, real: &EmbeddingSet, w: &DireWeights, mask: ComponentMask) -> Result<DireLoss> {
    let jobs: Vec<(usize, &Matrix, &Matrix)> = syn
        .iter()
        .map(|(label, s)| {
            real.class_by_label(label)
                .map(|r| (label, s, r))
                .ok_or_else(|| DireError::param(format!("class {label} has no real embeddings")))
        })
        .collect::<Result<_>>()?;

    let run = |&(_, s, r): &(usize, &Matrix, &Matrix)| class_loss(s, r, w, mask);
    #[cfg(feature = "parallel")]
    let per_class: Vec<LossBreakdown> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_class: Vec<LossBreakdown> = jobs.iter().map(run).collect::<Result<_>>()?;

    let grads: Vec<Matrix> = per_class.iter().map(|b| b.grad.clone()).collect();
    let grad = syn.scatter(&grads)?;
    let mut out = DireLoss {
        per_class,
        cd: 0.0,
        cdm: 0.0,
        edm: 0.0,
        total: 0.0,
        grad,
    };
    for b in &out.per_class {
        out.cd += b.cd;
        out.cdm += b.cdm;
        out.edm += b.edm;
        out.total += b.l_syn;
    }
    Ok(out)
}

/// Maximum relative error between `grad` and central differences of `loss` at `at`.
///
/// The relative error of each coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(loss: F, grad: &Matrix, at: &Matrix, h: f64) -> Result<f64>
where
    F: FnMut(&Matrix) -> f64,
{
    let errs = finite_diff_errors(loss, grad, at, h)?;
    Ok(errs.as_slice().iter().copied().fold(0.0, f64::max))
}

/// Per-coordinate relative errors, for callers that need to exclude regions.
pub fn finite_diff_errors<F>(mut loss: F, grad: &Matrix, at: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0) {
        return Err(DireError::param(format!("finite-difference step must be > 0, got {h}")));
    }
    if grad.shape() != at.shape() {
        return Err(DireError::dim("gradient and evaluation point differ in shape"));
    }
    let mut x = at.clone();
    let mut errs = Matrix::zeros(at.rows(), at.cols());
    for idx in 0..x.as_slice().len() {
        let orig = x.as_slice()[idx];
        x.as_mut_slice()[idx] = orig + h;
        let up = loss(&x);
        x.as_mut_slice()[idx] = orig - h;
        let down = loss(&x);
        x.as_mut_slice()[idx] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.as_slice()[idx];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        errs.as_mut_slice()[idx] = (analytic - numeric).abs() / denom;
    }
    Ok(errs)
}

/// Rows of `syn` within `radius` of some row of `real`, where the EDM gradient is not smooth.
pub fn edm_singular_rows(syn: &Matrix, real: &Matrix, radius: f64) -> Vec<bool> {
    syn.row_iter()
        .map(|x| {
            real.row_iter().any(|y| {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() < radius
            })
        })
        .collect()
}

/// Mean `|cos|` over ordered off-diagonal pairs of rows.
pub fn mean_offdiag_abs_cos(m: &Matrix) -> f64 {
    let k = m.rows();
    if k < 2 {
        return 0.0;
    }
    let c = crate::pairwise::pairwise_cosine_matrix(m, m).expect("same width");
    let total: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| c.get(i, j).abs())
        .sum();
    total / (k * (k - 1)) as f64
}

/// Determinant of the Gram matrix of the unit-normalized rows: 1 for an
/// orthonormal set, 0 for a linearly dependent one.
pub fn gram_determinant(m: &Matrix) -> Result<f64> {
    let u = crate::matrix::row_l2_normalize(m, COSINE_EPS);
    let g = u.matmul_t(&u)?;
    Ok(crate::eigen::sym_eigenvalues(&g)?.iter().product())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdDescent {
    pub points: Matrix,
    /// `mean_offdiag_abs_cos` before the first step and after every step.
    pub mean_abs_cos: Vec<f64>,
}

impl CdDescent {
    /// First step at which the mean `|cos|` fell below `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.mean_abs_cos.iter().position(|&v| v < threshold)
    }
}

/// Gradient descent on the mean-reduced CD loss alone, projecting each row
/// back to the unit sphere after every step. With `nonnegative` the rows are
/// also clamped to the non-negative orthant, as for rectified features.
///
/// On signed vectors the minimum of the cosine sum is any configuration
/// with `Σ uᵢ = 0`, where the mean off-diagonal cosine is `−1/(K−1)`; only
/// on the non-negative orthant is the minimum an orthogonal set.
pub fn cd_descent(start: &Matrix, steps: usize, lr: f64, nonnegative: bool) -> Result<CdDescent> {
    if start.rows() < 2 {
        return Err(DireError::param("cd descent needs at least two vectors"));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(DireError::param(format!("step size must be finite and > 0, got {lr}")));
    }
    let w = DireWeights::default();
    let project = |x: &mut [f64], fallback: &[f64]| {
        if nonnegative {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let n = dot(x, x).sqrt();
        if n < COSINE_EPS {
            x.copy_from_slice(fallback);
        } else {
            x.iter_mut().for_each(|v| *v /= n);
        }
    };
    let mut x = start.clone();
    for i in 0..x.rows() {
        let row = x.row(i).to_vec();
        let fallback: Vec<f64> = row.iter().map(|v| v.abs()).collect();
        project(x.row_mut(i), &fallback);
    }
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(mean_offdiag_abs_cos(&x));
    for _ in 0..steps {
        let (_, g) = cd_loss(&x, &w);
        let prev = x.clone();
        x.axpy(-lr, &g)?;
        for i in 0..x.rows() {
            project(x.row_mut(i), prev.row(i));
        }
        trace.push(mean_offdiag_abs_cos(&x));
    }
    Ok(CdDescent {
        points: x,
        mean_abs_cos: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_normal, Rng};

    fn random(seed: u64, r: usize, c: usize) -> Matrix {
        rng_normal(&mut Rng::new(seed), r, c, 0.0, 1.0).unwrap()
    }

    fn sum_w() -> DireWeights {
        DireWeights {
            reduction: Reduction::Sum,
            ..DireWeights::default()
        }
    }

    #[test]
    fn cd_single_row() {
        let (v, g) = cd_loss(&Matrix::from_rows(&[[0.5, 2.0]]).unwrap(), &sum_w());
        assert!((v - 1.0).abs() < 1e-15);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cd_identity_rows() {
        let x = Matrix::identity(2);
        let (v, g) = cd_loss(&x, &sum_w());
        assert_eq!(v, 2.0);
        // d/dx0 of 2·cos(x0, x1) at orthonormal rows is 2·x1
        assert_eq!(g.as_slice(), &[0.0, 2.0, 2.0, 0.0]);
        let err = finite_diff_check(|e| cd_loss(e, &sum_w()).0, &g, &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn cd_gradient_random() {
        for w in [sum_w(), DireWeights::default()] {
            let x = random(3, 6, 4);
            let (_, g) = cd_loss(&x, &w);
            let err = finite_diff_check(|e| cd_loss(e, &w).0, &g, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn cd_without_diagonal() {
        let w = DireWeights {
            include_diagonal_cd: false,
            ..sum_w()
        };
        assert_eq!(cd_loss(&Matrix::identity(3), &w).0, 0.0);
        let mean_w = DireWeights {
            include_diagonal_cd: false,
            ..DireWeights::default()
        };
        assert_eq!(cd_loss(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &mean_w).0, 0.0);
    }

    #[test]
    fn cdm_extremes() {
        let w = DireWeights::default();
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (v, g) = cdm_loss(&a, &a, &w).unwrap();
        assert!(v.abs() < 1e-15);
        assert!(g.as_slice().iter().all(|x| x.abs() < 1e-15));
        let b = Matrix::from_rows(&[[-2.0, 1.0]]).unwrap();
        assert!((cdm_loss(&a, &b, &w).unwrap().0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cdm_gradient_random() {
        for w in [sum_w(), DireWeights::default()] {
            let x = random(4, 5, 4);
            let y = random(5, 9, 4);
            let (_, g) = cdm_loss(&x, &y, &w).unwrap();
            let err = finite_diff_check(|e| cdm_loss(e, &y, &w).unwrap().0, &g, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn edm_values() {
        let w = sum_w();
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let (v, g) = edm_loss(&x, &y, &w).unwrap();
        assert_eq!(v, 5.0);
        assert!((g.get(0, 0) + 0.6).abs() < 1e-15 && (g.get(0, 1) + 0.8).abs() < 1e-15);
        let (v, g) = edm_loss(&y, &y, &w).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn edm_gradient_random() {
        let w = DireWeights::default();
        let x = random(6, 4, 3);
        let y = random(7, 7, 3);
        let (_, g) = edm_loss(&x, &y, &w).unwrap();
        assert!(edm_singular_rows(&x, &y, 1e-4).iter().all(|s| !s));
        let err = finite_diff_check(|e| edm_loss(e, &y, &w).unwrap().0, &g, &x, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn dimension_errors() {
        let w = DireWeights::default();
        assert!(matches!(cdm_loss(&random(1, 2, 3), &random(2, 2, 4), &w), Err(DireError::Dimension(_))));
        assert!(matches!(edm_loss(&random(1, 2, 3), &random(2, 2, 4), &w), Err(DireError::Dimension(_))));
    }

    #[test]
    fn weights_off_gives_zero() {
        let syn = EmbeddingSet::from_labeled(&random(1, 6, 3), &[0, 0, 0, 1, 1, 1]).unwrap();
        let real = EmbeddingSet::from_labeled(&random(2, 6, 3), &[0, 1, 0, 1, 0, 1]).unwrap();
        let w = DireWeights {
            r_c: 0.0,
            r_e: 0.0,
            ..DireWeights::default()
        };
        let out = dire_loss(&syn, &real, &w, ComponentMask::ALL).unwrap();
        assert_eq!(out.total, 0.0);
        assert!(out.grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_point_class() {
        let p = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let set = EmbeddingSet::from_labeled(&p, &[0]).unwrap();
        let w = DireWeights {
            r_c: 2.5,
            r_e: 0.3,
            ..sum_w()
        };
        let out = dire_loss(&set, &set, &w, ComponentMask::ALL).unwrap();
        assert!((out.total - 2.5).abs() < 1e-15);
    }

    #[test]
    fn missing_real_class() {
        let syn = EmbeddingSet::from_labeled(&random(1, 2, 3), &[0, 4]).unwrap();
        let real = EmbeddingSet::from_labeled(&random(2, 2, 3), &[0, 1]).unwrap();
        let err = dire_loss(&syn, &real, &DireWeights::default(), ComponentMask::ALL).unwrap_err();
        assert!(matches!(err, DireError::Parameter(_)));
    }

    #[test]
    fn masking_drops_terms() {
        let x = random(8, 3, 4);
        let y = random(9, 5, 4);
        let w = DireWeights::default();
        let only_edm = class_loss(&x, &y, &w, "edm".parse().unwrap()).unwrap();
        assert_eq!((only_edm.cd, only_edm.cdm), (0.0, 0.0));
        assert!((only_edm.l_syn - w.r_e * edm_loss(&x, &y, &w).unwrap().0).abs() < 1e-15);
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("cd,cdm,edm".parse::<ComponentMask>().unwrap(), ComponentMask::ALL);
        assert_eq!("none".parse::<ComponentMask>().unwrap(), ComponentMask::NONE);
        assert_eq!("".parse::<ComponentMask>().unwrap(), ComponentMask::NONE);
        assert!("cd,xyz".parse::<ComponentMask>().is_err());
        assert_eq!(ComponentMask::nonempty_subsets().len(), 7);
        assert_eq!(ComponentMask::ALL.label(), "cd+cdm+edm");
    }

    #[test]
    fn fd_harness_on_quadratic() {
        let x = random(10, 4, 3);
        let err = finite_diff_check(|e| 0.5 * dot(e.as_slice(), e.as_slice()), &x, &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
        assert!(finite_diff_check(|_| 0.0, &x, &x, 0.0).is_err());
    }

    #[test]
    fn negative_weight_rejected() {
        let w = DireWeights {
            r_e: -1.0,
            ..DireWeights::default()
        };
        assert!(matches!(w.validate(), Err(DireError::Config { .. })));
    }

    #[test]
    fn nonnegative_cd_descent_orthogonalizes() {
        let start = random(0, 4, 4).map(f64::abs);
        let d = cd_descent(&start, 2000, 1.0, true).unwrap();
        let end = *d.mean_abs_cos.last().unwrap();
        assert!(end < 0.05, "{end}");
        assert!((gram_determinant(&d.points).unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn signed_cd_descent_balances_instead() {
        let d = cd_descent(&random(12, 4, 4), 2000, 1.0, false).unwrap();
        let sum: Vec<f64> = d.points.col_mean();
        assert!(sum.iter().all(|v| v.abs() < 1e-3), "{sum:?}");
        assert!(*d.mean_abs_cos.last().unwrap() >= 1.0 / 3.0 - 1e-6);
    }

    #[test]
    fn nonnegative_collision_is_a_local_minimum() {
        let a = 0.2248 / 0.9744f64;
        let n = (1.0 + a * a).sqrt();
        let start = Matrix::from_rows(&[
            [0.0, 1.0 / n, a / n, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let d = cd_descent(&start, 500, 1.0, true).unwrap();
        assert!(d.points.max_abs_diff(&start).unwrap() < 1e-9);
        assert!((d.mean_abs_cos[500] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gram_determinant_extremes() {
        assert!((gram_determinant(&Matrix::identity(3).scale(2.0)).unwrap() - 1.0).abs() < 1e-12);
        let dup = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(gram_determinant(&dup).unwrap().abs() < 1e-12);
    }
}
