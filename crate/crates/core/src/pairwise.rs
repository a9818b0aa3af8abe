//! All-pairs cosine similarity and Euclidean distance between the rows of two
//! matrices, plus exact k-nearest-neighbour radii.
//!
//! The fast path precomputes row norms and evaluates every inner product with a
//! register-tiled kernel over a transposed panel of `B`. Each output entry is
//! still a single sequential sum over the feature axis, identical to
//! [`crate::matrix::dot`], so the tiling never changes results and identical
//! rows give an exactly zero Euclidean distance.
//!
//! The [`naive`] module holds the nested-loop reference implementations used
//! for benchmarking and as test oracles.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DireError, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{rng_normal, Rng};

/// Floor applied to the product of norms in cosine denominators.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl Reduction {
    /// Applies the reduction to a raw sum over `pairs` terms.
    pub fn apply(self, sum: f64, pairs: usize) -> f64 {
        match self {
            Reduction::Sum => sum,
            Reduction::Mean if pairs == 0 => 0.0,
            Reduction::Mean => sum / pairs as f64,
        }
    }

    pub fn factor(self, pairs: usize) -> f64 {
        self.apply(1.0, pairs)
    }
}

impl std::str::FromStr for Reduction {
    type Err = DireError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(DireError::param(format!(
                "unknown reduction `{other}` (expected sum|mean)"
            ))),
        }
    }
}

fn check_cols(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(DireError::dim(format!(
            "pairwise: A has {} columns, B has {}",
            a.cols(),
            b.cols()
        )));
    }
    Ok(())
}

fn squared_norms(m: &Matrix) -> Vec<f64> {
    m.row_iter().map(|r| dot(r, r)).collect()
}

const MR: usize = 4;
const NR: usize = 8;
/// Output rows per parallel task.
const ROW_TASK: usize = MR * 16;
/// Column strips per cache block of packed `B`.
const STRIP_BLOCK: usize = 32;

/// `B` packed into `NR`-row strips, depth-major inside each strip, zero padded.
fn pack_strips(b: &Matrix) -> Vec<f64> {
    let (m, d) = b.shape();
    let strips = m.div_ceil(NR);
    let mut out = vec![0.0; strips * d * NR];
    for j in 0..m {
        let base = (j / NR) * d * NR + j % NR;
        for (p, &v) in b.row(j).iter().enumerate() {
            out[base + p * NR] = v;
        }
    }
    out
}

/// Inner products of every row of `a` with every row of `b`.
///
/// Each entry is a left-to-right sum over the shared dimension, so the
/// result does not depend on blocking, thread count or instruction set.
pub fn inner_products(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_cols(a, b)?;
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    let mut out = Matrix::zeros(n, m);
    if n == 0 || m == 0 {
        return Ok(out);
    }
    let bpack = pack_strips(b);
    let task = |t: usize, rows: &mut [f64]| row_task(a, &bpack, t * ROW_TASK, m, d, rows);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.as_mut_slice()
            .par_chunks_mut(ROW_TASK * m)
            .enumerate()
            .for_each(|(t, rows)| task(t, rows));
    }
    #[cfg(not(feature = "parallel"))]
    for (t, rows) in out.as_mut_slice().chunks_mut(ROW_TASK * m).enumerate() {
        task(t, rows);
    }
    Ok(out)
}

fn row_task(a: &Matrix, bpack: &[f64], i0: usize, m: usize, d: usize, rows: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked above.
            unsafe { row_task_avx2(a, bpack, i0, m, d, rows) };
            return;
        }
    }
    row_task_generic(a, bpack, i0, m, d, rows);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn row_task_avx2(a: &Matrix, bpack: &[f64], i0: usize, m: usize, d: usize, rows: &mut [f64]) {
    row_task_generic(a, bpack, i0, m, d, rows);
}

/// Fills output rows `i0..i0 + rows.len() / m`.
#[inline(always)]
fn row_task_generic(a: &Matrix, bpack: &[f64], i0: usize, m: usize, d: usize, rows: &mut [f64]) {
    let nrows = rows.len() / m;
    let micro_rows = nrows.div_ceil(MR);
    // apack[r][p][q] = a[i0 + r·MR + q][p], zero padded
    let mut apack = vec![0.0; micro_rows * d * MR];
    for r in 0..nrows {
        let base = (r / MR) * d * MR + r % MR;
        for (p, &v) in a.row(i0 + r).iter().enumerate() {
            apack[base + p * MR] = v;
        }
    }
    let strips = m.div_ceil(NR);
    for s0 in (0..strips).step_by(STRIP_BLOCK) {
        for r in 0..micro_rows {
            let ap = &apack[r * d * MR..(r + 1) * d * MR];
            for s in s0..(s0 + STRIP_BLOCK).min(strips) {
                let acc = micro_kernel(ap, &bpack[s * d * NR..(s + 1) * d * NR]);
                let cols = NR.min(m - s * NR);
                for q in 0..MR.min(nrows - r * MR) {
                    let o = (r * MR + q) * m + s * NR;
                    rows[o..o + cols].copy_from_slice(&acc[q][..cols]);
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel(ap: &[f64], bp: &[f64]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (av, bv) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)) {
        for q in 0..MR {
            for c in 0..NR {
                acc[q][c] += av[q] * bv[c];
            }
        }
    }
    acc
}

fn cosine_from_inner(inner: &mut Matrix, na: &[f64], nb: &[f64]) {
    let m = nb.len();
    for (i, row) in inner.as_mut_slice().chunks_mut(m.max(1)).enumerate().take(na.len()) {
        for (v, &nbj) in row.iter_mut().zip(nb) {
            *v /= (na[i] * nbj).max(COSINE_EPS);
        }
    }
}

/// `N×M` matrix of cosine similarities `⟨aᵢ,bⱼ⟩ / max(‖aᵢ‖‖bⱼ‖, 1e-12)`.
pub fn pairwise_cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut g = inner_products(a, b)?;
    let na: Vec<f64> = squared_norms(a).into_iter().map(f64::sqrt).collect();
    let nb: Vec<f64> = squared_norms(b).into_iter().map(f64::sqrt).collect();
    cosine_from_inner(&mut g, &na, &nb);
    Ok(g)
}

/// Sum (or mean) of every entry of [`pairwise_cosine_matrix`], diagonal included.
pub fn pairwise_cosine_sum(a: &Matrix, b: &Matrix, reduction: Reduction) -> Result<f64> {
    let c = pairwise_cosine_matrix(a, b)?;
    Ok(reduction.apply(c.as_slice().iter().sum(), c.as_slice().len()))
}

/// `N×M` Euclidean distances via `‖a‖² + ‖b‖² − 2⟨a,b⟩`, negative radicands clamped to 0.
pub fn pairwise_euclidean_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut g = inner_products(a, b)?;
    let sa = squared_norms(a);
    let sb = squared_norms(b);
    let m = sb.len();
    for (i, row) in g.as_mut_slice().chunks_mut(m.max(1)).enumerate().take(sa.len()) {
        for (v, &sbj) in row.iter_mut().zip(&sb) {
            *v = ((sa[i] + sbj) - 2.0 * *v).max(0.0).sqrt();
        }
    }
    Ok(g)
}

pub fn pairwise_euclidean_sum(a: &Matrix, b: &Matrix, reduction: Reduction) -> Result<f64> {
    let e = pairwise_euclidean_matrix(a, b)?;
    Ok(reduction.apply(e.as_slice().iter().sum(), e.as_slice().len()))
}

fn by_distance_then_index(x: &(f64, usize), y: &(f64, usize)) -> Ordering {
    x.0.total_cmp(&y.0).then(x.1.cmp(&y.1))
}

/// Distance from each row of `x` to its `k`-th nearest other row.
///
/// Ties are broken by the smaller row index; the row itself is excluded by
/// index, so exact duplicates count as neighbours at distance 0.
pub fn knn_distances(x: &Matrix, k: usize) -> Result<Vec<f64>> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(DireError::param(format!(
            "k must lie in 1..={} for {n} points, got {k}",
            n.saturating_sub(1)
        )));
    }
    const BLOCK: usize = 256;
    let mut radii = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(n);
    for i0 in (0..n).step_by(BLOCK) {
        let idx: Vec<usize> = (i0..n.min(i0 + BLOCK)).collect();
        let dist = pairwise_euclidean_matrix(&x.select_rows(&idx), x)?;
        for (r, &i) in idx.iter().enumerate() {
            scratch.clear();
            scratch.extend(
                dist.row(r)
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, &dv)| (dv, j)),
            );
            let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, by_distance_then_index);
            radii.push(kth.0);
        }
    }
    Ok(radii)
}

/// Nested-loop reference kernels.
pub mod naive {
    use super::*;

    /// Computes the inner product and both norms inside the pair loop.
    pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
        check_cols(a, b)?;
        let mut out = Matrix::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for d in 0..a.cols() {
                    let (x, y) = (a.get(i, d), b.get(j, d));
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                out.set(i, j, ab / (aa.sqrt() * bb.sqrt()).max(COSINE_EPS));
            }
        }
        Ok(out)
    }

    pub fn euclidean_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
        check_cols(a, b)?;
        let mut out = Matrix::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let mut s = 0.0;
                for d in 0..a.cols() {
                    let t = a.get(i, d) - b.get(j, d);
                    s += t * t;
                }
                out.set(i, j, s.sqrt());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Cosine,
    Euclidean,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Cosine => "cosine",
            KernelKind::Euclidean => "euclidean",
        }
    }
}

/// One timing comparison between the nested-loop and optimized kernels.
///
/// `max_dev` is `max |fast − naive| / max(1, |naive|)` over all entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kernel: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub naive_s: f64,
    pub fast_s: f64,
    pub speedup: f64,
    pub max_dev: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "kernel,N,M,D,naive_s,fast_s,speedup,max_dev";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.3},{:e}",
            self.kernel, self.n, self.m, self.d, self.naive_s, self.fast_s, self.speedup, self.max_dev
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn scaled_deviation(fast: &Matrix, naive: &Matrix) -> f64 {
    fast.as_slice()
        .iter()
        .zip(naive.as_slice())
        .map(|(f, r)| (f - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Median-of-`reps` timing of one kernel on standard-normal inputs of shape `(n, m, d)`.
pub fn bench_kernel(kind: KernelKind, shape: (usize, usize, usize), reps: usize, seed: u64) -> Result<BenchReport> {
    if reps < 3 {
        return Err(DireError::param(format!("bench needs at least 3 repetitions, got {reps}")));
    }
    let (n, m, d) = shape;
    let rng = Rng::new(seed);
    let a = rng_normal(&mut rng.split(0), n, d, 0.0, 1.0)?;
    let b = rng_normal(&mut rng.split(1), m, d, 0.0, 1.0)?;
    let (fast_fn, naive_fn): (fn(&Matrix, &Matrix) -> Result<Matrix>, fn(&Matrix, &Matrix) -> Result<Matrix>) =
        match kind {
            KernelKind::Cosine => (pairwise_cosine_matrix, naive::cosine_matrix),
            KernelKind::Euclidean => (pairwise_euclidean_matrix, naive::euclidean_matrix),
        };

    let mut naive_t = Vec::with_capacity(reps);
    let mut fast_t = Vec::with_capacity(reps);
    let mut naive_out = None;
    let mut fast_out = None;
    for _ in 0..reps {
        let t = Instant::now();
        let r = naive_fn(&a, &b)?;
        naive_t.push(t.elapsed().as_secs_f64());
        naive_out = Some(r);

        let t = Instant::now();
        let f = fast_fn(&a, &b)?;
        fast_t.push(t.elapsed().as_secs_f64());
        fast_out = Some(f);
    }
    let naive_s = median(naive_t);
    let fast_s = median(fast_t);
    let max_dev = scaled_deviation(fast_out.as_ref().unwrap(), naive_out.as_ref().unwrap());
    Ok(BenchReport {
        kernel: kind.name().to_string(),
        n,
        m,
        d,
        naive_s,
        fast_s,
        speedup: naive_s / fast_s.max(f64::MIN_POSITIVE),
        max_dev,
    })
}

/// Benchmarks both kernels on every shape.
pub fn bench_kernels(shapes: &[(usize, usize, usize)], reps: usize, seed: u64) -> Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for &shape in shapes {
        for kind in [KernelKind::Cosine, KernelKind::Euclidean] {
            out.push(bench_kernel(kind, shape, reps, seed)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(seed: u64, r: usize, c: usize) -> Matrix {
        rng_normal(&mut Rng::new(seed), r, c, 0.0, 1.0).unwrap()
    }

    #[test]
    fn dispatched_and_generic_paths_agree_bitwise() {
        for (n, m, d) in [(1, 1, 1), (5, 13, 7), (70, 9, 33), (131, 67, 3)] {
            let a = random(n as u64, n, d);
            let b = random(m as u64 + 50, m, d);
            let bpack = pack_strips(&b);
            let mut x = vec![0.0; n * m];
            let mut y = vec![0.0; n * m];
            row_task(&a, &bpack, 0, m, d, &mut x);
            row_task_generic(&a, &bpack, 0, m, d, &mut y);
            assert_eq!(x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let naive = naive::cosine_matrix(&a, &b).unwrap();
            let fast = pairwise_cosine_matrix(&a, &b).unwrap();
            assert!(scaled_deviation(&fast, &naive) < 1e-12);
        }
    }

    #[test]
    fn cosine_of_identity() {
        let i2 = Matrix::identity(2);
        let c = pairwise_cosine_matrix(&i2, &i2).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(pairwise_cosine_sum(&i2, &i2, Reduction::Sum).unwrap(), 2.0);
    }

    #[test]
    fn cosine_of_diagonal_direction() {
        let c = pairwise_cosine_matrix(&m(&[&[1.0, 1.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert!((c.get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_sum_of_identical_rows() {
        let a = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(pairwise_cosine_sum(&a, &a, Reduction::Sum).unwrap(), 4.0);
        assert_eq!(pairwise_cosine_sum(&a, &a, Reduction::Mean).unwrap(), 1.0);
    }

    #[test]
    fn zero_vector_has_zero_similarity() {
        let c = pairwise_cosine_matrix(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 2.0]])).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
    }

    #[test]
    fn euclidean_three_four_five() {
        let e = pairwise_euclidean_matrix(&m(&[&[0.0, 0.0]]), &m(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(e.as_slice(), &[5.0]);
    }

    #[test]
    fn euclidean_self_diagonal_is_exact_zero() {
        let a = random(4, 37, 11);
        let e = pairwise_euclidean_matrix(&a, &a).unwrap();
        for i in 0..a.rows() {
            assert_eq!(e.get(i, i), 0.0);
        }
    }

    #[test]
    fn random_matches_naive() {
        let a = random(1, 7, 5);
        let b = random(2, 4, 5);
        let fast = pairwise_cosine_matrix(&a, &b).unwrap();
        let slow = naive::cosine_matrix(&a, &b).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10);

        let a = random(3, 8, 4);
        let b = random(4, 3, 4);
        let fast = pairwise_euclidean_matrix(&a, &b).unwrap();
        let slow = naive::euclidean_matrix(&a, &b).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-9);
    }

    #[test]
    fn cosine_mean_matches_oracle() {
        let a = random(5, 6, 3);
        let b = random(6, 6, 3);
        let slow = naive::cosine_matrix(&a, &b).unwrap();
        let oracle = slow.as_slice().iter().sum::<f64>() / 36.0;
        let got = pairwise_cosine_sum(&a, &b, Reduction::Mean).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let a = random(1, 2, 3);
        let b = random(1, 2, 4);
        assert!(matches!(pairwise_cosine_matrix(&a, &b), Err(DireError::Dimension(_))));
        assert!(matches!(pairwise_euclidean_sum(&a, &b, Reduction::Sum), Err(DireError::Dimension(_))));
    }

    #[test]
    fn knn_small_line() {
        let x = m(&[&[0.0], &[1.0], &[3.0]]);
        assert_eq!(knn_distances(&x, 1).unwrap(), vec![1.0, 1.0, 2.0]);
        assert_eq!(knn_distances(&x, 2).unwrap(), vec![3.0, 2.0, 3.0]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let x = m(&[&[0.0], &[1.0], &[3.0]]);
        assert!(matches!(knn_distances(&x, 0), Err(DireError::Parameter(_))));
        assert!(matches!(knn_distances(&x, 3), Err(DireError::Parameter(_))));
    }

    #[test]
    fn knn_matches_full_sort() {
        let x = random(10, 50, 4);
        let got = knn_distances(&x, 5).unwrap();
        let full = naive::euclidean_matrix(&x, &x).unwrap();
        for i in 0..50 {
            let mut row: Vec<f64> = (0..50).filter(|&j| j != i).map(|j| full.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            assert!((got[i] - row[4]).abs() < 1e-9);
        }
    }

    #[test]
    fn knn_counts_duplicates_at_zero() {
        let x = m(&[&[0.0], &[0.0], &[5.0]]);
        assert_eq!(knn_distances(&x, 1).unwrap(), vec![0.0, 0.0, 5.0]);
    }

    #[test]
    fn bench_small_shape() {
        let reports = bench_kernels(&[(64, 64, 16)], 3, 0).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert!(r.max_dev <= 1e-9, "{r:?}");
            assert!(r.naive_s > 0.0 && r.fast_s > 0.0);
        }
        assert!(bench_kernel(KernelKind::Cosine, (4, 4, 2), 2, 0).is_err());
    }
}
