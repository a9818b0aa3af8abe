use dire_core::metrics::{coverage, intra_class_cosine, vendi_score};
use dire_core::rng::{rng_normal, Rng};
use dire_core::{EmbeddingSet, Matrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random(seed: u64, r: usize, c: usize) -> Matrix {
    rng_normal(&mut Rng::new(seed), r, c, 0.0, 1.0).unwrap()
}

/// Vendi score via nalgebra's symmetric eigensolver.
fn vendi_oracle(x: &Matrix) -> f64 {
    let n = x.rows();
    let unit: Vec<Vec<f64>> = x
        .row_iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / norm).collect()
        })
        .collect();
    let k = DMatrix::from_fn(n, n, |i, j| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64);
    let ev = k.symmetric_eigen().eigenvalues;
    let clamped: Vec<f64> = ev.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let h: f64 = clamped
        .iter()
        .map(|v| v / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.exp()
}

/// Coverage straight from its definition, with double loops.
fn coverage_oracle(real: &Matrix, syn: &Matrix, k: usize) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut covered = 0;
    for i in 0..real.rows() {
        let mut d: Vec<f64> = (0..real.rows()).filter(|&j| j != i).map(|j| dist(real.row(i), real.row(j))).collect();
        d.sort_by(f64::total_cmp);
        let r = d[k - 1];
        if (0..syn.rows()).any(|j| dist(real.row(i), syn.row(j)) <= r) {
            covered += 1;
        }
    }
    covered as f64 / real.rows() as f64
}

#[test]
fn vendi_matches_independent_eigensolver() {
    for seed in 0..20 {
        let n = 2 + seed as usize * 3 % 40;
        let x = random(seed, n, 1 + seed as usize % 12);
        let (a, b) = (vendi_score(&x).unwrap(), vendi_oracle(&x));
        assert!((a - b).abs() < 1e-8 * b, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn coverage_matches_definition_exactly() {
    for seed in 0..20 {
        let nr = 6 + seed as usize * 7 % 50;
        let d = 1 + seed as usize % 5;
        let real = random(seed, nr, d);
        let syn = random(seed + 1000, 1 + seed as usize % 9, d).scale(0.5 + 0.1 * seed as f64);
        let k = 1 + seed as usize % 5;
        assert_eq!(coverage(&real, &syn, k).unwrap(), coverage_oracle(&real, &syn, k), "seed {seed}");
    }
}

#[test]
fn coverage_counts_points_on_the_ball_boundary() {
    let real = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
    // NND_1 = [1, 1, 2]; a point at exactly distance 1 from 0 is inside the closed ball
    let syn = Matrix::from_rows(&[[-1.0]]).unwrap();
    assert_eq!(coverage(&real, &syn, 1).unwrap(), 1.0 / 3.0);
}

#[test]
fn trivial_metric_values() {
    let same = Matrix::from_rows(&vec![vec![0.2, -0.7, 1.1, 0.4]; 9]).unwrap();
    assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-9);
    for n in [2usize, 5, 13] {
        assert!((vendi_score(&Matrix::identity(n)).unwrap() - n as f64).abs() < 1e-9);
    }
    let x = random(4, 25, 3);
    assert_eq!(coverage(&x, &x, 5).unwrap(), 1.0);
    let set = EmbeddingSet::from_classes(vec![Matrix::identity(4)]).unwrap();
    assert!(intra_class_cosine(&set).unwrap().1.abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vendi_bounds_and_invariances(n in 1usize..24, d in 1usize..8, seed in any::<u64>(), s in 0.1f64..10.0) {
        let x = random(seed, n, d);
        let v = vendi_score(&x).unwrap();
        prop_assert!(v >= 1.0 - 1e-9 && v <= n.min(d) as f64 + 1e-9);
        prop_assert!((vendi_score(&x.scale(s)).unwrap() - v).abs() < 1e-9 * v);
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(seed ^ 1).shuffle(&mut order);
        prop_assert!((vendi_score(&x.select_rows(&order)).unwrap() - v).abs() < 1e-9 * v);
    }

    #[test]
    fn coverage_is_monotone(nr in 4usize..30, ns in 1usize..8, d in 1usize..5, seed in any::<u64>()) {
        let real = random(seed, nr, d);
        let syn = random(seed ^ 7, ns, d);
        let mut prev = 0.0;
        for k in 1..nr {
            let c = coverage(&real, &syn, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= prev);
            prev = c;
        }
        let more = Matrix::vstack(&[&syn, &random(seed ^ 9, 3, d)]).unwrap();
        prop_assert!(coverage(&real, &more, 2.min(nr - 1)).unwrap() >= coverage(&real, &syn, 2.min(nr - 1)).unwrap());
    }

    #[test]
    fn intra_class_cosine_is_bounded(k in 2usize..10, d in 1usize..6, seed in any::<u64>()) {
        let set = EmbeddingSet::from_classes(vec![random(seed, k, d), random(seed ^ 3, k, d)]).unwrap();
        let (per, mean) = intra_class_cosine(&set).unwrap();
        prop_assert!(per.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        prop_assert!((mean - (per[0] + per[1]) / 2.0).abs() < 1e-15);
    }
}
