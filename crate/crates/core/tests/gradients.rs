use dire_core::data::{gen_mixture, MixtureSpec};
use dire_core::loss::{
    cd_loss, cdm_loss, dire_loss, edm_loss, edm_singular_rows, finite_diff_check, finite_diff_errors, ComponentMask,
    DireWeights,
};
use dire_core::pairwise::Reduction;
use dire_core::rng::{rng_normal, Rng};
use dire_core::synthesis::{class_major_labels, initial_points, real_embeddings, total_loss_and_grad, RunConfig};
use dire_core::teacher::{squeeze_train, TrainConfig};
use dire_core::{EmbeddingSet, Matrix};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    rng_normal(rng, r, c, 0.0, 1.0).unwrap()
}

fn weights(seed: u64) -> DireWeights {
    DireWeights {
        r_c: 0.5 + (seed % 3) as f64,
        r_e: 0.1 * (1 + seed % 4) as f64,
        reduction: if seed % 2 == 0 { Reduction::Mean } else { Reduction::Sum },
        include_diagonal_cd: seed % 5 != 0,
    }
}

#[test]
fn cd_gradient() {
    for seed in 0..20 {
        let mut rng = Rng::new(seed);
        let k = 2 + seed as usize % 5;
        let syn = random(&mut rng, k, 3 + seed as usize % 4);
        let w = weights(seed);
        let (_, g) = cd_loss(&syn, &w);
        let err = finite_diff_check(|x| cd_loss(x, &w).0, &g, &syn, H).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn cdm_gradient() {
    for seed in 0..20 {
        let mut rng = Rng::new(seed);
        let d = 2 + seed as usize % 5;
        let syn = random(&mut rng, 1 + seed as usize % 4, d);
        let real = random(&mut rng, 1 + seed as usize % 7, d);
        let w = weights(seed);
        let (_, g) = cdm_loss(&syn, &real, &w).unwrap();
        let err = finite_diff_check(|x| cdm_loss(x, &real, &w).unwrap().0, &g, &syn, H).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn edm_gradient_away_from_singularities() {
    let mut checked = 0;
    for seed in 0..20 {
        let mut rng = Rng::new(seed);
        let d = 2 + seed as usize % 5;
        let syn = random(&mut rng, 1 + seed as usize % 4, d);
        let real = random(&mut rng, 1 + seed as usize % 7, d);
        let w = weights(seed);
        let (_, g) = edm_loss(&syn, &real, &w).unwrap();
        let errs = finite_diff_errors(|x| edm_loss(x, &real, &w).unwrap().0, &g, &syn, H).unwrap();
        let singular = edm_singular_rows(&syn, &real, 1e-3);
        for i in 0..syn.rows() {
            if singular[i] {
                continue;
            }
            checked += 1;
            let e = errs.row(i).iter().copied().fold(0.0, f64::max);
            assert!(e < TOL, "seed {seed} row {i}: {e}");
        }
    }
    assert!(checked > 20);
}

#[test]
fn edm_singular_rows_detects_coincidence() {
    let real = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
    let syn = Matrix::from_rows(&[[3.0, 4.0 + 1e-6], [1.0, 1.0]]).unwrap();
    assert_eq!(edm_singular_rows(&syn, &real, 1e-3), vec![true, false]);
    let (_, g) = edm_loss(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap(), &Matrix::from_rows(&[[3.0, 4.0]]).unwrap(), &DireWeights::default()).unwrap();
    assert_eq!(g.as_slice(), &[0.0, 0.0]);
}

#[test]
fn combined_loss_gradient() {
    for seed in 0..20 {
        let mut rng = Rng::new(seed);
        let classes = 2 + seed as usize % 3;
        let d = 3 + seed as usize % 3;
        let ipc = 2 + seed as usize % 2;
        let labels = class_major_labels(classes, ipc);
        let syn_pts = random(&mut rng, labels.len(), d);
        let real_labels: Vec<usize> = (0..classes * 4).map(|i| i % classes).collect();
        let real = EmbeddingSet::from_labeled(&random(&mut rng, real_labels.len(), d), &real_labels).unwrap();
        let w = weights(seed);
        let eval = |x: &Matrix| {
            let s = EmbeddingSet::from_labeled(x, &labels).unwrap();
            dire_loss(&s, &real, &w, ComponentMask::ALL).unwrap().total
        };
        let syn = EmbeddingSet::from_labeled(&syn_pts, &labels).unwrap();
        let loss = dire_loss(&syn, &real, &w, ComponentMask::ALL).unwrap();
        assert!((loss.total - (w.r_c * (loss.cd + loss.cdm) + w.r_e * loss.edm)).abs() <= 1e-12 * loss.total.abs().max(1.0));
        let err = finite_diff_check(eval, &loss.grad, &syn_pts, H).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn total_loss_gradient() {
    for seed in 0..20 {
        let spec = MixtureSpec {
            classes: 2 + seed as usize % 2,
            dim: 4,
            per_class: 20,
            spread: 0.3,
        };
        let (train, _) = gen_mixture(&spec, seed).unwrap();
        let teacher = squeeze_train(
            &train,
            &TrainConfig {
                hidden: vec![5],
                epochs: 10,
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let cfg = RunConfig {
            ipc: 2,
            real_cap: 6,
            seed,
            lambda_bn: 0.5 + (seed % 3) as f64,
            rc: 1.0,
            re: 0.2,
            ..RunConfig::default()
        };
        let real = real_embeddings(&teacher, &train, cfg.real_cap, seed).unwrap();
        let labels = class_major_labels(spec.classes, cfg.ipc);
        let s = initial_points(&cfg, spec.classes, spec.dim, 0.5).unwrap();
        let (_, g) = total_loss_and_grad(&teacher, &s, &labels, &real, &cfg).unwrap();
        let err = finite_diff_check(
            |x| total_loss_and_grad(&teacher, x, &labels, &real, &cfg).unwrap().0.total,
            &g,
            &s,
            H,
        )
        .unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let mut rng = Rng::new(3);
    let labels = [0, 0, 1, 1];
    let syn = EmbeddingSet::from_labeled(&random(&mut rng, 4, 3), &labels).unwrap();
    let real = EmbeddingSet::from_labeled(&random(&mut rng, 4, 3), &labels).unwrap();
    let w = DireWeights {
        r_c: 0.0,
        r_e: 0.0,
        ..DireWeights::default()
    };
    let l = dire_loss(&syn, &real, &w, ComponentMask::ALL).unwrap();
    assert_eq!(l.total, 0.0);
    assert!(l.grad.as_slice().iter().all(|&v| v == 0.0));
}
