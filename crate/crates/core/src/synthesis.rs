//! Recovery of a condensed dataset from Gaussian noise against a frozen
//! teacher, minimizing `L_ce + L_bn + L_syn` by gradient descent on the
//! synthetic points.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::embedding::EmbeddingSet;
use crate::error::{DireError, Result};
use crate::loss::{dire_loss, ComponentMask, DireWeights};
use crate::matrix::Matrix;
use crate::metrics::{metrics_report, MetricScope, MetricsReport};
use crate::pairwise::Reduction;
use crate::rng::{rng_normal, Rng};
use crate::teacher::{cross_entropy, evaluate_student, one_hot, relabel, SoftLabels, StudentTargets, TeacherModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Gd,
    Momentum { beta: f64 },
}

/// Hyperparameters of one synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub ipc: usize,
    pub iters: usize,
    pub lr: f64,
    pub lambda_bn: f64,
    pub rc: f64,
    pub re: f64,
    pub reduction: Reduction,
    pub include_diagonal_cd: bool,
    #[serde(with = "mask_string")]
    pub components: ComponentMask,
    pub real_cap: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Standard deviation of the initial noise; `None` uses the pooled
    /// per-coordinate standard deviation of the real training points.
    pub init_std: Option<f64>,
    /// Temperature used when relabelling the result.
    pub temperature: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = DireWeights::default();
        Self {
            ipc: 10,
            iters: 500,
            lr: 0.1,
            lambda_bn: 1.0,
            rc: w.r_c,
            re: w.r_e,
            reduction: w.reduction,
            include_diagonal_cd: w.include_diagonal_cd,
            components: ComponentMask::ALL,
            real_cap: 256,
            seed: 0,
            optimizer: Optimizer::Gd,
            init_std: None,
            temperature: 1.0,
        }
    }
}

mod mask_string {
    use super::ComponentMask;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &ComponentMask, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.label().replace('+', ","))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ComponentMask, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl RunConfig {
    pub fn weights(&self) -> DireWeights {
        DireWeights {
            r_c: self.rc,
            r_e: self.re,
            reduction: self.reduction,
            include_diagonal_cd: self.include_diagonal_cd,
        }
    }

    pub fn with_components(&self, components: ComponentMask) -> Self {
        Self {
            components,
            ..self.clone()
        }
    }

    /// Checks every invariant; errors name the offending config key.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(DireError::config("lr", format!("learning rate must be finite and > 0, got {}", self.lr)));
        }
        self.validate_relaxed()
    }

    /// As [`RunConfig::validate`] but accepts a zero learning rate.
    fn validate_relaxed(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(DireError::config("lr", format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.ipc == 0 {
            return Err(DireError::config("ipc", "must be at least 1"));
        }
        if self.iters == 0 {
            return Err(DireError::config("iters", "must be at least 1"));
        }
        if self.real_cap == 0 {
            return Err(DireError::config("real_cap", "must be at least 1"));
        }
        if !(self.lambda_bn >= 0.0) || !self.lambda_bn.is_finite() {
            return Err(DireError::config("lambda_bn", format!("must be finite and >= 0, got {}", self.lambda_bn)));
        }
        if let Some(s) = self.init_std {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(DireError::config("init_std", format!("must be finite and >= 0, got {s}")));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(DireError::config("temperature", format!("must be finite and > 0, got {}", self.temperature)));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(DireError::config("optimizer", format!("momentum beta must lie in [0, 1), got {beta}")));
            }
        }
        self.weights().validate()
    }
}

/// All loss terms at one point of the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TotalLoss {
    pub l_ce: f64,
    pub l_bn: f64,
    pub cd: f64,
    pub cdm: f64,
    pub edm: f64,
    pub l_syn: f64,
    pub total: f64,
}

impl TotalLoss {
    pub const CSV_HEADER: &'static str = "iter,l_ce,l_bn,cd,cdm,edm,total";

    pub fn csv_row(&self, iter: usize) -> String {
        format!(
            "{iter},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.l_ce, self.l_bn, self.cd, self.cdm, self.edm, self.total
        )
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("l_ce", self.l_ce),
            ("l_bn", self.l_bn),
            ("cd", self.cd),
            ("cdm", self.cdm),
            ("edm", self.edm),
        ] {
            if !v.is_finite() {
                return Err(DireError::Numerical(format!("loss component {name} is not finite ({v})")));
            }
        }
        Ok(())
    }
}

/// Squared mismatch between batch feature statistics and the teacher's stored ones.
fn feature_stats_loss(features: &Matrix, teacher: &TeacherModel, weight: f64) -> (f64, Matrix) {
    let n = features.rows() as f64;
    let mean = features.col_mean();
    let var = features.col_var();
    let mut loss = 0.0;
    let mut dmean = vec![0.0; mean.len()];
    let mut dvar = vec![0.0; var.len()];
    for f in 0..mean.len() {
        let dm = mean[f] - teacher.feature_mean[f];
        let dv = var[f] - teacher.feature_var[f];
        loss += dm * dm + dv * dv;
        dmean[f] = 2.0 * weight * dm / n;
        dvar[f] = 4.0 * weight * dv / n;
    }
    let mut grad = Matrix::zeros(features.rows(), features.cols());
    for i in 0..features.rows() {
        let (src, dst) = (features.row(i), grad.row_mut(i));
        for f in 0..src.len() {
            dst[f] = dmean[f] + dvar[f] * (src[f] - mean[f]);
        }
    }
    (weight * loss, grad)
}

/// `L_total` and its gradient with respect to the synthetic points.
pub fn total_loss_and_grad(
    teacher: &TeacherModel,
    points: &Matrix,
    labels: &[usize],
    real: &EmbeddingSet,
    cfg: &RunConfig,
) -> Result<(TotalLoss, Matrix)> {
    if points.cols() != teacher.input_dim() {
        return Err(DireError::dim(format!(
            "synthetic points have {} features, teacher expects {}",
            points.cols(),
            teacher.input_dim()
        )));
    }
    if points.rows() != labels.len() {
        return Err(DireError::dim(format!("{} points but {} labels", points.rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= teacher.num_classes()) {
        return Err(DireError::param(format!("label {bad} out of range")));
    }
    let acts = teacher.net.forward(points)?;
    let top = acts.len() - 1;
    let level = teacher.feature_level;
    let features = &acts[level];

    let (l_ce, dlogits) = cross_entropy(&acts[top], &one_hot(labels, teacher.num_classes()))?;

    let (l_bn, mut dfeat) = if cfg.lambda_bn > 0.0 {
        feature_stats_loss(features, teacher, cfg.lambda_bn)
    } else {
        (0.0, Matrix::zeros(features.rows(), features.cols()))
    };

    let mut out = TotalLoss {
        l_ce,
        l_bn,
        ..TotalLoss::default()
    };
    if !cfg.components.is_empty() {
        let syn = EmbeddingSet::from_labeled(features, labels)?;
        let d = dire_loss(&syn, real, &cfg.weights(), cfg.components)?;
        out.cd = d.cd;
        out.cdm = d.cdm;
        out.edm = d.edm;
        out.l_syn = d.total;
        dfeat.axpy(1.0, &d.grad)?;
    }
    out.total = out.l_ce + out.l_bn + out.l_syn;
    out.check_finite()?;

    let grad = teacher.net.input_grad(&acts, &[(level, &dfeat), (top, &dlogits)])?;
    if !grad.is_finite() {
        return Err(DireError::Numerical("gradient of the total loss is not finite".into()));
    }
    Ok((out, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// `(C·ipc) × d`, class-major: rows `c·ipc .. (c+1)·ipc` belong to class `c`.
    pub points: Matrix,
    pub labels: Vec<usize>,
    pub ipc: usize,
    pub num_classes: usize,
    pub soft_labels: Option<SoftLabels>,
    pub iterations: usize,
    /// Loss evaluated before each update, one entry per iteration.
    pub trace: Vec<TotalLoss>,
    /// Loss at the returned points.
    pub final_loss: TotalLoss,
}

pub fn class_major_labels(classes: usize, ipc: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| std::iter::repeat(c).take(ipc)).collect()
}

/// Teacher features of the real data, at most `cap` seeded rows per class.
pub fn real_embeddings(teacher: &TeacherModel, real: &LabeledDataset, cap: usize, seed: u64) -> Result<EmbeddingSet> {
    let feats = teacher.extract_features(&real.points)?;
    let full = EmbeddingSet::from_labeled(&feats, &real.labels)?;
    let rng = Rng::new(seed);
    Ok(full.subsample(cap, |c, n| rng.split(c as u64).sample_indices(n, cap)))
}

/// Noise scale of `S₀` for this run.
pub fn init_scale(cfg: &RunConfig, real_train: &LabeledDataset) -> f64 {
    cfg.init_std.unwrap_or_else(|| {
        let v = real_train.points.col_var();
        (v.iter().sum::<f64>() / v.len().max(1) as f64).sqrt()
    })
}

/// The seeded Gaussian starting point `S₀`, class-major.
pub fn initial_points(cfg: &RunConfig, classes: usize, dim: usize, std: f64) -> Result<Matrix> {
    rng_normal(&mut Rng::new(cfg.seed).split(0), classes * cfg.ipc, dim, 0.0, std)
}

pub fn recover(teacher: &TeacherModel, real_train: &LabeledDataset, cfg: &RunConfig) -> Result<SyntheticDataset> {
    cfg.validate_relaxed()?;
    if real_train.num_classes != teacher.num_classes() {
        return Err(DireError::param(format!(
            "dataset has {} classes, teacher predicts {}",
            real_train.num_classes,
            teacher.num_classes()
        )));
    }
    let classes = teacher.num_classes();
    let labels = class_major_labels(classes, cfg.ipc);
    let mut points = initial_points(cfg, classes, teacher.input_dim(), init_scale(cfg, real_train))?;
    let real = real_embeddings(teacher, real_train, cfg.real_cap, cfg.seed ^ 0x5eed_0f_7ea1)?;

    let mut velocity = Matrix::zeros(points.rows(), points.cols());
    let mut trace = Vec::with_capacity(cfg.iters);
    for t in 0..cfg.iters {
        let (loss, grad) = total_loss_and_grad(teacher, &points, &labels, &real, cfg)
            .map_err(|e| DireError::Numerical(format!("iteration {t}: {e}")))?;
        trace.push(loss);
        match cfg.optimizer {
            Optimizer::Gd => points.axpy(-cfg.lr, &grad)?,
            Optimizer::Momentum { beta } => {
                velocity = velocity.scale(beta);
                velocity.axpy(1.0, &grad)?;
                points.axpy(-cfg.lr, &velocity)?;
            }
        }
        if !points.is_finite() {
            return Err(DireError::Numerical(format!("iteration {t}: synthetic points are no longer finite")));
        }
    }
    let (final_loss, _) = total_loss_and_grad(teacher, &points, &labels, &real, cfg)?;
    let soft = relabel(teacher, &points, cfg.temperature)?;
    Ok(SyntheticDataset {
        points,
        labels,
        ipc: cfg.ipc,
        num_classes: classes,
        soft_labels: Some(soft),
        iterations: cfg.iters,
        trace,
        final_loss,
    })
}

/// How a synthetic set is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub scope: MetricScope,
    pub student: TrainConfig,
    /// Use teacher soft labels (`true`) or the hard synthesis labels.
    pub soft_labels: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: crate::metrics::DEFAULT_K,
            scope: MetricScope::Pooled,
            student: TrainConfig {
                hidden: vec![32],
                epochs: 300,
                lr: 0.1,
                batch_size: 32,
                seed: 0,
            },
            soft_labels: true,
        }
    }
}

/// Diversity metrics of `syn` against `real`, both embedded by `extractor`.
pub fn synthetic_metrics(
    extractor: &TeacherModel,
    real: &LabeledDataset,
    syn: &SyntheticDataset,
    k: usize,
    scope: MetricScope,
) -> Result<MetricsReport> {
    let real_set = EmbeddingSet::from_labeled(&extractor.extract_features(&real.points)?, &real.labels)?;
    let syn_set = EmbeddingSet::from_labeled(&extractor.extract_features(&syn.points)?, &syn.labels)?;
    metrics_report(&real_set, &syn_set, k, scope)
}

/// Test accuracy of a fresh student trained on `syn`.
pub fn synthetic_accuracy(syn: &SyntheticDataset, test: &LabeledDataset, eval: &EvalConfig) -> Result<f64> {
    let targets = match (&syn.soft_labels, eval.soft_labels) {
        (Some(s), true) => StudentTargets::Soft(s),
        _ => StudentTargets::Hard(&syn.labels),
    };
    evaluate_student(&syn.points, targets, test, &eval.student)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub components: String,
    pub coverage: f64,
    pub similarity: f64,
    pub vendi: f64,
    pub accuracy: f64,
    pub coverage_norm: f64,
    pub similarity_norm: f64,
    pub vendi_norm: f64,
    pub accuracy_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub const CSV_HEADER: &'static str =
        "components,coverage,similarity,vendi,accuracy,coverage_norm,similarity_norm,vendi_norm,accuracy_norm";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.components,
                r.coverage,
                r.similarity,
                r.vendi,
                r.accuracy,
                r.coverage_norm,
                r.similarity_norm,
                r.vendi_norm,
                r.accuracy_norm
            ));
        }
        s
    }
}

/// Min–max scaling to `[0, 1]`; a constant column maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Runs one synthesis per component subset with shared seeds and scores each.
pub fn ablate(
    teacher: &TeacherModel,
    real_train: &LabeledDataset,
    test: &LabeledDataset,
    base: &RunConfig,
    masks: &[ComponentMask],
    eval: &EvalConfig,
) -> Result<AblationReport> {
    if masks.is_empty() || masks.iter().any(ComponentMask::is_empty) {
        return Err(DireError::param("ablation needs a non-empty list of non-empty component subsets"));
    }
    let mut raw = Vec::with_capacity(masks.len());
    for &mask in masks {
        let syn = recover(teacher, real_train, &base.with_components(mask))?;
        let m = synthetic_metrics(teacher, real_train, &syn, eval.k, eval.scope)?;
        let acc = synthetic_accuracy(&syn, test, eval)?;
        raw.push((mask, m, acc));
    }
    let col = |f: &dyn Fn(&(ComponentMask, MetricsReport, f64)) -> f64| -> Vec<f64> { raw.iter().map(f).collect() };
    let cov = col(&|r| r.1.coverage);
    let sim = col(&|r| r.1.mean_intra_class_cosine);
    let ven = col(&|r| r.1.vendi);
    let acc = col(&|r| r.2);
    let (cov_n, sim_n, ven_n, acc_n) = (
        min_max_normalize(&cov),
        min_max_normalize(&sim),
        min_max_normalize(&ven),
        min_max_normalize(&acc),
    );
    let rows = raw
        .iter()
        .enumerate()
        .map(|(i, (mask, _, _))| AblationRow {
            components: mask.label(),
            coverage: cov[i],
            similarity: sim[i],
            vendi: ven[i],
            accuracy: acc[i],
            coverage_norm: cov_n[i],
            similarity_norm: sim_n[i],
            vendi_norm: ven_n[i],
            accuracy_norm: acc_n[i],
        })
        .collect();
    Ok(AblationReport { rows })
}
