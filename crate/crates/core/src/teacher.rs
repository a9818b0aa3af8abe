//! A small tanh MLP used as teacher (trained on real data, frozen during
//! synthesis) and as student (trained on the condensed set).
//!
//! The teacher exposes a feature extractor, the output of its last hidden
//! layer, and keeps per-feature mean and variance of those features over the
//! training set. These play the role that batch-norm running statistics play
//! in a convolutional network.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{DireError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, a: &Matrix) -> Result<Matrix> {
        let mut z = a.matmul(&self.weights)?;
        let m = self.bias.len();
        for row in z.as_mut_slice().chunks_mut(m.max(1)) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Fully connected network; every layer but the last is followed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(sizes: &[usize], rng: &Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(DireError::param(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let mut r = rng.split(l as u64);
                let std = (1.0 / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| std * r.standard_normal()).collect();
                Dense {
                    weights: Matrix::from_vec(w[0], w[1], data).expect("sized"),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weights.cols()));
        s
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(DireError::dim(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Activations `[x, a₁, …, a_upto]`, where `aₗ` is the output of layer `l−1`.
    pub fn forward_to(&self, x: &Matrix, upto: usize) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(upto + 1);
        acts.push(x.clone());
        for l in 0..upto.min(self.layers.len()) {
            let mut z = self.layers[l].forward(&acts[l])?;
            if self.is_hidden(l) {
                z = z.map(f64::tanh);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.forward_to(x, self.layers.len())
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.pop().unwrap())
    }

    /// Gradient with respect to the input, given upstream gradients injected
    /// at activation levels (`level` indexes the `forward_to` output).
    pub fn input_grad(&self, acts: &[Matrix], injections: &[(usize, &Matrix)]) -> Result<Matrix> {
        let top = acts.len() - 1;
        let mut g = Matrix::zeros(acts[top].rows(), acts[top].cols());
        for level in (1..=top).rev() {
            for (lv, inj) in injections {
                if *lv == level {
                    g.axpy(1.0, inj)?;
                }
            }
            let layer = level - 1;
            if self.is_hidden(layer) {
                let a = acts[level].as_slice();
                for (gv, &av) in g.as_mut_slice().iter_mut().zip(a) {
                    *gv *= 1.0 - av * av;
                }
            }
            g = g.matmul_t(&self.layers[layer].weights)?;
        }
        for (lv, inj) in injections {
            if *lv == 0 {
                g.axpy(1.0, inj)?;
            }
        }
        Ok(g)
    }

    /// Parameter gradients for a loss whose gradient w.r.t. the logits is `dlogits`.
    fn param_grads(&self, acts: &[Matrix], dlogits: Matrix) -> Result<Vec<(Matrix, Vec<f64>)>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = dlogits;
        for l in (0..self.layers.len()).rev() {
            let dw = acts[l].t_matmul(&dz)?;
            let db = {
                let mut s = vec![0.0; dz.cols()];
                for r in dz.row_iter() {
                    s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
                s
            };
            if l > 0 {
                let mut da = dz.matmul_t(&self.layers[l].weights)?;
                for (g, &a) in da.as_mut_slice().iter_mut().zip(acts[l].as_slice()) {
                    *g *= 1.0 - a * a;
                }
                dz = da;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix, temperature: f64) -> Matrix {
    let mut p = logits.scale(1.0 / temperature);
    let c = p.cols();
    for row in p.as_mut_slice().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Mean soft-target cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(DireError::dim(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let n = logits.rows().max(1) as f64;
    let p = softmax_rows(logits, 1.0);
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (z, t) in row.iter().zip(targets.row(i)) {
            if *t != 0.0 {
                loss -= t * (z - lse);
            }
        }
    }
    let grad = p.sub(targets)?.scale(1.0 / n);
    Ok((loss / n, grad))
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, 1.0);
    }
    m
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            epochs: 30,
            lr: 0.1,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DireError::param(format!(
                "hidden sizes must be non-empty and positive, got {:?}",
                self.hidden
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(DireError::param(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(DireError::param("batch size must be positive"));
        }
        Ok(())
    }
}

/// Mini-batch SGD on soft-target cross-entropy. Returns the network and the
/// mean loss of the last epoch.
pub fn train_mlp(points: &Matrix, targets: &Matrix, cfg: &TrainConfig) -> Result<(Mlp, f64)> {
    cfg.validate()?;
    if points.rows() != targets.rows() {
        return Err(DireError::dim(format!(
            "{} points but {} target rows",
            points.rows(),
            targets.rows()
        )));
    }
    let mut sizes = vec![points.cols()];
    sizes.extend(&cfg.hidden);
    sizes.push(targets.cols());
    let root = Rng::new(cfg.seed);
    let mut net = Mlp::init(&sizes, &root.split(0))?;
    let n = points.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        root.split(1 + epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = points.select_rows(batch);
            let t = targets.select_rows(batch);
            let acts = net.forward(&x)?;
            let (loss, dlogits) = cross_entropy(acts.last().unwrap(), &t)?;
            if !loss.is_finite() {
                return Err(DireError::Training {
                    epoch,
                    message: "loss is not finite".into(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            let grads = net.param_grads(&acts, dlogits)?;
            for (layer, (dw, db)) in net.layers.iter_mut().zip(grads) {
                layer.weights.axpy(-cfg.lr, &dw)?;
                layer.bias.iter_mut().zip(&db).for_each(|(b, g)| *b -= cfg.lr * g);
            }
        }
        last_loss = epoch_loss / n.max(1) as f64;
        if !last_loss.is_finite() || net.layers.iter().any(|l| !l.weights.is_finite()) {
            return Err(DireError::Training {
                epoch,
                message: "parameters diverged".into(),
            });
        }
    }
    Ok((net, last_loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub train_accuracy: f64,
}

/// Frozen network plus feature statistics of its last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub net: Mlp,
    /// Activation level of the feature layer (`1..layers`), see [`Mlp::forward_to`].
    pub feature_level: usize,
    pub feature_mean: Vec<f64>,
    pub feature_var: Vec<f64>,
    pub meta: TrainMeta,
}

impl TeacherModel {
    /// Wraps a network, recording feature statistics over `points`.
    pub fn from_net(net: Mlp, points: &Matrix, meta: TrainMeta) -> Result<Self> {
        if net.layers.len() < 2 {
            return Err(DireError::param("teacher needs at least one hidden layer"));
        }
        let feature_level = net.layers.len() - 1;
        let mut t = Self {
            net,
            feature_level,
            feature_mean: Vec::new(),
            feature_var: Vec::new(),
            meta,
        };
        let f = t.extract_features(points)?;
        t.feature_mean = f.col_mean();
        t.feature_var = f.col_var();
        Ok(t)
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.layers[self.feature_level - 1].weights.cols()
    }

    pub fn extract_features(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.net.forward_to(x, self.feature_level)?.pop().unwrap())
    }

    /// `∂⟨upstream, features(x)⟩ / ∂x`.
    pub fn vjp(&self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        let acts = self.net.forward_to(x, self.feature_level)?;
        if upstream.shape() != acts[self.feature_level].shape() {
            return Err(DireError::dim(format!(
                "upstream gradient {:?} does not match features {:?}",
                upstream.shape(),
                acts[self.feature_level].shape()
            )));
        }
        self.net.input_grad(&acts, &[(self.feature_level, upstream)])
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.net.logits(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

/// Trains the teacher on `train` and records its feature statistics.
pub fn squeeze_train(train: &LabeledDataset, cfg: &TrainConfig) -> Result<TeacherModel> {
    if cfg.epochs == 0 {
        return Err(DireError::param("teacher training needs at least one epoch"));
    }
    let targets = one_hot(&train.labels, train.num_classes);
    let (net, _) = train_mlp(&train.points, &targets, cfg)?;
    let acc = accuracy(&argmax_rows(&net.logits(&train.points)?), &train.labels);
    let meta = TrainMeta {
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed: cfg.seed,
        train_accuracy: acc,
    };
    TeacherModel::from_net(net, &train.points, meta)
}

/// Teacher probabilities at a temperature; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub probs: Matrix,
    pub temperature: f64,
}

pub fn relabel(teacher: &TeacherModel, points: &Matrix, temperature: f64) -> Result<SoftLabels> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(DireError::param(format!("temperature must be finite and > 0, got {temperature}")));
    }
    Ok(SoftLabels {
        probs: softmax_rows(&teacher.logits(points)?, temperature),
        temperature,
    })
}

pub enum StudentTargets<'a> {
    Hard(&'a [usize]),
    Soft(&'a SoftLabels),
}

/// Trains a fresh student on `(points, targets)` and returns its top-1
/// accuracy on `test`.
pub fn evaluate_student(points: &Matrix, targets: StudentTargets<'_>, test: &LabeledDataset, cfg: &TrainConfig) -> Result<f64> {
    let t = match targets {
        StudentTargets::Hard(labels) => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= test.num_classes) {
                return Err(DireError::param(format!("label {bad} out of range")));
            }
            one_hot(labels, test.num_classes)
        }
        StudentTargets::Soft(s) => {
            if s.probs.cols() != test.num_classes {
                return Err(DireError::dim(format!(
                    "soft labels have {} classes, test set has {}",
                    s.probs.cols(),
                    test.num_classes
                )));
            }
            s.probs.clone()
        }
    };
    let (net, _) = train_mlp(points, &t, cfg)?;
    Ok(accuracy(&argmax_rows(&net.logits(&test.points)?), &test.labels))
}
