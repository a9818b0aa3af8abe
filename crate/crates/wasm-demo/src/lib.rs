//! Browser playground: a 2-D real point cloud, user-placed synthetic points,
//! diversity metrics, regularizer descent on the points themselves, and the
//! cosine-diversity orthogonalization trace.
//!
//! [`ops`] holds the logic as plain Rust so it can be tested natively; the
//! `#[wasm_bindgen]` items below only convert errors and JSON.

use wasm_bindgen::prelude::*;

pub mod ops {
    use dire_core::data::{gen_mixture, MixtureSpec};
    use dire_core::loss::{cd_descent, dire_loss, gram_determinant, ComponentMask, DireWeights};
    use dire_core::metrics::{metrics_report, MetricScope, MetricsReport};
    use dire_core::pairwise::pairwise_cosine_matrix;
    use dire_core::rng::{rng_normal, Rng};
    use dire_core::{EmbeddingSet, Matrix};
    use serde::Serialize;

    pub type Result<T> = std::result::Result<T, String>;

    fn err(e: impl std::fmt::Display) -> String {
        e.to_string()
    }

    /// Real 2-D mixture plus an editable synthetic set.
    pub struct Playground {
        classes: usize,
        real: Matrix,
        real_labels: Vec<usize>,
        syn: Vec<[f64; 2]>,
        syn_labels: Vec<usize>,
    }

    impl Playground {
        pub fn new(classes: usize, per_class: usize, spread: f64, seed: u64) -> Result<Self> {
            if !(2..=4).contains(&classes) {
                return Err(format!("the playground supports 2 to 4 classes, got {classes}"));
            }
            let spec = MixtureSpec {
                classes,
                dim: 2,
                per_class,
                spread,
            };
            let (train, _) = gen_mixture(&spec, seed).map_err(err)?;
            Ok(Self {
                classes,
                real: train.points,
                real_labels: train.labels,
                syn: Vec::new(),
                syn_labels: Vec::new(),
            })
        }

        pub fn classes(&self) -> usize {
            self.classes
        }

        pub fn real_points(&self) -> Vec<f64> {
            self.real.as_slice().to_vec()
        }

        pub fn real_labels(&self) -> Vec<u32> {
            self.real_labels.iter().map(|&l| l as u32).collect()
        }

        pub fn syn_points(&self) -> Vec<f64> {
            self.syn.iter().flatten().copied().collect()
        }

        pub fn syn_labels(&self) -> Vec<u32> {
            self.syn_labels.iter().map(|&l| l as u32).collect()
        }

        pub fn add_point(&mut self, x: f64, y: f64, label: usize) -> Result<()> {
            if label >= self.classes {
                return Err(format!("label {label} out of range"));
            }
            if !(x.is_finite() && y.is_finite()) {
                return Err("coordinates must be finite".into());
            }
            self.syn.push([x, y]);
            self.syn_labels.push(label);
            Ok(())
        }

        pub fn clear(&mut self) {
            self.syn.clear();
            self.syn_labels.clear();
        }

        /// Replaces the synthetic set with `ipc` Gaussian points per class.
        pub fn seed_noise(&mut self, ipc: usize, std: f64, seed: u64) -> Result<()> {
            let noise = rng_normal(&mut Rng::new(seed), self.classes * ipc, 2, 0.0, std).map_err(err)?;
            self.clear();
            for (i, row) in noise.row_iter().enumerate() {
                self.syn.push([row[0], row[1]]);
                self.syn_labels.push(i / ipc);
            }
            Ok(())
        }

        fn syn_matrix(&self) -> Matrix {
            Matrix::from_vec(self.syn.len(), 2, self.syn_points()).expect("two columns")
        }

        fn check_ready(&self) -> Result<()> {
            for c in 0..self.classes {
                let n = self.syn_labels.iter().filter(|&&l| l == c).count();
                if n < 2 {
                    return Err(format!("class {c} needs at least two synthetic points (has {n})"));
                }
            }
            Ok(())
        }

        /// Metrics of the synthetic points against the real cloud, on raw coordinates.
        pub fn metrics(&self, k: usize) -> Result<MetricsReport> {
            self.check_ready()?;
            let real = EmbeddingSet::from_labeled(&self.real, &self.real_labels).map_err(err)?;
            let syn = EmbeddingSet::from_labeled(&self.syn_matrix(), &self.syn_labels).map_err(err)?;
            metrics_report(&real, &syn, k, MetricScope::Pooled).map_err(err)
        }

        /// Gradient descent of the regularizer directly on the synthetic
        /// coordinates. Returns the loss before each step.
        pub fn dire_steps(&mut self, steps: usize, lr: f64, rc: f64, re: f64) -> Result<Vec<f64>> {
            self.check_ready()?;
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(format!("step size must be finite and > 0, got {lr}"));
            }
            let w = DireWeights {
                r_c: rc,
                r_e: re,
                ..DireWeights::default()
            };
            w.validate().map_err(err)?;
            let real = EmbeddingSet::from_labeled(&self.real, &self.real_labels).map_err(err)?;
            let mut x = self.syn_matrix();
            let mut losses = Vec::with_capacity(steps);
            for _ in 0..steps {
                let syn = EmbeddingSet::from_labeled(&x, &self.syn_labels).map_err(err)?;
                let l = dire_loss(&syn, &real, &w, ComponentMask::ALL).map_err(err)?;
                losses.push(l.total);
                x.axpy(-lr, &l.grad).map_err(err)?;
            }
            if !x.is_finite() {
                return Err("points diverged; lower the step size".into());
            }
            self.syn = x.row_iter().map(|r| [r[0], r[1]]).collect();
            Ok(losses)
        }

        /// Synthetic×synthetic cosine matrix with rows in class order, and that order.
        pub fn cosine_matrix(&self) -> Result<(Vec<f64>, Vec<u32>)> {
            let mut order: Vec<usize> = (0..self.syn.len()).collect();
            order.sort_by_key(|&i| self.syn_labels[i]);
            let x = self.syn_matrix().select_rows(&order);
            let c = pairwise_cosine_matrix(&x, &x).map_err(err)?;
            Ok((c.into_vec(), order.iter().map(|&i| self.syn_labels[i] as u32).collect()))
        }
    }

    #[derive(Debug, Serialize)]
    pub struct OrthoTrace {
        pub mean_abs_cos: Vec<f64>,
        pub points: Vec<f64>,
        pub gram_determinant: f64,
    }

    /// Projected cosine-diversity descent on `k` random unit vectors in `R^k`.
    pub fn orthogonalize(k: usize, seed: u64, steps: usize, lr: f64, nonnegative: bool) -> Result<OrthoTrace> {
        if !(2..=8).contains(&k) {
            return Err(format!("k must lie in 2..=8, got {k}"));
        }
        let mut start = rng_normal(&mut Rng::new(seed), k, k, 0.0, 1.0).map_err(err)?;
        if nonnegative {
            start = start.map(f64::abs);
        }
        let run = cd_descent(&start, steps, lr, nonnegative).map_err(err)?;
        Ok(OrthoTrace {
            gram_determinant: gram_determinant(&run.points).map_err(err)?,
            mean_abs_cos: run.mean_abs_cos,
            points: run.points.into_vec(),
        })
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub struct Playground(ops::Playground);

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(classes: u32, per_class: u32, spread: f64, seed: u32) -> Result<Playground, JsError> {
        ops::Playground::new(classes as usize, per_class as usize, spread, seed as u64)
            .map(Playground)
            .map_err(js)
    }

    pub fn classes(&self) -> u32 {
        self.0.classes() as u32
    }

    pub fn real_points(&self) -> Vec<f64> {
        self.0.real_points()
    }

    pub fn real_labels(&self) -> Vec<u32> {
        self.0.real_labels()
    }

    pub fn syn_points(&self) -> Vec<f64> {
        self.0.syn_points()
    }

    pub fn syn_labels(&self) -> Vec<u32> {
        self.0.syn_labels()
    }

    pub fn add_point(&mut self, x: f64, y: f64, label: u32) -> Result<(), JsError> {
        self.0.add_point(x, y, label as usize).map_err(js)
    }

    pub fn clear(&mut self) {
        self.0.clear()
    }

    pub fn seed_noise(&mut self, ipc: u32, std: f64, seed: u32) -> Result<(), JsError> {
        self.0.seed_noise(ipc as usize, std, seed as u64).map_err(js)
    }

    /// Metrics report as JSON.
    pub fn metrics(&self, k: u32) -> Result<String, JsError> {
        let r = self.0.metrics(k as usize).map_err(js)?;
        Ok(serde_json::to_string(&r).expect("report serializes"))
    }

    /// Runs `steps` descent steps; returns the loss trace.
    pub fn dire_steps(&mut self, steps: u32, lr: f64, rc: f64, re: f64) -> Result<Vec<f64>, JsError> {
        self.0.dire_steps(steps as usize, lr, rc, re).map_err(js)
    }

    /// Row-major cosine matrix, rows sorted by class.
    pub fn cosine_matrix(&self) -> Result<Vec<f64>, JsError> {
        self.0.cosine_matrix().map(|(m, _)| m).map_err(js)
    }

    /// Class of each row of [`Playground::cosine_matrix`].
    pub fn cosine_order(&self) -> Result<Vec<u32>, JsError> {
        self.0.cosine_matrix().map(|(_, o)| o).map_err(js)
    }
}

/// Orthogonalization trace as JSON: `{mean_abs_cos, points, gram_determinant}`.
#[wasm_bindgen]
pub fn orthogonalize(k: u32, seed: u32, steps: u32, lr: f64, nonnegative: bool) -> Result<String, JsError> {
    let t = ops::orthogonalize(k as usize, seed as u64, steps as usize, lr, nonnegative).map_err(js)?;
    Ok(serde_json::to_string(&t).expect("trace serializes"))
}
