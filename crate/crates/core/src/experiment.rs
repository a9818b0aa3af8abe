//! The desk benchmark: paired synthesis runs with and without the
//! regularizer across seeds, and the `r_c × r_e` weight sweep.

use serde::{Deserialize, Serialize};

use crate::data::{gen_mixture, LabeledDataset, MixtureSpec};
use crate::error::{DireError, Result};
use crate::loss::ComponentMask;
use crate::metrics::MetricsReport;
use crate::synthesis::{recover, synthetic_accuracy, synthetic_metrics, EvalConfig, RunConfig, SyntheticDataset};
use crate::teacher::{squeeze_train, TeacherModel, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub data: MixtureSpec,
    pub teacher: TrainConfig,
    /// Independently seeded extractor used to recompute the metrics.
    pub alt_extractor: TrainConfig,
    pub run: RunConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            data: MixtureSpec::default(),
            teacher: TrainConfig::default(),
            alt_extractor: TrainConfig {
                hidden: vec![48],
                ..TrainConfig::default()
            },
            run: RunConfig::default(),
            eval: EvalConfig::default(),
            seeds: (0..5).collect(),
        }
    }
}

/// Seed offset separating the second extractor from the teacher.
const ALT_SEED_OFFSET: u64 = 0x00a1_7e0f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub alt_metrics: MetricsReport,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub teacher_train_accuracy: f64,
    pub with_dire: Evaluation,
    pub without: Evaluation,
}

/// Data, teacher and second extractor for one seed.
pub struct SeedContext {
    pub seed: u64,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub teacher: TeacherModel,
    pub alt: TeacherModel,
}

impl SeedContext {
    pub fn build(cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        let (train, test) = gen_mixture(&cfg.data, seed)?;
        let teacher = squeeze_train(
            &train,
            &TrainConfig {
                seed,
                ..cfg.teacher.clone()
            },
        )?;
        let alt = squeeze_train(
            &train,
            &TrainConfig {
                seed: seed.wrapping_add(ALT_SEED_OFFSET),
                ..cfg.alt_extractor.clone()
            },
        )?;
        Ok(Self {
            seed,
            train,
            test,
            teacher,
            alt,
        })
    }

    pub fn synthesize(&self, run: &RunConfig) -> Result<SyntheticDataset> {
        recover(
            &self.teacher,
            &self.train,
            &RunConfig {
                seed: self.seed,
                ..run.clone()
            },
        )
    }

    pub fn evaluate(&self, syn: &SyntheticDataset, eval: &EvalConfig) -> Result<Evaluation> {
        Ok(Evaluation {
            metrics: synthetic_metrics(&self.teacher, &self.train, syn, eval.k, eval.scope)?,
            alt_metrics: synthetic_metrics(&self.alt, &self.train, syn, eval.k, eval.scope)?,
            accuracy: synthetic_accuracy(syn, &self.test, eval)?,
        })
    }
}

pub fn run_seed(cfg: &BenchmarkConfig, seed: u64) -> Result<SeedResult> {
    let ctx = SeedContext::build(cfg, seed)?;
    let on = ctx.synthesize(&cfg.run)?;
    let off = ctx.synthesize(&cfg.run.with_components(ComponentMask::NONE))?;
    Ok(SeedResult {
        seed,
        teacher_train_accuracy: ctx.teacher.meta.train_accuracy,
        with_dire: ctx.evaluate(&on, &cfg.eval)?,
        without: ctx.evaluate(&off, &cfg.eval)?,
    })
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub coverage: f64,
    pub vendi: f64,
    pub similarity: f64,
    pub accuracy: f64,
}

impl Medians {
    fn of(evals: &[&Evaluation], alt: bool) -> Self {
        let pick = |e: &Evaluation| if alt { e.alt_metrics.clone() } else { e.metrics.clone() };
        Self {
            coverage: median(&evals.iter().map(|e| pick(e).coverage).collect::<Vec<_>>()),
            vendi: median(&evals.iter().map(|e| pick(e).vendi).collect::<Vec<_>>()),
            similarity: median(&evals.iter().map(|e| pick(e).mean_intra_class_cosine).collect::<Vec<_>>()),
            accuracy: median(&evals.iter().map(|e| e.accuracy).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub seeds: Vec<SeedResult>,
    pub with_dire: Medians,
    pub without: Medians,
    pub alt_with_dire: Medians,
    pub alt_without: Medians,
}

impl DirectionalReport {
    pub const CSV_HEADER: &'static str = "seed,method,extractor,coverage,similarity,vendi,accuracy";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.seeds {
            for (method, e) in [("dire", &r.with_dire), ("off", &r.without)] {
                for (ext, m) in [("teacher", &e.metrics), ("alt", &e.alt_metrics)] {
                    s.push_str(&format!(
                        "{},{method},{ext},{:.6},{:.6},{:.6},{:.6}\n",
                        r.seed, m.coverage, m.mean_intra_class_cosine, m.vendi, e.accuracy
                    ));
                }
            }
        }
        s
    }
}

pub fn directional(cfg: &BenchmarkConfig) -> Result<DirectionalReport> {
    if cfg.seeds.is_empty() {
        return Err(DireError::param("benchmark needs at least one seed"));
    }
    let seeds = cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>()?;
    let on: Vec<&Evaluation> = seeds.iter().map(|r| &r.with_dire).collect();
    let off: Vec<&Evaluation> = seeds.iter().map(|r| &r.without).collect();
    Ok(DirectionalReport {
        with_dire: Medians::of(&on, false),
        without: Medians::of(&off, false),
        alt_with_dire: Medians::of(&on, true),
        alt_without: Medians::of(&off, true),
        seeds,
    })
}

/// 1-2-5 grids spanning the coarse decade grid `{0.1, 1, 10} × {0.001, 0.01, 0.1}`.
pub const SWEEP_RC: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];
pub const SWEEP_RE: [f64; 6] = [0.001, 0.01, 0.1, 0.2, 0.5, 1.0];

/// Seeds of the one-time sweep, disjoint from the benchmark seeds.
pub const SWEEP_SEEDS: [u64; 5] = [100, 101, 102, 103, 104];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rc: f64,
    pub re: f64,
    pub medians: Medians,
    pub composite: f64,
    /// Coverage and Vendi above, similarity below the unregularized baseline.
    pub beats_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Index into `cells` of the highest composite among cells that beat the
    /// baseline on all three metrics, or overall when none does. First on ties.
    pub best: usize,
    pub baseline: Medians,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "rc,re,coverage,similarity,vendi,accuracy,composite,beats_baseline";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.1},{}\n",
                c.rc,
                c.re,
                c.medians.coverage,
                c.medians.similarity,
                c.medians.vendi,
                c.medians.accuracy,
                c.composite,
                c.beats_baseline
            ));
        }
        s
    }
}

/// 1-based ascending ranks; ties share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Scores every `(r_c, r_e)` pair on every seed. Per seed, each cell gets
/// `rank(coverage) + rank(vendi) − rank(similarity)`; cells are compared by
/// the median of that composite over seeds.
pub fn sweep(cfg: &BenchmarkConfig, rc_grid: &[f64], re_grid: &[f64]) -> Result<SweepReport> {
    if rc_grid.is_empty() || re_grid.is_empty() || cfg.seeds.is_empty() {
        return Err(DireError::param("sweep needs non-empty grids and at least one seed"));
    }
    let grid: Vec<(f64, f64)> = rc_grid.iter().flat_map(|&rc| re_grid.iter().map(move |&re| (rc, re))).collect();
    let mut evals: Vec<Vec<Evaluation>> = vec![Vec::new(); grid.len()];
    let mut base = Vec::new();
    let mut composite: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    for &seed in &cfg.seeds {
        let ctx = SeedContext::build(cfg, seed)?;
        let off = ctx.synthesize(&cfg.run.with_components(ComponentMask::NONE))?;
        base.push(ctx.evaluate(&off, &cfg.eval)?);
        let mut row = Vec::with_capacity(grid.len());
        for &(rc, re) in &grid {
            let run = RunConfig { rc, re, ..cfg.run.clone() };
            row.push(ctx.evaluate(&ctx.synthesize(&run)?, &cfg.eval)?);
        }
        let cov = ranks(&row.iter().map(|e| e.metrics.coverage).collect::<Vec<_>>());
        let ven = ranks(&row.iter().map(|e| e.metrics.vendi).collect::<Vec<_>>());
        let sim = ranks(&row.iter().map(|e| e.metrics.mean_intra_class_cosine).collect::<Vec<_>>());
        for (i, e) in row.into_iter().enumerate() {
            composite[i].push(cov[i] + ven[i] - sim[i]);
            evals[i].push(e);
        }
    }
    let baseline = Medians::of(&base.iter().collect::<Vec<_>>(), false);
    let cells: Vec<SweepCell> = grid
        .iter()
        .enumerate()
        .map(|(i, &(rc, re))| {
            let m = Medians::of(&evals[i].iter().collect::<Vec<_>>(), false);
            SweepCell {
                rc,
                re,
                composite: median(&composite[i]),
                beats_baseline: m.coverage > baseline.coverage
                    && m.vendi > baseline.vendi
                    && m.similarity < baseline.similarity,
                medians: m,
            }
        })
        .collect();
    let any_qualify = cells.iter().any(|c| c.beats_baseline);
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if any_qualify && !c.beats_baseline {
            continue;
        }
        if best.map_or(true, |b| c.composite > cells[b].composite) {
            best = Some(i);
        }
    }
    Ok(SweepReport {
        best: best.unwrap_or(0),
        cells,
        baseline,
    })
}
