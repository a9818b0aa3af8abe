//! The `dire` command line: gen-data → squeeze → recover → relabel →
//! evaluate → metrics, plus ablate, bench, sweep, benchmark and replay.
//!
//! Every subcommand except `replay` writes a JSON manifest recording its
//! argv, resolved configuration and FNV-1a digests of inputs and outputs.
//! `dire replay --manifest m.json` re-runs it and checks the digests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dire_core::data::{gen_mixture, LabeledDataset, MixtureSpec, Split};
use dire_core::experiment::{directional, sweep, BenchmarkConfig, SWEEP_RC, SWEEP_RE, SWEEP_SEEDS};
use dire_core::io::{
    dataset_paths, dump_config, file_digest, load_config, parse_json_config, read_dataset, read_emb, read_labels,
    read_teacher, write_dataset, write_emb, write_labels, write_teacher, FileRecord, Manifest,
};
use dire_core::loss::ComponentMask;
use dire_core::metrics::{metrics_report, MetricScope, MetricsReport, DEFAULT_K};
use dire_core::pairwise::{bench_kernels, BenchReport, Reduction};
use dire_core::synthesis::{ablate, recover, EvalConfig, Optimizer, RunConfig, TotalLoss};
use dire_core::teacher::{
    accuracy, evaluate_student, relabel, squeeze_train, SoftLabels, StudentTargets, TeacherModel, TrainConfig,
};
use dire_core::EmbeddingSet;

pub const THREADS_ENV: &str = "DIRE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "dire", version, about = "Diversity-regularized dataset condensation at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a Gaussian-mixture dataset and write its train/test splits.
    GenData(GenDataArgs),
    /// Train the teacher and store its checkpoint with feature statistics.
    Squeeze(SqueezeArgs),
    /// Synthesize the condensed set from noise under the teacher.
    Recover(RecoverArgs),
    /// Soft-label points with the teacher.
    Relabel(RelabelArgs),
    /// Train a fresh student on a synthetic set and report test accuracy.
    Evaluate(EvaluateArgs),
    /// Coverage, Vendi score and intra-class cosine of two embedding sets.
    Metrics(MetricsArgs),
    /// Run recover for every component subset and report normalized metrics.
    Ablate(AblateArgs),
    /// Time the optimized pairwise kernels against nested loops.
    Bench(BenchArgs),
    /// Grid search over the regularizer weights.
    Sweep(SweepArgs),
    /// Paired runs with and without the regularizer over several seeds.
    Benchmark(BenchmarkArgs),
    /// Re-run the invocation recorded in a manifest and compare digests.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct ManifestArg {
    /// Where to write the manifest (default: next to the primary output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output prefix; writes `<out>.{train,test}.emb` and `.labels.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON mixture spec; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "train-lr")]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "train-seed")]
    pub seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(h) = &self.hidden {
            cfg.hidden = h.clone();
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

#[derive(Args, Debug)]
pub struct SqueezeArgs {
    /// Dataset prefix written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ipc: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rc: Option<f64>,
    #[arg(long)]
    pub re: Option<f64>,
    #[arg(long)]
    pub lambda_bn: Option<f64>,
    /// Active components, e.g. `cd,cdm,edm` or `none`.
    #[arg(long)]
    pub components: Option<String>,
    /// `sum` or `mean`.
    #[arg(long)]
    pub reduction: Option<String>,
    #[arg(long)]
    pub real_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use momentum with this beta instead of plain gradient descent.
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub init_std: Option<f64>,
}

impl RunArgs {
    fn config_file(&self) -> Vec<PathBuf> {
        self.config.iter().cloned().collect()
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(ipc, iters, lr, rc, re, lambda_bn, real_cap, seed, temperature);
        if let Some(c) = &self.components {
            cfg.components = c.parse::<ComponentMask>()?;
        }
        if let Some(r) = &self.reduction {
            cfg.reduction = r.parse::<Reduction>()?;
        }
        if let Some(beta) = self.momentum {
            cfg.optimizer = Optimizer::Momentum { beta };
        }
        if self.init_std.is_some() {
            cfg.init_std = self.init_std;
        }
        // re-validate through the config parser so errors name the key
        Ok(dire_core::io::parse_config(&dump_config(&cfg))?)
    }
}

#[derive(Args, Debug)]
pub struct RecoverArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output prefix; writes `<out>.points.emb`, `.labels.csv`, `.soft.emb`, `.trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct RelabelArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct StudentArgs {
    /// Student hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub student_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub student_epochs: Option<usize>,
    #[arg(long)]
    pub student_lr: Option<f64>,
    #[arg(long)]
    pub student_batch_size: Option<usize>,
    #[arg(long)]
    pub student_seed: Option<u64>,
}

impl StudentArgs {
    fn apply(&self, base: TrainConfig) -> TrainConfig {
        TrainArgs {
            hidden: self.student_hidden.clone(),
            epochs: self.student_epochs,
            lr: self.student_lr,
            batch_size: self.student_batch_size,
            seed: self.student_seed,
        }
        .apply(base)
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Synthetic points (EMB1).
    #[arg(long)]
    pub points: PathBuf,
    /// Hard labels of the synthetic points.
    #[arg(long)]
    pub labels: PathBuf,
    /// Soft labels (EMB1); hard labels are used when absent.
    #[arg(long)]
    pub soft: Option<PathBuf>,
    /// Dataset prefix; the test split is scored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "evaluation.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub student: StudentArgs,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub syn: PathBuf,
    #[arg(long)]
    pub labels_real: PathBuf,
    #[arg(long)]
    pub labels_syn: PathBuf,
    #[arg(short = 'k', default_value_t = DEFAULT_K)]
    pub k: usize,
    /// `pooled` or `per-class`.
    #[arg(long, default_value = "pooled")]
    pub scope: String,
    /// Embed both inputs with this checkpoint before scoring.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// JSON report path.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
    /// CSV file that accumulates one row per invocation.
    #[arg(long, default_value = "metrics.csv")]
    pub csv: PathBuf,
    /// Method name for the CSV row (default: synthetic file stem).
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV report; a JSON copy is written alongside.
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
    /// Component subsets separated by `;` (default: all seven).
    #[arg(long)]
    pub masks: Option<String>,
    #[arg(short = 'k', default_value_t = DEFAULT_K)]
    pub k: usize,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub student: StudentArgs,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Shapes as `NxMxD`, comma separated.
    #[arg(long, default_value = "512x512x64,1024x1024x256")]
    pub shapes: String,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// JSON benchmark config; absent keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds, comma separated (default: those in the config).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub rc: Option<f64>,
    #[arg(long)]
    pub re: Option<f64>,
    /// CSV of per-seed rows; a JSON report with medians is written alongside.
    #[arg(long, default_value = "reports/benchmark.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub rc: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub re: Option<Vec<f64>>,
    #[arg(long, default_value = "reports/sweep.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// What a subcommand read and wrote, for its manifest.
struct Record {
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
}

/// Parses `argv` (program name first), runs it and returns the exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", one_line(&e));
        return 2;
    }
    let result = match &cli.command {
        Command::Replay(a) => replay(a),
        cmd => execute(cmd, &argv[1..]).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow!("{THREADS_ENV} must be a non-negative integer, got `{raw}`"))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one subcommand and writes its manifest.
fn execute(cmd: &Command, args: &[String]) -> Result<Manifest> {
    let start = Instant::now();
    let rec = match cmd {
        Command::GenData(a) => gen_data_cmd(a)?,
        Command::Squeeze(a) => squeeze_cmd(a)?,
        Command::Recover(a) => recover_cmd(a)?,
        Command::Relabel(a) => relabel_cmd(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Metrics(a) => metrics_cmd(a)?,
        Command::Ablate(a) => ablate_cmd(a)?,
        Command::Bench(a) => bench_cmd(a)?,
        Command::Sweep(a) => sweep_cmd(a)?,
        Command::Benchmark(a) => benchmark_cmd(a)?,
        Command::Replay(_) => bail!("replay cannot be recorded"),
    };
    let records = |paths: &[PathBuf]| paths.iter().map(FileRecord::of).collect::<dire_core::Result<Vec<_>>>();
    let manifest = Manifest {
        tool: "dire".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: args.first().cloned().unwrap_or_default(),
        argv: args.to_vec(),
        cwd: std::env::current_dir()?.display().to_string(),
        config: rec.config,
        inputs: records(&rec.inputs)?,
        outputs: records(&rec.outputs)?,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    manifest
        .write(&rec.manifest)
        .with_context(|| format!("writing manifest {}", rec.manifest.display()))?;
    Ok(manifest)
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = Manifest::read(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    if recorded.tool != "dire" {
        bail!("manifest was written by `{}`, not dire", recorded.tool);
    }
    std::env::set_current_dir(&recorded.cwd).with_context(|| format!("entering {}", recorded.cwd))?;
    for input in &recorded.inputs {
        let now = file_digest(&input.path).with_context(|| format!("input {}", input.path))?;
        if now != input.digest {
            bail!("input {} changed since the manifest was written", input.path);
        }
    }
    let argv = std::iter::once("dire".to_string()).chain(recorded.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| anyhow!("recorded argv no longer parses: {e}"))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("cannot replay a replay");
    }
    execute(&cli.command, &recorded.argv)?;
    let bad = recorded.mismatched_outputs()?;
    println!(
        "{}",
        json!({ "subcommand": recorded.subcommand, "outputs": recorded.outputs.len(), "mismatched": bad })
    );
    if !bad.is_empty() {
        bail!("{} of {} outputs differ: {}", bad.len(), recorded.outputs.len(), bad.join(", "));
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn manifest_path(arg: &ManifestArg, primary: &Path) -> PathBuf {
    arg.manifest.clone().unwrap_or_else(|| with_suffix(primary, ".manifest.json"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn dataset_files(prefix: &Path) -> Vec<PathBuf> {
    let (a, b) = dataset_paths(prefix, Split::Train);
    let (c, d) = dataset_paths(prefix, Split::Test);
    vec![a, b, c, d]
}

fn load_dataset(prefix: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    read_dataset(prefix).with_context(|| format!("reading dataset {}", prefix.display()))
}

fn load_teacher(path: &Path) -> Result<TeacherModel> {
    read_teacher(path).with_context(|| format!("reading teacher {}", path.display()))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data_cmd(a: &GenDataArgs) -> Result<Record> {
    let mut spec: MixtureSpec = match &a.config {
        Some(p) => parse_json_config(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => MixtureSpec::default(),
    };
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.dim {
        spec.dim = v;
    }
    if let Some(v) = a.per_class {
        spec.per_class = v;
    }
    if let Some(v) = a.spread {
        spec.spread = v;
    }
    let (train, test) = gen_mixture(&spec, a.seed)?;
    ensure_parent(&a.out)?;
    let mut outputs = write_dataset(&a.out, &train)?;
    outputs.extend(write_dataset(&a.out, &test)?);
    println!("{}", json!({ "train": train.len(), "test": test.len(), "classes": spec.classes, "dim": spec.dim }));
    Ok(Record {
        config: json!({ "mixture": to_value(&spec), "seed": a.seed }),
        inputs: a.config.iter().cloned().collect(),
        manifest: manifest_path(&a.manifest, &a.out),
        outputs,
    })
}

fn squeeze_cmd(a: &SqueezeArgs) -> Result<Record> {
    let (train, test) = load_dataset(&a.data)?;
    let cfg = a.train.apply(TrainConfig::default());
    let teacher = squeeze_train(&train, &cfg)?;
    let test_acc = accuracy(&teacher.predict(&test.points)?, &test.labels);
    ensure_parent(&a.out)?;
    write_teacher(&a.out, &teacher)?;
    println!(
        "{}",
        json!({ "train_accuracy": teacher.meta.train_accuracy, "test_accuracy": test_acc, "feature_dim": teacher.feature_dim() })
    );
    Ok(Record {
        config: to_value(&cfg),
        inputs: dataset_files(&a.data),
        outputs: vec![a.out.clone()],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

/// Output paths of a recover run under `prefix`.
pub fn recover_paths(prefix: &Path) -> [PathBuf; 4] {
    [
        with_suffix(prefix, ".points.emb"),
        with_suffix(prefix, ".labels.csv"),
        with_suffix(prefix, ".soft.emb"),
        with_suffix(prefix, ".trace.csv"),
    ]
}

fn recover_cmd(a: &RecoverArgs) -> Result<Record> {
    let cfg = a.run.resolve()?;
    let teacher = load_teacher(&a.teacher)?;
    let (train, _) = load_dataset(&a.data)?;
    let syn = recover(&teacher, &train, &cfg)?;
    let [points, labels, soft, trace] = recover_paths(&a.out);
    ensure_parent(&points)?;
    write_emb(&points, &syn.points)?;
    write_labels(&labels, &syn.labels)?;
    write_emb(&soft, &syn.soft_labels.as_ref().expect("recover relabels").probs)?;
    let mut csv = String::from(TotalLoss::CSV_HEADER);
    csv.push('\n');
    for (i, l) in syn.trace.iter().chain(std::iter::once(&syn.final_loss)).enumerate() {
        csv.push_str(&l.csv_row(i));
        csv.push('\n');
    }
    write_text(&trace, &csv)?;
    println!(
        "{}",
        json!({ "points": syn.points.rows(), "iterations": syn.iterations, "final_total": syn.final_loss.total })
    );
    let mut inputs = vec![a.teacher.clone()];
    inputs.extend(dataset_files(&a.data));
    inputs.extend(a.run.config_file());
    Ok(Record {
        config: to_value(&cfg),
        inputs,
        outputs: vec![points.clone(), labels, soft, trace],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

fn relabel_cmd(a: &RelabelArgs) -> Result<Record> {
    let teacher = load_teacher(&a.teacher)?;
    let points = read_emb(&a.points).with_context(|| format!("reading {}", a.points.display()))?;
    let soft = relabel(&teacher, &points, a.temperature)?;
    ensure_parent(&a.out)?;
    write_emb(&a.out, &soft.probs)?;
    println!("{}", json!({ "rows": soft.probs.rows(), "classes": soft.probs.cols() }));
    Ok(Record {
        config: json!({ "temperature": a.temperature }),
        inputs: vec![a.teacher.clone(), a.points.clone()],
        outputs: vec![a.out.clone()],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<Record> {
    let student = a.student.apply(EvalConfig::default().student);
    let points = read_emb(&a.points).with_context(|| format!("reading {}", a.points.display()))?;
    let labels = read_labels(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    if labels.len() != points.rows() {
        bail!("{} points but {} labels", points.rows(), labels.len());
    }
    let (_, test) = load_dataset(&a.data)?;
    let soft = match &a.soft {
        Some(p) => Some(SoftLabels {
            probs: read_emb(p).with_context(|| format!("reading {}", p.display()))?,
            temperature: f64::NAN,
        }),
        None => None,
    };
    let targets = match &soft {
        Some(s) => {
            if s.probs.rows() != points.rows() {
                bail!("{} points but {} soft-label rows", points.rows(), s.probs.rows());
            }
            StudentTargets::Soft(s)
        }
        None => StudentTargets::Hard(&labels),
    };
    let acc = evaluate_student(&points, targets, &test, &student)?;
    let report = json!({
        "accuracy": acc,
        "targets": if soft.is_some() { "soft" } else { "hard" },
        "n_train": points.rows(),
        "n_test": test.len(),
    });
    write_json(&a.out, &report)?;
    println!("{report}");
    let mut inputs = vec![a.points.clone(), a.labels.clone()];
    inputs.extend(a.soft.iter().cloned());
    inputs.extend(dataset_files(&a.data));
    Ok(Record {
        config: to_value(&student),
        inputs,
        outputs: vec![a.out.clone()],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

fn parse_scope(s: &str) -> Result<MetricScope> {
    match s {
        "pooled" => Ok(MetricScope::Pooled),
        "per-class" | "per_class" => Ok(MetricScope::PerClass),
        other => bail!("unknown scope `{other}` (expected pooled or per-class)"),
    }
}

fn metrics_cmd(a: &MetricsArgs) -> Result<Record> {
    let scope = parse_scope(&a.scope)?;
    let load = |emb: &Path, labels: &Path| -> Result<(dire_core::Matrix, Vec<usize>)> {
        Ok((
            read_emb(emb).with_context(|| format!("reading {}", emb.display()))?,
            read_labels(labels).with_context(|| format!("reading {}", labels.display()))?,
        ))
    };
    let (mut real, real_labels) = load(&a.real, &a.labels_real)?;
    let (mut syn, syn_labels) = load(&a.syn, &a.labels_syn)?;
    if let Some(t) = &a.teacher {
        let teacher = load_teacher(t)?;
        real = teacher.extract_features(&real)?;
        syn = teacher.extract_features(&syn)?;
    }
    let report: MetricsReport = metrics_report(
        &EmbeddingSet::from_labeled(&real, &real_labels)?,
        &EmbeddingSet::from_labeled(&syn, &syn_labels)?,
        a.k,
        scope,
    )?;
    write_json(&a.out, &report)?;
    let method = a.method.clone().unwrap_or_else(|| {
        let stem = a.syn.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        stem.trim_end_matches(".points").to_string()
    });
    let classes = syn_labels.iter().collect::<std::collections::BTreeSet<_>>().len().max(1);
    append_csv(&a.csv, MetricsReport::CSV_HEADER, &report.csv_row(&method, syn.rows() / classes))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut inputs = vec![a.real.clone(), a.syn.clone(), a.labels_real.clone(), a.labels_syn.clone()];
    inputs.extend(a.teacher.iter().cloned());
    Ok(Record {
        config: json!({ "k": a.k, "scope": scope, "method": method }),
        inputs,
        // the accumulating CSV is deliberately not digested
        outputs: vec![a.out.clone()],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

fn append_csv(path: &Path, header: &str, row: &str) -> Result<()> {
    use std::io::Write;
    ensure_parent(path)?;
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{row}")?;
    Ok(())
}

fn parse_masks(s: Option<&str>) -> Result<Vec<ComponentMask>> {
    match s {
        None => Ok(ComponentMask::nonempty_subsets()),
        Some(s) => s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| Ok(p.parse::<ComponentMask>()?))
            .collect(),
    }
}

fn ablate_cmd(a: &AblateArgs) -> Result<Record> {
    let base = a.run.resolve()?;
    let masks = parse_masks(a.masks.as_deref())?;
    let eval = EvalConfig {
        k: a.k,
        student: a.student.apply(EvalConfig::default().student),
        ..EvalConfig::default()
    };
    let teacher = load_teacher(&a.teacher)?;
    let (train, test) = load_dataset(&a.data)?;
    let report = ablate(&teacher, &train, &test, &base, &masks, &eval)?;
    write_text(&a.out, &report.to_csv())?;
    let json_out = with_extension(&a.out, "json");
    write_json(&json_out, &report)?;
    print!("{}", report.to_csv());
    let mut inputs = vec![a.teacher.clone()];
    inputs.extend(dataset_files(&a.data));
    inputs.extend(a.run.config_file());
    Ok(Record {
        config: json!({
            "run": to_value(&base),
            "eval": to_value(&eval),
            "masks": masks.iter().map(ComponentMask::label).collect::<Vec<_>>(),
        }),
        inputs,
        outputs: vec![a.out.clone(), json_out],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

/// Parses `NxMxD[,NxMxD...]`.
pub fn parse_shapes(s: &str) -> Result<Vec<(usize, usize, usize)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let dims: Vec<usize> = p
                .split(['x', 'X'])
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| anyhow!("bad shape `{p}` (expected NxMxD)"))?;
            match dims[..] {
                [n, m, d] if n > 0 && m > 0 && d > 0 => Ok((n, m, d)),
                _ => bail!("bad shape `{p}` (expected NxMxD with positive sizes)"),
            }
        })
        .collect()
}

fn bench_cmd(a: &BenchArgs) -> Result<Record> {
    let shapes = parse_shapes(&a.shapes)?;
    if shapes.is_empty() {
        bail!("no shapes given");
    }
    let reports: Vec<BenchReport> = bench_kernels(&shapes, a.reps, a.seed)?;
    let mut csv = String::from(BenchReport::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let (csv_out, json_out) = (with_suffix(&a.out, ".csv"), with_suffix(&a.out, ".json"));
    write_text(&csv_out, &csv)?;
    write_json(&json_out, &reports)?;
    print!("{csv}");
    Ok(Record {
        config: json!({ "shapes": a.shapes, "reps": a.reps, "seed": a.seed }),
        inputs: vec![],
        outputs: vec![csv_out, json_out],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

fn load_benchmark(path: Option<&Path>) -> Result<BenchmarkConfig> {
    match path {
        Some(p) => {
            let cfg: BenchmarkConfig =
                parse_json_config(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?;
            cfg.run.validate()?;
            Ok(cfg)
        }
        None => Ok(BenchmarkConfig::default()),
    }
}

fn benchmark_cmd(a: &BenchmarkArgs) -> Result<Record> {
    let mut cfg = load_benchmark(a.config.as_deref())?;
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(v) = a.rc {
        cfg.run.rc = v;
    }
    if let Some(v) = a.re {
        cfg.run.re = v;
    }
    cfg.run.validate()?;
    let report = directional(&cfg)?;
    write_text(&a.out, &report.to_csv())?;
    let json_out = with_extension(&a.out, "json");
    write_json(&json_out, &report)?;
    println!(
        "{}",
        json!({
            "dire": report.with_dire, "off": report.without,
            "alt_dire": report.alt_with_dire, "alt_off": report.alt_without,
        })
    );
    Ok(Record {
        config: to_value(&cfg),
        inputs: a.config.iter().cloned().collect(),
        outputs: vec![a.out.clone(), json_out],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}

fn sweep_cmd(a: &SweepArgs) -> Result<Record> {
    let mut cfg = load_benchmark(a.config.as_deref())?;
    cfg.seeds = a.seeds.clone().unwrap_or_else(|| SWEEP_SEEDS.to_vec());
    let rc = a.rc.clone().unwrap_or_else(|| SWEEP_RC.to_vec());
    let re = a.re.clone().unwrap_or_else(|| SWEEP_RE.to_vec());
    let report = sweep(&cfg, &rc, &re)?;
    write_text(&a.out, &report.to_csv())?;
    let json_out = with_extension(&a.out, "json");
    write_json(&json_out, &report)?;
    let best = &report.cells[report.best];
    println!("{}", json!({ "best": best, "baseline": report.baseline }));
    Ok(Record {
        config: json!({ "benchmark": to_value(&cfg), "rc": rc, "re": re }),
        inputs: a.config.iter().cloned().collect(),
        outputs: vec![a.out.clone(), json_out],
        manifest: manifest_path(&a.manifest, &a.out),
    })
}
