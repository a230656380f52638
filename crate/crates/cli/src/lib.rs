//! Command implementations behind the `superopt` binary.
//!
//! Every command writes a `manifest.json` run manifest (atomically, before
//! any result file) into its output directory, then its results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use superopt::asm;
use superopt::cost::{CostFn, CostWeights};
use superopt::data::{self, Dataset, Entry, GenParams, Split};
use superopt::isa::Isa;
use superopt::learn::train::write_curves;
use superopt::learn::{
    default_lr, evaluate, featurize, train, Credit, CurvePoint, Model, ModelKind, Proposal, ReinforceOptions,
    TrainConfig, TrainState, DEFAULT_HIDDEN,
};
use superopt::mcmc::{metropolis_run, SearchConfig};
use superopt::proposal::{params_constructed_on_thread, uniform_params, ProposalParams};
use superopt::seed;

/// Failure classes, mapped to process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(anyhow::Error),
    /// Unreadable, malformed or inconsistent inputs, or I/O failure (exit 2).
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Data(e) => write!(f, "{e:#}"),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

type CmdResult<T> = Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "superopt",
    version,
    about = "Stochastic superoptimizer with a learned proposal distribution"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one program with Metropolis search.
    Optimize(OptimizeArgs),
    /// Train a proposal model on a dataset.
    Train(TrainArgs),
    /// Compare proposal models (Uniform always included) on a dataset.
    Eval(EvalArgs),
    /// Generate a dataset.
    Gendata(GendataArgs),
    /// Time uniform vs learned-categorical proposals.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    /// Metropolis iterations per run.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// Inverse temperature.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Weight of the correctness term.
    #[arg(long = "omega-e", default_value_t = 4.0)]
    pub omega_e: f64,
    /// Weight of the performance term.
    #[arg(long = "omega-p", default_value_t = 1.0)]
    pub omega_p: f64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Default for SearchArgs {
    fn default() -> Self {
        SearchArgs {
            budget: 200,
            beta: 1.0,
            omega_e: 4.0,
            omega_p: 1.0,
            seed: 0,
        }
    }
}

impl SearchArgs {
    pub fn config(&self) -> CmdResult<SearchConfig> {
        if self.budget == 0 {
            return Err(usage(anyhow!("--budget must be at least 1")));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(usage(anyhow!("--beta must be positive and finite")));
        }
        let weights = CostWeights::new(self.omega_e, self.omega_p).map_err(usage)?;
        Ok(SearchConfig {
            budget: self.budget,
            weights,
            beta: self.beta,
            seed: self.seed,
            require_correct_best: false,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimizeArgs {
    /// Program to optimize (assembly text).
    pub program: PathBuf,
    /// Test-case file; defaults to self-specifying tests generated by
    /// running the program on random inputs.
    #[arg(long)]
    pub tests: Option<PathBuf>,
    /// Model file, or `uniform`.
    #[arg(long, default_value = "uniform")]
    pub model: String,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory.
    pub dataset: PathBuf,
    #[arg(long = "model-kind", default_value = "bias")]
    pub model_kind: ModelKind,
    /// Base learning rate (divided by the minibatch size); defaults per
    /// model kind and corpus.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub minibatch: usize,
    /// Rollouts per program per gradient estimate.
    #[arg(long, default_value_t = 100)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Minibatches per epoch (default: one pass over the training split).
    #[arg(long = "steps-per-epoch")]
    pub steps_per_epoch: Option<usize>,
    /// Leave-one-out mean-return baseline across a program's rollouts.
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    pub baseline: OnOff,
    /// Cost nodes credited to each move.
    #[arg(long, default_value = "t-ge-i")]
    pub credit: Credit,
    /// Hidden layer widths of the MLP.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN.to_vec())]
    pub hidden: Vec<usize>,
    /// Seeded rollouts per entry for the learning curves.
    #[arg(long = "eval-runs", default_value_t = 5)]
    pub eval_runs: usize,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset directory.
    pub dataset: PathBuf,
    /// Model files to compare against Uniform.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Seeded runs per program.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Iteration counts at which scores are reported.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 200, 400])]
    pub snapshots: Vec<usize>,
    /// Splits to evaluate.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
    Both,
}

impl SplitArg {
    fn splits(self) -> &'static [Split] {
        match self {
            SplitArg::Train => &[Split::Train],
            SplitArg::Test => &[Split::Test],
            SplitArg::Both => &[Split::Train, Split::Test],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMode {
    HdAugment,
    Synthetic,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GendataArgs {
    #[arg(value_enum, required_unless_present = "from_manifest")]
    pub mode: Option<GenMode>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// HD: distinct programs per task.
    #[arg(long, default_value_t = 20)]
    pub variants: usize,
    /// HD: iterations per augmentation walk.
    #[arg(long = "walk-budget", default_value_t = 1000)]
    pub walk_budget: usize,
    /// Synthetic: number of programs (split in half).
    #[arg(long, default_value_t = 600)]
    pub count: usize,
    /// Synthetic: live instructions of each walk's seed program.
    #[arg(long = "live-length", default_value_t = 6)]
    pub live_length: usize,
    /// Synthetic: random-walk iterations per program.
    #[arg(long = "walk-iters", default_value_t = 5000)]
    pub walk_iters: usize,
    /// Regenerate from an existing dataset manifest instead.
    #[arg(long = "from-manifest", conflicts_with = "mode")]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Model file for the categorical row; defaults to random bias logits.
    #[arg(long, default_value = "random")]
    pub model: String,
    /// Iterations per timed run.
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    /// Timed runs per row (the fastest is reported).
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional output directory for the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_seconds: Option<f64>,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, seed: u64, outputs: &[&str]) -> Self {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_seconds: None,
        }
    }

    fn write(&self, dir: &Path) -> CmdResult<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join("manifest.json"), (json + "\n").as_bytes())
    }
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data_err)
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(data_err)
}

fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data_err)
}

pub fn load_model(isa: &Isa, path: &Path) -> CmdResult<Model> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening model {}", path.display()))
        .map_err(data_err)?;
    let (model, _) = Model::read(isa, std::io::BufReader::new(file))
        .with_context(|| format!("reading model {}", path.display()))
        .map_err(data_err)?;
    Ok(model)
}

pub fn save_model(isa: &Isa, model: &Model, seed: u64, path: &Path) -> CmdResult<()> {
    let mut buf = Vec::new();
    model.write(isa, seed, &mut buf).expect("in-memory write");
    write_atomic(path, &buf)
}

fn load_dataset(isa: &Isa, dir: &Path) -> CmdResult<Dataset> {
    Dataset::read(isa, dir)
        .with_context(|| format!("loading dataset {}", dir.display()))
        .map_err(data_err)
}

/// Summary of one `optimize` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeSummary {
    pub initial_cost: f64,
    pub best_cost: f64,
    pub score: f64,
    pub best_correct: bool,
    pub acceptance_rate: f64,
}

pub fn cmd_optimize(args: &OptimizeArgs) -> CmdResult<OptimizeSummary> {
    let isa = Isa::standard();
    let search = args.search.config()?;
    let text = read_text(&args.program)?;
    let start = asm::parse(&isa, &text)
        .with_context(|| format!("parsing {}", args.program.display()))
        .map_err(data_err)?;
    let tests = match &args.tests {
        Some(path) => {
            let text = read_text(path)?;
            data::parse_tests(&isa, &text)
                .map_err(|(line, msg)| data_err(anyhow!("{}: line {line}: {msg}", path.display())))?
        }
        None => {
            if start.live_len() == 0 {
                return Err(data_err(anyhow!("an empty program needs an explicit --tests file")));
            }
            data::synth_tests(&isa, &start, data::HD_TESTS_PER_TASK, seed::derive(search.seed, &[7]))
        }
    };
    let params = match args.model.as_str() {
        "uniform" => uniform_params(&isa),
        path => load_model(&isa, Path::new(path))?.forward(&isa, &featurize(&isa, &start)),
    };

    create_dir(&args.out)?;
    let outputs = ["best.prog", "trace.csv", "summary.json"];
    let mut manifest = RunManifest::new("optimize", args, search.seed, &outputs);
    manifest.write(&args.out)?;
    let clock = Instant::now();

    let mut rng = seed::rng(search.seed, &[]);
    let trace = metropolis_run(&isa, &start, &start, &params, &tests, &search, &mut rng).map_err(data_err)?;
    let best_report = CostFn::new(&isa, &tests, search.weights).evaluate(&trace.best);
    let summary = OptimizeSummary {
        initial_cost: trace.initial_cost,
        best_cost: trace.best_cost,
        score: trace.score,
        best_correct: best_report.correct,
        acceptance_rate: trace.acceptance_rate(),
    };
    write_atomic(&args.out.join("best.prog"), asm::render(&isa, &trace.best).as_bytes())?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).expect("in-memory write");
    write_atomic(&args.out.join("trace.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&args.out.join("summary.json"), (json + "\n").as_bytes())?;

    manifest.wall_seconds = Some(clock.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    Ok(summary)
}

const CHECKPOINT_MODEL: &str = "model.bin";
const CHECKPOINT_ADAM: &str = "optimizer.bin";
const CHECKPOINT_STATE: &str = "checkpoint.json";

#[derive(Debug, Serialize, serde::Deserialize)]
struct Checkpoint {
    epochs_completed: usize,
}

fn is_synthetic(ds: &Dataset) -> bool {
    matches!(ds.params, GenParams::Synthetic { .. })
}

pub fn train_config(args: &TrainArgs, synthetic: bool) -> CmdResult<TrainConfig> {
    let search = args.search.config()?;
    let lr = args.lr.unwrap_or_else(|| default_lr(args.model_kind, synthetic));
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(usage(anyhow!("--lr must be finite and non-negative")));
    }
    if args.minibatch == 0 || args.rollouts == 0 {
        return Err(usage(anyhow!("--minibatch and --rollouts must be positive")));
    }
    if args.model_kind == ModelKind::Mlp && (args.hidden.is_empty() || args.hidden.contains(&0)) {
        return Err(usage(anyhow!("--hidden needs at least one positive width")));
    }
    Ok(TrainConfig {
        model_kind: args.model_kind,
        hidden: args.hidden.clone(),
        lr,
        minibatch: args.minibatch,
        rollouts: args.rollouts,
        epochs: args.epochs,
        steps_per_epoch: args.steps_per_epoch,
        search,
        reinforce: ReinforceOptions {
            credit: args.credit,
            baseline: args.baseline == OnOff::On,
        },
        seed: search.seed,
        eval_runs: args.eval_runs,
    })
}

fn save_checkpoint(isa: &Isa, state: &TrainState, seed: u64, out: &Path) -> CmdResult<()> {
    save_model(isa, &state.model, seed, &out.join(CHECKPOINT_MODEL))?;
    let mut buf = Vec::new();
    state.adam.write(&mut buf).expect("in-memory write");
    write_atomic(&out.join(CHECKPOINT_ADAM), &buf)?;
    let json = serde_json::to_string(&Checkpoint {
        epochs_completed: state.epoch,
    })
    .expect("checkpoint serializes");
    write_atomic(&out.join(CHECKPOINT_STATE), json.as_bytes())
}

fn load_checkpoint(isa: &Isa, out: &Path, config: &TrainConfig) -> CmdResult<TrainState> {
    let model = load_model(isa, &out.join(CHECKPOINT_MODEL))?;
    if model.kind() != config.model_kind {
        return Err(usage(anyhow!(
            "checkpoint holds a {} model, --model-kind is {}",
            model.kind(),
            config.model_kind
        )));
    }
    let adam_path = out.join(CHECKPOINT_ADAM);
    let file = fs::File::open(&adam_path)
        .with_context(|| format!("opening {}", adam_path.display()))
        .map_err(data_err)?;
    let adam = superopt::learn::AdamState::read(std::io::BufReader::new(file), model.num_params())
        .with_context(|| format!("reading {}", adam_path.display()))
        .map_err(data_err)?;
    let ck: Checkpoint = serde_json::from_str(&read_text(&out.join(CHECKPOINT_STATE))?).map_err(data_err)?;
    Ok(TrainState {
        model,
        adam,
        epoch: ck.epochs_completed,
    })
}

/// Trains and returns the learning curve. Writes the model (`model.bin`),
/// the optimizer state, and `curves.csv` to the output directory; the model
/// and optimizer files are refreshed after every epoch.
pub fn cmd_train(args: &TrainArgs) -> CmdResult<Vec<CurvePoint>> {
    let isa = Isa::standard();
    let ds = load_dataset(&isa, &args.dataset)?;
    let config = train_config(args, is_synthetic(&ds))?;
    create_dir(&args.out)?;
    let mut state = if args.resume {
        load_checkpoint(&isa, &args.out, &config)?
    } else {
        TrainState::init(&isa, &config)
    };
    let outputs = [CHECKPOINT_MODEL, CHECKPOINT_ADAM, CHECKPOINT_STATE, "curves.csv"];
    let mut manifest = RunManifest::new("train", &(args, &config), config.seed, &outputs);
    manifest.write(&args.out)?;
    let clock = Instant::now();

    let mut io_error = None;
    let curve = train(&isa, &ds.train, &ds.test, &mut state, &config, |point, st| {
        eprintln!(
            "epoch {:>3}  train {:.4}  test {:.4}",
            point.epoch, point.train_mean, point.test_mean
        );
        if io_error.is_none() {
            io_error = save_checkpoint(&isa, st, config.seed, &args.out).err();
        }
    })
    .map_err(data_err)?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let mut csv = Vec::new();
    write_curves(&curve, &mut csv).expect("in-memory write");
    write_atomic(&args.out.join("curves.csv"), &csv)?;

    manifest.wall_seconds = Some(clock.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub model: String,
    pub split: Split,
    pub entries: usize,
    pub runs: usize,
    /// Mean score at the configured budget.
    pub mean_score: f64,
    /// Mean score at each snapshot.
    pub snapshot_means: Vec<(usize, f64)>,
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult<Vec<EvalRow>> {
    let isa = Isa::standard();
    let search = args.search.config()?;
    if args.runs == 0 {
        return Err(usage(anyhow!("--runs must be positive")));
    }
    if args.snapshots.contains(&0) {
        return Err(usage(anyhow!("--snapshots must be positive")));
    }
    let ds = load_dataset(&isa, &args.dataset)?;
    let mut models: Vec<(String, Option<Model>)> = vec![("uniform".to_string(), None)];
    for path in &args.models {
        models.push((path.display().to_string(), Some(load_model(&isa, path)?)));
    }

    create_dir(&args.out)?;
    let outputs = ["comparison.csv", "snapshots.csv"];
    let mut manifest = RunManifest::new("eval", args, search.seed, &outputs);
    manifest.write(&args.out)?;
    let clock = Instant::now();

    // The configured budget is always reported, even if not a snapshot.
    let mut snapshots = args.snapshots.clone();
    if !snapshots.contains(&search.budget) {
        snapshots.push(search.budget);
    }
    snapshots.sort_unstable();
    let budget_col = snapshots
        .iter()
        .position(|&s| s == search.budget)
        .expect("budget snapshot");

    let mut rows = Vec::new();
    let mut snap_csv = String::from("model,split,entry,run,iterations,score\n");
    for (name, model) in &models {
        let proposal = model.as_ref().map_or(Proposal::Uniform, Proposal::Model);
        for &split in args.split.splits() {
            let entries = ds.split(split);
            let stream = seed::derive(search.seed, &[split as u64]);
            let scores = evaluate(&isa, entries, proposal, &search, args.runs, stream, &snapshots).map_err(data_err)?;
            let n = (entries.len() * args.runs).max(1) as f64;
            let mean_at = |col: usize| scores.iter().flatten().map(|s| s[col]).sum::<f64>() / n;
            for (entry, runs) in entries.iter().zip(&scores) {
                for (r, s) in runs.iter().enumerate() {
                    for (&it, score) in snapshots.iter().zip(s) {
                        snap_csv.push_str(&format!("{name},{},{},{r},{it},{score}\n", split.dir_name(), entry.id));
                    }
                }
            }
            rows.push(EvalRow {
                model: name.clone(),
                split,
                entries: entries.len(),
                runs: args.runs,
                mean_score: mean_at(budget_col),
                snapshot_means: snapshots.iter().enumerate().map(|(c, &s)| (s, mean_at(c))).collect(),
            });
        }
    }

    let mut cmp = String::from("model,split,entries,runs,budget,mean_score");
    for s in &snapshots {
        cmp.push_str(&format!(",mean_at_{s}"));
    }
    cmp.push('\n');
    for row in &rows {
        cmp.push_str(&format!(
            "{},{},{},{},{},{}",
            row.model,
            row.split.dir_name(),
            row.entries,
            row.runs,
            search.budget,
            row.mean_score
        ));
        for (_, m) in &row.snapshot_means {
            cmp.push_str(&format!(",{m}"));
        }
        cmp.push('\n');
    }
    write_atomic(&args.out.join("comparison.csv"), cmp.as_bytes())?;
    write_atomic(&args.out.join("snapshots.csv"), snap_csv.as_bytes())?;

    manifest.wall_seconds = Some(clock.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    Ok(rows)
}

pub fn cmd_gendata(args: &GendataArgs) -> CmdResult<Dataset> {
    let isa = Isa::standard();
    let (params, seed) = match (&args.from_manifest, args.mode) {
        (Some(path), _) => {
            let dir = if path.is_dir() {
                path.clone()
            } else {
                path.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let m = data::read_manifest(&dir)
                .with_context(|| format!("reading manifest in {}", dir.display()))
                .map_err(data_err)?;
            (m.params, m.seed)
        }
        (None, Some(GenMode::HdAugment)) => (
            GenParams::HdAugment {
                variants: args.variants,
                walk_budget: args.walk_budget,
            },
            args.seed,
        ),
        (None, Some(GenMode::Synthetic)) => (
            GenParams::Synthetic {
                count: args.count,
                live_length: args.live_length,
                walk_iters: args.walk_iters,
            },
            args.seed,
        ),
        (None, None) => return Err(usage(anyhow!("a generation mode or --from-manifest is required"))),
    };
    let ds = data::generate(&isa, params, seed).map_err(usage)?;
    let short = data::short_tasks(&ds);
    if !short.is_empty() {
        eprintln!("warning: fewer distinct variants than requested for tasks {short:?}");
    }
    if let GenParams::Synthetic {
        live_length,
        walk_iters,
        ..
    } = params
    {
        let rate = data::synth_acceptance_rate(&isa, live_length, walk_iters, seed, 16);
        eprintln!("constant-cost walk acceptance rate: {rate:.3}");
    }
    create_dir(&args.out)?;
    ds.write(&isa, &args.out)
        .with_context(|| format!("writing dataset to {}", args.out.display()))
        .map_err(data_err)?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub proposal: String,
    pub iterations: usize,
    pub seconds: f64,
    pub iterations_per_second: f64,
    /// Proposal distributions built during one run.
    pub params_constructions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub uniform: BenchRow,
    pub categorical: BenchRow,
    /// Uniform throughput over categorical throughput.
    pub slowdown: f64,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::from("proposal,iterations,seconds,iterations_per_second,params_constructions\n");
        for r in [&self.uniform, &self.categorical] {
            out.push_str(&format!(
                "{},{},{:.6},{:.0},{}\n",
                r.proposal, r.iterations, r.seconds, r.iterations_per_second, r.params_constructions
            ));
        }
        out.push_str(&format!("# slowdown {:.3}x\n", self.slowdown));
        out
    }
}

/// Fixed workload: HD task 20 (the longest reference) with its tests.
fn bench_entry(isa: &Isa) -> Entry {
    let task = data::hd_tasks(isa).into_iter().find(|t| t.id == 20).expect("task 20");
    Entry {
        id: "bench".to_string(),
        task: Some(task.id),
        start: task.reference,
        tests: task.tests(0),
    }
}

fn time_run(
    isa: &Isa,
    entry: &Entry,
    make_params: &dyn Fn() -> ProposalParams,
    iterations: usize,
    repeats: usize,
    seed: u64,
    name: &str,
) -> CmdResult<BenchRow> {
    let config = SearchConfig {
        budget: iterations,
        ..SearchConfig::default()
    };
    let mut best = f64::INFINITY;
    let mut constructions = 0;
    for rep in 0..repeats.max(1) {
        let before = params_constructed_on_thread();
        let clock = Instant::now();
        let params = make_params();
        let mut rng = seed::rng(seed, &[rep as u64]);
        let trace = metropolis_run(
            isa,
            &entry.start,
            &entry.start,
            &params,
            &entry.tests,
            &config,
            &mut rng,
        )
        .map_err(data_err)?;
        best = best.min(clock.elapsed().as_secs_f64());
        std::hint::black_box(trace.best_cost);
        constructions = params_constructed_on_thread() - before;
        if constructions != 1 {
            return Err(data_err(anyhow!(
                "{name}: proposal distribution built {constructions} times in one run"
            )));
        }
    }
    Ok(BenchRow {
        proposal: name.to_string(),
        iterations,
        seconds: best,
        iterations_per_second: iterations as f64 / best,
        params_constructions: constructions,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> CmdResult<BenchReport> {
    if args.iterations == 0 {
        return Err(usage(anyhow!("--iterations must be positive")));
    }
    let isa = Isa::standard();
    let entry = bench_entry(&isa);
    let model = match args.model.as_str() {
        "random" => {
            let mut m = Model::zeros(&isa, ModelKind::Bias, &[]);
            let mut rng = seed::rng(args.seed, &[0xB1A5]);
            for p in m.params_mut() {
                *p = rand::Rng::gen_range(&mut rng, -2.0..2.0);
            }
            m
        }
        path => load_model(&isa, Path::new(path))?,
    };
    if let Some(out) = &args.out {
        create_dir(out)?;
        RunManifest::new("bench", args, args.seed, &["bench.csv"]).write(out)?;
    }
    let uniform = time_run(
        &isa,
        &entry,
        &|| uniform_params(&isa),
        args.iterations,
        args.repeats,
        args.seed,
        "uniform",
    )?;
    let feat = featurize(&isa, &entry.start);
    let categorical = time_run(
        &isa,
        &entry,
        &|| model.forward(&isa, &feat),
        args.iterations,
        args.repeats,
        args.seed,
        "categorical",
    )?;
    let report = BenchReport {
        slowdown: uniform.iterations_per_second / categorical.iterations_per_second,
        uniform,
        categorical,
    };
    if let Some(out) = &args.out {
        write_atomic(&out.join("bench.csv"), report.render().as_bytes())?;
    }
    Ok(report)
}

/// Runs a parsed command line, printing human-readable results.
pub fn run(cli: Cli) -> CmdResult<()> {
    match cli.command {
        Command::Optimize(a) => {
            let s = cmd_optimize(&a)?;
            println!(
                "initial cost {}  best cost {}  score {:.4}  correct {}",
                s.initial_cost, s.best_cost, s.score, s.best_correct
            );
        }
        Command::Train(a) => {
            let curve = cmd_train(&a)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("test mean score {:.4} -> {:.4}", first.test_mean, last.test_mean);
            }
        }
        Command::Eval(a) => {
            for row in cmd_eval(&a)? {
                println!("{:<16} {:<5} {:.4}", row.model, row.split.dir_name(), row.mean_score);
            }
        }
        Command::Gendata(a) => {
            let ds = cmd_gendata(&a)?;
            println!("{} train / {} test entries", ds.train.len(), ds.test.len());
        }
        Command::Bench(a) => print!("{}", cmd_bench(&a)?.render()),
    }
    Ok(())
}
