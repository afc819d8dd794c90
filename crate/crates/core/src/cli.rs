//! The `trfnet` command-line front end.
//!
//! Every command that writes files also writes `<primary output>.manifest.json`
//! recording the argument vector, seeds, SHA-256 digests of the inputs, the
//! output paths and wall-clock timings. Model files and reports carry no
//! timings, so rerunning a command with the same flags reproduces them byte
//! for byte.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{self, DenseNetConfig};
use crate::builder::{self, attach_head_for, build_trf_net_logged, BuildConfig, EvalReport, FinetuneHyper};
use crate::dae::{CorruptionKind, DaeHyper};
use crate::data::{self, Dataset, DiscretizationPolicy};
use crate::interpret::{self, EmbeddingTable};
use crate::nn::{Activation, AdamConfig, LossFamily};
use crate::synth::{self, TopicCorpus};
use crate::tree::chow_liu;
use crate::{Error, TrfNetwork};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "TRFNET_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing flags; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// The command failed while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Map a library error to a CLI error prefixed with `context`, which names
/// the offending flag or file. Argument and policy errors come from flag
/// values and count as usage errors.
fn ctx(context: impl Into<String>) -> impl FnOnce(Error) -> CliError {
    let context = context.into();
    move |e| match e {
        Error::Argument(_) | Error::Policy(_) => CliError::Usage(format!("{context}: {e}")),
        _ => CliError::Runtime(format!("{context}: {e}")),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "trfnet", version, about = "Sparse feedforward networks with Chow-Liu tree receptive fields")]
pub struct Cli {
    /// Worker threads; defaults to $TRFNET_THREADS, else all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn the Chow-Liu tree of the input features; write DOT and a top-edge listing.
    Tree(TreeArgs),
    /// Build a TRF network layer by layer with denoising autoencoders.
    Build(BuildArgs),
    /// Fine-tune a model against the labels.
    Finetune(FinetuneArgs),
    /// Evaluate a model on one partition.
    Eval(EvalArgs),
    /// Train a dense, magnitude-pruned or L1-regularized baseline.
    Baseline(BaselineArgs),
    /// Rank input features by correlation with each top-layer unit.
    Inspect(InspectArgs),
    /// Print one aligned table over several report files.
    Compare(CompareArgs),
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Partition {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dense CSV with a header row, or a bag-of-words document file when --vocab is given.
    #[arg(long)]
    data: PathBuf,
    /// Vocabulary file (one token per line); switches --data to bag-of-words format.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// The last CSV column is an integer class label.
    #[arg(long, conflicts_with = "tasks")]
    labels: bool,
    /// The last N CSV columns are binary task labels (empty cell = missing).
    #[arg(long, value_name = "N")]
    tasks: Option<usize>,
    /// Replace every positive value by 1 before use.
    #[arg(long)]
    presence: bool,
    /// Train and validation fractions; the rest is test.
    #[arg(long, default_value = "0.6,0.2", value_delimiter = ',', num_args = 2)]
    split: Vec<f64>,
    /// Seed of the train/validation/test shuffle.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl DataArgs {
    fn load(&self) -> CliResult<Dataset> {
        let file = self.data.display().to_string();
        let d = match (&self.vocab, self.tasks) {
            (Some(vocab), None) => {
                if self.labels {
                    return Err(usage("--labels applies to CSV input only; bag-of-words lines always start with a label"));
                }
                data::load_sparse_bow(&self.data, vocab).map_err(ctx(format!("--data {file}")))?
            }
            (Some(_), Some(_)) => return Err(usage("--tasks applies to CSV input only")),
            (None, Some(t)) => data::load_dense_csv_tasks(&self.data, t).map_err(ctx(format!("--data {file}")))?,
            (None, None) => data::load_dense_csv(&self.data, self.labels).map_err(ctx(format!("--data {file}")))?,
        };
        if self.presence {
            let v = d.values().mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            let names = d.feature_names().map(<[String]>::to_vec);
            return d.with_values(v, names).map_err(ctx("--presence"));
        }
        Ok(d)
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.data.clone()];
        v.extend(self.vocab.clone());
        v
    }

    fn partition(&self, d: &Dataset, which: Partition) -> CliResult<Dataset> {
        if which == Partition::All {
            return Ok(d.clone());
        }
        let (tr, va, te) = self.splits(d)?;
        Ok(match which {
            Partition::Train => tr,
            Partition::Valid => va,
            _ => te,
        })
    }

    fn splits(&self, d: &Dataset) -> CliResult<(Dataset, Dataset, Dataset)> {
        data::split(d, self.split[0], self.split[1], self.split_seed).map_err(ctx("--split"))
    }
}

#[derive(Debug, Args)]
struct TreeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Rows used to learn the tree.
    #[arg(long, value_enum, default_value = "all")]
    partition: Partition,
    /// Discretization: median, binary or fixed:<t>; default depends on the data.
    #[arg(long)]
    policy: Option<String>,
    /// DOT output path.
    #[arg(long)]
    out: PathBuf,
    /// Edge listing path; defaults to <out>.edges.tsv.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Number of strongest edges printed to stdout.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Receptive-field radius per layer (a single value applies to every layer).
    #[arg(long, default_value = "3", value_delimiter = ',')]
    radius: Vec<usize>,
    /// Center stride per layer (a single value applies to every layer).
    #[arg(long, default_value = "3", value_delimiter = ',')]
    stride: Vec<usize>,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Global neurons per layer as a fraction of the receptive-field count.
    #[arg(long, default_value_t = 0.1)]
    globals: f64,
    /// Discretization: median, binary or fixed:<t>; default depends on the data.
    #[arg(long)]
    policy: Option<String>,
    /// Input corruption: masking:<rate> or gaussian:<sigma>; default depends on the data.
    #[arg(long)]
    corruption: Option<String>,
    /// Reconstruction family of the first layer: bernoulli or gaussian.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, default_value_t = 30)]
    dae_epochs: usize,
    #[arg(long, default_value_t = 32)]
    dae_batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    dae_lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of per-epoch reconstruction losses (layer,epoch,loss).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Maximum training epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Hidden activation: relu, sigmoid or identity.
    #[arg(long, default_value = "relu")]
    activation: String,
    /// L1 penalty strength on all weights.
    #[arg(long, default_value_t = 0.0)]
    l1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn hyper(&self, reinit: bool) -> CliResult<FinetuneHyper> {
        let activation: Activation = self.activation.parse().map_err(ctx("--activation"))?;
        let h = FinetuneHyper {
            max_epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch,
            adam: AdamConfig {
                step_size: self.lr,
                ..AdamConfig::default()
            },
            dropout: self.dropout,
            activation,
            l1: self.l1,
            reinit,
            seed: self.seed,
        };
        h.validate().map_err(ctx("training flags"))?;
        Ok(h)
    }
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Model to fine-tune.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Reinitialize the weights inside the masks instead of keeping the pretrained ones.
    #[arg(long)]
    reinit: bool,
    /// Fine-tuned model output path.
    #[arg(long)]
    out: PathBuf,
    /// Report output path; defaults to <out>.report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Partition evaluated for the report.
    #[arg(long, value_enum, default_value = "test")]
    partition: Partition,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    partition: Partition,
    /// Report output path; the table is always printed.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Dense,
    Prune,
    L1,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Hidden layer widths.
    #[arg(long, default_value = "256,256", value_delimiter = ',')]
    hidden: Vec<usize>,
    /// Fraction of weights kept per hidden layer (prune).
    #[arg(long, default_value_t = 0.1)]
    keep: f64,
    /// Trained dense model to prune; one is trained first when absent (prune).
    #[arg(long)]
    from: Option<PathBuf>,
    /// L1 penalty strength (l1).
    #[arg(long, default_value_t = 1e-4)]
    strength: f64,
    #[arg(long)]
    out: PathBuf,
    /// Report output path; defaults to <out>.report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    partition: Partition,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "all")]
    partition: Partition,
    /// Features listed per unit.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Word embeddings ("count dim" header, then "token v1 ... vdim" lines).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Optional TSV output of the per-unit table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report files, one table row each.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Optional output path for the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    /// Labeled bag-of-words corpus with class-specific word groups.
    Corpus,
    /// Binary Markov chain; the label is the first variable.
    Chain,
    /// Independent blocks of correlated binary variables.
    Blocks,
    /// Two Gaussian classes.
    Blobs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    /// Document file (corpus) or CSV (other kinds).
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary output (corpus); defaults to <out>.vocab.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples (documents for corpus).
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Features (vocabulary size for corpus, chain length for chain).
    #[arg(long, default_value_t = 2000)]
    v: usize,
    /// Classes (corpus).
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Flip probability (chain).
    #[arg(long, default_value_t = 0.1)]
    flip: f64,
    /// Number of blocks (blocks).
    #[arg(long, default_value_t = 8)]
    blocks: usize,
    /// Variables per block (blocks).
    #[arg(long, default_value_t = 4)]
    size: usize,
    /// Intra-block correlation (blocks).
    #[arg(long, default_value_t = 0.9)]
    corr: f64,
    /// Distance between class means (blobs).
    #[arg(long, default_value_t = 10.0)]
    margin: f64,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Timing {
    phase: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    version: String,
    args: Vec<String>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    timings: Vec<Timing>,
}

/// Collects what a run read, wrote and how long it took.
struct Run {
    command: &'static str,
    args: Vec<String>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Run {
    fn new(command: &'static str, args: &[String]) -> Self {
        Run {
            command,
            args: args.to_vec(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        }
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    fn lap(&mut self, phase: &str) {
        self.timings.push((phase.to_string(), self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }

    fn write(&mut self, path: &Path, contents: &str) -> CliResult<()> {
        fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Write the manifest next to the first output. Runs without outputs
    /// have nothing to annotate and write no manifest.
    fn finish(self) -> CliResult<()> {
        let Some(primary) = self.outputs.first() else {
            return Ok(());
        };
        let mut inputs = Vec::new();
        for p in &self.inputs {
            let bytes = fs::read(p).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
            inputs.push(InputDigest {
                path: p.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: self.args,
            seeds: self.seeds,
            inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            timings: self
                .timings
                .into_iter()
                .map(|(phase, seconds)| Timing { phase, seconds })
                .collect(),
        };
        let path = manifest_path(primary);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}

/// `<path>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    with_suffix(output, ".manifest.json")
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn distinct(input: &Path, output: &Path, out_flag: &str) -> CliResult<()> {
    let same = match (fs::canonicalize(input), fs::canonicalize(output)) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        return Err(usage(format!("{out_flag} {} would overwrite an input file", output.display())));
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<TrfNetwork> {
    TrfNetwork::load(path).map_err(|e| match e {
        Error::Io { .. } => CliError::Runtime(format!("--model: {e}")),
        _ => CliError::Runtime(format!("--model {}: {e}", path.display())),
    })
}

fn parse_opt<T>(flag: &str, value: &Option<String>) -> CliResult<Option<T>>
where
    T: std::str::FromStr<Err = Error>,
{
    value.as_deref().map(str::parse).transpose().map_err(ctx(flag.to_string()))
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| usage(format!("${THREADS_ENV}={s:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    if let Some(n) = n {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parse `argv` (including the program name) and run the command.
pub fn run<I, T>(argv: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg);
            return Err(CliError::Usage(msg.trim_end().to_string()));
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Tree(a) => cmd_tree(&a, &args),
        Command::Build(a) => cmd_build(&a, &args),
        Command::Finetune(a) => cmd_finetune(&a, &args),
        Command::Eval(a) => cmd_eval(&a, &args),
        Command::Baseline(a) => cmd_baseline(&a, &args),
        Command::Inspect(a) => cmd_inspect(&a, &args),
        Command::Compare(a) => cmd_compare(&a, &args),
        Command::Synth(a) => cmd_synth(&a, &args),
    }
}

fn cmd_tree(a: &TreeArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("tree", args);
    run.inputs = a.data.inputs();
    run.seed("split_seed", a.data.split_seed);
    let policy: Option<DiscretizationPolicy> = parse_opt("--policy", &a.policy)?;
    let d = a.data.partition(&a.data.load()?, a.partition)?;
    run.lap("load");
    let policy = policy.unwrap_or_else(|| DiscretizationPolicy::default_for(&d));
    let t = chow_liu(&d, policy).map_err(ctx("--policy"))?;
    run.lap("tree");

    let names = d.feature_names();
    let name = |i: usize| names.map_or_else(|| i.to_string(), |n| n[i].clone());
    let mut edges = t.edges().to_vec();
    edges.sort_by(|x, y| y.weight.total_cmp(&x.weight).then((x.u, x.v).cmp(&(y.u, y.v))));
    let mut listing = String::from("rank\tu\tv\tname_u\tname_v\tmi\n");
    for (rank, e) in edges.iter().enumerate() {
        let _ = writeln!(listing, "{}\t{}\t{}\t{}\t{}\t{:?}", rank + 1, e.u, e.v, name(e.u), name(e.v), e.weight);
    }
    run.write(&a.out, &t.to_dot(names))?;
    let edges_path = a.edges.clone().unwrap_or_else(|| with_suffix(&a.out, ".edges.tsv"));
    run.write(&edges_path, &listing)?;

    println!(
        "nodes {}  edges {}  total MI {:.6}  policy {policy}",
        t.node_count(),
        t.edges().len(),
        t.total_weight()
    );
    for e in edges.iter().take(a.top) {
        println!("  {:.6}  {} -- {}", e.weight, name(e.u), name(e.v));
    }
    run.finish()
}

fn cmd_build(a: &BuildArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("build", args);
    run.inputs = a.data.inputs();
    run.seed("seed", a.seed);
    run.seed("split_seed", a.data.split_seed);
    let cfg = BuildConfig {
        radius: a.radius.clone(),
        stride: a.stride.clone(),
        depth: a.depth,
        global_fraction: a.globals,
        policy: parse_opt("--policy", &a.policy)?,
        dae: DaeHyper {
            epochs: a.dae_epochs,
            batch_size: a.dae_batch,
            adam: AdamConfig {
                step_size: a.dae_lr,
                ..AdamConfig::default()
            },
            family: parse_opt::<LossFamily>("--family", &a.family)?,
            seed: a.seed,
        },
        corruption: parse_opt::<CorruptionKind>("--corruption", &a.corruption)?,
        seed: a.seed,
    };
    cfg.validate().map_err(ctx("build flags"))?;
    let d = a.data.load()?;
    let train = a.data.partition(&d, Partition::Train)?;
    run.lap("load");
    let (net, logs) = build_trf_net_logged(&train, &cfg).map_err(ctx("build"))?;
    run.lap("build");
    run.write(&a.out, &net.to_text())?;
    if let Some(log) = &a.log {
        let mut csv = String::from("layer,epoch,loss\n");
        for (k, losses) in logs.iter().enumerate() {
            for (e, l) in losses.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{l:?}", k + 1, e + 1);
            }
        }
        run.write(log, &csv)?;
    }
    println!(
        "built {} layers, widths {:?}, sparsity {:.4}, {} parameters -> {}",
        net.depth(),
        net.widths(),
        net.sparsity(),
        net.parameter_count(),
        a.out.display()
    );
    run.finish()
}

/// Evaluate on `which` and carry over the training epochs.
fn report_on(
    net: &TrfNetwork,
    data: &DataArgs,
    d: &Dataset,
    which: Partition,
    trained: Option<&EvalReport>,
) -> CliResult<EvalReport> {
    let part = data.partition(d, which)?;
    let mut r = baselines::evaluate_baseline(net, &part).map_err(ctx("evaluation"))?;
    if let Some(t) = trained {
        r.epochs_run = t.epochs_run;
        r.best_epoch = t.best_epoch;
    }
    Ok(r)
}

fn write_report(run: &mut Run, path: &Path, mut r: EvalReport) -> CliResult<()> {
    r.timings = run.timings.clone();
    run.write(path, &r.to_tsv())?;
    print!("{}", r.to_table());
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("finetune", args);
    run.inputs = a.data.inputs();
    run.inputs.push(a.model.clone());
    run.seed("seed", a.train.seed);
    run.seed("split_seed", a.data.split_seed);
    let hyper = a.train.hyper(a.reinit)?;
    distinct(&a.model, &a.out, "--out")?;
    let mut net = load_model(&a.model)?;
    let d = a.data.load()?;
    let (train, valid, _) = a.data.splits(&d)?;
    run.lap("load");
    if net.head().is_none() {
        let seed = a.train.seed.wrapping_add(net.depth() as u64);
        attach_head_for(&mut net, &train, seed).map_err(ctx("--data labels"))?;
    }
    let (net, trained) = builder::finetune(&net, &train, &valid, &hyper).map_err(ctx("finetune"))?;
    run.lap("finetune");
    let report = report_on(&net, &a.data, &d, a.partition, Some(&trained))?;
    run.lap("evaluate");
    run.write(&a.out, &net.to_text())?;
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report"));
    write_report(&mut run, &report_path, report)?;
    run.finish()
}

fn cmd_eval(a: &EvalArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("eval", args);
    run.inputs = a.data.inputs();
    run.inputs.push(a.model.clone());
    run.seed("split_seed", a.data.split_seed);
    let net = load_model(&a.model)?;
    let d = a.data.load()?;
    run.lap("load");
    let report = report_on(&net, &a.data, &d, a.partition, None)?;
    run.lap("evaluate");
    match &a.report {
        Some(p) => write_report(&mut run, p, report)?,
        None => print!("{}", report.to_table()),
    }
    run.finish()
}

fn cmd_baseline(a: &BaselineArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("baseline", args);
    run.inputs = a.data.inputs();
    run.seed("seed", a.train.seed);
    run.seed("split_seed", a.data.split_seed);
    let cfg = DenseNetConfig {
        hidden: a.hidden.clone(),
        finetune: a.train.hyper(false)?,
        seed: a.train.seed,
    };
    if a.from.is_some() && a.kind != BaselineKind::Prune {
        return Err(usage("--from applies to the prune baseline only"));
    }
    let from = match &a.from {
        Some(p) => {
            distinct(p, &a.out, "--out")?;
            run.inputs.push(p.clone());
            Some(load_model(p)?)
        }
        None => None,
    };
    let d = a.data.load()?;
    let (train, valid, _) = a.data.splits(&d)?;
    run.lap("load");
    let (net, trained) = match a.kind {
        BaselineKind::Dense => baselines::train_dense(&train, &valid, &cfg).map_err(ctx("dense baseline"))?,
        BaselineKind::L1 => {
            baselines::train_l1(&train, &valid, &cfg, a.strength).map_err(ctx("--strength"))?
        }
        BaselineKind::Prune => {
            let dense = match from {
                Some(n) => n,
                None => baselines::train_dense(&train, &valid, &cfg).map_err(ctx("dense baseline"))?.0,
            };
            run.lap("dense");
            baselines::prune_and_retrain(&dense, a.keep, &train, &valid, &cfg.finetune).map_err(ctx("--keep"))?
        }
    };
    run.lap("train");
    let report = report_on(&net, &a.data, &d, a.partition, Some(&trained))?;
    run.lap("evaluate");
    run.write(&a.out, &net.to_text())?;
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report"));
    write_report(&mut run, &report_path, report)?;
    run.finish()
}

fn cmd_inspect(a: &InspectArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("inspect", args);
    run.inputs = a.data.inputs();
    run.inputs.push(a.model.clone());
    run.seed("split_seed", a.data.split_seed);
    if a.top == 0 {
        return Err(usage("--top must be at least 1"));
    }
    let net = load_model(&a.model)?;
    let emb = match &a.embeddings {
        Some(p) => {
            run.inputs.push(p.clone());
            Some(EmbeddingTable::load(p).map_err(ctx(format!("--embeddings {}", p.display())))?)
        }
        None => None,
    };
    let d = a.data.partition(&a.data.load()?, a.partition)?;
    run.lap("load");
    let profiles = interpret::profile_units(&net, &d, a.top).map_err(ctx("inspect"))?;
    let scores = emb.as_ref().map(|e| interpret::unit_scores(&profiles, e));
    run.lap("profile");

    let mut table = String::from("unit\tscore\tfeatures\n");
    for (i, p) in profiles.iter().enumerate() {
        let score = match scores.as_ref().and_then(|s| s[i]) {
            Some(s) => format!("{s:.4}"),
            None => "-".into(),
        };
        let feats: Vec<String> = p
            .features
            .iter()
            .map(|f| {
                let name = f.name.clone().unwrap_or_else(|| f.index.to_string());
                format!("{name}:{:.3}", f.correlation)
            })
            .collect();
        let feats = if p.degenerate { "(constant unit)".to_string() } else { feats.join(" ") };
        let _ = writeln!(table, "{}\t{score}\t{feats}", p.unit);
    }
    print!("{table}");
    if let Some(e) = &emb {
        let total = interpret::interpretability_score(&net, &d, e, a.top).map_err(ctx("--embeddings"))?;
        println!("interpretability score {total:.6}");
        let _ = writeln!(table, "# interpretability score {total:?}");
    }
    if let Some(out) = &a.out {
        run.write(out, &table)?;
    }
    run.finish()
}

/// Aligned table with one row per report.
pub fn comparison_table(rows: &[(String, EvalReport)]) -> String {
    let header = ["report", "model", "accuracy", "mean_auc", "parameters", "sparsity", "eff_sparsity", "widths"];
    let fmt_opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                r.model.clone(),
                fmt_opt(r.accuracy),
                fmt_opt(r.mean_auc),
                r.parameter_count.to_string(),
                format!("{:.4}", r.sparsity),
                fmt_opt(r.effective_sparsity),
                r.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in &body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn cmd_compare(a: &CompareArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("compare", args);
    let mut rows = Vec::new();
    for p in &a.reports {
        let r = EvalReport::load(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push((name, r));
        run.inputs.push(p.clone());
    }
    let table = comparison_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        run.write(out, &table)?;
    }
    run.finish()
}

fn cmd_synth(a: &SynthArgs, args: &[String]) -> CliResult<()> {
    let mut run = Run::new("synth", args);
    run.seed("seed", a.seed);
    let d = match a.kind {
        SynthKind::Corpus => {
            let cfg = TopicCorpus {
                docs: a.n,
                vocab: a.v,
                classes: a.classes,
                ..TopicCorpus::default()
            };
            if cfg.docs == 0 || cfg.classes == 0 || cfg.vocab < cfg.classes * cfg.topic_size {
                return Err(usage("--n and --classes must be positive and --v at least 10 words per class"));
            }
            synth::topic_corpus(&cfg, a.seed)
        }
        SynthKind::Chain => {
            if a.v < 2 || a.n == 0 || !(0.0..=1.0).contains(&a.flip) {
                return Err(usage("chain needs --v >= 2, --n >= 1 and --flip in [0, 1]"));
            }
            synth::markov_chain(a.v, a.n, a.flip, a.seed)
        }
        SynthKind::Blocks => {
            if a.blocks * a.size < 2 || a.n == 0 || !(0.0..=1.0).contains(&a.corr) {
                return Err(usage("blocks needs at least 2 variables, --n >= 1 and --corr in [0, 1]"));
            }
            synth::blocks(a.blocks, a.size, a.corr, a.n, a.seed)
        }
        SynthKind::Blobs => {
            if a.v < 2 || a.n == 0 || !a.margin.is_finite() {
                return Err(usage("blobs needs --v >= 2, --n >= 1 and a finite --margin"));
            }
            synth::gaussian_blobs(a.v, a.n, a.margin, a.seed)
        }
    };
    run.lap("generate");
    match a.kind {
        SynthKind::Corpus => {
            let vocab = a.vocab_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".vocab"));
            d.write_sparse_bow(&a.out, &vocab).map_err(ctx("--out"))?;
            run.outputs.push(a.out.clone());
            run.outputs.push(vocab);
        }
        _ => {
            d.write_dense_csv(&a.out).map_err(ctx("--out"))?;
            run.outputs.push(a.out.clone());
        }
    }
    println!("wrote {} samples x {} features -> {}", d.n_samples(), d.n_features(), a.out.display());
    run.finish()
}
