use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use acp_core::anchors::{build_groups_from_sets, nes_select_with_tolerance};
use acp_core::evaluator::{ablation, architecture_rows, component_rows, evaluate, AblationTable, EvalReport};
use acp_core::io::{read_to_string, write_atomic};
use acp_core::projection::project_weighted;
use acp_core::synth::{generate, SynthConfig};
use acp_core::trainer::{save_history, train, Priors};
use acp_core::{
    AcpError, ActionGroups, AnnotationCorpus, ArchKind, Checkpoint, CoocBank, LossWeights, OptimizerKind,
    ProjectionWeights, StoredBank, TrainConfig,
};

#[derive(Parser)]
#[command(name = "acp", version, about = "Action co-occurrence priors: statistics, training and evaluation")]
struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count action co-occurrences and write global and per-object matrices.
    BuildCooc {
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for the CSV matrices and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Select mutually exclusive anchor actions and group the rest.
    Anchors {
        /// Directory written by `build-cooc`.
        #[arg(long)]
        cooc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Co-occurrence values at or below this count as zero.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// Generate a seeded synthetic long-tailed benchmark.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a test corpus.
    Eval(EvalArgs),
    /// Project a probability vector through co-occurrence priors.
    Project {
        /// JSON array of N action probabilities.
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        cooc: PathBuf,
        /// Object name or index; the global matrices are used when omitted.
        #[arg(long)]
        object: Option<String>,
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
    },
    /// Train and evaluate a table of configurations on shared data.
    Ablate(AblateArgs),
    /// Render a JSON evaluation or ablation report as a text table.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for train.json, test.json and planted.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_actions: Option<usize>,
    #[arg(long)]
    n_objects: Option<usize>,
    #[arg(long)]
    n_scenarios: Option<usize>,
    /// Training images.
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    test_images: Option<usize>,
    #[arg(long)]
    zipf_exponent: Option<f64>,
    /// Equal scenario weights instead of the Zipf law.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    label_drop_rate: Option<f64>,
}

impl GenDataArgs {
    fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_actions: self.n_actions.unwrap_or(d.n_actions),
            n_objects: self.n_objects.unwrap_or(d.n_objects),
            n_scenarios: self.n_scenarios.unwrap_or(d.n_scenarios),
            images: self.images.unwrap_or(d.images),
            test_images: self.test_images.unwrap_or(d.test_images),
            zipf_exponent: self.zipf_exponent.unwrap_or(d.zipf_exponent),
            uniform: self.uniform,
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            label_drop_rate: self.label_drop_rate.unwrap_or(d.label_drop_rate),
            seed: self.seed,
            ..d
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

/// Training hyperparameters shared by `train` and `ablate`.
#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    /// Projection weight on co-occurrence; the complementary weight is 2 - alpha.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Width of the fusion layer and of every head's hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
}

impl HyperArgs {
    fn config(&self, arch: ArchKind) -> Result<TrainConfig, AcpError> {
        let d = TrainConfig::default();
        let lw = LossWeights::new(
            self.lambda1.unwrap_or(d.loss_weights.lambda1),
            self.lambda2.unwrap_or(d.loss_weights.lambda2),
            self.lambda3.unwrap_or(d.loss_weights.lambda3),
        )?;
        let projection_weights = match self.alpha {
            Some(1.0) => ProjectionWeights::UNIT,
            Some(a) => ProjectionWeights::from_alpha(a)?,
            None => d.projection_weights,
        };
        let cfg = TrainConfig {
            arch,
            fused: self.hidden.unwrap_or(d.fused),
            hidden: self.hidden.unwrap_or(d.hidden),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            optimizer: match self.optimizer {
                Some(OptimizerArg::Sgd) => OptimizerKind::Sgd,
                Some(OptimizerArg::Adam) => OptimizerKind::Adam,
                None => d.optimizer,
            },
            seed: self.seed,
            loss_weights: lw,
            projection_weights,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "hierarchical")]
    arch: ArchKind,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Co-occurrence directory; built from the corpus when omitted.
    #[arg(long)]
    cooc: Option<PathBuf>,
    /// Action groups file; derived from the co-occurrence statistics when omitted.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Per-epoch loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Training corpus: source of the rare split and, without --cooc, the priors.
    #[arg(long)]
    train_corpus: PathBuf,
    #[arg(long)]
    cooc: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "off")]
    postprocess: Switch,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    rare_threshold: usize,
    /// JSON report path; the text table always goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    /// Baseline, modified, then hierarchy, distillation and post-processing added in turn.
    Components,
    /// Modified, multi-task, two-stream and hierarchical heads.
    Architectures,
}

#[derive(Args)]
struct AblateArgs {
    /// Training corpus; a synthetic benchmark is generated when omitted.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    /// Seed of the generated benchmark when no corpora are given.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_enum, default_value = "components")]
    table: Table,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 10)]
    rare_threshold: usize,
    /// JSON table path; the text table always goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure tagged with the pipeline module it came from.
struct Failure {
    module: &'static str,
    error: AcpError,
}

trait Tag<T> {
    fn tag(self, module: &'static str) -> Result<T, Failure>;
}

impl<T> Tag<T> for Result<T, AcpError> {
    fn tag(self, module: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { module, error })
    }
}

fn resolve(workdir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        workdir.join(p)
    }
}

fn load_corpus(path: &Path) -> Result<AnnotationCorpus, Failure> {
    AnnotationCorpus::load(path).tag("corpus_model")
}

fn priors(train: &AnnotationCorpus, cooc: Option<&Path>, groups: Option<&Path>) -> Result<(CoocBank, ActionGroups), Failure> {
    let (bank, sets) = match cooc {
        Some(dir) => {
            let stored = StoredBank::load_dir(dir).tag("cooc_stats")?;
            (stored.bank, stored.occurrence_sets)
        }
        None => {
            let p = Priors::from_corpus(train).tag("cooc_stats")?;
            if groups.is_none() {
                return Ok((p.bank, p.groups));
            }
            (p.bank, Vec::new())
        }
    };
    let groups = match groups {
        Some(path) => ActionGroups::load(path).tag("anchor_selection")?,
        None => {
            let anchors = nes_select_with_tolerance(&bank.global, 0.0);
            build_groups_from_sets(&bank.global, &anchors, &sets, 0.0).tag("anchor_selection")?
        }
    };
    Ok((bank, groups))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let wd = cli.workdir.as_path();
    match cli.command {
        Command::BuildCooc { corpus, out } => {
            let corpus = load_corpus(&resolve(wd, &corpus))?;
            let stored = StoredBank::from_corpus(&corpus).tag("cooc_stats")?;
            stored.save_dir(resolve(wd, &out)).tag("cooc_stats")?;
            println!(
                "wrote global and {} per-object co-occurrence matrices",
                stored.bank.per_object.len()
            );
        }
        Command::Anchors { cooc, out, tolerance } => {
            let stored = StoredBank::load_dir(resolve(wd, &cooc)).tag("cooc_stats")?;
            let pair = &stored.bank.global;
            let anchors = nes_select_with_tolerance(pair, tolerance);
            let groups = build_groups_from_sets(pair, &anchors, &stored.occurrence_sets, tolerance)
                .tag("anchor_selection")?;
            groups.save(resolve(wd, &out)).tag("anchor_selection")?;
            let names: Vec<&str> = anchors.iter().map(|&a| stored.actions[a].as_str()).collect();
            println!("anchors: [{}]", names.join(", "));
        }
        Command::GenData(args) => {
            let cfg = args.config();
            let bench = generate(&cfg).tag("synth_benchmark")?;
            let dir = resolve(wd, &args.out);
            bench.train.save(dir.join("train.json")).tag("synth_benchmark")?;
            bench.test.save(dir.join("test.json")).tag("synth_benchmark")?;
            bench.planted.save(dir.join("planted.json")).tag("synth_benchmark")?;
            let freq = bench.train.class_frequencies(10);
            println!(
                "{} train / {} test images, {} HOI classes ({} rare)",
                cfg.images,
                cfg.test_images,
                freq.counts.len(),
                freq.rare.len()
            );
        }
        Command::Train(args) => {
            let cfg = args.hyper.config(args.arch).tag("trainer")?;
            let corpus = load_corpus(&resolve(wd, &args.corpus))?;
            let cooc = args.cooc.as_ref().map(|p| resolve(wd, p));
            let groups_path = args.groups.as_ref().map(|p| resolve(wd, p));
            let (bank, groups) = priors(&corpus, cooc.as_deref(), groups_path.as_deref())?;
            let used_groups = cfg.arch.uses_groups().then_some(&groups);
            let out = train(&corpus, used_groups, &bank, &cfg).tag("trainer")?;
            Checkpoint {
                params: out.params,
                groups: used_groups.cloned(),
            }
            .save(resolve(wd, &args.out))
            .tag("trainer")?;
            if let Some(h) = &args.history {
                save_history(&out.history, resolve(wd, h)).tag("trainer")?;
            }
            let last = out.history.last().expect("history has the initial record");
            println!("epoch {} step {} loss {:.6}", last.epoch, last.step, last.loss.total);
        }
        Command::Eval(args) => {
            let ck = Checkpoint::load(resolve(wd, &args.checkpoint)).tag("evaluator")?;
            let test = load_corpus(&resolve(wd, &args.corpus))?;
            let train_corpus = load_corpus(&resolve(wd, &args.train_corpus))?;
            let cooc = args.cooc.as_ref().map(|p| resolve(wd, p));
            let (bank, derived) = priors(&train_corpus, cooc.as_deref(), None)?;
            let groups = ck.groups.as_ref().or(ck.params.arch.uses_groups().then_some(&derived));
            let w = if args.alpha == 1.0 {
                ProjectionWeights::UNIT
            } else {
                ProjectionWeights::from_alpha(args.alpha).tag("acp_projection")?
            };
            let post = (args.postprocess == Switch::On).then_some(w);
            let freq = train_corpus.class_frequencies(args.rare_threshold);
            let config = serde_json::json!({
                "arch": ck.params.arch,
                "postprocess": post.is_some(),
                "alpha": w.alpha,
                "beta": w.beta,
            });
            let report = evaluate(&ck.params, &test, groups, &bank, &freq, post, config).tag("evaluator")?;
            if let Some(out) = &args.out {
                write_atomic(resolve(wd, out), report.to_json_string().as_bytes()).tag("evaluator")?;
            }
            print!("{}", report.to_text());
        }
        Command::Project { probs, cooc, object, alpha } => {
            let stored = StoredBank::load_dir(resolve(wd, &cooc)).tag("cooc_stats")?;
            let text = read_to_string(resolve(wd, &probs)).tag("acp_projection")?;
            let a: Vec<f64> = serde_json::from_str(&text)
                .map_err(|e| AcpError::Parse {
                    field: "probs".into(),
                    message: e.to_string(),
                })
                .tag("acp_projection")?;
            let pair = match object {
                None => &stored.bank.global,
                Some(name) => {
                    let o = stored
                        .objects
                        .iter()
                        .position(|x| *x == name)
                        .or_else(|| name.parse().ok())
                        .filter(|&o| o < stored.objects.len())
                        .ok_or_else(|| AcpError::Validation {
                            context: "--object".into(),
                            message: format!("unknown object `{name}`"),
                        })
                        .tag("acp_projection")?;
                    stored.bank.for_object(o).0
                }
            };
            let w = if alpha == 1.0 {
                ProjectionWeights::UNIT
            } else {
                ProjectionWeights::from_alpha(alpha).tag("acp_projection")?
            };
            let out = project_weighted(&a, pair, w).tag("acp_projection")?;
            println!("{}", serde_json::to_string(&out).expect("vector serializes"));
        }
        Command::Ablate(args) => {
            let (train_corpus, test_corpus) = match (&args.train, &args.test) {
                (Some(tr), Some(te)) => (load_corpus(&resolve(wd, tr))?, load_corpus(&resolve(wd, te))?),
                _ => {
                    let bench = generate(&SynthConfig {
                        seed: args.data_seed,
                        ..SynthConfig::default()
                    })
                    .tag("synth_benchmark")?;
                    (bench.train, bench.test)
                }
            };
            let base = args.hyper.config(ArchKind::Hierarchical).tag("trainer")?;
            let rows = match args.table {
                Table::Components => component_rows(&base),
                Table::Architectures => architecture_rows(&base),
            };
            let table = ablation(&train_corpus, &test_corpus, &rows, args.rare_threshold).tag("evaluator")?;
            if let Some(out) = &args.out {
                write_atomic(resolve(wd, out), table.to_json_string().as_bytes()).tag("evaluator")?;
            }
            print!("{}", table.to_text());
        }
        Command::Report { input } => {
            let text = read_to_string(resolve(wd, &input)).tag("evaluator")?;
            if let Ok(table) = serde_json::from_str::<AblationTable>(&text) {
                print!("{}", table.to_text());
            } else {
                let report: EvalReport = serde_json::from_str(&text)
                    .map_err(|e| AcpError::Parse {
                        field: input.display().to_string(),
                        message: format!("neither an evaluation report nor an ablation table: {e}"),
                    })
                    .tag("evaluator")?;
                print!("{}", report.to_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("ACP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { module, error }) => {
            eprintln!("error:{module}:{}: {error}", error.kind());
            ExitCode::from(1)
        }
    }
}
