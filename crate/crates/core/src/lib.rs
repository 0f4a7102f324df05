//! Action co-occurrence priors for long-tailed multi-label interaction
//! recognition.
//!
//! The pipeline: count image-level action co-occurrences ([`cooc`]), pick
//! mutually exclusive anchor actions and group the rest around them
//! ([`anchors`]), predict actions with flat or hierarchical heads
//! ([`predictor`]), project predictions through the co-occurrence priors
//! ([`projection`]) and train against ground truth plus projected teacher
//! targets ([`objective`], [`trainer`]). [`evaluator`] scores models by
//! per-class average precision and [`synth`] generates seeded long-tailed
//! benchmarks to run all of it on.

pub mod anchors;
pub mod checkpoint;
pub mod cooc;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod objective;
pub mod predictor;
pub mod projection;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use anchors::{build_groups, exclusiveness, nes_select, ActionGroups};
pub use cooc::{build_bank, build_cooc, validate_cooc, CoocBank, CoocPair, StoredBank};
pub use corpus::{ActionSet, AnnotationCorpus, CandidatePair, HoiClass, ImageRecord, LabelSpace};
pub use error::{AcpError, Result};
pub use evaluator::{average_precision, evaluate, AblationTable, EvalReport};
pub use objective::{HoiProbs, LossBreakdown, LossWeights};
pub use predictor::{ActionProbs, ArchKind, ModelDims, ModelParams};
pub use projection::ProjectionWeights;
pub use synth::{generate, Planted, SynthBenchmark, SynthConfig};
pub use trainer::{init_params, train, OptimizerKind, Priors, TrainConfig, TrainOutput};
